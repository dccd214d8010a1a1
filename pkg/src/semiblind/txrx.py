"""Multi-user uplink transmission: pilots, payload symbols, AWGN, pilot decorrelation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import crandn

__all__ = [
    "CONSTELLATIONS",
    "ConfigError",
    "ScenarioConfig",
    "ReceivedBlock",
    "constellation_points",
    "make_pilots",
    "draw_symbols",
    "transmit",
    "decorrelate_pilots",
    "nearest_points",
]

CONSTELLATIONS = ("gaussian", "qpsk", "qam16")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Dimensions and noise level of one coherence block.

    ``N_p`` defaults to ``J``. The SNR is 1 / noise_variance because channels are
    normalized to E[||h||^2] = M.
    """

    M: int
    J: int
    N: int
    noise_variance: float
    N_p: int | None = None
    constellation: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.N_p is None:
            object.__setattr__(self, "N_p", self.J)
        if min(self.M, self.J, self.N, self.N_p) < 1:
            raise ConfigError("M, J, N, N_p must be positive")
        if self.J > self.M:
            raise ConfigError(f"J={self.J} exceeds M={self.M}")
        if self.N_p < self.J:
            raise ConfigError(f"N_p={self.N_p} must be >= J={self.J}")
        if self.N < self.N_p:
            raise ConfigError(f"N={self.N} must be >= N_p={self.N_p}")
        if not self.noise_variance > 0:
            raise ConfigError("noise_variance must be positive")
        if self.constellation not in CONSTELLATIONS:
            raise ConfigError(f"unknown constellation {self.constellation!r}")

    @classmethod
    def from_snr_db(cls, snr_db: float, **kwargs) -> "ScenarioConfig":
        return cls(noise_variance=10.0 ** (-snr_db / 10.0), **kwargs)

    @property
    def snr_db(self) -> float:
        return -10.0 * np.log10(self.noise_variance)

    @property
    def sigma2_eff(self) -> float:
        """Noise variance of the decorrelated per-user pilot observation."""
        return self.noise_variance * self.J / self.N_p


@dataclass(frozen=True)
class ReceivedBlock:
    Y: np.ndarray
    P: np.ndarray
    D: np.ndarray
    true_H: np.ndarray
    noise_variance: float

    @property
    def num_pilots(self) -> int:
        return self.P.shape[1]

    @property
    def Y_pilot(self) -> np.ndarray:
        return self.Y[:, : self.num_pilots]

    @property
    def Y_data(self) -> np.ndarray:
        return self.Y[:, self.num_pilots :]

    @property
    def X(self) -> np.ndarray:
        return np.hstack([self.P, self.D])


def constellation_points(name: str, J: int) -> np.ndarray:
    """Discrete constellation scaled to average power 1/J."""
    if name == "qpsk":
        pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    elif name == "qam16":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        pts = (levels[:, None] + 1j * levels[None, :]).ravel() / np.sqrt(10.0)
    else:
        raise ConfigError(f"constellation {name!r} has no finite point set")
    return pts / np.sqrt(J)


def make_pilots(J: int, N_p: int) -> np.ndarray:
    """First J rows of the N_p-point DFT matrix, scaled so P P^H = (N_p/J) I."""
    if N_p < J:
        raise ConfigError(f"N_p={N_p} must be >= J={J}")
    n = np.arange(N_p)
    return np.exp(-2j * np.pi * np.outer(np.arange(J), n) / N_p) / np.sqrt(J)


def draw_symbols(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (config.J, config.N - config.N_p)
    if config.constellation == "gaussian":
        return crandn(rng, *shape) / np.sqrt(config.J)
    pts = constellation_points(config.constellation, config.J)
    return pts[rng.integers(pts.size, size=shape)]


def transmit(H: np.ndarray, config: ScenarioConfig, rng: np.random.Generator) -> ReceivedBlock:
    """Y = H [P, D] + N with N ~ CN(0, sigma^2) i.i.d."""
    H = np.asarray(H)
    if H.shape != (config.M, config.J):
        raise ValueError(f"H has shape {H.shape}, expected {(config.M, config.J)}")
    P = make_pilots(config.J, config.N_p)
    D = draw_symbols(config, rng)
    X = np.hstack([P, D])
    Y = H @ X + np.sqrt(config.noise_variance) * crandn(rng, config.M, config.N)
    return ReceivedBlock(Y=Y, P=P, D=D, true_H=H, noise_variance=config.noise_variance)


def decorrelate_pilots(block: ReceivedBlock) -> np.ndarray:
    """Y_p = Y'_p P^dagger, one column per user."""
    P = block.P
    J, N_p = P.shape
    gram = P @ P.conj().T
    scale = gram[0, 0].real
    if scale > 0 and np.allclose(gram, scale * np.eye(J), atol=1e-12 * max(scale, 1.0)):
        return block.Y_pilot @ P.conj().T / scale
    if np.linalg.matrix_rank(P) < J:
        raise np.linalg.LinAlgError("pilot matrix is rank deficient")
    return np.linalg.solve(gram.T, (block.Y_pilot @ P.conj().T).T).T


def nearest_points(x: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map each entry to the closest constellation point; ties go to the lowest index."""
    x = np.asarray(x)
    dist = np.abs(x[..., None] - points) ** 2
    return points[np.argmin(dist, axis=-1)]
