"""Channel generation: ULA spatial model with Laplacian clusters, i.i.d. Rayleigh
fading, and a compact binary dataset format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz

__all__ = [
    "SpatialModelParams",
    "ClusterDraw",
    "ChannelDataset",
    "DatasetFormatError",
    "EmptyDatasetError",
    "DegenerateDensityError",
    "steering_vector",
    "draw_clusters",
    "spatial_covariance",
    "draw_channel",
    "draw_rayleigh_iid",
    "crandn",
    "generate_dataset",
    "draw_channels",
    "save_dataset",
    "load_dataset",
]

DATASET_MAGIC = b"CHDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class DatasetFormatError(ValueError):
    """Raised for malformed or incompatible dataset files."""


class EmptyDatasetError(ValueError):
    pass


class DegenerateDensityError(ValueError):
    """All cluster weights vanished, so the angular density is undefined."""


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circular complex Gaussian samples, CN(0, 1) per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SpatialModelParams:
    """ULA cluster model settings.

    ``angle_grid_points`` defaults to max(8 M, 128). Below 128 nodes the steering
    kernel of a small array aliases on the trapezoidal grid at the 1e-5 level.
    """

    num_antennas: int
    num_clusters: int = 3
    angular_spread_deg: float = 2.0
    angle_grid_points: int | None = None

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if not self.angular_spread_deg > 0:
            raise ValueError("angular_spread_deg must be positive")
        if self.angle_grid_points is None:
            object.__setattr__(self, "angle_grid_points", max(8 * self.num_antennas, 128))
        if self.angle_grid_points < 4 * self.num_antennas:
            raise ValueError("angle_grid_points must be >= 4 * num_antennas")

    @property
    def laplace_scale(self) -> float:
        # Laplace std = sqrt(2) * scale
        return np.deg2rad(self.angular_spread_deg) / np.sqrt(2.0)


@dataclass(frozen=True)
class ClusterDraw:
    """Cluster central angles (radians) and complex path gains for one channel."""

    angles: np.ndarray
    gains: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        power = np.abs(self.gains) ** 2
        total = power.sum()
        if not total > 0 or not np.isfinite(total):
            raise DegenerateDensityError("all cluster weights underflow to zero")
        return power / total


def steering_vector(angle: float, M: int) -> np.ndarray:
    """ULA response with half-wavelength spacing, unit norm."""
    m = np.arange(M)
    return np.exp(-1j * np.pi * m * np.sin(angle)) / np.sqrt(M)


def draw_clusters(params: SpatialModelParams, rng: np.random.Generator) -> ClusterDraw:
    angles = rng.uniform(0.0, 2 * np.pi, params.num_clusters)
    gains = crandn(rng, params.num_clusters)
    return ClusterDraw(angles=angles, gains=gains)


@lru_cache(maxsize=16)
def _lag_kernel_coefficients(M: int, n_grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of exp(-j*pi*k*sin(theta)) for lags k = 0..M-1.

    Obtained with the trapezoidal rule on ``n_grid`` uniform nodes over
    [-pi, pi). Returns (coefficients of shape (M, n_grid), harmonic orders).
    """
    theta = -np.pi + 2 * np.pi * np.arange(n_grid) / n_grid
    kernel = np.exp(-1j * np.pi * np.outer(np.arange(M), np.sin(theta)))
    orders = np.fft.fftfreq(n_grid, 1.0 / n_grid)
    # nodes start at -pi, which contributes exp(j*q*pi) to every harmonic
    coeffs = np.fft.fft(kernel, axis=1) / n_grid * np.exp(1j * np.pi * orders)
    coeffs.setflags(write=False)
    orders.setflags(write=False)
    return coeffs, orders


def _laplace_mixture_charfn(angles, weights, scale, orders) -> np.ndarray:
    """E[exp(j*q*theta)] for the (wrapped) Laplace mixture at integer orders q."""
    angles = np.atleast_2d(angles)
    weights = np.atleast_2d(weights)
    phase = np.exp(1j * orders[None, None, :] * angles[..., None])
    return np.einsum("tc,tcq->tq", weights, phase) / (1.0 + (scale * orders) ** 2)


def _lags_to_covariance(lags: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrices C[m, n] = lags[m - n] (batched over rows)."""
    M = lags.shape[-1]
    idx = np.arange(M)
    diff = idx[:, None] - idx[None, :]
    out = lags[..., np.abs(diff)]
    return np.where(diff >= 0, out, out.conj())


def _clipped_eig(C: np.ndarray):
    """Eigenpairs with negative eigenvalues clipped and the spectrum rescaled to sum M."""
    M = C.shape[-1]
    w, U = np.linalg.eigh(C)
    w = np.clip(w, 0.0, None)
    w = w * (M / w.sum(axis=-1, keepdims=True))
    return w, U


def _psd_normalize(C: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and rescale so that trace(C) = M."""
    M = C.shape[-1]
    w, U = np.linalg.eigh(C)
    if np.any(w < 0):
        w = np.clip(w, 0.0, None)
        C = (U * w[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)
        C = 0.5 * (C + np.swapaxes(C.conj(), -1, -2))
    tr = np.real(np.trace(C, axis1=-2, axis2=-1))
    return C * (M / tr)[..., None, None]


def spatial_covariance(params: SpatialModelParams, cluster_draw: ClusterDraw) -> np.ndarray:
    """Covariance of the angular integral of g(theta) a(theta) a(theta)^H.

    The steering outer product is integrated with the trapezoidal rule on
    ``params.angle_grid_points`` nodes; the Laplace mixture enters through its
    closed-form Fourier series, which keeps narrow clusters exact on coarse grids.
    """
    M = params.num_antennas
    coeffs, orders = _lag_kernel_coefficients(M, params.angle_grid_points)
    phi = _laplace_mixture_charfn(
        cluster_draw.angles, cluster_draw.weights, params.laplace_scale, orders
    )[0]
    lags = coeffs @ phi
    C = toeplitz(lags / lags[0].real)
    return _psd_normalize(C)


def _sqrt_factor(covariance: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    w, U = np.linalg.eigh(covariance)
    wmax = np.max(np.abs(w), axis=-1, keepdims=True)
    if np.any(w < -tol * np.maximum(wmax, 1.0)):
        raise np.linalg.LinAlgError("covariance is not positive semidefinite")
    return U * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def draw_channel(covariance: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample h ~ CN(0, covariance)."""
    covariance = np.asarray(covariance)
    factor = _sqrt_factor(covariance)
    return factor @ crandn(rng, covariance.shape[0])


def draw_rayleigh_iid(M: int, rng: np.random.Generator) -> np.ndarray:
    return crandn(rng, M)


@dataclass(frozen=True)
class ChannelDataset:
    samples: np.ndarray
    model_tag: str = ""
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.complex128, copy=True)
        if samples.ndim != 2:
            raise ValueError("samples must be a (T, M) array")
        if samples.shape[0] < 1:
            raise EmptyDatasetError("dataset must hold at least one sample")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.num_samples


def _spatial_eig(params: SpatialModelParams, angles: np.ndarray, weights: np.ndarray):
    """Clipped, trace-normalized eigenpairs of a batch of spatial covariances."""
    coeffs, orders = _lag_kernel_coefficients(params.num_antennas, params.angle_grid_points)
    phi = _laplace_mixture_charfn(angles, weights, params.laplace_scale, orders)
    lags = phi @ coeffs.T
    lags = lags / lags[:, :1].real
    return _clipped_eig(_lags_to_covariance(lags))


def _spatial_batch(params: SpatialModelParams, T: int, rng: np.random.Generator) -> np.ndarray:
    M = params.num_antennas
    angles = rng.uniform(0.0, 2 * np.pi, (T, params.num_clusters))
    power = np.abs(crandn(rng, T, params.num_clusters)) ** 2
    total = power.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateDensityError("all cluster weights underflow to zero")
    w, U = _spatial_eig(params, angles, power / total)
    factor = U * np.sqrt(w)[:, None, :]
    return np.einsum("tij,tj->ti", factor, crandn(rng, T, M))


def generate_dataset(
    model: str,
    M: int,
    T: int,
    rng: np.random.Generator,
    params: SpatialModelParams | None = None,
    chunk: int = 4096,
) -> ChannelDataset:
    """Draw T channels from ``model`` ("iid" or "spatial").

    The spatial model uses a fresh cluster draw for every sample.
    """
    if T < 1:
        raise EmptyDatasetError("T must be >= 1")
    if model == "iid":
        return ChannelDataset(crandn(rng, T, M), model_tag="iid")
    if model != "spatial":
        raise ValueError(f"unknown channel model {model!r}")
    params = params or SpatialModelParams(M)
    if params.num_antennas != M:
        raise ValueError("params.num_antennas does not match M")
    parts = [_spatial_batch(params, min(chunk, T - s), rng) for s in range(0, T, chunk)]
    return ChannelDataset(np.concatenate(parts), model_tag="spatial")


def draw_channels(model: str, M: int, J: int, rng: np.random.Generator, params=None) -> np.ndarray:
    """M x J channel matrix with independent user channels."""
    return generate_dataset(model, M, J, rng, params=params).samples.T.copy()


def save_dataset(path, dataset) -> None:
    samples = dataset.samples if isinstance(dataset, ChannelDataset) else np.asarray(dataset)
    if samples.ndim != 2:
        raise ValueError("samples must be a (T, M) array")
    T, M = samples.shape
    if T == 0:
        raise EmptyDatasetError("refusing to save an empty dataset")
    payload = np.ascontiguousarray(samples, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, M, T))
        fh.write(payload.tobytes())


def load_dataset(path, expected_antennas: int | None = None) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file too short for dataset header")
    magic, version, M, T = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic bytes {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    expected = _HEADER.size + 16 * M * T
    if len(raw) != expected:
        raise DatasetFormatError(f"dataset truncated or padded: {len(raw)} bytes, expected {expected}")
    if expected_antennas is not None and M != expected_antennas:
        raise DatasetFormatError(f"dataset has M={M}, expected {expected_antennas}")
    samples = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(T, M)
    return ChannelDataset(samples.astype(np.complex128), model_tag=Path(path).stem)
