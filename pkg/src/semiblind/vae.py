"""Variational autoencoder prior with a circulant conditional covariance.

The decoder maps a latent z to a conditional mean mu(z) and a positive spectrum
c(z); the conditional covariance is C(z) = Q^H diag(c(z)) Q with Q the unitary
DFT, so every linear solve against C(z) + s I is a pointwise division in the DFT
domain.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .channels import ChannelDataset, EmptyDatasetError, crandn
from .estimators import projected_noise_variance

__all__ = [
    "VaeConfig",
    "VaePrior",
    "VaeTrainingError",
    "train_vae",
    "elbo",
    "kl_divergence",
    "gaussian_log_density",
    "gradient_check",
    "vae_pilot_estimate",
    "vae_projected_estimate",
    "vae_subspace_estimate",
    "save_vae",
    "load_vae",
]

log = logging.getLogger(__name__)

VAE_MAGIC = b"VAEP"
VAE_VERSION = 1
_CLAMP = 20.0
_DTYPE = torch.float64


class VaeTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class VaeConfig:
    """Network and training hyperparameters.

    ``hidden`` lists encoder widths; the decoder mirrors them. ``num_users`` is the
    subspace dimension used to synthesize projected training observations.
    """

    latent_dim: int = 32
    hidden: tuple = (256, 128)
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    snr_range_db: tuple = (-10.0, 20.0)
    num_users: int = 8
    zero_mean: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "snr_range_db", tuple(float(s) for s in self.snr_range_db))
        if self.latent_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("latent_dim and hidden widths must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.num_users < 1:
            raise ValueError("epochs, batch_size and num_users must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ValueError("snr_range_db must be (low, high)")


def _positive(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(torch.clamp(x, -_CLAMP, _CLAMP))


def _mlp(widths) -> nn.Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(nn.Linear(a, b, dtype=_DTYPE))
        if i < len(widths) - 2:
            layers.append(nn.Softplus())
    return nn.Sequential(*layers)


class _VaeNet(nn.Module):
    def __init__(self, M: int, latent_dim: int, hidden: tuple, zero_mean: bool = False):
        super().__init__()
        self.M = M
        self.latent_dim = latent_dim
        self.zero_mean = zero_mean
        self.encoder = _mlp((2 * M,) + hidden + (2 * latent_dim,))
        self.decoder = _mlp((latent_dim,) + hidden[::-1] + (3 * M,))

    def encode(self, y_real: torch.Tensor):
        out = self.encoder(y_real)
        mu, log_var = out[..., : self.latent_dim], out[..., self.latent_dim :]
        return mu, _positive(log_var)

    def decode(self, z: torch.Tensor):
        """Returns (mean as complex tensor, positive spectrum c)."""
        out = self.decoder(z)
        M = self.M
        mean = torch.complex(out[..., :M], out[..., M : 2 * M])
        if self.zero_mean:
            mean = torch.zeros_like(mean)
        return mean, _positive(out[..., 2 * M :])


def _to_real(y: np.ndarray) -> torch.Tensor:
    y = torch.as_tensor(np.asarray(y, dtype=np.complex128))
    return torch.cat([y.real, y.imag], dim=-1)


def gaussian_log_density(h, mean, spectrum):
    """log CN(h; mean, Q^H diag(spectrum) Q) evaluated in the DFT domain (torch)."""
    M = h.shape[-1]
    r = torch.fft.fft(h - mean, dim=-1, norm="ortho")
    return -M * np.log(np.pi) - torch.sum(torch.log(spectrum), -1) - torch.sum(r.abs() ** 2 / spectrum, -1)


def kl_divergence(mu, var):
    """KL(N(mu, diag(var)) || N(0, I)) along the last axis (torch or numpy)."""
    if isinstance(mu, torch.Tensor):
        return 0.5 * torch.sum(var + mu**2 - 1.0 - torch.log(var), -1)
    mu, var = np.asarray(mu), np.asarray(var)
    return 0.5 * np.sum(var + mu**2 - 1.0 - np.log(var), axis=-1)


def _elbo_terms(net: _VaeNet, h: torch.Tensor, y_real: torch.Tensor, eps: torch.Tensor | None):
    mu, var = net.encode(y_real)
    z = mu if eps is None else mu + torch.sqrt(var) * eps
    mean, spec = net.decode(z)
    return gaussian_log_density(h, mean, spec), kl_divergence(mu, var)


class VaePrior:
    """Trained VAE. Inference methods accept one vector or a (n, M) batch."""

    def __init__(self, net: _VaeNet, config: VaeConfig, history=()):
        self._net = net.eval()
        for p in self._net.parameters():
            p.requires_grad_(False)
        self.config = config
        self.training_history = tuple(history)

    @property
    def num_antennas(self) -> int:
        return self._net.M

    @property
    def latent_dim(self) -> int:
        return self._net.latent_dim

    @property
    def network(self) -> _VaeNet:
        return self._net

    def state_arrays(self) -> dict:
        return {k: v.detach().numpy().copy() for k, v in self._net.state_dict().items()}

    def encode(self, y_tilde: np.ndarray):
        """Variational posterior parameters (mu, var) for an observation."""
        y = np.asarray(y_tilde)
        if y.shape[-1] != self.num_antennas:
            raise ValueError(f"expected length {self.num_antennas}, got {y.shape[-1]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("observation contains non-finite values")
        with torch.no_grad():
            mu, var = self._net.encode(_to_real(y))
        return mu.numpy(), var.numpy()

    def decode_spectrum(self, z: np.ndarray):
        """Conditional mean and covariance spectrum c(z) for latent z."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent length {self.latent_dim}, got {z.shape[-1]}")
        with torch.no_grad():
            mean, spec = self._net.decode(torch.as_tensor(z))
        return mean.numpy(), spec.numpy()

    def decode(self, z: np.ndarray):
        """Conditional mean and dense covariance Q^H diag(c) Q for one latent."""
        mean, spec = self.decode_spectrum(z)
        return mean, circulant_from_spectrum(spec)


def dft_matrix(M: int) -> np.ndarray:
    """Unitary DFT matrix Q with Q x = fft(x, norm="ortho")."""
    return np.fft.fft(np.eye(M), axis=0, norm="ortho")


def circulant_from_spectrum(spec: np.ndarray) -> np.ndarray:
    spec = np.asarray(spec)
    Q = dft_matrix(spec.shape[-1])
    C = (Q.conj().T * spec[..., None, :]) @ Q
    return 0.5 * (C + np.swapaxes(C.conj(), -1, -2))


def elbo(prior: VaePrior, h_sample, y_tilde, rng: np.random.Generator, deterministic: bool = False) -> float:
    """Single-sample reparameterized ELBO of h given the encoder input y_tilde.

    With ``deterministic`` the latent is the encoder mean, which is the
    zero-variance limit of the reparameterized sample.
    """
    h = torch.as_tensor(np.asarray(h_sample, dtype=np.complex128))
    y = _to_real(y_tilde)
    eps = None if deterministic else torch.as_tensor(rng.standard_normal(prior.latent_dim))
    with torch.no_grad():
        rec, kl = _elbo_terms(prior.network, h, y, eps)
    return float(rec - kl)


# --- training ----------------------------------------------------------------------


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def _build_net(M: int, config: VaeConfig, seed: int) -> _VaeNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return _VaeNet(M, config.latent_dim, config.hidden, config.zero_mean)


def _synthesize_projected(H: np.ndarray, batch_idx: np.ndarray, J: int, sigma2: float, rng):
    """VV^H (h + n) with V spanning h and J-1 channels drawn from the training set."""
    T, M = H.shape
    B = batch_idx.size
    h = H[batch_idx]
    J = min(J, M)
    if J > 1:
        comp = H[rng.integers(0, T, size=(B, J - 1))]
        stack = np.concatenate([h[:, :, None], np.swapaxes(comp, 1, 2)], axis=2)
        V, _ = np.linalg.qr(stack)
    else:
        V = (h / np.linalg.norm(h, axis=1, keepdims=True))[:, :, None]
    y = h + np.sqrt(sigma2) * crandn(rng, B, M)
    coords = np.einsum("bmj,bm->bj", V.conj(), y)
    return np.einsum("bmj,bj->bm", V, coords)


def train_vae(dataset, config: VaeConfig | None = None, rng: np.random.Generator | None = None) -> VaePrior:
    """Maximize the ELBO with Adam; returns the parameters after the last epoch.

    Each batch draws one noise variance log-uniformly over ``config.snr_range_db``.
    Raises :class:`VaeTrainingError` if the loss becomes non-finite.
    """
    config = config or VaeConfig()
    rng = rng if rng is not None else np.random.default_rng()
    H = dataset.samples if isinstance(dataset, ChannelDataset) else np.asarray(dataset, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] == 0:
        raise EmptyDatasetError("training set is empty")
    T, M = H.shape
    net = _build_net(M, config, _seed_from(rng))
    net.train()
    gen = torch.Generator().manual_seed(_seed_from(rng))
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    H_t = torch.tensor(H)
    lo, hi = config.snr_range_db
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(T)
        epoch_sum = 0.0
        for b, start in enumerate(range(0, T, config.batch_size)):
            idx = order[start : start + config.batch_size]
            sigma2 = 10.0 ** (-rng.uniform(lo, hi) / 10.0)
            y = _synthesize_projected(H, idx, config.num_users, sigma2, rng)
            eps = torch.randn(idx.size, config.latent_dim, generator=gen, dtype=_DTYPE)
            rec, kl = _elbo_terms(net, H_t[idx], _to_real(y), eps)
            loss = -(rec - kl).mean()
            if not torch.isfinite(loss):
                raise VaeTrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b} "
                    f"(reconstruction {rec.mean().item():.4g}, KL {kl.mean().item():.4g}, sigma2 {sigma2:.3g})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(-loss.item())
            epoch_sum += -loss.item() * idx.size
        log.info("VAE epoch %d: mean ELBO %.6g", epoch, epoch_sum / T)
    return VaePrior(net, config, history)


def gradient_check(prior_or_net, h, y_tilde, eps=None, step: float = 1e-6) -> dict:
    """Relative error between autograd and central finite-difference gradients of the ELBO.

    Returns one entry per parameter tensor: ||g_auto - g_fd|| / ||g_fd||.
    """
    net = prior_or_net.network if isinstance(prior_or_net, VaePrior) else prior_or_net
    h = torch.as_tensor(np.atleast_2d(np.asarray(h, dtype=np.complex128)))
    y = _to_real(np.atleast_2d(y_tilde))
    eps = None if eps is None else torch.as_tensor(np.atleast_2d(eps), dtype=_DTYPE)
    params = dict(net.named_parameters())
    flags = {k: p.requires_grad for k, p in params.items()}

    def objective():
        rec, kl = _elbo_terms(net, h, y, eps)
        return (rec - kl).sum()

    try:
        for p in params.values():
            p.requires_grad_(True)
            p.grad = None
        objective().backward()
        auto = {k: p.grad.detach().clone() for k, p in params.items()}
        errors = {}
        with torch.no_grad():
            for k, p in params.items():
                flat = p.view(-1)
                fd = torch.empty_like(flat)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + step
                    up = objective().item()
                    flat[i] = orig - step
                    down = objective().item()
                    flat[i] = orig
                    fd[i] = (up - down) / (2 * step)
                denom = max(torch.linalg.norm(fd).item(), np.finfo(float).tiny)
                errors[k] = torch.linalg.norm(auto[k].view(-1) - fd).item() / denom
    finally:
        for k, p in params.items():
            p.grad = None
            p.requires_grad_(flags[k])
    return errors


# --- estimators ----------------------------------------------------------------------


def _columns(y):
    y = np.asarray(y)
    return (y[:, None], True) if y.ndim == 1 else (y, False)


def _circulant_lmmse(prior: VaePrior, Y_obs: np.ndarray, noise_var) -> np.ndarray:
    """mu + C (C + s I)^{-1} (y - mu) with z = mu_phi(y), for columns of Y_obs."""
    mu_z, _ = prior.encode(Y_obs.T)
    mean, spec = prior.decode_spectrum(mu_z)
    s = np.broadcast_to(np.asarray(noise_var, dtype=float), (Y_obs.shape[1],))[:, None]
    r = np.fft.fft(Y_obs.T - mean, axis=1, norm="ortho")
    out = mean + np.fft.ifft(spec / (spec + s) * r, axis=1, norm="ortho")
    return out.T


def vae_pilot_estimate(y_p: np.ndarray, prior: VaePrior, sigma2) -> np.ndarray:
    """Pilot-only VAE estimate, the encoder sees y_p directly."""
    Y, vec = _columns(y_p)
    out = _circulant_lmmse(prior, Y, sigma2)
    return out[:, 0] if vec else out


def vae_projected_estimate(y_p: np.ndarray, V: np.ndarray, prior: VaePrior, sigma2) -> np.ndarray:
    """Circulant LMMSE on VV^H y_p with noise variance sigma2 J/M."""
    Y, vec = _columns(y_p)
    M, J = V.shape
    if Y.shape[0] != M or prior.num_antennas != M:
        raise ValueError("dimension mismatch")
    Y_tilde = V @ (V.conj().T @ Y)
    out = _circulant_lmmse(prior, Y_tilde, projected_noise_variance(np.asarray(sigma2, dtype=float), M, J))
    return out[:, 0] if vec else out


def vae_subspace_estimate(y_p: np.ndarray, V: np.ndarray, prior: VaePrior, sigma2) -> np.ndarray:
    """LMMSE in the coordinates of range(V) with the decoded covariance V^H C(z) V.

    The decoded mean is added back through its projection V V^H mu(z).
    """
    Y, vec = _columns(y_p)
    M, J = V.shape
    if Y.shape[0] != M or prior.num_antennas != M:
        raise ValueError("dimension mismatch")
    Vh = V.conj().T
    mu_z, _ = prior.encode((V @ (Vh @ Y)).T)
    mean, spec = prior.decode_spectrum(mu_z)
    s = np.broadcast_to(np.asarray(sigma2, dtype=float), (Y.shape[1],))
    # V^H C V = (Q V)^H diag(c) (Q V)
    QV = np.fft.fft(V, axis=0, norm="ortho")
    out = np.empty_like(Y, dtype=np.complex128)
    for n in range(Y.shape[1]):
        Cs = (QV.conj().T * spec[n]) @ QV
        Cs = 0.5 * (Cs + Cs.conj().T)
        coords = Vh @ (Y[:, n] - mean[n])
        out[:, n] = V @ (Cs @ np.linalg.solve(Cs + s[n] * np.eye(J), coords)) + V @ (Vh @ mean[n])
    return out[:, 0] if vec else out


# --- persistence ---------------------------------------------------------------------


def save_vae(path, prior: VaePrior) -> None:
    state = prior.network.state_dict()
    cfg = prior.config
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", VAE_MAGIC, VAE_VERSION, int(cfg.zero_mean), prior.num_antennas, len(state)))
        for t in state.values():
            fh.write(struct.pack("<I", t.dim()))
            fh.write(struct.pack(f"<{t.dim()}I", *t.shape))
        for t in state.values():
            fh.write(np.ascontiguousarray(t.detach().numpy(), dtype="<f8").tobytes())


def load_vae(path, expected_antennas: int | None = None) -> VaePrior:
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sIIII")
    if len(raw) < head.size:
        raise ValueError("file too short for VAE header")
    magic, version, flags, M, n = head.unpack_from(raw)
    if magic != VAE_MAGIC:
        raise ValueError(f"bad magic bytes {magic!r}")
    if version != VAE_VERSION:
        raise ValueError(f"unsupported VAE version {version}")
    if expected_antennas is not None and M != expected_antennas:
        raise ValueError(f"VAE prior has M={M}, expected {expected_antennas}")
    off = head.size
    shapes = []
    try:
        for _ in range(n):
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shapes.append(struct.unpack_from(f"<{ndim}I", raw, off))
            off += 4 * ndim
    except struct.error as exc:
        raise ValueError("VAE shape table truncated") from exc
    sizes = [int(np.prod(s)) for s in shapes]
    if len(raw) != off + 8 * sum(sizes):
        raise ValueError("VAE parameter block truncated or padded")
    # linear layers alternate weight (out, in) and bias (out,); encoder and decoder
    # have the same depth
    weights = shapes[0::2]
    if n % 4 or not all(len(w) == 2 for w in weights):
        raise ValueError("cannot infer VAE architecture from shape table")
    n_enc = len(weights) // 2
    if weights[0][1] != 2 * M or weights[-1][0] != 3 * M:
        raise ValueError("VAE layer shapes do not match M")
    latent = weights[n_enc][1]
    hidden = tuple(w[0] for w in weights[: n_enc - 1])
    config = VaeConfig(latent_dim=latent, hidden=hidden, zero_mean=bool(flags & 1))
    net = _VaeNet(M, latent, hidden, config.zero_mean)
    state = net.state_dict()
    if [tuple(t.shape) for t in state.values()] != [tuple(s) for s in shapes]:
        raise ValueError("VAE shape table does not match a supported architecture")
    new_state = {}
    for (k, _), shape, size in zip(state.items(), shapes, sizes):
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape)
        new_state[k] = torch.tensor(arr.astype(np.float64))
        off += 8 * size
    net.load_state_dict(new_state)
    return VaePrior(net, config)
