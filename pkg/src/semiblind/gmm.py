"""Zero-mean complex Gaussian mixture prior: EM fitting and the GMM channel estimators."""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .channels import ChannelDataset, EmptyDatasetError
from .estimators import projected_noise_variance

__all__ = [
    "GmmPrior",
    "GmmCollapseError",
    "ResponsibilityUnderflowWarning",
    "fit_gmm",
    "log_likelihood",
    "responsibilities",
    "gmm_pilot_estimate",
    "gmm_subspace_estimate",
    "gmm_projected_estimate",
    "save_gmm",
    "load_gmm",
]

log = logging.getLogger(__name__)

GMM_MAGIC = b"GMMP"
GMM_VERSION = 1
_COLLAPSE_WEIGHT = 1e-8
_LOADING = 1e-6


class GmmCollapseError(RuntimeError):
    pass


class ResponsibilityUnderflowWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class GmmPrior:
    weights: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: tuple = field(default=(), compare=False, repr=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        C = np.asarray(self.covariances, dtype=np.complex128)
        if C.ndim != 3 or C.shape[1] != C.shape[2] or C.shape[0] != w.size:
            raise ValueError("covariances must have shape (K, M, M) matching weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to one")
        scale = max(np.abs(C).max(), 1.0)
        if np.abs(C - np.swapaxes(C.conj(), 1, 2)).max() > 1e-10 * scale:
            raise ValueError("component covariances must be Hermitian")
        C = 0.5 * (C + np.swapaxes(C.conj(), 1, 2))
        w.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariances", C)

    @property
    def num_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.covariances.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GmmPrior):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.covariances, other.covariances
        )

    __hash__ = object.__hash__

    def permuted(self, order) -> "GmmPrior":
        order = np.asarray(order)
        return GmmPrior(self.weights[order], self.covariances[order])

    def projected_filters(self, noise_var: float):
        """Per-component filters C_k (C_k + s I)^{-1} and Cholesky factors of C_k + s I."""
        key = ("proj", float(noise_var))
        if key not in self._cache:
            self._cache[key] = _component_filters(self.covariances, float(noise_var))
        return self._cache[key]


def _component_filters(C: np.ndarray, noise_var: float):
    M = C.shape[-1]
    A = C + noise_var * np.eye(M)
    L = np.linalg.cholesky(A)
    # W_k = C_k A_k^{-1} = (A_k^{-1} C_k)^H
    W = np.swapaxes(np.linalg.solve(A, C).conj(), -1, -2)
    return W, L


def _log_gauss_chol(L: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """log CN(y; 0, L L^H) for columns of Y, all components at once -> (K, n)."""
    K, M, _ = L.shape
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=1, axis2=2))), axis=1)
    Z = np.linalg.solve(L, np.broadcast_to(Y, (K,) + Y.shape))
    # an infinite quadratic form is handled by the underflow fallback
    with np.errstate(over="ignore"):
        quad = np.sum(np.abs(Z) ** 2, axis=1)
    return -M * np.log(np.pi) - logdet[:, None] - quad


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    """Column-wise softmax of log-probabilities (K, n) with an underflow fallback."""
    norm = logsumexp(logp, axis=0, keepdims=True)
    bad = ~np.isfinite(norm[0])
    resp = np.exp(logp - np.where(np.isfinite(norm), norm, 0.0))
    if np.any(bad):
        warnings.warn(
            "all component densities underflowed; using uniform responsibilities",
            ResponsibilityUnderflowWarning,
        )
        resp[:, bad] = 1.0 / logp.shape[0]
    return resp


def responsibilities(prior: GmmPrior, observation: np.ndarray, noise_cov=0.0) -> np.ndarray:
    """p(k | y) for y ~ sum_k p(k) CN(0, C_k + noise_cov).

    ``noise_cov`` is a scalar (times identity) or an M x M matrix. Returns shape
    (K,) for a vector observation and (K, n) for an M x n matrix.
    """
    y = np.asarray(observation)
    Y = y[:, None] if y.ndim == 1 else y
    noise_cov = np.asarray(noise_cov)
    if noise_cov.ndim == 0:
        noise_cov = float(noise_cov) * np.eye(prior.dim)
    L = np.linalg.cholesky(prior.covariances + noise_cov)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights)
    resp = _normalize_log(logw[:, None] + _log_gauss_chol(L, Y))
    return resp[:, 0] if y.ndim == 1 else resp


def _mixture_estimate(prior: GmmPrior, Y: np.ndarray, noise_var: float) -> np.ndarray:
    W, L = prior.projected_filters(noise_var)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights)
    resp = _normalize_log(logw[:, None] + _log_gauss_chol(L, Y))
    per_comp = W @ Y
    return np.einsum("kn,kmn->mn", resp, per_comp)


def _as_matrix(y):
    y = np.asarray(y)
    return (y[:, None], True) if y.ndim == 1 else (y, False)


def gmm_pilot_estimate(y_p: np.ndarray, prior: GmmPrior, sigma2) -> np.ndarray:
    """Pilot-only GMM estimate: responsibility-weighted per-component LMMSE."""
    Y, vec = _as_matrix(y_p)
    if Y.shape[0] != prior.dim:
        raise ValueError("dimension mismatch")
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.ndim == 0:
        out = _mixture_estimate(prior, Y, float(sigma2))
    else:
        out = np.column_stack(
            [_mixture_estimate(prior, Y[:, [j]], float(s))[:, 0] for j, s in enumerate(sigma2)]
        )
    return out[:, 0] if vec else out


def gmm_projected_estimate(y_p: np.ndarray, V: np.ndarray, prior: GmmPrior, sigma2: float) -> np.ndarray:
    """Per-component projected LMMSE on V V^H y_p with noise sigma2 (J/M) I."""
    Y, vec = _as_matrix(y_p)
    M, J = V.shape
    if Y.shape[0] != M or prior.dim != M:
        raise ValueError("dimension mismatch")
    Y_tilde = V @ (V.conj().T @ Y)
    out = _mixture_estimate(prior, Y_tilde, projected_noise_variance(sigma2, M, J))
    return out[:, 0] if vec else out


def gmm_subspace_estimate(y_p: np.ndarray, V: np.ndarray, prior: GmmPrior, sigma2: float) -> np.ndarray:
    """Per-component LMMSE in the coordinates of range(V), lifted back with V."""
    Y, vec = _as_matrix(y_p)
    M, J = V.shape
    if Y.shape[0] != M or prior.dim != M:
        raise ValueError("dimension mismatch")
    Vh = V.conj().T
    Cs = Vh @ prior.covariances @ V
    Cs = 0.5 * (Cs + np.swapaxes(Cs.conj(), 1, 2))
    A = Cs + sigma2 * np.eye(J)
    L = np.linalg.cholesky(A)
    Yc = Vh @ Y
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights)
    resp = _normalize_log(logw[:, None] + _log_gauss_chol(L, Yc))
    per_comp = Cs @ np.linalg.solve(A, np.broadcast_to(Yc, (prior.num_components,) + Yc.shape))
    out = V @ np.einsum("kn,kjn->jn", resp, per_comp)
    return out[:, 0] if vec else out


# --- fitting -------------------------------------------------------------------------


def _load(C: np.ndarray) -> np.ndarray:
    """Diagonal loading of 1e-6 * tr(C)/M for components that are numerically singular."""
    M = C.shape[-1]
    level = _LOADING * np.real(np.trace(C, axis1=-2, axis2=-1)) / M
    smallest = np.linalg.eigvalsh(C)[..., 0]
    needs = smallest < level
    if np.any(needs):
        C = C.copy()
        C[needs] += level[needs, None, None] * np.eye(M)
    return C


def _data_log_densities(H: np.ndarray, weights: np.ndarray, C: np.ndarray):
    """(K, T) joint log-densities log p(k) + log CN(h_t; 0, C_k)."""
    K, M, _ = C.shape
    L = np.linalg.cholesky(C)
    Linv = np.linalg.inv(L)
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=1, axis2=2))), axis=1)
    out = np.empty((K, H.shape[0]))
    for k in range(K):
        Z = (H @ Linv[k].T).view(np.float64)
        out[k] = -M * np.log(np.pi) - logdet[k] - np.sum(Z * Z, axis=1)
    with np.errstate(divide="ignore"):
        out += np.log(weights)[:, None]
    return out


def log_likelihood(prior: GmmPrior, data) -> float:
    """Mean per-sample log-likelihood of a dataset under the mixture."""
    H = data.samples if isinstance(data, ChannelDataset) else np.asarray(data)
    return float(np.mean(logsumexp(_data_log_densities(H, prior.weights, prior.covariances), axis=0)))


def _m_step(H: np.ndarray, resp: np.ndarray):
    """resp has shape (K, T); returns (counts, covariances)."""
    K = resp.shape[0]
    M = H.shape[1]
    counts = resp.sum(axis=1)
    Ht = np.ascontiguousarray(H.T)
    Hc = H.conj()
    C = np.empty((K, M, M), dtype=np.complex128)
    for k in range(K):
        C[k] = (Ht * resp[k]) @ Hc
    C /= np.maximum(counts, np.finfo(float).tiny)[:, None, None]
    C = 0.5 * (C + np.swapaxes(C.conj(), 1, 2))
    return counts, C


def _initial_labels(H: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeded clustering of the angular power profile |DFT(h)|^2."""
    if K == 1:
        return np.zeros(H.shape[0], dtype=int)
    feats = np.abs(np.fft.fft(H, axis=1, norm="ortho")) ** 2
    feats = feats / np.maximum(feats.sum(axis=1, keepdims=True), np.finfo(float).tiny)
    seed = int(rng.integers(2**32 - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(feats, K, minit="++", seed=seed, iter=10)
    return labels


def fit_gmm(
    dataset,
    K: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> GmmPrior:
    """Fit a zero-mean complex GMM with EM.

    Stops when the relative change of the mean log-likelihood drops below ``tol``
    or after ``max_iter`` iterations. A component whose weight falls below 1e-8 is
    re-seeded once from the global sample covariance; a second collapse raises
    :class:`GmmCollapseError`.
    """
    H = dataset.samples if isinstance(dataset, ChannelDataset) else np.asarray(dataset, dtype=np.complex128)
    T, M = H.shape
    if T == 0:
        raise EmptyDatasetError("empty dataset")
    if T < K:
        raise ValueError(f"need at least K={K} samples, got {T}")
    rng = rng if rng is not None else np.random.default_rng()

    labels = _initial_labels(H, K, rng)
    resp = np.zeros((K, T))
    resp[labels, np.arange(T)] = 1.0
    global_cov = H.T @ H.conj() / T
    reseeded = np.zeros(K, dtype=bool)

    trace = []
    prev = -np.inf
    for it in range(max_iter):
        counts, C = _m_step(H, resp)
        weights = counts / T
        collapsed = weights < _COLLAPSE_WEIGHT
        if np.any(collapsed):
            if np.any(reseeded & collapsed):
                raise GmmCollapseError(f"components {np.flatnonzero(reseeded & collapsed)} collapsed twice")
            for k in np.flatnonzero(collapsed):
                log.info("re-seeding collapsed GMM component %d", k)
                perturb = rng.uniform(0.5, 1.5, M)
                C[k] = global_cov * np.sqrt(np.outer(perturb, perturb))
                weights[k] = 1.0 / K
            reseeded |= collapsed
            weights = weights / weights.sum()
        C = _load(C)
        logp = _data_log_densities(H, weights, C)
        norm = logsumexp(logp, axis=0)
        ll = float(np.mean(norm))
        trace.append(ll)
        log.debug("GMM EM iteration %d: mean log-likelihood %.10g", it, ll)
        resp = np.exp(logp - norm[None, :])
        if np.isfinite(prev) and abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
    return GmmPrior(weights / weights.sum(), C, log_likelihood_trace=tuple(trace))


# --- persistence -------------------------------------------------------------------


def save_gmm(path, prior: GmmPrior) -> None:
    K, M = prior.num_components, prior.dim
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", GMM_MAGIC, GMM_VERSION, M, K))
        fh.write(np.ascontiguousarray(prior.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(prior.covariances, dtype="<c16").tobytes())


def load_gmm(path, expected_antennas: int | None = None) -> GmmPrior:
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sIII")
    if len(raw) < head.size:
        raise ValueError("file too short for GMM header")
    magic, version, M, K = head.unpack_from(raw)
    if magic != GMM_MAGIC:
        raise ValueError(f"bad magic bytes {magic!r}")
    if version != GMM_VERSION:
        raise ValueError(f"unsupported GMM version {version}")
    if len(raw) != head.size + 8 * K + 16 * K * M * M:
        raise ValueError("GMM file truncated or padded")
    if expected_antennas is not None and M != expected_antennas:
        raise ValueError(f"GMM prior has M={M}, expected {expected_antennas}")
    w = np.frombuffer(raw, dtype="<f8", count=K, offset=head.size)
    C = np.frombuffer(raw, dtype="<c16", offset=head.size + 8 * K).reshape(K, M, M)
    w = w.astype(float)
    return GmmPrior(w / w.sum(), C.astype(np.complex128))
