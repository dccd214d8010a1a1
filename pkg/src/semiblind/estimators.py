"""Channel estimators driven by a Gaussian prior, plus LS/ML, EM and decision-directed baselines.

Every estimator takes the decorrelated pilot observation ``y_p`` either as one
M-vector or as an M x J matrix (one column per user) together with the noise
variance of that observation (sigma^2 J / N_p). Semi-blind variants also take an
orthonormal basis ``V`` of the estimated signal subspace.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .channels import ChannelDataset, EmptyDatasetError
from .txrx import ConfigError, ReceivedBlock, constellation_points, decorrelate_pilots, nearest_points

__all__ = [
    "GaussianPrior",
    "EstimateReport",
    "EmJointResult",
    "EmConvergenceWarning",
    "ls_estimate",
    "ml_subspace_estimate",
    "lmmse_plain",
    "lmmse_subspace",
    "lmmse_projected",
    "projected_noise_variance",
    "sample_cov_prior",
    "em_joint_ml",
    "joint_ls",
    "observed_log_likelihood",
    "decision_directed",
    "make_report",
]


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    covariance: np.ndarray
    mean: np.ndarray | None = None
    _filters: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        C = np.asarray(self.covariance, dtype=np.complex128)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("covariance must be square")
        scale = max(np.abs(C).max(), 1.0)
        if np.abs(C - C.conj().T).max() > 1e-10 * scale:
            raise ValueError("covariance is not Hermitian")
        C = 0.5 * (C + C.conj().T)
        if np.linalg.eigvalsh(C).min() < -1e-10 * scale:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "covariance", C)
        if self.mean is not None:
            object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.complex128))

    @classmethod
    def identity(cls, M: int) -> "GaussianPrior":
        return cls(np.eye(M))

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def filter(self, noise_var: float) -> np.ndarray:
        """C (C + noise_var I)^{-1}, cached per noise level."""
        key = float(noise_var)
        W = self._filters.get(key)
        if W is None:
            W = _shrinkage_filter(self.covariance, key)
            self._filters[key] = W
        return W


@dataclass(frozen=True)
class EstimateReport:
    estimates: np.ndarray
    estimator_label: str
    per_user_se: np.ndarray


def make_report(label: str, H_hat: np.ndarray, H: np.ndarray) -> EstimateReport:
    se = np.sum(np.abs(H - H_hat) ** 2, axis=0)
    return EstimateReport(estimates=H_hat, estimator_label=label, per_user_se=se)


def _shrinkage_filter(C: np.ndarray, noise_var: float) -> np.ndarray:
    # C (C + s I)^{-1} = ((C + s I)^{-1} C)^H for Hermitian C
    A = C + noise_var * np.eye(C.shape[0])
    return linalg.solve(A, C, assume_a="pos").conj().T


def _per_column(fn, y, noise_var):
    """Apply fn(y_col, s) per column when noise variances differ across columns."""
    noise_var = np.asarray(noise_var, dtype=float)
    if noise_var.ndim == 0:
        return fn(y, float(noise_var))
    y = np.asarray(y)
    out = np.empty(y.shape, dtype=np.complex128)
    for j in range(y.shape[1]):
        out[:, j] = fn(y[:, j], float(noise_var[j]))
    return out


def _center(y, mean):
    if mean is None:
        return y, None
    mu = mean if y.ndim == 1 else mean[:, None]
    return y - mu, mu


def ls_estimate(y_p: np.ndarray) -> np.ndarray:
    return np.array(y_p, dtype=np.complex128, copy=True)


def ml_subspace_estimate(y_p: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Projection of the pilot observation onto range(V)."""
    y_p = np.asarray(y_p)
    if y_p.shape[0] != V.shape[0]:
        raise ValueError("dimension mismatch between y_p and V")
    return V @ (V.conj().T @ y_p)


def lmmse_plain(y_p: np.ndarray, prior: GaussianPrior, sigma2) -> np.ndarray:
    """C (C + sigma2 I)^{-1} y_p (mean-corrected if the prior has a mean)."""

    def run(y, s):
        yc, mu = _center(np.asarray(y), prior.mean)
        out = prior.filter(s) @ yc
        return out if mu is None else out + mu

    return _per_column(run, y_p, sigma2)


def lmmse_subspace(y_p: np.ndarray, V: np.ndarray, prior: GaussianPrior, sigma2) -> np.ndarray:
    """LMMSE solved in the coordinates of range(V) and lifted back with V."""
    V = np.asarray(V)
    if V.shape[0] != prior.dim or np.shape(y_p)[0] != prior.dim:
        raise ValueError("dimension mismatch")
    Cs = V.conj().T @ prior.covariance @ V
    Cs = 0.5 * (Cs + Cs.conj().T)

    def run(y, s):
        yc, mu = _center(np.asarray(y), prior.mean)
        W = _shrinkage_filter(Cs, s)
        out = V @ (W @ (V.conj().T @ yc))
        if mu is not None:
            out = out + V @ (V.conj().T @ mu)
        return out

    return _per_column(run, y_p, sigma2)


def projected_noise_variance(sigma2: float, M: int, J: int) -> float:
    """Per-entry variance of the projected noise under a Haar-distributed subspace."""
    return sigma2 * J / M


def lmmse_projected(y_p: np.ndarray, V: np.ndarray, prior: GaussianPrior, sigma2) -> np.ndarray:
    """C (C + sigma2 (J/M) I)^{-1} V V^H y_p."""
    V = np.asarray(V)
    M, J = V.shape
    if M != prior.dim or np.shape(y_p)[0] != M:
        raise ValueError("dimension mismatch")
    y_tilde = V @ (V.conj().T @ np.asarray(y_p))

    def run(y, s):
        yc, mu = _center(y, prior.mean)
        out = prior.filter(projected_noise_variance(s, M, J)) @ yc
        return out if mu is None else out + mu

    return _per_column(run, y_tilde, sigma2)


def sample_cov_prior(dataset) -> GaussianPrior:
    """Sample covariance (1/T) sum h h^H of a training set as a Gaussian prior."""
    H = dataset.samples if isinstance(dataset, ChannelDataset) else np.atleast_2d(np.asarray(dataset))
    if H.shape[0] == 0:
        raise EmptyDatasetError("empty dataset")
    C = H.T @ H.conj() / H.shape[0]
    return GaussianPrior(0.5 * (C + C.conj().T))


# --- EM joint maximum likelihood -------------------------------------------------


class EmConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EmJointResult:
    channels: np.ndarray
    iterations: int
    converged: bool
    log_likelihoods: tuple = ()


def joint_ls(Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """H = Y X^dagger for known transmit symbols X."""
    G = X @ X.conj().T
    return linalg.solve(G, X @ Y.conj().T, assume_a="pos").conj().T


def observed_log_likelihood(block: ReceivedBlock, H: np.ndarray, sigma2: float) -> float:
    """log p(Y | H) with known pilots and CN(0, I/J) payload symbols."""
    M, J = H.shape
    Yp, Yd = block.Y_pilot, block.Y_data
    R = Yp - H @ block.P
    ll = -R.size * np.log(np.pi * sigma2) - np.sum(np.abs(R) ** 2) / sigma2
    if Yd.shape[1]:
        Cy = H @ H.conj().T / J + sigma2 * np.eye(M)
        L = np.linalg.cholesky(Cy)
        Z = linalg.solve_triangular(L, Yd, lower=True)
        logdet = 2 * np.sum(np.log(np.real(np.diag(L))))
        ll += -Yd.shape[1] * (M * np.log(np.pi) + logdet) - np.sum(np.abs(Z) ** 2)
    return float(ll)


def em_joint_ml(
    block: ReceivedBlock,
    sigma2: float,
    max_iter: int = 500,
    tol: float = 1e-6,
    H0: np.ndarray | None = None,
    payload: np.ndarray | None = None,
    track_likelihood: bool = False,
) -> EmJointResult:
    """EM for the joint ML channel estimate with Gaussian payload symbols.

    E-step: posterior of each payload symbol vector under x ~ CN(0, I/J).
    M-step: H minimizing the expected complete-data squared error over pilot and
    payload columns. Starts from the pilot-only LS estimate unless ``H0`` is given.
    Passing the true ``payload`` makes the E-step degenerate (symbols known).
    """
    P, Yp, Yd = block.P, block.Y_pilot, block.Y_data
    J = P.shape[0]
    n_data = Yd.shape[1]
    if payload is not None:
        return EmJointResult(joint_ls(block.Y, np.hstack([P, payload])), 1, True)
    H = decorrelate_pilots(block) if H0 is None else np.array(H0, dtype=np.complex128)
    A_pilot = Yp @ P.conj().T
    B_pilot = P @ P.conj().T
    lls = [observed_log_likelihood(block, H, sigma2)] if track_likelihood else []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if n_data:
            # Sigma_x = (J I + H^H H / sigma2)^{-1}, x_hat = Sigma_x H^H y / sigma2
            prec = J * np.eye(J) + H.conj().T @ H / sigma2
            Sx = linalg.inv(prec, check_finite=False)
            Sx = 0.5 * (Sx + Sx.conj().T)
            Xh = Sx @ (H.conj().T @ Yd) / sigma2
            A = A_pilot + Yd @ Xh.conj().T
            B = B_pilot + Xh @ Xh.conj().T + n_data * Sx
        else:
            A, B = A_pilot, B_pilot
        H_new = linalg.solve(B, A.conj().T, assume_a="pos").conj().T
        change = np.linalg.norm(H_new - H) / max(np.linalg.norm(H), np.finfo(float).tiny)
        H = H_new
        if track_likelihood:
            lls.append(observed_log_likelihood(block, H, sigma2))
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"EM stopped after {it} iterations without converging", EmConvergenceWarning)
    return EmJointResult(H, it, converged, tuple(lls))


# --- decision-directed two-stage estimation ---------------------------------------

PilotEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def decision_directed(
    estimator: PilotEstimator,
    block: ReceivedBlock,
    constellation: str,
    return_decisions: bool = False,
):
    """Two-stage estimate that reuses decoded payload symbols as pilots.

    ``estimator(Y_obs, noise_vars)`` maps decorrelated observations (M x J) with
    per-user noise variances to channel estimates. Stage 1 runs it on the pilots,
    the payload is LMMSE-equalized and demapped to the nearest constellation point,
    and stage 2 decorrelates against [P, D_hat] and runs the estimator again.
    """
    if constellation == "gaussian":
        raise ConfigError("decision-directed estimation needs a discrete constellation")
    P = block.P
    J, N_p = P.shape
    sigma2 = block.noise_variance
    points = constellation_points(constellation, J)

    Yp = decorrelate_pilots(block)
    H1 = estimator(Yp, np.full(J, sigma2 * J / N_p))
    # x_hat = (H^H H + J sigma2 I)^{-1} H^H y  for E[x x^H] = I/J
    G = H1.conj().T @ H1 + J * sigma2 * np.eye(J)
    X_eq = linalg.solve(G, H1.conj().T @ block.Y_data, assume_a="pos")
    D_hat = nearest_points(X_eq, points)

    X = np.hstack([P, D_hat])
    gram = X @ X.conj().T
    try:
        gram_inv = linalg.inv(gram)
    except linalg.LinAlgError:
        gram_inv = None
    if gram_inv is None or not np.all(np.isfinite(gram_inv)):
        H2 = H1
    else:
        Y_full = block.Y @ X.conj().T @ gram_inv
        H2 = estimator(Y_full, sigma2 * np.real(np.diag(gram_inv)))
    return (H2, D_hat) if return_decisions else H2
