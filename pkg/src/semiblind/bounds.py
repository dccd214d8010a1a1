"""Closed-form MSE expressions, large-array limits and estimation-error bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "IidMseTable",
    "UnsupportedCaseError",
    "mse_closed_forms",
    "theorem1_asymptotics",
    "bcrb_deterministic_iid",
    "theorem2_bound",
    "projected_filter_iid",
    "subspace_error_mse",
]


class UnsupportedCaseError(ValueError):
    """The requested closed form is only known for i.i.d. channels."""


@dataclass(frozen=True)
class IidMseTable:
    """Per-user MSE (sum over antennas) of the four Gaussian-prior estimators."""

    mse_plain: float
    mse_ml: float
    mse_proj: float
    mse_sub: float

    def nmse(self, M: int) -> dict:
        return {k: v / M for k, v in self.as_dict().items()}

    def as_dict(self) -> dict:
        return {"plain": self.mse_plain, "ml": self.mse_ml, "proj": self.mse_proj, "sub": self.mse_sub}


def mse_closed_forms(M: int, J: int, sigma2: float, eigenvalues=None, include_sub: bool = True) -> IidMseTable:
    """Analytic MSE of plain, ML-subspace, projected and subspace LMMSE.

    ``eigenvalues`` is the spectrum of the channel covariance (default: all ones).
    The subspace LMMSE has a closed form only for the identity covariance; asking
    for it with another spectrum raises :class:`UnsupportedCaseError` unless
    ``include_sub`` is False, in which case ``mse_sub`` is NaN.
    """
    if not 1 <= J <= M:
        raise ValueError("need 1 <= J <= M")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    rho = np.ones(M) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    if rho.shape != (M,) or np.any(rho < 0):
        raise ValueError("eigenvalues must be M nonnegative values")
    plain = float(np.sum(rho * sigma2 / (rho + sigma2))) if sigma2 > 0 else 0.0
    proj = float(np.sum(rho * sigma2 / ((M / J) * rho + sigma2))) if sigma2 > 0 else 0.0
    ml = J * sigma2
    iid = np.allclose(rho, 1.0, rtol=0, atol=1e-12)
    if iid:
        sub = sigma2 * (M * sigma2 + J) / (1.0 + sigma2) ** 2
    elif include_sub:
        raise UnsupportedCaseError("subspace LMMSE closed form exists only for identity covariance")
    else:
        sub = float("nan")
    return IidMseTable(mse_plain=plain, mse_ml=float(ml), mse_proj=proj, mse_sub=float(sub))


def theorem1_asymptotics(J: int, sigma2: float, alpha: float) -> tuple[float, float]:
    """Large-array limit of the projected LMMSE MSE, J sigma^2, and the
    deterministic CRB limit (1 + alpha) J sigma^2 for alpha = lim M/N."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return J * sigma2, (1.0 + alpha) * J * sigma2


def bcrb_deterministic_iid(X: np.ndarray, P_H: np.ndarray, sigma2: float, num_pilots: int):
    """Bayesian bound for deterministic symbols and i.i.d. CN(0, I) channels.

    Evaluates sigma^2 ((X* X^T) kron P_H^perp + (P* P^T) kron P_H + sigma^2 I)^{-1}
    with P the first ``num_pilots`` columns of X and returns the block of the
    first user together with its trace.
    """
    X = np.asarray(X)
    P_H = np.asarray(P_H)
    J = X.shape[0]
    M = P_H.shape[0]
    if P_H.shape != (M, M):
        raise ValueError("P_H must be square")
    if not 1 <= num_pilots <= X.shape[1]:
        raise ValueError("num_pilots out of range")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    P = X[:, :num_pilots]
    P_perp = np.eye(M) - P_H
    info = np.kron(X.conj() @ X.T, P_perp) + np.kron(P.conj() @ P.T, P_H)
    B = sigma2 * np.linalg.inv(info + sigma2 * np.eye(J * M))
    block = B[:M, :M]
    return block, float(np.real(np.trace(block)))


def projected_filter_iid(M: int, J: int, sigma2: float) -> np.ndarray:
    """Projected LMMSE filter for an identity prior: M / (M + J sigma^2) I."""
    return (M / (M + J * sigma2)) * np.eye(M)


def subspace_error_mse(W: np.ndarray, V_hat: np.ndarray, V: np.ndarray, h: np.ndarray, sigma2: float) -> float:
    """E_n ||W (V_hat V_hat^H - V V^H)(h + n)||^2 for n ~ CN(0, sigma2 I)."""
    D = V_hat @ V_hat.conj().T - V @ V.conj().T
    WD = np.asarray(W) @ D
    return float(np.sum(np.abs(WD @ h) ** 2) + sigma2 * np.sum(np.abs(WD) ** 2))


def theorem2_bound(
    H: np.ndarray,
    sigma2: float,
    N: int,
    epsilon: float,
    W,
    user: int = 0,
    eigenvalue_convention: str = "gram",
) -> float:
    """Lower bound on P(E||h_proj(V_hat) - h_proj(V)||^2 <= epsilon).

    Evaluates 1 - 4 k^2 (M - J) lambda_max(W^H W) sum_j (|s_max|^2 + 2 sigma^2) / lambda_j^2
    / (J^2 N epsilon) with k^2 = sigma^2 (sigma^2 + tr(H H^H / J + sigma^2 I)) and
    s = V^H h for the channel ``H[:, user]``.

    ``eigenvalue_convention`` selects lambda_j: "gram" uses the eigenvalues of
    H H^H; "signal" uses those of H H^H / J, the signal part of the received
    covariance. The result may be negative (vacuous); a rank-deficient H raises.
    """
    H = np.asarray(H)
    M, J = H.shape
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    U, sv, _ = np.linalg.svd(H, full_matrices=False)
    lam = sv**2
    if lam[-1] <= 1e-12 * lam[0]:
        raise np.linalg.LinAlgError("H is rank deficient; the bound is undefined")
    if eigenvalue_convention == "signal":
        lam = lam / J
    elif eigenvalue_convention != "gram":
        raise ValueError(f"unknown eigenvalue convention {eigenvalue_convention!r}")
    W = np.asarray(W)
    lam_w = float(W**2) if W.ndim == 0 else float(np.linalg.eigvalsh(W.conj().T @ W)[-1])
    tr_cov = np.sum(np.abs(H) ** 2) / J + M * sigma2
    k2 = sigma2 * (sigma2 + tr_cov)
    s = U.conj().T @ H[:, user]
    s_max2 = float(np.max(np.abs(s)) ** 2)
    total = np.sum((s_max2 + 2 * sigma2) / lam**2)
    return float(1.0 - 4 * k2 * (M - J) * lam_w * total / (J**2 * N * epsilon))
