"""Signal-subspace estimation from received samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SubspaceEstimate",
    "sample_covariance",
    "estimate_subspace",
    "perfect_subspace",
    "project",
    "projector",
]


@dataclass(frozen=True)
class SubspaceEstimate:
    """Orthonormal M x J basis with its eigenvalues in descending order.

    ``degenerate`` is set when the J-th and (J+1)-th eigenvalues tie, in which case
    the subspace is not unique.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False

    @property
    def projector(self) -> np.ndarray:
        return projector(self.basis)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def _fix_phase(V: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made real positive
    idx = np.argmax(np.abs(V), axis=0)
    pivot = V[idx, np.arange(V.shape[1])]
    return V * (np.abs(pivot) / pivot)[None, :]


def sample_covariance(Y: np.ndarray) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y))
    N = Y.shape[1]
    if N == 0:
        raise ValueError("need at least one sample")
    C = Y @ Y.conj().T / N
    return 0.5 * (C + C.conj().T)


def estimate_subspace(Y: np.ndarray, J: int) -> SubspaceEstimate:
    """J dominant eigenvectors of (1/N) Y Y^H."""
    C = sample_covariance(Y)
    M = C.shape[0]
    if J > M:
        raise ValueError(f"J={J} exceeds M={M}")
    if J < 1:
        raise ValueError("J must be positive")
    w, U = np.linalg.eigh(C)
    w, U = w[::-1], U[:, ::-1]
    degenerate = False
    if J < M:
        gap = w[J - 1] - w[J]
        degenerate = bool(gap <= 1e-12 * max(abs(w[0]), np.finfo(float).tiny))
    V = _fix_phase(U[:, :J])
    return SubspaceEstimate(basis=V, eigenvalues=np.clip(w[:J], 0.0, None), degenerate=degenerate)


def perfect_subspace(H: np.ndarray) -> SubspaceEstimate:
    """Left singular vectors of the true channel matrix."""
    H = np.asarray(H)
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    if s[-1] <= 1e-12 * s[0]:
        raise np.linalg.LinAlgError("channel matrix is rank deficient")
    return SubspaceEstimate(basis=_fix_phase(U), eigenvalues=s**2)


def projector(V: np.ndarray) -> np.ndarray:
    return V @ V.conj().T


def project(V: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subspace coordinates V^H y and the projection V V^H y.

    ``y`` may be a vector or a matrix of column observations.
    """
    V = np.asarray(V)
    y = np.asarray(y)
    if y.shape[0] != V.shape[0]:
        raise ValueError(f"observation length {y.shape[0]} does not match basis rows {V.shape[0]}")
    coords = V.conj().T @ y
    return coords, V @ coords
