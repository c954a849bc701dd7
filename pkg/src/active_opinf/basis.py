"""POD basis construction from snapshot matrices."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .models import Array, DimensionMismatchError, DomainError, RankDeficiencyError

LOG = logging.getLogger("active_opinf")


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal N x n basis and the leading singular values it came from."""

    V: Array
    singular_values: Array

    @property
    def n(self) -> int:
        """Return the reduced dimension."""
        return self.V.shape[1]

    @property
    def state_dim(self) -> int:
        """Return the full dimension N."""
        return self.V.shape[0]

    def project(self, X: Array) -> Array:
        """Return V^T X."""
        return project(self.V, X)

    def lift(self, Z: Array) -> Array:
        """Return V Z."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[0] != self.n:
            raise DimensionMismatchError(f"Reduced data has {Z.shape[0]} rows, basis has {self.n}.")
        return self.V @ Z

    def projection_error(self, X: Array) -> float:
        """Return ||X - V V^T X||_F^2."""
        X = np.asarray(X, dtype=np.float64)
        residual = X - self.V @ self.project(X)
        return float(np.sum(residual**2))


def _fix_signs(U: Array) -> Array:
    """Flip columns so the entry of largest magnitude is positive."""
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def compute_pod(snapshots: Array, n: int) -> PodBasis:
    """Leading n left singular vectors of the raw (uncentred) snapshot matrix."""
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError("Snapshots must be a matrix with one state per column.")
    if n < 1 or n > min(X.shape):
        raise DomainError(f"Basis size must lie in [1, {min(X.shape)}] (got {n}).")
    U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesdd")
    tol = max(X.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    effective_rank = int(np.count_nonzero(s > tol))
    if n > effective_rank:
        raise RankDeficiencyError(
            f"Requested {n} basis vectors but the snapshots have effective rank {effective_rank}.",
            s_min=float(s[n - 1]),
            s_max=float(s[0]),
            required_rank=n,
            effective_rank=effective_rank,
        )
    LOG.info("POD basis: n=%s, captured energy %.6f", n, float(np.sum(s[:n] ** 2) / np.sum(s**2)))
    return PodBasis(V=_fix_signs(U[:, :n]), singular_values=s[:n].copy())


def project(V: Array, X: Array) -> Array:
    """Return V^T X."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != V.shape[0]:
        raise DimensionMismatchError(f"Data has {X.shape[0]} rows, basis has {V.shape[0]}.")
    return V.T @ X
