"""Operator-inference regression, the intrusive oracle and the operator MSE formulas."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la

from .dynsys import PolynomialSystem
from .models import (
    Array,
    DimensionMismatchError,
    DomainError,
    RankDeficiencyError,
    UnderdeterminedError,
)
from .tensorpoly import check_orthonormal, compressed_power, project_polynomial_operator, unique_monomial_count

LOG = logging.getLogger("active_opinf")

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class DataLayout:
    """Column blocks of a regression row: x, x^2, ..., x^ell, then u."""

    n: int
    p: int
    ell: int

    def __post_init__(self) -> None:
        """Reject empty layouts."""
        if self.n < 1 or self.ell < 1 or self.p < 0:
            raise DomainError(f"Invalid layout n={self.n}, p={self.p}, ell={self.ell}.")

    @cached_property
    def block_sizes(self) -> tuple[int, ...]:
        """Column count of every A_j block, in increasing j."""
        return tuple(unique_monomial_count(self.n, j) for j in range(1, self.ell + 1))

    @property
    def M(self) -> int:
        """Number of unknowns per reduced state component."""
        return sum(self.block_sizes) + self.p

    def block(self, j: int) -> slice:
        """Columns holding the degree-j monomials."""
        if not 1 <= j <= self.ell:
            raise DomainError(f"Block order must lie in [1, {self.ell}] (got {j}).")
        start = sum(self.block_sizes[: j - 1])
        return slice(start, start + self.block_sizes[j - 1])

    @property
    def input_block(self) -> slice:
        """Columns holding the inputs."""
        start = sum(self.block_sizes)
        return slice(start, start + self.p)

    def to_dict(self) -> dict[str, int]:
        """Return the JSON-ready layout header."""
        return {"n": self.n, "p": self.p, "ell": self.ell, "M": self.M}


@dataclass(frozen=True)
class DataMatrix:
    """K x M regression matrix and its column layout."""

    D: Array
    layout: DataLayout

    def __post_init__(self) -> None:
        """Check the column count against the layout."""
        if self.D.ndim != 2 or self.D.shape[1] != self.layout.M or self.D.shape[0] < 1:
            raise DimensionMismatchError(
                f"Data matrix has shape {self.D.shape}, layout needs at least one row of {self.layout.M}."
            )

    @property
    def K(self) -> int:
        """Number of rows."""
        return self.D.shape[0]

    @property
    def M(self) -> int:
        """Number of columns."""
        return self.D.shape[1]


@dataclass(frozen=True)
class InferredOperators:
    """Reduced operators A_1..A_ell and B, with s_min(D) when they came from a regression."""

    A_hat: tuple[Array, ...]
    B_hat: Array | None = None
    s_min: float | None = None

    def __post_init__(self) -> None:
        """Check the operator shapes against (n, ell, p)."""
        n = self.A_hat[0].shape[0]
        for j, op in enumerate(self.A_hat, start=1):
            if op.shape != (n, unique_monomial_count(n, j)):
                raise DimensionMismatchError(f"A_hat_{j} has shape {op.shape}.")
        if self.B_hat is not None and (self.B_hat.ndim != 2 or self.B_hat.shape[0] != n):
            raise DimensionMismatchError(f"B_hat has shape {self.B_hat.shape}, expected {n} rows.")

    @property
    def n(self) -> int:
        return self.A_hat[0].shape[0]

    @property
    def p(self) -> int:
        return 0 if self.B_hat is None else self.B_hat.shape[1]

    @property
    def ell(self) -> int:
        return len(self.A_hat)

    @property
    def layout(self) -> DataLayout:
        """Return the regression layout these operators fit."""
        return DataLayout(n=self.n, p=self.p, ell=self.ell)

    def stacked(self) -> Array:
        """Return O = [A_1, ..., A_ell, B]^T, an M x n matrix."""
        blocks = [op.T for op in self.A_hat]
        if self.B_hat is not None and self.p:
            blocks.append(self.B_hat.T)
        return np.vstack(blocks)

    @classmethod
    def from_stacked(cls, O: Array, layout: DataLayout, s_min: float | None = None) -> InferredOperators:
        """Split an M x n matrix back into operator blocks."""
        if O.shape != (layout.M, layout.n):
            raise DimensionMismatchError(f"Stacked operators have shape {O.shape}, expected ({layout.M}, {layout.n}).")
        A_hat = tuple(np.ascontiguousarray(O[layout.block(j)].T) for j in range(1, layout.ell + 1))
        B_hat = np.ascontiguousarray(O[layout.input_block].T) if layout.p else None
        return cls(A_hat=A_hat, B_hat=B_hat, s_min=s_min)


def assemble_data_matrix(Xproj: Array, U: Array | None, ell: int) -> DataMatrix:
    """Row k is [x_k^T, (x_k^2)^T, ..., (x_k^ell)^T, u_k^T]."""
    Xproj = np.asarray(Xproj, dtype=np.float64)
    if Xproj.ndim != 2:
        raise DimensionMismatchError("Projected states must be a matrix with one state per column.")
    n, K = Xproj.shape
    blocks = [compressed_power(Xproj, j).T for j in range(1, ell + 1)]
    p = 0
    if U is not None:
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2 or U.shape[1] != K:
            raise DimensionMismatchError(f"Inputs have shape {U.shape}, expected {K} columns.")
        p = U.shape[0]
        if p:
            blocks.append(U.T)
    return DataMatrix(D=np.hstack(blocks), layout=DataLayout(n=n, p=p, ell=ell))


class LeastSquaresSolver:
    """Pivoted-QR factorization of D, prepared once and reused for many right-hand sides."""

    def __init__(self, data: DataMatrix, rank_tol: float = DEFAULT_RANK_TOL):
        """Factor D after checking it is tall and numerically full rank."""
        self.data = data
        if data.K < data.M:
            raise UnderdeterminedError(f"Regression has K={data.K} rows but M={data.M} unknowns.")
        singular_values = la.svdvals(data.D)
        self.s_max = float(singular_values[0])
        self.s_min = float(singular_values[-1])
        if not self.s_min > rank_tol * self.s_max:
            effective_rank = int(np.count_nonzero(singular_values > rank_tol * self.s_max))
            raise RankDeficiencyError(
                f"Data matrix is rank deficient: s_min={self.s_min:.3e}, s_max={self.s_max:.3e}, "
                f"rank {effective_rank} < {data.M}.",
                s_min=self.s_min,
                s_max=self.s_max,
                required_rank=data.M,
                effective_rank=effective_rank,
            )
        self._Q, self._R, self._pivots = la.qr(data.D, mode="economic", pivoting=True)

    def solve_stacked(self, Ztilde: Array) -> Array:
        """Return the M x n minimizer of ||D O - Ztilde^T||_F."""
        Ztilde = np.asarray(Ztilde, dtype=np.float64)
        if Ztilde.ndim != 2 or Ztilde.shape[1] != self.data.K:
            raise DimensionMismatchError(f"Targets have shape {Ztilde.shape}, expected {self.data.K} columns.")
        O = np.empty((self.data.M, Ztilde.shape[0]))
        O[self._pivots] = la.solve_triangular(self._R, self._Q.T @ Ztilde.T)
        return O

    def solve(self, Ztilde: Array) -> InferredOperators:
        """Solve and split the result into operator blocks."""
        return InferredOperators.from_stacked(
            self.solve_stacked(Ztilde), self.data.layout, s_min=self.s_min
        )


def infer_operators(data: DataMatrix, Ztilde: Array, rank_tol: float = DEFAULT_RANK_TOL) -> InferredOperators:
    """Least-squares operator inference."""
    solver = LeastSquaresSolver(data, rank_tol)
    LOG.debug("Inferred operators from K=%s rows, s_min(D)=%.6e", data.K, solver.s_min)
    return solver.solve(Ztilde)


def intrusive_operators(sys: PolynomialSystem, V: Array) -> InferredOperators:
    """Galerkin projections V^T A_j S_j (V x ... x V) R_j and V^T B."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape[0] != sys.state_dim:
        raise DimensionMismatchError(f"Basis has {V.shape[0]} rows, system has N={sys.state_dim}.")
    check_orthonormal(V)
    A_tilde = tuple(project_polynomial_operator(op, V, j) for j, op in enumerate(sys.ops, start=1))
    B_tilde = None if sys.autonomous else V.T @ sys.input_map
    return InferredOperators(A_hat=A_tilde, B_hat=B_tilde)


def operator_mse_bound(n: int, M: int, sigma: float, s_min: float) -> float:
    """Return n M (sigma / s_min)^2."""
    if s_min <= 0:
        raise DomainError(f"s_min must be positive (got {s_min}).")
    if sigma < 0:
        raise DomainError(f"sigma must be non-negative (got {sigma}).")
    return n * M * (sigma / s_min) ** 2


def _matrix(D: DataMatrix | Array) -> Array:
    return D.D if isinstance(D, DataMatrix) else np.asarray(D, dtype=np.float64)


def operator_mse_exact(D: DataMatrix | Array, n: int, sigma: float) -> float:
    """Return n sigma^2 tr((D^T D)^{-1})."""
    s = la.svdvals(_matrix(D))
    if s[-1] <= 0:
        raise DomainError("D^T D is singular.")
    return float(n * sigma**2 * np.sum(1.0 / s**2))


def operator_covariance(D: DataMatrix | Array, sigma: float) -> Array:
    """Return sigma^2 (D^T D)^{-1}, the covariance of every column of O."""
    _, s, Wt = la.svd(_matrix(D), full_matrices=False)
    if s[-1] <= 0:
        raise DomainError("D^T D is singular.")
    return sigma**2 * (Wt.T / s**2) @ Wt
