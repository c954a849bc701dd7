"""Unique-monomial Kronecker powers and projection of polynomial operators.

A degree-`j` power of a vector keeps one entry per monomial
x[i_1]·…·x[i_j] with i_1 ≤ … ≤ i_j. Monomials are ordered lexicographically,
which is exactly the order produced by
`itertools.combinations_with_replacement`. Compression (S_j) and
re-expansion (R_j) are index maps; no dim**j sized matrix is ever stored.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cache, cached_property

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .models import (
    Array,
    ArithmeticOverflowError,
    DimensionMismatchError,
    DomainError,
    PreconditionError,
)

MAX_ORDER = 4
INT64_MAX = 2**63 - 1
ORTHONORMALITY_TOL = 1e-8
_PROJECTION_CHUNK = 64


def unique_monomial_count(dim: int, j: int) -> int:
    """Return C(dim + j - 1, j), the number of unique degree-j monomials."""
    if dim < 1 or j < 1:
        raise DomainError(f"Monomial count needs dim >= 1 and j >= 1 (got dim={dim}, j={j}).")
    count = math.comb(dim + j - 1, j)
    if count > INT64_MAX:
        raise ArithmeticOverflowError(
            f"Monomial count C({dim + j - 1}, {j}) exceeds the 64-bit index range."
        )
    return count


@dataclass(frozen=True, eq=False)
class MonomialIndex:
    """Lexicographic table of non-decreasing multi-indices and its reverse map."""

    dim: int
    order: int
    table: NDArray[np.int64] = field(repr=False)
    reverse: dict[tuple[int, ...], int] = field(repr=False, compare=False)

    @classmethod
    def build(cls, dim: int, order: int) -> MonomialIndex:
        """Construct the table for `dim` variables and degree `order`."""
        if order > MAX_ORDER:
            raise DomainError(f"Monomial orders above {MAX_ORDER} are not supported.")
        count = unique_monomial_count(dim, order)
        table = np.fromiter(
            itertools.chain.from_iterable(
                itertools.combinations_with_replacement(range(dim), order)
            ),
            dtype=np.int64,
            count=count * order,
        ).reshape(count, order)
        reverse = {tuple(int(i) for i in row): pos for pos, row in enumerate(table)}
        return cls(dim=dim, order=order, table=table, reverse=reverse)

    @classmethod
    def for_dim(cls, dim: int, order: int) -> MonomialIndex:
        """Return a shared, cached index (instances are immutable)."""
        return _cached_index(dim, order)

    def __len__(self) -> int:
        return self.table.shape[0]

    def positions_of(self, multi_index: tuple[int, ...]) -> int:
        """Return the position of any permutation of `multi_index`."""
        return self.reverse[tuple(sorted(multi_index))]

    @cached_property
    def kron_map(self) -> NDArray[np.int64]:
        """Source position for every slot of the full Kronecker power (R_j)."""
        slots = itertools.product(range(self.dim), repeat=self.order)
        return np.fromiter(
            (self.reverse[tuple(sorted(slot))] for slot in slots),
            dtype=np.int64,
            count=self.dim**self.order,
        )


@cache
def _cached_index(dim: int, order: int) -> MonomialIndex:
    return MonomialIndex.build(dim, order)


def compressed_power(x: Array, j: int) -> Array:
    """Return the unique-monomial power of `x` (a vector or one state per column)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise DimensionMismatchError("compressed_power expects a vector or a matrix of columns.")
    if j == 1:
        return x
    index = MonomialIndex.for_dim(x.shape[0], j)
    result = x[index.table[:, 0]].copy()
    for t in range(1, j):
        result *= x[index.table[:, t]]
    return result


def expand_to_kron(z_pow: Array, index: MonomialIndex) -> Array:
    """Place a compressed power back into every slot of the j-fold Kronecker power."""
    z_pow = np.asarray(z_pow, dtype=np.float64)
    if z_pow.shape[0] != len(index):
        raise DimensionMismatchError(
            f"Compressed power has length {z_pow.shape[0]}, expected {len(index)}."
        )
    return z_pow[index.kron_map]


def distinct_permutations(multi_index: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Return every distinct ordering of a multiset, sorted."""
    return sorted(set(itertools.permutations(multi_index)))


def check_orthonormal(V: Array, tol: float = ORTHONORMALITY_TOL) -> None:
    """Raise PreconditionError unless the columns of V are orthonormal."""
    gram_error = np.linalg.norm(V.T @ V - np.eye(V.shape[1]), ord="fro")
    if gram_error > tol:
        raise PreconditionError(
            f"Basis columns are not orthonormal (||V^T V - I||_F = {gram_error:.3e})."
        )


def project_polynomial_operator(
    A_j: Array | sp.spmatrix,
    V: Array,
    j: int,
    tol: float = ORTHONORMALITY_TOL,
) -> Array:
    """Return V^T A_j S_j (V ⊗ … ⊗ V) R_j without forming any N**j object.

    Column m of the result is V^T A_j applied to the compression of the sum of
    v_{i_1} ⊗ … ⊗ v_{i_j} over the distinct permutations of the m-th reduced
    multi-index. Compressing a symmetric tensor only needs its values at
    sorted slots, so each column is assembled directly in the N_j-dimensional
    monomial space.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise DimensionMismatchError("V must be a matrix.")
    N, n = V.shape
    check_orthonormal(V, tol)
    expected_cols = unique_monomial_count(N, j)
    if A_j.shape != (N, expected_cols):
        raise DimensionMismatchError(
            f"A_{j} has shape {A_j.shape}, expected ({N}, {expected_cols})."
        )
    if j == 1:
        return np.asarray(V.T @ (A_j @ V))

    high = MonomialIndex.for_dim(N, j)
    low = MonomialIndex.for_dim(n, j)
    projected = np.empty((n, len(low)))
    # rows of V gathered at each factor position of the high-dimensional monomials
    gathered = [V[high.table[:, t], :] for t in range(j)]
    for start in range(0, len(low), _PROJECTION_CHUNK):
        stop = min(start + _PROJECTION_CHUNK, len(low))
        columns = np.zeros((len(high), stop - start))
        for offset, m in enumerate(range(start, stop)):
            for perm in distinct_permutations(tuple(int(i) for i in low.table[m])):
                term = gathered[0][:, perm[0]].copy()
                for t in range(1, j):
                    term *= gathered[t][:, perm[t]]
                columns[:, offset] += term
        projected[:, start:stop] = V.T @ np.asarray(A_j @ columns)
    return projected
