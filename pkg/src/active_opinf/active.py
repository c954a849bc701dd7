"""Dictionary construction and row selection for the regression data matrix.

Selection starts from QDEIM (pivoted QR of the transposed dictionary) and then
greedily appends the row with the largest component along the current
smallest right singular direction of the selected rows.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .models import (
    Array,
    DimensionMismatchError,
    DomainError,
    ProvenanceTable,
    RankDeficiencyError,
    UnderdeterminedError,
)
from .opinf import DEFAULT_RANK_TOL, DataLayout, assemble_data_matrix

LOG = logging.getLogger("active_opinf")

METHODS = ("active", "equidistant")


@dataclass(frozen=True)
class Dictionary:
    """L x M candidate regression rows and where each came from."""

    rows: Array
    layout: DataLayout
    provenance: ProvenanceTable

    def __post_init__(self) -> None:
        """Check the row layout and provenance length."""
        if self.rows.ndim != 2 or self.rows.shape[1] != self.layout.M:
            raise DimensionMismatchError(
                f"Dictionary rows have shape {self.rows.shape}, layout needs {self.layout.M} columns."
            )
        if len(self.provenance) != self.rows.shape[0]:
            raise DimensionMismatchError(
                f"Provenance has {len(self.provenance)} entries for {self.rows.shape[0]} rows."
            )

    @property
    def L(self) -> int:
        return self.rows.shape[0]

    @property
    def M(self) -> int:
        return self.rows.shape[1]

    def states(self) -> Array:
        """Return the reduced states of every row (n x L)."""
        return self.rows[:, self.layout.block(1)].T

    def inputs(self) -> Array | None:
        """Return the inputs of every row (p x L), or None for autonomous data."""
        if not self.layout.p:
            return None
        return self.rows[:, self.layout.input_block].T


@dataclass
class SelectionPlan:
    """Ordered row indices with the s_min of every prefix from M rows on."""

    indices: list[int]
    s_min_history: list[float] = field(default_factory=list)
    gain_bounds: list[float] = field(default_factory=list)
    method: str = "active"

    def __post_init__(self) -> None:
        """Reject repeated indices."""
        if len(set(self.indices)) != len(self.indices):
            raise DomainError("Selection plan indices must be distinct.")

    @property
    def K(self) -> int:
        return len(self.indices)

    @property
    def s_min(self) -> float | None:
        """Smallest singular value of the full selection, if recorded."""
        return self.s_min_history[-1] if self.s_min_history else None


@dataclass(frozen=True)
class CurvePoint:
    """One point of an s_min-versus-K curve."""

    K: int
    method: str
    s_min: float


def build_dictionary(
    Xproj_L: Array,
    U_L: Array | None,
    ell: int,
    provenance: ProvenanceTable | None = None,
) -> Dictionary:
    """Lay out every candidate state (and input) as a regression row."""
    data = assemble_data_matrix(Xproj_L, U_L, ell)
    if provenance is None:
        provenance = ProvenanceTable()
        provenance.extend(0, data.K)
    return Dictionary(rows=data.D, layout=data.layout, provenance=provenance)


def s_min(matrix: Array) -> float:
    """Return the smallest singular value."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        raise DomainError("s_min needs a nonempty matrix.")
    return float(la.svdvals(np.atleast_2d(matrix))[-1])


def qdeim_init(dictionary: Dictionary, rank_tol: float = DEFAULT_RANK_TOL) -> SelectionPlan:
    """Pick M rows from the first M column pivots of a pivoted QR of D^T."""
    L, M = dictionary.rows.shape
    if L < M:
        raise UnderdeterminedError(f"Dictionary has L={L} rows but M={M} columns.")
    R, pivots = la.qr(dictionary.rows.T, mode="r", pivoting=True)
    leading, trailing = abs(R[0, 0]), abs(R[M - 1, M - 1])
    if not trailing > rank_tol * leading:
        raise RankDeficiencyError(
            f"Dictionary is rank deficient: |R[M-1, M-1]|={trailing:.3e}, |R[0, 0]|={leading:.3e}.",
            s_min=float(trailing),
            s_max=float(leading),
            required_rank=M,
        )
    indices = [int(i) for i in pivots[:M]]
    initial = s_min(dictionary.rows[indices])
    LOG.debug("QDEIM selected %s rows, s_min=%.6e", M, initial)
    return SelectionPlan(indices=indices, s_min_history=[initial], method="active")


def lower_bound_gain(g: float, d_plus_rotated: Array) -> float:
    """Lower bound on the increase of s_min^2 when appending a row.

    Equals (g + |d|^2 - sqrt((g + |d|^2)^2 - 4 g d_M^2)) / 2, evaluated as
    2 g d_M^2 / (g + |d|^2 + sqrt(...)) to avoid cancellation. A negative
    radicand from rounding is clamped to zero.
    """
    if g < 0:
        raise DomainError(f"Singular-value gap must be non-negative (got {g}).")
    d = np.asarray(d_plus_rotated, dtype=np.float64)
    last = float(d[-1])
    total = g + float(d @ d)
    if total == 0.0 or last == 0.0 or g == 0.0:
        return 0.0
    radicand = max(total**2 - 4.0 * g * last**2, 0.0)
    return 2.0 * g * last**2 / (total + np.sqrt(radicand))


def _greedy(
    rows: Array,
    plan: SelectionPlan,
    K: int,
    target: float | None = None,
) -> SelectionPlan:
    indices = list(plan.indices)
    history = list(plan.s_min_history)
    gains = list(plan.gain_bounds)
    selected = np.zeros(rows.shape[0], dtype=bool)
    selected[indices] = True
    _, s, Wt = la.svd(rows[indices], full_matrices=False)
    if not history:
        history.append(float(s[-1]))
    while len(indices) < K:
        if target is not None and history[-1] >= target:
            break
        psi = Wt[-1]
        criterion = (rows @ psi) ** 2
        criterion[selected] = -np.inf
        # argmax returns the first maximiser, so ties go to the smallest index
        best = int(np.argmax(criterion))
        gap = float(s[-2] ** 2 - s[-1] ** 2) if s.size > 1 else 0.0
        gains.append(lower_bound_gain(max(gap, 0.0), Wt @ rows[best]))
        indices.append(best)
        selected[best] = True
        _, s, Wt = la.svd(rows[indices], full_matrices=False)
        history.append(float(s[-1]))
        LOG.debug("Greedy step %s: row %s, s_min=%.6e", len(indices), best, history[-1])
    return SelectionPlan(indices=indices, s_min_history=history, gain_bounds=gains, method=plan.method)


def greedy_oversample(dictionary: Dictionary, plan: SelectionPlan, K: int) -> SelectionPlan:
    """Append rows one at a time until the plan holds K rows."""
    if K > dictionary.L:
        raise DomainError(f"Cannot select K={K} rows from a dictionary of L={dictionary.L}.")
    if plan.K < dictionary.M:
        raise UnderdeterminedError(f"Oversampling needs at least M={dictionary.M} initial rows (got {plan.K}).")
    if K < plan.K:
        raise DomainError(f"Plan already holds {plan.K} rows, more than K={K}.")
    return _greedy(dictionary.rows, plan, K)


def select_active(dictionary: Dictionary, K: int, rank_tol: float = DEFAULT_RANK_TOL) -> SelectionPlan:
    """QDEIM initialisation followed by greedy oversampling to K rows."""
    if K < dictionary.M:
        raise UnderdeterminedError(f"K={K} is below the number of unknowns M={dictionary.M}.")
    if K > dictionary.L:
        raise DomainError(f"Cannot select K={K} rows from a dictionary of L={dictionary.L}.")
    plan = greedy_oversample(dictionary, qdeim_init(dictionary, rank_tol), K)
    LOG.info("Active selection of %s rows finished, s_min=%.6e", K, plan.s_min)
    return plan


def equidistant_selection(L: int, K: int, offset: int = 0) -> SelectionPlan:
    """K near-equidistant indices from `offset` to L - 1, rounded half up."""
    if K < 1 or L < 1 or offset < 0:
        raise DomainError(f"Invalid equidistant selection L={L}, K={K}, offset={offset}.")
    if K > L - offset:
        raise DomainError(f"Cannot place K={K} indices in [{offset}, {L - 1}].")
    if K == 1:
        return SelectionPlan(indices=[offset], method="equidistant")
    span = L - 1 - offset
    denominator = 2 * (K - 1)
    indices: list[int] = []
    for i in range(K):
        index = (2 * (offset * (K - 1) + i * span) + (K - 1)) // denominator
        if indices and index <= indices[-1]:
            index = indices[-1] + 1
        indices.append(index)
    return SelectionPlan(indices=indices, method="equidistant")


def plan_history(dictionary: Dictionary, indices: Iterable[int]) -> list[float]:
    """s_min of every prefix of `indices` holding at least M rows."""
    indices = list(indices)
    return [s_min(dictionary.rows[indices[:m]]) for m in range(dictionary.M, len(indices) + 1)]


def make_plan(dictionary: Dictionary, K: int, method: str, rank_tol: float = DEFAULT_RANK_TOL) -> SelectionPlan:
    """Build the K-row plan of the named method."""
    if method == "active":
        return select_active(dictionary, K, rank_tol)
    if method == "equidistant":
        plan = equidistant_selection(dictionary.L, K)
        plan.s_min_history = plan_history(dictionary, plan.indices)
        return plan
    raise DomainError(f"Unknown selection method '{method}' (expected one of {METHODS}).")


def selection_curve(
    dictionary: Dictionary,
    Ks: Iterable[int],
    method: str,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> list[CurvePoint]:
    """s_min of the plan of size K for every requested K."""
    Ks = sorted(set(Ks))
    if not Ks:
        return []
    if Ks[0] < dictionary.M:
        raise UnderdeterminedError(f"Curve sizes must be at least M={dictionary.M} (got {Ks[0]}).")
    if method == "active":
        # greedy plans are nested, so one run to the largest K covers all prefixes
        plan = select_active(dictionary, Ks[-1], rank_tol)
        return [CurvePoint(K, method, plan.s_min_history[K - dictionary.M]) for K in Ks]
    return [CurvePoint(K, method, s_min(dictionary.rows[make_plan(dictionary, K, method, rank_tol).indices])) for K in Ks]


def rows_to_reach(
    dictionary: Dictionary,
    target: float,
    method: str,
    K_max: int | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> int | None:
    """Smallest K whose plan reaches s_min >= target, or None within K_max rows."""
    K_max = dictionary.L if K_max is None else min(K_max, dictionary.L)
    if method == "active":
        initial = qdeim_init(dictionary, rank_tol)
        plan = _greedy(dictionary.rows, initial, K_max, target=target)
        return plan.K if plan.s_min >= target else None
    if method != "equidistant":
        raise DomainError(f"Unknown selection method '{method}' (expected one of {METHODS}).")
    for K in range(dictionary.M, K_max + 1):
        if s_min(dictionary.rows[equidistant_selection(dictionary.L, K).indices]) >= target:
            return K
    return None
