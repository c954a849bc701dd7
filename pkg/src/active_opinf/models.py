"""Core data models and exceptions shared across active-opinf."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


@dataclass(frozen=True)
class Trajectory:
    """States (one column per time step) and the inputs that produced them."""

    states: Array
    inputs: Array
    dt: float = 1.0

    def __post_init__(self) -> None:
        """Reject trajectories whose column counts disagree."""
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise DimensionMismatchError("Trajectory states and inputs must be 2-D arrays.")
        steps = self.states.shape[1] - 1
        if self.inputs.shape[1] not in (steps, 0):
            raise DimensionMismatchError(
                f"Trajectory has {self.states.shape[1]} states but {self.inputs.shape[1]} inputs."
            )
        if self.dt <= 0:
            raise DomainError("Trajectory dt must be positive.")

    @property
    def steps(self) -> int:
        """Return the number of transitions K."""
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        """Return the state dimension."""
        return self.states.shape[0]


@dataclass
class ProvenanceTable:
    """Source (trajectory id, time index) of every dictionary row."""

    trajectory: list[int] = field(default_factory=list)
    time_index: list[int] = field(default_factory=list)

    def extend(self, trajectory_id: int, count: int) -> None:
        """Append `count` consecutive time indices of one trajectory."""
        self.trajectory.extend([trajectory_id] * count)
        self.time_index.extend(range(count))

    def __len__(self) -> int:
        return len(self.trajectory)


class OpInfError(Exception):
    """Base exception for active-opinf."""


class ValidationError(OpInfError):
    """Raised when inputs violate a documented precondition."""


class DimensionMismatchError(ValidationError):
    """Raised when array shapes do not fit together."""


class PreconditionError(ValidationError):
    """Raised when a numerical precondition (e.g. orthonormality) fails."""


class DomainError(ValidationError, ValueError):
    """Raised when an argument lies outside the domain of a formula."""


class UnderdeterminedError(ValidationError):
    """Raised when a regression has fewer rows than unknowns."""


class UnsupportedError(ValidationError):
    """Raised when a scheme is requested outside the setting it is defined for."""


class ArithmeticOverflowError(OpInfError, OverflowError):
    """Raised when an index count no longer fits a signed 64-bit integer."""


class RankDeficiencyError(OpInfError):
    """Raised when a matrix is numerically rank deficient."""

    def __init__(
        self,
        message: str,
        *,
        s_min: float,
        s_max: float,
        required_rank: int,
        effective_rank: int | None = None,
    ):
        super().__init__(message)
        self.s_min = s_min
        self.s_max = s_max
        self.required_rank = required_rank
        self.effective_rank = effective_rank


class InstabilityError(OpInfError):
    """Raised when a reduced trajectory becomes non-finite or diverges."""

    def __init__(self, message: str, *, step: int):
        super().__init__(message)
        self.step = step


class InstabilityDominatedError(OpInfError):
    """Raised when too few Monte Carlo replicates stay stable to report."""
