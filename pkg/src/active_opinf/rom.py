"""Reduced-model simulation: learned, intrusive and resampled linear recurrences."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .models import Array, DimensionMismatchError, InstabilityError, Trajectory, UnsupportedError
from .opinf import InferredOperators
from .tensorpoly import compressed_power


@dataclass(frozen=True)
class ReducedModel:
    """x_{k+1} = sum_j A_j x_k^j + B u_k in reduced coordinates."""

    operators: InferredOperators

    @classmethod
    def from_operators(cls, operators: InferredOperators) -> ReducedModel:
        """Wrap learned or intrusive operators."""
        return cls(operators=operators)

    @property
    def n(self) -> int:
        return self.operators.n

    @property
    def p(self) -> int:
        return self.operators.p

    @property
    def ell(self) -> int:
        return self.operators.ell

    def rhs(self, x: Array, u: Array | None) -> Array:
        """Evaluate the right-hand side at one state."""
        result = self.operators.A_hat[0] @ x
        for j in range(2, self.ell + 1):
            result = result + self.operators.A_hat[j - 1] @ compressed_power(x, j)
        if u is not None and self.p:
            result = result + self.operators.B_hat @ u
        return result


def _reduced_inputs(p: int, inputs: Array | None, K: int) -> Array:
    if p == 0:
        return np.zeros((0, K))
    if inputs is None:
        raise DimensionMismatchError(f"Model expects inputs of dimension {p}.")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] != p or inputs.shape[1] < K:
        raise DimensionMismatchError(f"Need a {p} x {K} input matrix, got shape {inputs.shape}.")
    return inputs[:, :K]


def _check_state(x: Array, step: int, divergence_limit: float | None) -> None:
    if not np.all(np.isfinite(x)):
        raise InstabilityError(f"Reduced state became non-finite at step {step}.", step=step)
    if divergence_limit is not None and np.linalg.norm(x) > divergence_limit:
        raise InstabilityError(
            f"Reduced state norm exceeded {divergence_limit:.3e} at step {step}.", step=step
        )


def simulate_reduced(
    model: ReducedModel,
    x0: Array,
    inputs: Array | None,
    K: int,
    divergence_limit: float | None = None,
    dt: float = 1.0,
) -> Trajectory:
    """Run K steps of the reduced recurrence, stopping at the first unstable state."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (model.n,):
        raise DimensionMismatchError(f"Initial state has shape {x0.shape}, expected ({model.n},).")
    U = _reduced_inputs(model.p, inputs, K)
    states = np.empty((model.n, K + 1))
    states[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            u_k = U[:, k] if model.p else None
            states[:, k + 1] = model.rhs(states[:, k], u_k)
            _check_state(states[:, k + 1], k + 1, divergence_limit)
    return Trajectory(states=states, inputs=U, dt=dt)


def simulate_resampled(
    A_samples: Sequence[Array | InferredOperators],
    B_hat: Array | None,
    x0: Array,
    inputs: Array | None,
    divergence_limit: float | None = None,
    dt: float = 1.0,
) -> Trajectory:
    """x_{k+1} = A^{(k+1)} x_k + B u_k with one independent linear operator per step."""
    matrices = []
    for sample in A_samples:
        if isinstance(sample, InferredOperators):
            if sample.ell != 1:
                raise UnsupportedError("Resampled propagation is only defined for linear models.")
            sample = sample.A_hat[0]
        sample = np.asarray(sample, dtype=np.float64)
        if sample.ndim != 2 or sample.shape[0] != sample.shape[1]:
            raise UnsupportedError(
                f"Resampled propagation needs square linear operators (got shape {sample.shape})."
            )
        matrices.append(sample)
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.shape[0]
    K = len(matrices)
    if any(A.shape != (n, n) for A in matrices):
        raise DimensionMismatchError(f"Every operator sample must be {n} x {n}.")
    p = 0 if B_hat is None else B_hat.shape[1]
    U = _reduced_inputs(p, inputs, K)
    states = np.empty((n, K + 1))
    states[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k, A in enumerate(matrices):
            states[:, k + 1] = A @ states[:, k]
            if p:
                states[:, k + 1] += B_hat @ U[:, k]
            _check_state(states[:, k + 1], k + 1, divergence_limit)
    return Trajectory(states=states, inputs=U, dt=dt)
