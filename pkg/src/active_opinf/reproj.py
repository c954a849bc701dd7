"""Re-projection: query the truth system at lifted reduced states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynsys import NoiseStream, PolynomialSystem, step
from .models import Array, DimensionMismatchError

_QUERY_CHUNK = 256


@dataclass
class QueryCounter:
    """Counts how many times the truth system has been queried."""

    count: int = 0

    def __call__(self, queries: int = 1) -> None:
        """Record `queries` additional system evaluations."""
        self.count += queries


def _check_inputs(sys: PolynomialSystem, V: Array, Xproj: Array, U: Array | None) -> tuple[Array, Array | None]:
    Xproj = np.asarray(Xproj, dtype=np.float64)
    if Xproj.ndim != 2 or Xproj.shape[0] != V.shape[1]:
        raise DimensionMismatchError(
            f"Projected states have shape {Xproj.shape}, expected {V.shape[1]} rows."
        )
    if V.shape[0] != sys.state_dim:
        raise DimensionMismatchError(f"Basis has {V.shape[0]} rows, system has N={sys.state_dim}.")
    if sys.autonomous:
        return Xproj, None
    if U is None:
        raise DimensionMismatchError("Inputs are required for a system with p > 0.")
    U = np.asarray(U, dtype=np.float64)
    if U.shape != (sys.input_dim, Xproj.shape[1]):
        raise DimensionMismatchError(
            f"Inputs have shape {U.shape}, expected ({sys.input_dim}, {Xproj.shape[1]})."
        )
    return Xproj, U


def reproject_clean(
    sys: PolynomialSystem,
    V: Array,
    Xproj: Array,
    U: Array | None = None,
    counter: QueryCounter | None = None,
) -> Array:
    """Column k is V^T f(V x_k, u_k); columns are evaluated independently."""
    Xproj, U = _check_inputs(sys, V, Xproj, U)
    K = Xproj.shape[1]
    result = np.empty((V.shape[1], K))
    for start in range(0, K, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, K)
        lifted = V @ Xproj[:, start:stop]
        outputs = step(sys, lifted, None if U is None else U[:, start:stop])
        result[:, start:stop] = V.T @ outputs
        if counter is not None:
            counter(stop - start)
    return result


def projected_noise(V: Array, noise: NoiseStream, K: int) -> Array:
    """Return V^T [xi_0, ..., xi_{K-1}], drawing the xi_k one column at a time."""
    # (K, N) draws so that column k consumes the k-th consecutive block of the stream
    Xi = noise.draw((K, V.shape[0])).T
    return V.T @ Xi


def reproject_noisy(
    sys: PolynomialSystem,
    V: Array,
    Xproj: Array,
    U: Array | None,
    noise: NoiseStream,
    counter: QueryCounter | None = None,
) -> Array:
    """Column k is V^T (f(V x_k, u_k) + xi_k) with xi_k ~ N(0, sigma^2 I)."""
    clean = reproject_clean(sys, V, Xproj, U, counter)
    return clean + projected_noise(V, noise, clean.shape[1])
