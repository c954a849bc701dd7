"""Monte Carlo bias/MSE estimation, closed-form error bounds and log-log slopes.

Every replicate owns the noise stream derived from (seed, replicate index), so
the same replicate sees the same standard normals at every noise level and the
reduction over replicates does not depend on thread scheduling.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .active import Dictionary, SelectionPlan
from .dynsys import REPLICATE_STREAM, NoiseModel, PolynomialSystem
from .models import (
    Array,
    DimensionMismatchError,
    DomainError,
    InstabilityError,
    UnsupportedError,
)
from .opinf import (
    DEFAULT_RANK_TOL,
    InferredOperators,
    LeastSquaresSolver,
    assemble_data_matrix,
    intrusive_operators,
    operator_mse_bound,
    operator_mse_exact,
)
from .reproj import QueryCounter, projected_noise, reproject_clean
from .rom import ReducedModel, simulate_reduced, simulate_resampled

LOG = logging.getLogger("active_opinf")

DEFAULT_DIVERGENCE_FACTOR = 1e6
_CHUNKS_PER_THREAD = 4


@dataclass(frozen=True)
class QueryDesign:
    """Reduced states (and inputs) at which the truth system is queried."""

    Xproj: Array
    U: Array | None
    ell: int

    @classmethod
    def from_plan(cls, dictionary: Dictionary, plan: SelectionPlan) -> QueryDesign:
        """Take the rows a selection plan picked out of a dictionary."""
        indices = np.asarray(plan.indices, dtype=np.int64)
        U = dictionary.inputs()
        return cls(
            Xproj=dictionary.states()[:, indices],
            U=None if U is None else U[:, indices],
            ell=dictionary.layout.ell,
        )

    @property
    def K(self) -> int:
        return self.Xproj.shape[1]


@dataclass
class EvalReport:
    """Per-time-step Monte Carlo bias and MSE against the intrusive trajectory."""

    time_steps: Array
    bias: Array
    bias_se: Array
    mse: Array
    mse_se: Array
    sigma: float
    s_min: float
    replicates: int
    unstable: int
    method: str = "active"
    mean_error: Array | None = None
    mean_error_se: Array | None = None

    @property
    def nsr(self) -> float:
        """Noise-to-signal ratio sigma / s_min(D)."""
        return self.sigma / self.s_min

    @property
    def usable(self) -> int:
        return self.replicates - self.unstable

    def instability_dominated(self, unstable_fraction: float) -> bool:
        """True when more than `unstable_fraction` of the replicates were dropped."""
        return self.unstable > unstable_fraction * self.replicates or self.usable == 0

    def max_abs_z(self) -> float:
        """Largest |mean / standard error| over every state entry and time step."""
        if self.mean_error is None or self.mean_error_se is None:
            return float("nan")
        z = np.divide(
            self.mean_error,
            self.mean_error_se,
            out=np.zeros_like(self.mean_error),
            where=self.mean_error_se > 0,
        )
        return float(np.max(np.abs(z)))

    def rows(self) -> list[dict[str, float | int]]:
        """Return one CSV-ready record per time step."""
        return [
            {
                "time_step": int(k),
                "bias": float(self.bias[i]),
                "bias_se": float(self.bias_se[i]),
                "mse": float(self.mse[i]),
                "mse_se": float(self.mse_se[i]),
                "sigma": self.sigma,
                "s_min": self.s_min,
                "nsr": self.nsr,
                "R_used": self.usable,
                "R_unstable": self.unstable,
            }
            for i, k in enumerate(self.time_steps)
        ]


@dataclass
class OperatorReport:
    """Monte Carlo statistics of O_hat - O_tilde over the replicates."""

    mean_error: Array
    standard_error: Array
    z_scores: Array
    mse: float
    mse_se: float
    mse_bound: float
    mse_exact: float
    sigma: float
    s_min: float
    replicates: int

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))


@dataclass(frozen=True)
class SlopeSummary:
    """Log-log slopes of bias and MSE against the noise-to-signal ratio at one step."""

    time_step: int
    bias_slope: float
    mse_slope: float
    sigmas: tuple[float, ...]


class _Replicator:
    """Clean re-projection and QR factorisation shared by every replicate."""

    def __init__(
        self,
        sys: PolynomialSystem,
        V: Array,
        design: QueryDesign,
        sigma: float,
        seed: int,
        rank_tol: float,
    ):
        if sigma < 0:
            raise DomainError(f"sigma must be non-negative (got {sigma}).")
        self.V = np.asarray(V, dtype=np.float64)
        self.noise = NoiseModel(sigma=sigma, seed=seed)
        self.data = assemble_data_matrix(design.Xproj, design.U, design.ell)
        self.solver = LeastSquaresSolver(self.data, rank_tol)
        self.counter = QueryCounter()
        self.clean = reproject_clean(sys, self.V, design.Xproj, design.U, self.counter)

    @property
    def s_min(self) -> float:
        return self.solver.s_min

    def stacked(self, replicate: int, *family: int) -> Array:
        """Operators inferred from the noisy re-projection owned by (replicate, family)."""
        stream = self.noise.stream(REPLICATE_STREAM, replicate, *family)
        return self.solver.solve_stacked(self.clean + projected_noise(self.V, stream, self.clean.shape[1]))

    def operators(self, replicate: int, *family: int) -> InferredOperators:
        return InferredOperators.from_stacked(
            self.stacked(replicate, *family), self.data.layout, s_min=self.s_min
        )


def _run_replicates(
    replicates: int,
    work: Callable[[int], Array | None],
    threads: int,
) -> list[Array | None]:
    """Evaluate `work` for every replicate index; results are ordered by index."""
    if threads <= 1 or replicates < 2:
        return [work(r) for r in range(replicates)]
    chunk = max(1, math.ceil(replicates / (threads * _CHUNKS_PER_THREAD)))
    ranges = [range(start, min(start + chunk, replicates)) for start in range(0, replicates, chunk)]

    def _chunk(indices: range) -> list[Array | None]:
        out = [work(r) for r in indices]
        LOG.debug("Replicates %s-%s done", indices.start, indices.stop - 1)
        return out

    results: list[Array | None] = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for part in pool.map(_chunk, ranges):
            results.extend(part)
    return results


def _reduced_x0(V: Array, test_x0: Array) -> Array:
    test_x0 = np.asarray(test_x0, dtype=np.float64)
    if test_x0.shape == (V.shape[0],):
        return V.T @ test_x0
    if test_x0.shape == (V.shape[1],):
        return test_x0
    raise DimensionMismatchError(f"Test initial state has shape {test_x0.shape}.")


def _summarise(
    errors: list[Array | None],
    K_steps: int,
    sigma: float,
    s_min: float,
    method: str,
) -> EvalReport:
    stable = [e for e in errors if e is not None]
    replicates = len(errors)
    unstable = replicates - len(stable)
    steps = np.arange(K_steps + 1)
    if unstable:
        LOG.warning("%s of %s replicates unstable at sigma=%.3e", unstable, replicates, sigma)
    if not stable:
        nan = np.full(K_steps + 1, np.nan)
        return EvalReport(steps, nan, nan.copy(), nan.copy(), nan.copy(), sigma, s_min, replicates, unstable, method)
    E = np.stack(stable)  # (R_used, n, K+1)
    R_used = E.shape[0]
    mean = E.mean(axis=0)
    bias = np.linalg.norm(mean, axis=0)
    sq_norms = np.sum(E**2, axis=1)
    mse = sq_norms.mean(axis=0)
    if R_used > 1:
        mean_se = E.std(axis=0, ddof=1) / np.sqrt(R_used)
        bias_se = np.sqrt(np.sum(mean_se**2, axis=0))
        mse_se = sq_norms.std(axis=0, ddof=1) / np.sqrt(R_used)
    else:
        mean_se = np.full_like(mean, np.nan)
        bias_se = np.full(K_steps + 1, np.nan)
        mse_se = np.full(K_steps + 1, np.nan)
    return EvalReport(
        steps, bias, bias_se, mse, mse_se, sigma, s_min, replicates, unstable, method,
        mean_error=mean, mean_error_se=mean_se,
    )


def intrusive_reference(
    sys: PolynomialSystem,
    V: Array,
    test_x0: Array,
    test_inputs: Array | None,
    K_steps: int,
) -> tuple[InferredOperators, Array]:
    """Intrusive operators and the reduced trajectory they produce from V^T x0."""
    intrusive = intrusive_operators(sys, V)
    trajectory = simulate_reduced(
        ReducedModel.from_operators(intrusive), _reduced_x0(V, test_x0), test_inputs, K_steps
    )
    return intrusive, trajectory.states


def mc_state_errors(
    sys: PolynomialSystem,
    V: Array,
    design: QueryDesign,
    test_x0: Array,
    test_inputs: Array | None,
    K_steps: int,
    sigma: float,
    R: int,
    seed: int,
    *,
    threads: int = 1,
    rank_tol: float = DEFAULT_RANK_TOL,
    divergence_factor: float = DEFAULT_DIVERGENCE_FACTOR,
    method: str = "active",
) -> EvalReport:
    """Bias and MSE of learned-model predictions, one fresh inference per replicate."""
    if R < 2:
        raise DomainError(f"Monte Carlo needs at least 2 replicates (got {R}).")
    replicator = _Replicator(sys, V, design, sigma, seed, rank_tol)
    _, reference = intrusive_reference(sys, V, test_x0, test_inputs, K_steps)
    x0 = reference[:, 0]
    limit = divergence_factor * max(float(np.max(np.linalg.norm(reference, axis=0))), 1.0)

    def work(r: int) -> Array | None:
        model = ReducedModel.from_operators(replicator.operators(r))
        try:
            trajectory = simulate_reduced(model, x0, test_inputs, K_steps, divergence_limit=limit)
        except InstabilityError:
            return None
        return trajectory.states - reference

    report = _summarise(_run_replicates(R, work, threads), K_steps, sigma, replicator.s_min, method)
    LOG.info(
        "sigma=%.3e (%s): s_min=%.4e, %s/%s replicates usable",
        sigma,
        method,
        report.s_min,
        report.usable,
        R,
    )
    return report


def mc_operator_errors(
    sys: PolynomialSystem,
    V: Array,
    design: QueryDesign,
    sigma: float,
    R: int,
    seed: int,
    *,
    threads: int = 1,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> OperatorReport:
    """Mean, z-scores and MSE of O_hat - O_tilde over R replicates."""
    if R < 2:
        raise DomainError(f"Monte Carlo needs at least 2 replicates (got {R}).")
    replicator = _Replicator(sys, V, design, sigma, seed, rank_tol)
    reference = intrusive_operators(sys, V).stacked()
    errors = np.stack(_run_replicates(R, lambda r: replicator.stacked(r) - reference, threads))
    mean = errors.mean(axis=0)
    standard_error = errors.std(axis=0, ddof=1) / np.sqrt(R)
    z_scores = np.divide(mean, standard_error, out=np.zeros_like(mean), where=standard_error > 0)
    sq_norms = np.sum(errors**2, axis=(1, 2))
    n = replicator.V.shape[1]
    return OperatorReport(
        mean_error=mean,
        standard_error=standard_error,
        z_scores=z_scores,
        mse=float(sq_norms.mean()),
        mse_se=float(sq_norms.std(ddof=1) / np.sqrt(R)),
        mse_bound=operator_mse_bound(n, replicator.data.M, sigma, replicator.s_min),
        mse_exact=operator_mse_exact(replicator.data, n, sigma),
        sigma=sigma,
        s_min=replicator.s_min,
        replicates=R,
    )


def mc_resampled_errors(
    sys: PolynomialSystem,
    V: Array,
    design: QueryDesign,
    test_x0: Array,
    test_inputs: Array | None,
    K_steps: int,
    sigma: float,
    R: int,
    seed: int,
    *,
    threads: int = 1,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> EvalReport:
    """Bias and MSE of the time-varying scheme with an independent operator per step."""
    if design.ell != 1 or sys.order != 1:
        raise UnsupportedError("Resampled propagation is only defined for linear systems.")
    if R < 2:
        raise DomainError(f"Monte Carlo needs at least 2 replicates (got {R}).")
    replicator = _Replicator(sys, V, design, sigma, seed, rank_tol)
    _, reference = intrusive_reference(sys, V, test_x0, test_inputs, K_steps)
    x0 = reference[:, 0]

    def work(r: int) -> Array | None:
        # family 0 supplies B_hat, families 1..K the per-step state operators
        B_hat = replicator.operators(r, 0).B_hat
        samples = [replicator.operators(r, k).A_hat[0] for k in range(1, K_steps + 1)]
        try:
            trajectory = simulate_resampled(samples, B_hat, x0, test_inputs)
        except InstabilityError:
            return None
        return trajectory.states - reference

    return _summarise(_run_replicates(R, work, threads), K_steps, sigma, replicator.s_min, "resampled")


def gauss_norm_moment_bound(rows: int, cols: int, l: float) -> float:
    """Upper bound (sqrt(rows) + sqrt(cols) + 2^(1/l) sqrt(l))^l on E||G||_2^l."""
    if l <= 0:
        raise DomainError(f"Moment order must be positive (got {l}).")
    return (math.sqrt(rows) + math.sqrt(cols) + 2.0 ** (1.0 / l) * math.sqrt(l)) ** l


def _step_moment(n: int, m: int) -> float:
    """(2 sqrt(n) + 2^(1/2m) sqrt(2m))^m, taken as 1 for m = 0."""
    if m == 0:
        return 1.0
    return math.sqrt(gauss_norm_moment_bound(n, n, 2 * m))


def bias_bound_linear(
    k: int,
    sigma: float,
    s_min: float,
    Atil_norm: float,
    Btil_u_norms: Sequence[float],
    u_norms: Sequence[float],
    x0_norm: float,
    n: int,
    p: int,
) -> float:
    """Sum over l = 2..k of C_l (sigma / s_min)^l for linear dynamics with inputs.

    `Btil_u_norms[j]` and `u_norms[j]` hold ||B u_j|| and ||u_j|| for j = 0..k-1.
    The input-coupled sum runs over i = l-1..k-1; its i = l-1 term carries a
    zero-th power of the Gaussian moment factor, which is 1.
    """
    if k < 1:
        raise DomainError(f"Time step must be >= 1 (got {k}).")
    if s_min <= 0:
        raise DomainError(f"s_min must be positive (got {s_min}).")
    if len(Btil_u_norms) < k or len(u_norms) < k:
        raise DimensionMismatchError(f"Need at least {k} input norms.")
    ratio = sigma / s_min
    coupling = math.sqrt(n) + math.sqrt(p) + 2.0
    total = 0.0
    for l in range(2, k + 1):
        state_part = math.comb(k, l) * Atil_norm ** (k - l) * x0_norm
        state_part += sum(
            math.comb(i, l) * Atil_norm ** (i - l) * Btil_u_norms[k - 1 - i] for i in range(l, k)
        )
        C_l = gauss_norm_moment_bound(n, n, l) * state_part
        C_l += sum(
            math.comb(i, l - 1)
            * Atil_norm ** (i - l + 1)
            * u_norms[k - 1 - i]
            * _step_moment(n, i - l + 1)
            * coupling
            for i in range(l - 1, k)
        )
        total += C_l * ratio**l
    return total


def bias_bound_autonomous(
    k: int,
    sigma: float,
    s_min: float,
    Atil_norm: float,
    x0_norm: float,
    n: int,
) -> float:
    """Sum over l = 2..k of C(k, l) (sigma/s_min)^l (2 sqrt(n) + 2^(1/l) sqrt(l))^l ||A||^(k-l) ||x0||."""
    if k < 1:
        raise DomainError(f"Time step must be >= 1 (got {k}).")
    if s_min <= 0:
        raise DomainError(f"s_min must be positive (got {s_min}).")
    ratio = sigma / s_min
    return sum(
        math.comb(k, l) * ratio**l * gauss_norm_moment_bound(n, n, l) * Atil_norm ** (k - l) * x0_norm
        for l in range(2, k + 1)
    )


def bias_bound_curve(
    intrusive: InferredOperators,
    x0: Array,
    inputs: Array | None,
    K_steps: int,
    sigma: float,
    s_min: float,
) -> Array:
    """Linear bias bound at steps 0..K_steps using norms of the intrusive operators."""
    if intrusive.ell != 1:
        raise UnsupportedError("The closed-form bias bound is only available for linear models.")
    A_norm = float(np.linalg.norm(intrusive.A_hat[0], ord=2))
    x0_norm = float(np.linalg.norm(x0))
    if intrusive.p and inputs is not None:
        inputs = np.asarray(inputs, dtype=np.float64)[:, :K_steps]
        u_norms = np.linalg.norm(inputs, axis=0)
        Bu_norms = np.linalg.norm(intrusive.B_hat @ inputs, axis=0)
    else:
        u_norms = Bu_norms = np.zeros(K_steps)
    bounds = np.zeros(K_steps + 1)
    for k in range(1, K_steps + 1):
        bounds[k] = bias_bound_linear(
            k, sigma, s_min, A_norm, Bu_norms, u_norms, x0_norm, intrusive.n, intrusive.p
        )
    return bounds


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise DomainError("Slope needs at least two (x, y) pairs of equal length.")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DomainError("Log-log slope needs strictly positive finite values.")
    lx = np.log(x)
    if np.ptp(lx) == 0:
        raise DomainError("Log-log slope needs at least two distinct x values.")
    return float(np.polyfit(lx, np.log(y), 1)[0])


def max_noise_order(k: int, ell: int) -> int:
    """Highest power of sigma/s_min in the k-step error of a degree-ell model."""
    if k < 0 or ell < 1:
        raise DomainError(f"Invalid arguments k={k}, ell={ell}.")
    if ell == 1:
        return k
    return (ell**k - 1) // (ell - 1)


def slope_summary(reports: Sequence[EvalReport], steps: Sequence[int], count: int = 3) -> list[SlopeSummary]:
    """Bias and MSE slopes over the `count` smallest positive noise levels."""
    usable = sorted((r for r in reports if r.sigma > 0 and r.usable > 0), key=lambda r: r.sigma)[:count]
    if len(usable) < 2:
        raise DomainError("Slopes need at least two noise levels with usable replicates.")
    nsr = [r.nsr for r in usable]
    summaries = []
    for step in steps:
        summaries.append(
            SlopeSummary(
                time_step=int(step),
                bias_slope=loglog_slope(nsr, [r.bias[step] for r in usable]),
                mse_slope=loglog_slope(nsr, [r.mse[step] for r in usable]),
                sigmas=tuple(r.sigma for r in usable),
            )
        )
    return summaries
