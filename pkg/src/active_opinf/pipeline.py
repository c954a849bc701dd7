"""High-level orchestration of the benchmark, select, infer and evaluate stages."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .active import (
    Dictionary,
    SelectionPlan,
    build_dictionary,
    make_plan,
    rows_to_reach,
    selection_curve,
)
from .basis import PodBasis, compute_pod
from .config import AppConfig
from .dynsys import (
    BASIS_STREAM,
    QUERY_STREAM,
    HeatConstants,
    LotkaVolterraConstants,
    NoiseModel,
    PolynomialSystem,
    heat_basis_inputs,
    heat_initial_state,
    heat_test_inputs,
    lv_basis_initial_conditions,
    lv_test_initial_condition,
    make_heat_benchmark,
    make_lotka_volterra_benchmark,
    make_noise_stream,
    simulate,
    simulate_batch,
)
from .evaluation import (
    EvalReport,
    QueryDesign,
    bias_bound_curve,
    intrusive_reference,
    mc_state_errors,
    slope_summary,
)
from .models import (
    Array,
    InstabilityDominatedError,
    ProvenanceTable,
    RankDeficiencyError,
    ValidationError,
)
from .opinf import assemble_data_matrix, infer_operators, intrusive_operators, operator_mse_bound
from .reproj import QueryCounter, reproject_noisy
from .report import render_summary
from .settings import RunSettings
from .storage import (
    read_basis,
    read_dictionary,
    read_json,
    read_selection,
    read_system,
    write_basis,
    write_curve,
    write_dictionary,
    write_json,
    write_matrix,
    write_operators,
    write_report,
    write_selection,
    write_system,
    write_trajectory,
)

LOG = logging.getLogger("active_opinf")

BENCHMARK_DEFAULTS: dict[str, dict[str, Any]] = {
    "heat": {"grid_points": 64, "dt": 0.01, "horizon": 10000, "n": 7, "K": 15},
    "lotka-volterra": {"grid_points": 100, "dt": 0.01, "horizon": 5000, "n": 12, "K": 100},
}
LV_BASIS_TRAJECTORIES = 6
# basis snapshots of both default benchmarks are drawn with this seed unless --seed is given
DEFAULT_BASIS_SEED = 1
DEFAULT_SIGMA = 1e-2
DEFAULT_SIGMA_GRID = [1e-4, 10**-3.5, 1e-3, 10**-2.5, 1e-2]
DEFAULT_REPLICATES = 10_000
DEFAULT_STEPS = 20
SLOPE_STEPS = (10, 20)
SAVINGS_SEARCH_FACTOR = 10


@dataclass
class BenchmarkResult:
    """What cmd_benchmark produced."""

    out_dir: Path
    system: PolynomialSystem
    basis: PodBasis
    dictionary: Dictionary


@dataclass
class SelectionResult:
    """A selection plan and where it was written."""

    plan: SelectionPlan
    path: Path
    curve_path: Path | None = None


@dataclass
class InferenceResult:
    """Inferred operators and diagnostics of one noisy query round."""

    path: Path
    s_min: float
    mse_bound: float
    queries: int
    relative_error: float


@dataclass
class EvaluationResult:
    """Per-method, per-sigma reports plus the rendered summary."""

    reports: dict[str, list[EvalReport]] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    out_dir: Path | None = None


def configure_logging(level: str) -> None:
    """Configure logging output."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def _constants(benchmark: str, overrides: dict[str, float]) -> HeatConstants | LotkaVolterraConstants:
    """Default constants of a benchmark with the given overrides applied."""
    cls = HeatConstants if benchmark == "heat" else LotkaVolterraConstants
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise ValidationError(f"Unknown {benchmark} constants: {', '.join(unknown)}.")
    values = {name: int(value) if known[name].type in (int, "int") else float(value) for name, value in overrides.items()}
    return cls(**values)


def _build_system(meta: dict[str, Any]) -> PolynomialSystem:
    constants = _constants(meta["benchmark"], meta["constants"])
    if meta["benchmark"] == "heat":
        return make_heat_benchmark(meta["grid_points"], meta["dt"], constants)
    return make_lotka_volterra_benchmark(meta["grid_points"], meta["dt"], constants)


def _test_data(meta: dict[str, Any], steps: int) -> tuple[Array, Array | None]:
    """Test initial state and test inputs of a benchmark."""
    constants = _constants(meta["benchmark"], meta["constants"])
    if meta["benchmark"] == "heat":
        return (
            heat_initial_state(meta["grid_points"]),
            heat_test_inputs(constants.inputs, steps, meta["dt"]),
        )
    return lv_test_initial_condition(meta["grid_points"], constants), None


def _finite_or_none(value: float | None) -> float | None:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def _sigma_label(sigma: float) -> str:
    return f"{sigma:.3e}"


class ExperimentController:
    """Coordinates the pipeline stages and their artifacts."""

    def __init__(self, config: AppConfig):
        """Store configuration for subsequent runs."""
        self.config = config

    def build_benchmark(self, settings: RunSettings) -> BenchmarkResult:
        """Build the truth system, simulate basis data, compute POD and the dictionary."""
        if settings.benchmark is None:
            raise ValidationError("A benchmark name is required (--benchmark heat|lotka-volterra).")
        defaults = BENCHMARK_DEFAULTS[settings.benchmark]
        constants = _constants(settings.benchmark, settings.constants)
        meta: dict[str, Any] = {
            "benchmark": settings.benchmark,
            "grid_points": settings.grid_points or defaults["grid_points"],
            "dt": settings.dt or defaults["dt"],
            "horizon": settings.horizon or defaults["horizon"],
            "n": settings.n or defaults["n"],
            "seed": DEFAULT_BASIS_SEED if settings.seed is None else settings.seed,
            "constants": dataclasses.asdict(constants),
        }
        out_dir = Path(settings.out or f"benchmark-{settings.benchmark}")
        system = _build_system(meta)
        meta["ell"] = settings.ell or system.order
        LOG.info("Built %s benchmark: N=%s p=%s ell=%s", meta["benchmark"], system.state_dim, system.input_dim, system.order)

        rng = make_noise_stream(meta["seed"], BASIS_STREAM)
        horizon = meta["horizon"]
        provenance = ProvenanceTable()
        if meta["benchmark"] == "heat":
            inputs = heat_basis_inputs(constants.inputs, horizon, meta["dt"], rng)
            trajectories = [simulate(system, heat_initial_state(meta["grid_points"]), inputs, horizon, dt=meta["dt"])]
        else:
            initial_states = lv_basis_initial_conditions(meta["grid_points"], constants, rng, LV_BASIS_TRAJECTORIES)
            trajectories = simulate_batch(system, initial_states, [None] * len(initial_states), horizon, dt=meta["dt"])
        snapshots = np.hstack([t.states for t in trajectories])
        LOG.info("Simulated %s basis trajectories (%s snapshots)", len(trajectories), snapshots.shape[1])

        basis = compute_pod(snapshots, meta["n"])
        states = np.hstack([t.states[:, :horizon] for t in trajectories])
        inputs_L = None if system.autonomous else np.hstack([t.inputs[:, :horizon] for t in trajectories])
        for trajectory_id in range(len(trajectories)):
            provenance.extend(trajectory_id, horizon)
        dictionary = build_dictionary(basis.project(states), inputs_L, meta["ell"], provenance)
        meta.update({"N": system.state_dim, "p": system.input_dim, "L": dictionary.L, "M": dictionary.M})

        write_system(out_dir / "system", system)
        write_matrix(out_dir / "snapshots.opif", snapshots)
        write_basis(out_dir / "basis.opif", basis)
        write_dictionary(out_dir, dictionary)
        write_json(out_dir / "benchmark.json", meta)
        LOG.info("Wrote benchmark artifacts to %s (L=%s, M=%s)", out_dir, dictionary.L, dictionary.M)
        return BenchmarkResult(out_dir=out_dir, system=system, basis=basis, dictionary=dictionary)

    def select(
        self,
        benchmark_dir: Path,
        settings: RunSettings,
        curve: list[int] | None = None,
    ) -> SelectionResult:
        """Select K dictionary rows and write the plan (and optionally an s_min curve)."""
        benchmark_dir = Path(benchmark_dir)
        meta = read_json(benchmark_dir / "benchmark.json")
        dictionary = read_dictionary(benchmark_dir)
        method = settings.method or "active"
        K = settings.K or BENCHMARK_DEFAULTS[meta["benchmark"]]["K"]
        plan = make_plan(dictionary, K, method, self.config.rank_tol)
        out_dir = Path(settings.out or benchmark_dir)
        path = out_dir / f"selection_{method}.csv"
        write_selection(path, plan, dictionary.M)
        LOG.info("Selected %s rows (%s), s_min=%.6e -> %s", K, method, plan.s_min, path)
        curve_path = None
        if curve:
            points = [p for m in ("active", "equidistant") for p in selection_curve(dictionary, curve, m, self.config.rank_tol)]
            curve_path = out_dir / "selection_curve.csv"
            write_curve(curve_path, points)
            LOG.info("Wrote selection curve to %s", curve_path)
        return SelectionResult(plan=plan, path=path, curve_path=curve_path)

    def infer(self, benchmark_dir: Path, selection_path: Path, settings: RunSettings) -> InferenceResult:
        """Query the noisy truth system at the selected rows and solve for the operators."""
        benchmark_dir = Path(benchmark_dir)
        system = read_system(benchmark_dir / "system")
        basis = read_basis(benchmark_dir / "basis.opif")
        dictionary = read_dictionary(benchmark_dir)
        plan = read_selection(selection_path)
        design = QueryDesign.from_plan(dictionary, plan)
        sigma = DEFAULT_SIGMA if settings.sigma is None else settings.sigma
        seed = settings.seed or 0

        counter = QueryCounter()
        stream = NoiseModel(sigma=sigma, seed=seed).stream(QUERY_STREAM)
        Z = reproject_noisy(system, basis.V, design.Xproj, design.U, stream, counter)
        data = assemble_data_matrix(design.Xproj, design.U, design.ell)
        operators = infer_operators(data, Z, self.config.rank_tol)
        intrusive = intrusive_operators(system, basis.V)
        O_tilde = intrusive.stacked()
        relative_error = float(np.linalg.norm(operators.stacked() - O_tilde) / np.linalg.norm(O_tilde))
        bound = operator_mse_bound(basis.n, data.M, sigma, operators.s_min)
        LOG.info("Inferred operators: s_min(D)=%.6e, %s queries", operators.s_min, counter.count)

        out_dir = Path(settings.out or benchmark_dir)
        path = out_dir / "operators.opif"
        write_operators(
            path,
            operators,
            extra={
                "sigma": sigma,
                "seed": seed,
                "K": data.K,
                "queries": counter.count,
                "mse_bound": bound,
                "relative_error_to_intrusive": relative_error,
            },
        )
        write_operators(out_dir / "intrusive.opif", intrusive)
        LOG.info("Wrote operators to %s", path)
        return InferenceResult(
            path=path, s_min=operators.s_min, mse_bound=bound, queries=counter.count, relative_error=relative_error
        )

    def evaluate(
        self,
        benchmark_dir: Path,
        selection_path: Path,
        settings: RunSettings,
        compare: bool = True,
    ) -> EvaluationResult:
        """Monte Carlo bias/MSE over the sigma grid, with an optional equidistant comparison."""
        benchmark_dir = Path(benchmark_dir)
        meta = read_json(benchmark_dir / "benchmark.json")
        system = read_system(benchmark_dir / "system")
        basis = read_basis(benchmark_dir / "basis.opif")
        dictionary = read_dictionary(benchmark_dir)
        method = settings.method or "active"
        plan = read_selection(selection_path, method)
        sigma_grid = sorted(settings.sigma_grid or DEFAULT_SIGMA_GRID)
        R = settings.replicates or DEFAULT_REPLICATES
        steps = settings.steps or DEFAULT_STEPS
        seed = settings.seed or 0
        out_dir = Path(settings.out or benchmark_dir)
        test_x0, test_inputs = _test_data(meta, steps)
        intrusive, reference = intrusive_reference(system, basis.V, test_x0, test_inputs, steps)
        write_matrix(out_dir / "intrusive_trajectory.opif", reference)
        write_trajectory(out_dir / "intrusive_trajectory.csv", reference)

        plans = {method: plan}
        if compare and method == "active":
            plans["equidistant"] = make_plan(dictionary, plan.K, "equidistant", self.config.rank_tol)

        result = EvaluationResult(out_dir=out_dir)
        plan_summaries = []
        for label, current in plans.items():
            design = QueryDesign.from_plan(dictionary, current)
            try:
                reports = [
                    mc_state_errors(
                        system,
                        basis.V,
                        design,
                        test_x0,
                        test_inputs,
                        steps,
                        sigma,
                        R,
                        seed,
                        threads=self.config.threads,
                        rank_tol=self.config.rank_tol,
                        divergence_factor=self.config.divergence_factor,
                        method=label,
                    )
                    for sigma in sigma_grid
                ]
            except RankDeficiencyError:
                if current is plan:
                    raise
                LOG.warning("Equidistant plan of %s rows is rank deficient; comparison skipped.", plan.K)
                continue
            result.reports[label] = reports
            for report in reports:
                write_report(out_dir / f"eval_{label}_sigma_{_sigma_label(report.sigma)}.csv", report)
            plan_summaries.append(self._plan_summary(label, reports, intrusive, reference, test_inputs, steps))

        slopes = self._slopes(result.reports[method], steps)
        savings = self._savings(dictionary, plan) if "equidistant" in result.reports and method == "active" else None
        summary = {
            "benchmark": meta["benchmark"],
            "n": basis.n,
            "ell": dictionary.layout.ell,
            "M": dictionary.M,
            "K": plan.K,
            "replicates": R,
            "steps": steps,
            "seed": seed,
            "sigma_grid": sigma_grid,
            "plans": plan_summaries,
            "slopes": slopes,
            "slopes_method": method,
            "savings": savings,
        }
        result.summary = summary
        write_json(out_dir / "summary.json", summary)
        render_summary(summary, out_dir).write()
        LOG.info("Wrote evaluation summary to %s", out_dir)

        dominated = [r.sigma for r in result.reports[method] if r.instability_dominated(self.config.unstable_fraction)]
        if dominated:
            LOG.warning("Instability-dominated noise levels: %s", dominated)
            raise InstabilityDominatedError(
                f"Too few stable replicates at sigma={', '.join(_sigma_label(s) for s in dominated)}."
            )
        return result

    def _plan_summary(
        self,
        method: str,
        reports: list[EvalReport],
        intrusive,
        reference: Array,
        test_inputs: Array | None,
        steps: int,
    ) -> dict[str, Any]:
        rows = []
        for report in reports:
            bound = None
            if intrusive.ell == 1 and report.sigma > 0:
                bound = float(bias_bound_curve(intrusive, reference[:, 0], test_inputs, steps, report.sigma, report.s_min)[-1])
            rows.append(
                {
                    "sigma": report.sigma,
                    "nsr": report.nsr,
                    "unstable": report.unstable,
                    "replicates": report.replicates,
                    "bias_final": _finite_or_none(float(report.bias[-1])),
                    "mse_final": _finite_or_none(float(report.mse[-1])),
                    "bound_final": bound,
                }
            )
        return {"method": method, "s_min": reports[0].s_min, "per_sigma": rows}

    def _slopes(self, reports: list[EvalReport], steps: int) -> list[dict[str, Any]]:
        slope_steps = sorted({min(s, steps) for s in SLOPE_STEPS})
        try:
            summaries = slope_summary(reports, slope_steps)
        except ValueError as exc:
            LOG.warning("Slopes unavailable: %s", exc)
            return []
        return [
            {"time_step": s.time_step, "bias_slope": s.bias_slope, "mse_slope": s.mse_slope, "sigmas": list(s.sigmas)}
            for s in summaries
        ]

    def _savings(self, dictionary: Dictionary, plan: SelectionPlan) -> dict[str, Any] | None:
        """Rows the equidistant plan needs to match the active plan's s_min."""
        if plan.s_min is None:
            return None
        limit = min(dictionary.L, SAVINGS_SEARCH_FACTOR * plan.K)
        equidistant_rows = rows_to_reach(dictionary, plan.s_min, "equidistant", K_max=limit)
        return {
            "target": plan.s_min,
            "active_rows": plan.K,
            "equidistant_rows": equidistant_rows,
            "search_limit": limit,
            "factor": None if equidistant_rows is None else equidistant_rows / plan.K,
        }
