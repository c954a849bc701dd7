"""Command-line entry point for active-opinf."""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .config import load_config
from .models import InstabilityDominatedError, OpInfError, RankDeficiencyError, ValidationError
from .pipeline import ExperimentController, configure_logging
from .settings import RunSettings, load_settings

EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_RANK = 3
EXIT_UNSTABLE = 4


def _float_list(value: str) -> list[float]:
    """Parse a comma-separated list of floats."""
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'") from exc


def _int_list(value: str) -> list[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'") from exc


def _build_parser() -> argparse.ArgumentParser:
    """Create the CLI parser."""
    parser = argparse.ArgumentParser(
        description="Active operator inference: benchmarks, row selection, inference and Monte Carlo evaluation."
    )
    parser.add_argument("--log-level", help="Override log level (default from config).")
    parser.add_argument("--config", help="JSON or YAML settings file with keys mirroring the flags.")
    parser.add_argument(
        "-e",
        "--var",
        action="append",
        help="Template variable for the settings file in KEY=VALUE form. Can be repeated.",
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    bench = subparsers.add_parser("benchmark", help="Build a benchmark system, POD basis and dictionary.")
    bench.add_argument("--benchmark", choices=["heat", "lotka-volterra"], help="Benchmark name.")
    bench.add_argument("--n", type=int, help="Reduced dimension.")
    bench.add_argument("--ell", type=int, help="Polynomial degree of the learned model.")
    bench.add_argument("--grid-points", type=int, help="Spatial grid points.")
    bench.add_argument("--dt", type=float, help="Time step.")
    bench.add_argument("--horizon", type=int, help="Basis trajectory length L.")
    _register_common_arguments(bench)

    select = subparsers.add_parser("select", help="Choose K dictionary rows to query.")
    _register_artifact_arguments(select, selection=False)
    select.add_argument("--method", choices=["active", "equidistant"], help="Selection method.")
    select.add_argument("--K", type=int, help="Number of rows to select.")
    select.add_argument("--curve", type=_int_list, help="Also write s_min for these K values (comma list).")
    _register_common_arguments(select)

    infer = subparsers.add_parser("infer", help="Query the noisy system at the selected rows and infer operators.")
    _register_artifact_arguments(infer)
    infer.add_argument("--sigma", type=float, help="Noise standard deviation.")
    _register_common_arguments(infer)

    evaluate = subparsers.add_parser("evaluate", help="Monte Carlo bias and MSE over a noise grid.")
    _register_artifact_arguments(evaluate)
    evaluate.add_argument("--method", choices=["active", "equidistant"], help="Method the selection came from.")
    evaluate.add_argument("--sigma-grid", type=_float_list, help="Comma-separated noise levels.")
    evaluate.add_argument("--replicates", type=int, help="Monte Carlo replicates per noise level.")
    evaluate.add_argument("--steps", type=int, help="Prediction steps.")
    evaluate.add_argument(
        "--compare",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Also evaluate an equidistant plan with the same number of rows.",
    )
    _register_common_arguments(evaluate)

    return parser


def _register_common_arguments(subparser: argparse.ArgumentParser) -> None:
    """Register arguments shared by every stage."""
    subparser.add_argument("--seed", type=int, help="Master seed.")
    subparser.add_argument("--out", help="Output directory.")


def _register_artifact_arguments(subparser: argparse.ArgumentParser, selection: bool = True) -> None:
    subparser.add_argument("--benchmark-dir", required=True, help="Directory written by 'benchmark'.")
    if selection:
        subparser.add_argument("--selection", required=True, help="Selection CSV written by 'select'.")


def _parse_template_vars(values: list[str] | None) -> dict[str, str]:
    """Convert KEY=VALUE pairs into a dict."""
    result: dict[str, str] = {}
    if not values:
        return result
    for value in values:
        if "=" not in value:
            raise ValidationError(f"Invalid template var '{value}', expected KEY=VALUE.")
        key, val = value.split("=", 1)
        result[key] = val
    return result


def _settings(args: argparse.Namespace) -> RunSettings:
    """Settings file values overridden by the flags that were given."""
    base = load_settings(Path(args.config) if args.config else None, _parse_template_vars(args.var))
    keys = RunSettings.model_fields.keys()
    overrides: dict[str, Any] = {key: getattr(args, key) for key in keys if hasattr(args, key)}
    return base.merged(overrides)


def _run_benchmark(controller: ExperimentController, args: argparse.Namespace) -> None:
    result = controller.build_benchmark(_settings(args))
    print(f"Wrote benchmark to {result.out_dir} (L={result.dictionary.L}, M={result.dictionary.M})")


def _run_select(controller: ExperimentController, args: argparse.Namespace) -> None:
    result = controller.select(Path(args.benchmark_dir), _settings(args), curve=args.curve)
    print(f"Selected {result.plan.K} rows ({result.plan.method}), s_min={result.plan.s_min:.6e}")
    print(f"Wrote selection to {result.path}")
    if result.curve_path:
        print(f"Wrote selection curve to {result.curve_path}")


def _run_infer(controller: ExperimentController, args: argparse.Namespace) -> None:
    result = controller.infer(Path(args.benchmark_dir), Path(args.selection), _settings(args))
    print(f"s_min(D)={result.s_min:.6e}, queries={result.queries}, MSE bound={result.mse_bound:.6e}")
    print(f"Relative error to intrusive operators: {result.relative_error:.3e}")
    print(f"Wrote operators to {result.path}")


def _run_evaluate(controller: ExperimentController, args: argparse.Namespace) -> None:
    result = controller.evaluate(
        Path(args.benchmark_dir), Path(args.selection), _settings(args), compare=args.compare
    )
    print((result.out_dir / "summary.txt").read_text(encoding="utf-8"), end="")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, RankDeficiencyError):
        return EXIT_RANK
    if isinstance(exc, InstabilityDominatedError):
        return EXIT_UNSTABLE
    return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> None:
    """CLI entry point."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        try:
            config = load_config()
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        configure_logging(args.log_level or config.log_level)
        controller = ExperimentController(config)
        if args.command == "benchmark":
            _run_benchmark(controller, args)
        elif args.command == "select":
            _run_select(controller, args)
        elif args.command == "infer":
            _run_infer(controller, args)
        elif args.command == "evaluate":
            _run_evaluate(controller, args)
        else:  # pragma: no cover - argparse ensures we never reach here
            parser.error(f"Unsupported command {args.command}")
    except OpInfError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(_exit_code(exc))
    except Exception as exc:  # noqa: BLE001
        print(f"Unexpected error: {exc}", file=sys.stderr)
        sys.exit(EXIT_FAILURE)


if __name__ == "__main__":
    main()
