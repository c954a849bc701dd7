"""Environment-driven configuration loader."""

from __future__ import annotations

import os
from dataclasses import dataclass

from dotenv import load_dotenv

LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


@dataclass(frozen=True)
class AppConfig:
    """Process-wide configuration values."""

    threads: int
    log_level: str
    rank_tol: float
    divergence_factor: float
    unstable_fraction: float


def _default_threads() -> int:
    """Return the CPU count capped at 8."""
    return max(1, min(os.cpu_count() or 1, 8))


def _parse_int(name: str, default: int, minimum: int) -> int:
    """Read an integer variable no smaller than `minimum`."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{name} must be an integer (got {raw!r}).") from exc
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum} (got {value}).")
    return value


def _parse_float(name: str, default: float) -> float:
    """Read a float variable."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ValueError(f"{name} must be a number (got {raw!r}).") from exc


def load_config() -> AppConfig:
    """Load configuration values from the environment (and .env)."""
    load_dotenv()
    threads = _parse_int("OPINF_THREADS", _default_threads(), minimum=1)

    log_level = os.getenv("OPINF_LOG_LEVEL", "INFO").upper()
    if log_level not in LOG_LEVELS:
        raise ValueError(f"OPINF_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}.")

    rank_tol = _parse_float("OPINF_RANK_TOL", 1e-10)
    if rank_tol <= 0:
        raise ValueError("OPINF_RANK_TOL must be positive.")

    divergence_factor = _parse_float("OPINF_DIVERGENCE_FACTOR", 1e6)
    if divergence_factor <= 1:
        raise ValueError("OPINF_DIVERGENCE_FACTOR must be greater than 1.")

    unstable_fraction = _parse_float("OPINF_UNSTABLE_FRACTION", 0.9)
    if not 0 < unstable_fraction <= 1:
        raise ValueError("OPINF_UNSTABLE_FRACTION must lie in (0, 1].")

    return AppConfig(
        threads=threads,
        log_level=log_level,
        rank_tol=rank_tol,
        divergence_factor=divergence_factor,
        unstable_fraction=unstable_fraction,
    )
