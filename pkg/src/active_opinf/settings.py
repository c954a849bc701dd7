"""Load and validate run settings files (JSON or YAML, rendered through Jinja2)."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

import yaml
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from jinja2.exceptions import TemplateError
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .models import ValidationError

BenchmarkName = Literal["heat", "lotka-volterra"]
MethodName = Literal["active", "equidistant"]


class RunSettings(BaseModel):
    """Flat keys mirroring the CLI flags; unset keys fall back to per-command defaults."""

    model_config = ConfigDict(extra="forbid")

    benchmark: BenchmarkName | None = None
    n: int | None = Field(default=None, ge=1)
    ell: int | None = Field(default=None, ge=1, le=4)
    K: int | None = Field(default=None, ge=1)
    method: MethodName | None = None
    sigma: float | None = Field(default=None, ge=0)
    sigma_grid: list[float] | None = None
    replicates: int | None = Field(default=None, ge=2)
    steps: int | None = Field(default=None, ge=1)
    seed: int | None = Field(default=None, ge=0)
    out: str | None = None
    grid_points: int | None = Field(default=None, ge=3)
    dt: float | None = Field(default=None, gt=0)
    horizon: int | None = Field(default=None, ge=1)
    constants: dict[str, float] = Field(default_factory=dict)

    @field_validator("sigma_grid")
    @classmethod
    def _non_negative_grid(cls, value: list[float] | None) -> list[float] | None:
        """Reject negative noise levels."""
        if value is not None and any(sigma < 0 for sigma in value):
            raise ValueError("sigma_grid entries must be non-negative")
        return value

    def merged(self, overrides: dict[str, Any]) -> RunSettings:
        """Return a copy with every non-None override applied."""
        updates = {key: value for key, value in overrides.items() if value is not None}
        try:
            return RunSettings.model_validate({**self.model_dump(), **updates})
        except Exception as exc:  # noqa: BLE001
            raise ValidationError(f"Invalid option: {exc}") from exc


def _render_settings(path: Path, extra_context: dict[str, Any] | None = None) -> str:
    """Render a settings file through Jinja2."""
    env = Environment(
        loader=FileSystemLoader(str(path.parent)),
        undefined=StrictUndefined,
        autoescape=False,
        keep_trailing_newline=True,
    )
    template = env.get_template(path.name)
    context: dict[str, Any] = {"env": os.environ}
    if extra_context:
        context.update(extra_context)
    return template.render(**context)


def load_settings(path: Path | None, template_vars: dict[str, Any] | None = None) -> RunSettings:
    """Load a JSON/YAML settings file; no path yields empty settings."""
    if path is None:
        return RunSettings()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Settings file {path} does not exist.")
    try:
        rendered = _render_settings(path, template_vars)
    except TemplateError as exc:
        raise ValidationError(f"Failed to render settings template: {exc}") from exc
    try:
        data = yaml.safe_load(rendered) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"Failed to parse settings: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("Settings file must contain a mapping of flat keys.")

    try:
        return RunSettings.model_validate(data)
    except Exception as exc:  # noqa: BLE001
        raise ValidationError(f"Settings validation error: {exc}") from exc
