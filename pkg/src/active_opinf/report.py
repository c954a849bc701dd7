"""Render the evaluation summary via Jinja2 templates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from jinja2 import Environment, PackageLoader, StrictUndefined

from .storage import atomic_write


@dataclass
class RenderResult:
    """Holds rendered summary text and destination path."""

    text: str
    output_path: Path

    def write(self) -> None:
        """Persist the rendered text atomically."""
        atomic_write(self.output_path, self.text.encode("utf-8"))


def render_summary(
    summary: dict[str, Any],
    output_dir: Path,
    template_name: str = "summary.txt.j2",
) -> RenderResult:
    """Render the plain-text companion of summary.json."""
    env = Environment(
        loader=PackageLoader("active_opinf", "templates"),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    template = env.get_template(template_name)
    text = template.render(**summary)
    return RenderResult(text=text.strip() + "\n", output_path=Path(output_dir) / "summary.txt")
