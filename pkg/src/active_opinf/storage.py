"""Artifact I/O: OPIF matrix files, JSON sidecars and CSV tables.

OPIF layout: magic b"OPIF", u32 version, u64 rows, u64 cols, then rows*cols
little-endian float64 values in column-major order.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .active import CurvePoint, Dictionary, SelectionPlan
from .basis import PodBasis
from .dynsys import PolynomialSystem
from .evaluation import EvalReport
from .models import Array, ProvenanceTable, Trajectory, ValidationError
from .opinf import DataLayout, InferredOperators

MAGIC = b"OPIF"
VERSION = 1
LAYOUT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

REPORT_COLUMNS = (
    "time_step",
    "bias",
    "bias_se",
    "mse",
    "mse_se",
    "sigma",
    "s_min",
    "nsr",
    "R_used",
    "R_unstable",
)


def atomic_write(path: Path, payload: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over `path`."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise ValidationError(f"Cannot write to {path.parent}: {exc}") from exc
    tmp_path = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        tmp_path.replace(path)
    except OSError as exc:
        tmp_path.unlink(missing_ok=True)
        raise ValidationError(f"Cannot write {path}: {exc}") from exc


def matrix_to_bytes(A: Array) -> bytes:
    """Serialise a dense matrix in OPIF layout."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValidationError("Only 1-D or 2-D arrays can be stored as matrices.")
    rows, cols = A.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + A.astype("<f8").tobytes(order="F")


def matrix_from_bytes(payload: bytes, source: str = "<bytes>") -> Array:
    """Parse an OPIF payload."""
    if len(payload) < _HEADER.size:
        raise ValidationError(f"{source}: file too short for an OPIF header.")
    magic, version, rows, cols = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ValidationError(f"{source}: bad magic {magic!r}.")
    if version != VERSION:
        raise ValidationError(f"{source}: unsupported OPIF version {version}.")
    expected = _HEADER.size + 8 * rows * cols
    if len(payload) != expected:
        raise ValidationError(f"{source}: expected {expected} bytes, found {len(payload)}.")
    data = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape((rows, cols), order="F").astype(np.float64)


def write_matrix(path: Path, A: Array) -> None:
    """Write a dense matrix file."""
    atomic_write(path, matrix_to_bytes(A))


def read_matrix(path: Path) -> Array:
    """Read a dense matrix file."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"Cannot read {path}: {exc}") from exc
    return matrix_from_bytes(payload, str(path))


def write_json(path: Path, data: dict[str, Any]) -> None:
    """Write sorted, indented JSON with a trailing newline."""
    atomic_write(path, (json.dumps(data, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path: Path) -> dict[str, Any]:
    """Read a JSON document."""
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"Cannot read JSON from {path}: {exc}") from exc


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV table; floats keep their full repr."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    atomic_write(path, buffer.getvalue().encode("utf-8"))


def read_csv(path: Path) -> list[dict[str, str]]:
    """Read a CSV table into dictionaries keyed by header."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise ValidationError(f"Cannot read {path}: {exc}") from exc


def _write_operator(path: Path, op: Array | sp.spmatrix) -> dict[str, Any]:
    """Write one operator; sparse ones become COO triplets."""
    if sp.issparse(op):
        coo = sp.coo_matrix(op)
        triplets = np.column_stack([coo.row, coo.col, coo.data]).astype(np.float64)
        write_matrix(path, triplets.reshape(-1, 3))
        return {"file": path.name, "format": "coo", "shape": list(op.shape), "nnz": int(coo.nnz)}
    write_matrix(path, op)
    return {"file": path.name, "format": "dense", "shape": list(op.shape)}


def _read_operator(directory: Path, meta: dict[str, Any]) -> Array | sp.spmatrix:
    values = read_matrix(directory / meta["file"])
    if meta["format"] == "coo":
        shape = tuple(meta["shape"])
        return sp.csr_matrix(
            (values[:, 2], (values[:, 0].astype(np.int64), values[:, 1].astype(np.int64))), shape=shape
        )
    return values


def write_system(directory: Path, sys: PolynomialSystem) -> None:
    """Write A_1..A_ell, B and system.json."""
    directory = Path(directory)
    operators = [_write_operator(directory / f"A{j}.opif", op) for j, op in enumerate(sys.ops, start=1)]
    meta = {
        "N": sys.state_dim,
        "p": sys.input_dim,
        "ell": sys.order,
        "operators": operators,
        "input_map": _write_operator(directory / "B.opif", sys.input_map),
    }
    write_json(directory / "system.json", meta)


def read_system(directory: Path) -> PolynomialSystem:
    """Load a system written by write_system."""
    directory = Path(directory)
    meta = read_json(directory / "system.json")
    ops = tuple(_read_operator(directory, op) for op in meta["operators"])
    input_map = np.asarray(_read_operator(directory, meta["input_map"]))
    return PolynomialSystem(ops=ops, input_map=input_map.reshape(meta["N"], meta["p"]))


def write_operators(path: Path, operators: InferredOperators, extra: dict[str, Any] | None = None) -> None:
    """Write the stacked M x n operator matrix and its layout sidecar (`path` with .json)."""
    path = Path(path)
    write_matrix(path, operators.stacked())
    meta = {"layout": operators.layout.to_dict(), "layout_version": LAYOUT_VERSION, "s_min": operators.s_min}
    if extra:
        meta.update(extra)
    write_json(path.with_suffix(".json"), meta)


def write_basis(path: Path, basis: PodBasis) -> None:
    """Write V and the singular values it came from."""
    path = Path(path)
    write_matrix(path, basis.V)
    write_json(path.with_suffix(".json"), {"n": basis.n, "N": basis.state_dim, "singular_values": basis.singular_values.tolist()})


def read_basis(path: Path) -> PodBasis:
    """Load a basis written by write_basis."""
    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    return PodBasis(V=read_matrix(path), singular_values=np.asarray(meta["singular_values"], dtype=np.float64))


def write_dictionary(directory: Path, dictionary: Dictionary) -> None:
    """Write dictionary.opif, dictionary.json and provenance.csv."""
    directory = Path(directory)
    write_matrix(directory / "dictionary.opif", dictionary.rows)
    write_json(directory / "dictionary.json", {"layout": dictionary.layout.to_dict(), "L": dictionary.L})
    prov = dictionary.provenance
    write_csv(
        directory / "provenance.csv",
        ("row", "trajectory", "time_index"),
        ((i, t, k) for i, (t, k) in enumerate(zip(prov.trajectory, prov.time_index, strict=True))),
    )


def read_dictionary(directory: Path) -> Dictionary:
    """Load a dictionary written by write_dictionary."""
    directory = Path(directory)
    meta = read_json(directory / "dictionary.json")
    layout = meta["layout"]
    provenance = ProvenanceTable()
    for row in read_csv(directory / "provenance.csv"):
        provenance.trajectory.append(int(row["trajectory"]))
        provenance.time_index.append(int(row["time_index"]))
    return Dictionary(
        rows=read_matrix(directory / "dictionary.opif"),
        layout=DataLayout(n=layout["n"], p=layout["p"], ell=layout["ell"]),
        provenance=provenance,
    )


def write_selection(path: Path, plan: SelectionPlan, M: int) -> None:
    """CSV of position, index, the s_min after that row (from M rows on) and the greedy gain bound."""
    rows = []
    for position, index in enumerate(plan.indices):
        m = position + 1
        s_value = plan.s_min_history[m - M] if m >= M and m - M < len(plan.s_min_history) else None
        gain_position = position - M
        gain = plan.gain_bounds[gain_position] if 0 <= gain_position < len(plan.gain_bounds) else None
        rows.append((position, index, s_value, gain))
    write_csv(path, ("position", "index", "s_min", "gain_bound"), rows)


def read_selection(path: Path, method: str = "active") -> SelectionPlan:
    """Load a plan written by write_selection."""
    records = sorted(read_csv(path), key=lambda row: int(row["position"]))
    if not records:
        raise ValidationError(f"{path}: selection file is empty.")
    return SelectionPlan(
        indices=[int(row["index"]) for row in records],
        s_min_history=[float(row["s_min"]) for row in records if row["s_min"]],
        gain_bounds=[float(row["gain_bound"]) for row in records if row["gain_bound"]],
        method=method,
    )


def write_report(path: Path, report: EvalReport) -> None:
    """CSV with one row per time step."""
    write_csv(path, REPORT_COLUMNS, ([record[c] for c in REPORT_COLUMNS] for record in report.rows()))


def write_trajectory(path: Path, trajectory: Trajectory | Array) -> None:
    """CSV with one row per time step: time_step, x_0, ..., x_{n-1}."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    header = ["time_step", *(f"x_{i}" for i in range(states.shape[0]))]
    write_csv(path, header, ((k, *states[:, k]) for k in range(states.shape[1])))


def write_curve(path: Path, points: Iterable[CurvePoint]) -> None:
    """CSV of K, method, s_min."""
    write_csv(path, ("K", "method", "s_min"), ((p.K, p.method, p.s_min) for p in points))
