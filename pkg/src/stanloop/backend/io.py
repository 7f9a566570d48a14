"""Readers and writers for the sampler's on-disk formats.

* data input: JSON object of scalars / nested row-major arrays
* chain output: CSV with ``#`` comment lines, one header row, one row per draw
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from ..errors import InvalidInputError, ParseError

__all__ = ["format_real", "read_chain_csv", "to_json_value", "write_data_file", "write_draws_csv"]


def format_real(v: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(v), ".17g")


def _real(v: float) -> float | str:
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    return v


def to_json_value(value: Any, kind: str | None = None) -> Any:
    """Convert one data entry into the sampler's JSON representation.

    ``kind`` ("int" or "real") comes from the dataset schema. Without it the
    declared Python/numpy type decides, never the numeric value.
    """
    arr = np.asarray(value)
    if kind is None:
        if arr.dtype == bool or np.issubdtype(arr.dtype, np.integer):
            kind = "int"
        elif np.issubdtype(arr.dtype, np.floating):
            kind = "real"
        else:
            raise InvalidInputError(f"unsupported data dtype {arr.dtype}")
    if kind == "int":
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.mod(arr, 1) == 0):
            raise InvalidInputError("schema declares int but value has a fractional part")
        return arr.astype(np.int64).tolist()
    if kind == "real":
        out = arr.astype(float)
        if out.ndim == 0:
            return _real(out)
        return np.vectorize(_real, otypes=[object])(out).tolist()
    raise InvalidInputError(f"unknown schema kind {kind!r}")


def write_data_file(
    data: Mapping[str, Any],
    path: str | Path,
    schema: Mapping[str, str] | None = None,
) -> Path:
    path = Path(path)
    schema = schema or {}
    doc = {name: to_json_value(val, schema.get(name)) for name, val in data.items()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


def read_chain_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse one chain's output CSV into ``{column: values}`` (insertion-ordered)."""
    path = Path(path)
    header: list[str] | None = None
    rows: list[list[float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = next(csv.reader([stripped]))
            if header is None:
                header = [f.strip() for f in fields]
                if len(set(header)) != len(header):
                    raise ParseError("duplicate column names in header", lineno, str(path))
                continue
            if len(fields) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(fields)}", lineno, str(path)
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", lineno, str(path)) from None
    if header is None:
        raise ParseError("no header row found", None, str(path))
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: table[:, j].copy() for j, name in enumerate(header)}


def write_draws_csv(
    columns: Mapping[str, Iterable[float]],
    path: str | Path,
    comments: Iterable[str] = (),
) -> Path:
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float) for n in names]
    if len({c.shape for c in cols}) > 1:
        raise InvalidInputError("all columns must have the same length")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(format_real(v) for v in row) + "\n")
    return path
