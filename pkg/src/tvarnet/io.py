"""File formats: series CSV, coefficient JSON, breakpoint/report/score CSVs.

Series CSV and coefficient JSON use 0-based time; breakpoint CSVs use
1-based time and nodes, matching the in-memory triplets. Floats are
written with 17 significant digits so every file round-trips bit-exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .model import BreakpointSet, MultivariateSeries, TvarCoefficients

__all__ = [
    "ParseError",
    "format_float",
    "dumps",
    "write_text",
    "write_series_csv",
    "read_series_csv",
    "coefficients_to_dict",
    "coefficients_from_dict",
    "write_coefficients",
    "read_coefficients",
    "write_breakpoints_csv",
    "read_breakpoints_csv",
    "write_norm_report",
    "read_grid_csv",
    "write_score_table",
]


class ParseError(ValueError):
    pass


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj) -> str:
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_encode(obj[k])}" for k in sorted(obj))
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(float(obj)):
            return "null"
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, 17-digit floats, trailing newline."""
    return _encode(obj) + "\n"


def write_text(path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_series_csv(series: MultivariateSeries, path):
    out = io.StringIO()
    out.write(",".join(("t",) + series.node_labels) + "\n")
    for k in range(series.T):
        out.write(",".join([str(k)] + [format_float(v) for v in series.values[:, k]]) + "\n")
    write_text(path, out.getvalue())


def read_series_csv(path) -> MultivariateSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise ParseError(f"{path}: line 1: header must be 't,<label_1>,...'")
    labels = header[1:]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            t = int(row[0])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}, column 1: bad time index {row[0]!r}") from None
        if t != len(values):
            raise ParseError(f"{path}: line {lineno}, column 1: expected t={len(values)}, got {t}")
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}, column {col}: bad number {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {lineno}, column {col}: non-finite value")
            vals.append(v)
        values.append(vals)
    if not values:
        raise ParseError(f"{path}: no data rows")
    try:
        return MultivariateSeries(np.array(values).T, tuple(labels))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def coefficients_to_dict(coeffs: TvarCoefficients) -> dict:
    return {
        "L": coeffs.L,
        "P": coeffs.P,
        "T": coeffs.T,
        "coeffs": coeffs.coeffs.tolist(),
        "segment_starts": [s - 1 for s in coeffs.segment_starts],
    }


def coefficients_from_dict(d: dict, source="coefficients") -> TvarCoefficients:
    missing = {"L", "P", "T", "coeffs", "segment_starts"} - set(d)
    if missing:
        raise ParseError(f"{source}: missing fields {sorted(missing)}")
    arr = np.asarray(d["coeffs"], dtype=float)
    L, P, T = int(d["L"]), int(d["P"]), int(d["T"])
    if arr.ndim != 4 or arr.shape[1:] != (L, P, P):
        raise ParseError(f"{source}: coeffs must have shape (segments, {L}, {P}, {P}), got {arr.shape}")
    try:
        return TvarCoefficients(arr, [s + 1 for s in d["segment_starts"]], T)
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from None


def write_coefficients(coeffs: TvarCoefficients, path, extra: dict = None):
    d = coefficients_to_dict(coeffs)
    if extra:
        d.update(extra)
    write_text(path, dumps(d))


def read_coefficients(path) -> TvarCoefficients:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return coefficients_from_dict(d, str(path))


def write_breakpoints_csv(bps: BreakpointSet, path):
    lines = ["t,i,j"] + [f"{t},{i},{j}" for t, i, j in bps]
    write_text(path, "\n".join(lines) + "\n")


def read_breakpoints_csv(path) -> BreakpointSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t", "i", "j"]:
        raise ParseError(f"{path}: line 1: header must be 't,i,j'")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            out.append(tuple(int(c) for c in row))
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: expected three integers") from None
        if len(out[-1]) != 3:
            raise ParseError(f"{path}: line {lineno}: expected three integers")
    return BreakpointSet(out)


def write_norm_report(coeffs: TvarCoefficients, path):
    """Long-format rows (i, j, window_start, window_end, norm, taps) per segment.

    Nodes are 1-based; window bounds are inclusive 0-based sample indices,
    like the series CSV.
    """
    L = coeffs.L
    header = ["i", "j", "window_start", "window_end", "norm"] + [f"tap_{k}" for k in range(1, L + 1)]
    lines = [",".join(header)]
    norms = coeffs.filter_norms()
    for i in range(coeffs.P):
        for j in range(coeffs.P):
            for n, (s, e) in enumerate(zip(coeffs.segment_starts, coeffs.segment_ends)):
                taps = coeffs.coeffs[n, :, i, j]
                lines.append(",".join(
                    [str(i + 1), str(j + 1), str(s - 1), str(e - 1), format_float(norms[n, i, j])]
                    + [format_float(v) for v in taps]
                ))
    write_text(path, "\n".join(lines) + "\n")


def read_grid_csv(path) -> list:
    """Grid file: header 'lambda,gamma', one candidate point per row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["lambda", "gamma"]:
        raise ParseError(f"{path}: line 1: header must be 'lambda,gamma'")
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            lam, gam = (float(c) for c in row)
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: expected two numbers") from None
        points.append((lam, gam))
    if not points:
        raise ParseError(f"{path}: grid has no points")
    return points


def write_score_table(table, path):
    nf = len(table[0][3]) if table else 0
    lines = [",".join(["lambda", "gamma", "score"] + [f"fold_{m}" for m in range(nf)])]
    for lam, gam, score, folds in table:
        lines.append(",".join(format_float(v) for v in (lam, gam, score, *folds)))
    write_text(path, "\n".join(lines) + "\n")
