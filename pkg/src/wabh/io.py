"""Delimited text formats used by the command-line tools.

Every file is comma separated with one header row.  Lines starting with
``#`` are comments; writers use them to echo the effective parameters as
``# key=value`` so that a run can be reproduced from its output alone.

Lesion matrix
    ``y,<id>,<id>,...``: one row per subject, outcome first, then one binary
    column per test.  Column names are the integer test ids.
Coordinates
    ``test_id,x,y[,z]``: non-negative integer grid coordinates.
Per-test statistics
    ``test_id,pvalue[,s_m][,xbar][,p_nonnull]``: precomputed p-values,
    optionally with predicted standard errors, lesion frequencies and a prior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .errors import DimensionError, InputError

MISSING = {"", "na", "nan", "null", "none"}


def _rows(path) -> Tuple[List[str], List[Tuple[int, List[str]]]]:
    """Header and numbered data rows of a comma-separated file."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        numbered = ((i, line) for i, line in enumerate(fh, start=1) if not line.startswith("#"))
        header, rows = None, []
        for lineno, line in numbered:
            if not line.strip():
                continue
            cells = [c.strip() for c in next(csv.reader([line]))]
            if header is None:
                header = cells
            else:
                rows.append((lineno, cells))
    if header is None:
        raise InputError(f"{path}: empty file")
    return header, rows


def _number(cell: str, where: str) -> float:
    if cell.lower() in MISSING:
        raise InputError(f"{where}: missing value")
    try:
        return float(cell)
    except ValueError:
        raise InputError(f"{where}: non-numeric entry {cell!r}") from None


def _test_id(cell: str, where: str) -> int:
    try:
        value = int(cell)
    except ValueError:
        raise InputError(f"{where}: test id {cell!r} is not an integer") from None
    if value < 0:
        raise InputError(f"{where}: negative test id {value}")
    return value


@dataclass
class LesionMatrix:
    Y: np.ndarray
    X: np.ndarray
    test_ids: np.ndarray


def read_matrix(path) -> LesionMatrix:
    """Read a subjects x tests lesion file; columns are reordered by test id."""
    header, rows = _rows(path)
    if len(header) < 3:
        raise DimensionError(f"{path}: need an outcome column and at least two tests")
    ids = np.array([_test_id(h, f"{path}, header column {j + 2}") for j, h in enumerate(header[1:])])
    if np.unique(ids).size != ids.size:
        raise InputError(f"{path}: duplicate test ids in header")
    if not rows:
        raise DimensionError(f"{path}: no subjects")
    data = np.empty((len(rows), len(header)))
    for i, (lineno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise InputError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(cells)}")
        for j, cell in enumerate(cells):
            data[i, j] = _number(cell, f"{path}, line {lineno}, column {j + 1}")
    X = data[:, 1:]
    bad = ~((X == 0) | (X == 1))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise InputError(f"{path}, line {rows[i][0]}: lesion entry {X[i, j]!r} is not 0 or 1")
    order = np.argsort(ids, kind="stable")
    return LesionMatrix(data[:, 0], X[:, order].astype(np.uint8), ids[order])


def read_coords(path) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(test_ids, coords)`` sorted by test id."""
    header, rows = _rows(path)
    names = [h.lower() for h in header]
    if names not in (["test_id", "x", "y"], ["test_id", "x", "y", "z"]):
        raise InputError(f"{path}: header must be test_id,x,y[,z], got {','.join(header)}")
    ids, coords = [], []
    for lineno, cells in rows:
        where = f"{path}, line {lineno}"
        if len(cells) != len(header):
            raise InputError(f"{where}: expected {len(header)} fields, got {len(cells)}")
        ids.append(_test_id(cells[0], where))
        xyz = [_number(c, where) for c in cells[1:]]
        if any(v != math.floor(v) or v < 0 for v in xyz):
            raise InputError(f"{where}: coordinates must be non-negative integers")
        coords.append([int(v) for v in xyz])
    ids = np.array(ids, dtype=np.int64)
    coords = np.array(coords, dtype=np.int64).reshape(len(ids), len(header) - 1)
    if np.unique(ids).size != ids.size:
        raise InputError(f"{path}: duplicate test ids")
    if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
        raise InputError(f"{path}: two tests share a grid position")
    order = np.argsort(ids)
    return ids[order], coords[order]


def align_coords(test_ids, coord_ids, coords, source="coordinates") -> np.ndarray:
    """Coordinates for ``test_ids``; every id must be present."""
    lookup = {int(t): i for i, t in enumerate(coord_ids)}
    missing = [int(t) for t in test_ids if int(t) not in lookup]
    if missing:
        shown = ", ".join(str(t) for t in missing[:10])
        raise InputError(f"{source}: no position for test_id {shown}")
    return coords[[lookup[int(t)] for t in test_ids]]


PERTEST_REQUIRED = ("test_id", "pvalue")
PERTEST_OPTIONAL = ("s_m", "xbar", "p_nonnull")


def read_pertest(path, require: Sequence[str] = PERTEST_REQUIRED) -> Dict[str, np.ndarray]:
    """Read per-test statistics; returns columns keyed by header name."""
    header, rows = _rows(path)
    names = [h.lower() for h in header]
    known = ("test_id", "pvalue") + PERTEST_OPTIONAL
    if names[0] != "test_id":
        raise InputError(f"{path}: first column must be test_id")
    unknown = [h for h in names if h not in known]
    if unknown:
        raise InputError(f"{path}: unexpected columns {unknown}")
    absent = [h for h in require if h not in names]
    if absent:
        raise InputError(f"{path}: missing required columns {absent}")
    cols: Dict[str, list] = {h: [] for h in names}
    for lineno, cells in rows:
        where = f"{path}, line {lineno}"
        if len(cells) != len(header):
            raise InputError(f"{where}: expected {len(header)} fields, got {len(cells)}")
        cols["test_id"].append(_test_id(cells[0], where))
        for name, cell in zip(names[1:], cells[1:]):
            cols[name].append(_number(cell, f"{where}, column {name}"))
    if not rows:
        raise DimensionError(f"{path}: no tests")
    out = {k: np.asarray(v, dtype=np.int64 if k == "test_id" else float) for k, v in cols.items()}
    if np.unique(out["test_id"]).size != out["test_id"].size:
        raise InputError(f"{path}: duplicate test ids")
    order = np.argsort(out["test_id"])
    out = {k: v[order] for k, v in out.items()}
    if "pvalue" in out and np.any((out["pvalue"] < 0) | (out["pvalue"] > 1)):
        raise InputError(f"{path}: p-values must lie in [0, 1]")
    if "s_m" in out and np.any(~(out["s_m"] > 0) | ~np.isfinite(out["s_m"])):
        raise InputError(f"{path}: s_m must be positive and finite")
    if "p_nonnull" in out and np.any((out["p_nonnull"] < 0) | (out["p_nonnull"] > 1)):
        raise InputError(f"{path}: p_nonnull must lie in [0, 1]")
    return out


def format_value(value) -> str:
    """Round-trip text for numbers: ``repr`` of floats, ``inf``/``nan`` spelled out."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_params(fh: TextIO, params: Dict[str, object]) -> None:
    for key, value in params.items():
        fh.write(f"# {key}={format_value(value)}\n")


def write_records(
    path,
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    params: Optional[Dict[str, object]] = None,
) -> None:
    """Write a delimited table preceded by ``# key=value`` parameter lines."""
    with open(path, "w", newline="") as fh:
        if params:
            write_params(fh, params)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_params(path) -> Dict[str, str]:
    """Parameters echoed in the leading ``# key=value`` lines of an output file."""
    params = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            params[key.strip()] = value
    return params


def read_records(path) -> Tuple[List[str], List[List[str]]]:
    header, rows = _rows(path)
    return header, [cells for _, cells in rows]
