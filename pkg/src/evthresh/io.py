"""Data ingestion and table serialization."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

BUNDLED = {
    "north_sea": "north_sea_synthetic.csv",
    "gulf_of_mexico": "gulf_of_mexico_synthetic.csv",
}


class DataError(ValueError):
    """Unreadable or unusable input data."""


@dataclass
class Dataset:
    values: np.ndarray
    n_y: float | None = None
    label: str = ""
    years: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise DataError("dataset needs a nonempty one-dimensional array of values")
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset values must be finite")
        if self.years is not None:
            self.years = np.asarray(self.years)
            if self.years.shape != self.values.shape:
                raise DataError("one year label per value is needed")

    @property
    def n(self) -> int:
        return int(self.values.size)

    def scaled(self, c: float) -> "Dataset":
        return Dataset(self.values * c, self.n_y, self.label, self.years)


def _pick_column(header: list[str], selector) -> int:
    if selector is None:
        return 0
    if isinstance(selector, int) or (isinstance(selector, str) and selector.isdigit()):
        idx = int(selector)
        if not 0 <= idx < len(header):
            raise DataError(f"column index {idx} out of range for {len(header)} columns")
        return idx
    if selector not in header:
        raise DataError(f"no column named {selector!r}; available: {header}")
    return header.index(selector)


def _parse_float(cell: str, row: int, name: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}: column {name!r} holds non-numeric value {cell!r}") from None
    if not np.isfinite(v):
        raise DataError(f"row {row}: column {name!r} holds non-finite value {cell!r}")
    return v


def load_csv(path, column=None, year_column=None, n_y: float | None = None, label: str | None = None) -> Dataset:
    """Read one numeric column (name or 0-based index) from a headed CSV file.

    Rows whose value cell is empty are skipped with a warning.  With a year
    column, n_y defaults to n divided by the number of years spanned.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    ci = _pick_column(header, column)
    yi = _pick_column(header, year_column) if year_column is not None else None
    vals, years, skipped = [], [], 0
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        cell = row[ci].strip() if ci < len(row) else ""
        if cell == "":
            skipped += 1
            continue
        vals.append(_parse_float(cell, r, header[ci]))
        if yi is not None:
            ycell = row[yi].strip() if yi < len(row) else ""
            if ycell == "":
                raise DataError(f"row {r}: missing year label")
            years.append(int(_parse_float(ycell, r, header[yi])))
    if skipped:
        warnings.warn(f"{path.name}: skipped {skipped} rows with a missing {header[ci]!r} value",
                      RuntimeWarning, stacklevel=2)
    if not vals:
        raise DataError(f"{path} has no values in column {header[ci]!r}")
    yrs = np.asarray(years) if yi is not None else None
    if n_y is None and yrs is not None:
        n_y = len(vals) / float(yrs.max() - yrs.min() + 1)
    return Dataset(np.asarray(vals), n_y, label or path.stem, yrs)


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled synthetic dataset ("north_sea" or "gulf_of_mexico")."""
    if name not in BUNDLED:
        raise DataError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return Path(str(resources.files("evthresh") / "data" / BUNDLED[name]))


def load_bundled(name: str) -> Dataset:
    return load_csv(bundled_path(name), "hs", year_column="year", label=name)


def median_annual_max(d: Dataset) -> float:
    """Median over years of the largest value in each year."""
    if d.years is None:
        raise DataError("year labels are needed for annual maxima; supply m1 directly instead")
    order = np.argsort(d.years, kind="stable")
    yrs, vals = d.years[order], d.values[order]
    starts = np.flatnonzero(np.r_[True, yrs[1:] != yrs[:-1]])
    return float(np.median(np.maximum.reduceat(vals, starts)))


def fmt(v) -> str:
    """CSV text for a value; floats use 17 significant digits so they round-trip."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows: Iterable[dict], columns: list[str] | None = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def write_values_csv(path, d: Dataset, column: str = "value") -> None:
    cols = [column] if d.years is None else ["year", column]
    rows = [{column: v} if d.years is None else {"year": int(y), column: v}
            for v, y in zip(d.values, d.years if d.years is not None else d.values)]
    write_csv(path, rows, cols)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if np.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
