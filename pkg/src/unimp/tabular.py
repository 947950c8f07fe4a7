"""Mixed-type table model: CSV ingestion/emission, kind inference, scaling.

A :class:`Table` stores one numpy array per column.  Numerical columns hold
float64 with NaN marking missing cells; categorical and text columns hold
object arrays with ``None`` for missing.  The observed/missing mask is a
separate uint8 matrix (1 = observed) derived at load time.

Scaling maps every non-text column into [0, 1]: numerical columns by min-max
over observed cells (fitted once, before any simulated masking), categorical
columns by label encoding followed by ``id / (K - 1)``.  Both maps invert
exactly on their domain.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CodecError,
    EmptyInputError,
    SchemaError,
    StructureError,
    UnscalableColumnError,
)


class ColumnKind(enum.Enum):
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"
    TEXT = "text"


_KIND_NAMES = {k.value: k for k in ColumnKind}

# Distinct-value ratio at or below which a string column counts as categorical.
CATEGORICAL_RATIO = 0.1


@dataclass
class Table:
    """Column-typed table; immutable by convention after construction."""

    names: list[str]
    kinds: list[ColumnKind]
    columns: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.columns[0])

    @property
    def d(self) -> int:
        return len(self.columns)

    def cell(self, i: int, j: int):
        """Return the raw cell value, or None/NaN when missing."""
        return self.columns[j][i]

    def is_missing(self, i: int, j: int) -> bool:
        v = self.columns[j][i]
        if self.kinds[j] is ColumnKind.NUMERICAL:
            return bool(np.isnan(v))
        return v is None

    def mask(self) -> np.ndarray:
        """uint8 (n, d) matrix, 1 where the cell is observed."""
        m = np.empty((self.n, self.d), dtype=np.uint8)
        for j, col in enumerate(self.columns):
            if self.kinds[j] is ColumnKind.NUMERICAL:
                m[:, j] = ~np.isnan(col.astype(np.float64))
            else:
                m[:, j] = np.array([v is not None for v in col], dtype=np.uint8)
        return m

    def copy(self) -> "Table":
        return Table(list(self.names), list(self.kinds),
                     [c.copy() for c in self.columns])

    def equals(self, other: "Table") -> bool:
        if self.names != other.names or self.kinds != other.kinds:
            return False
        for j in range(self.d):
            a, b = self.columns[j], other.columns[j]
            if len(a) != len(b):
                return False
            if self.kinds[j] is ColumnKind.NUMERICAL:
                an, bn = a.astype(np.float64), b.astype(np.float64)
                if not np.array_equal(np.isnan(an), np.isnan(bn)):
                    return False
                if not np.array_equal(an[~np.isnan(an)], bn[~np.isnan(bn)]):
                    return False
            else:
                if list(a) != list(b):
                    return False
        return True


def _parse_number(text: str) -> Optional[float]:
    """Strict float parse: rejects underscores, whitespace, nan/inf spellings."""
    s = text.strip()
    if not s or s != text:
        return None
    if "_" in s or " " in s:
        return None
    low = s.lower().lstrip("+-")
    if low in ("nan", "inf", "infinity") or low.startswith(("nan", "inf")):
        return None
    try:
        return float(s)
    except ValueError:
        return None


def _infer_kind(values: list[str]) -> ColumnKind:
    observed = [v for v in values if v != ""]
    if not observed:
        return ColumnKind.TEXT
    if all(_parse_number(v) is not None for v in observed):
        return ColumnKind.NUMERICAL
    distinct = len(set(observed))
    multiword = any(len(v.split()) > 1 for v in observed)
    if distinct / len(observed) <= CATEGORICAL_RATIO and not multiword:
        return ColumnKind.CATEGORICAL
    return ColumnKind.TEXT


def parse_schema_line(line: str) -> tuple[str, ColumnKind]:
    name, sep, kind = line.rstrip("\n").rpartition(":")
    if not sep or kind.strip().lower() not in _KIND_NAMES:
        raise SchemaError(f"bad schema line: {line!r}")
    return name, _KIND_NAMES[kind.strip().lower()]


def read_schema_file(path: str) -> list[ColumnKind]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    return [parse_schema_line(ln)[1] for ln in lines]


def write_schema_file(table: Table, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, kind in zip(table.names, table.kinds):
            fh.write(f"{name}:{kind.value}\n")


def load_csv(path: str, schema: Optional[Sequence[ColumnKind]] = None) -> Table:
    """Load a header-ful CSV into a Table.

    Empty fields denote missing cells.  Without an explicit schema, kinds are
    inferred per column: all values parseable as numbers -> numerical;
    distinct-value ratio <= 0.1 with no multiword values -> categorical;
    anything else -> text.
    """
    if not os.path.exists(path):
        raise OSError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInputError(f"{path}: empty file")
    header, data = rows[0], rows[1:]
    if not data:
        raise EmptyInputError(f"{path}: no data rows")
    width = len(header)
    for ln, row in enumerate(data, start=2):
        if len(row) != width:
            raise StructureError(f"{path}:{ln}: expected {width} fields, got {len(row)}")
    if schema is not None:
        schema = list(schema)
        if len(schema) != width:
            raise SchemaError(f"schema has {len(schema)} kinds for {width} columns")

    columns: list[np.ndarray] = []
    kinds: list[ColumnKind] = []
    for j in range(width):
        raw = [row[j] for row in data]
        kind = schema[j] if schema is not None else _infer_kind(raw)
        kinds.append(kind)
        if kind is ColumnKind.NUMERICAL:
            vals = np.empty(len(raw), dtype=np.float64)
            for i, v in enumerate(raw):
                if v == "":
                    vals[i] = np.nan
                else:
                    num = _parse_number(v)
                    if num is None:
                        raise SchemaError(
                            f"{path}: column {header[j]!r} declared numerical, "
                            f"got {v!r}")
                    vals[i] = num
            columns.append(vals)
        else:
            columns.append(np.array([v if v != "" else None for v in raw],
                                    dtype=object))
    return Table(names=list(header), kinds=kinds, columns=columns)


def _format_number(v: float) -> str:
    return repr(float(v))


def write_csv(table: Table, path: str) -> None:
    """Emit a Table as CSV; re-loading yields an equal Table."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.names)
        for i in range(table.n):
            row = []
            for j in range(table.d):
                v = table.columns[j][i]
                if table.kinds[j] is ColumnKind.NUMERICAL:
                    row.append("" if np.isnan(v) else _format_number(v))
                else:
                    row.append("" if v is None else str(v))
            writer.writerow(row)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Scalers
# ---------------------------------------------------------------------------

@dataclass
class NumericScaler:
    lo: float
    hi: float

    def apply(self, v: float) -> float:
        if self.hi == self.lo:
            return 0.5
        return (v - self.lo) / (self.hi - self.lo)

    def invert(self, v: float) -> float:
        if self.hi == self.lo:
            return self.lo
        return self.lo + v * (self.hi - self.lo)


@dataclass
class CategoryCodec:
    categories: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.categories)

    def encode(self, value: str) -> int:
        try:
            return self.categories.index(value)
        except ValueError:
            raise CodecError(f"unseen category {value!r}")

    def decode(self, idx: int) -> str:
        if not 0 <= idx < len(self.categories):
            raise CodecError(f"category id {idx} out of range 0..{self.size - 1}")
        return self.categories[idx]

    def to_unit(self, idx: int) -> float:
        """Map id to the scaled range id/(K-1); 0.5 for a single category."""
        if self.size <= 1:
            return 0.5
        return idx / (self.size - 1)

    def from_unit(self, v: float) -> int:
        if self.size <= 1:
            return 0
        idx = int(round(min(max(v, 0.0), 1.0) * (self.size - 1)))
        return min(max(idx, 0), self.size - 1)


@dataclass
class ColumnScalers:
    """Per-column codecs fitted on observed cells."""

    numeric: dict[int, NumericScaler] = field(default_factory=dict)
    categorical: dict[int, CategoryCodec] = field(default_factory=dict)


def fit_scalers(table: Table, mask: np.ndarray) -> ColumnScalers:
    """Fit min-max scalers and label codecs over the observed cells.

    Numerical scaling maps observed min -> 0 and max -> 1 (constant columns
    map to 0.5).  Categorical ids follow first-appearance order.
    """
    scalers = ColumnScalers()
    for j, kind in enumerate(table.kinds):
        obs = mask[:, j].astype(bool)
        if kind is ColumnKind.NUMERICAL:
            vals = table.columns[j][obs].astype(np.float64)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                raise UnscalableColumnError(
                    f"column {table.names[j]!r} has no observed numerical cells")
            scalers.numeric[j] = NumericScaler(float(vals.min()), float(vals.max()))
        elif kind is ColumnKind.CATEGORICAL:
            codec = CategoryCodec()
            for i in np.nonzero(obs)[0]:
                v = table.columns[j][i]
                if v is not None and v not in codec.categories:
                    codec.categories.append(v)
            scalers.categorical[j] = codec
    return scalers


def apply_scalers(table: Table, scalers: ColumnScalers) -> Table:
    """Return a table with numerical and categorical cells mapped into [0, 1].

    Categorical cells become ``id / (K - 1)`` floats; text cells pass through.
    """
    cols: list[np.ndarray] = []
    for j, kind in enumerate(table.kinds):
        if kind is ColumnKind.NUMERICAL:
            scaler = scalers.numeric[j]
            src = table.columns[j].astype(np.float64)
            out = np.full_like(src, np.nan)
            seen = ~np.isnan(src)
            if scaler.hi == scaler.lo:
                out[seen] = 0.5
            else:
                out[seen] = (src[seen] - scaler.lo) / (scaler.hi - scaler.lo)
            cols.append(out)
        elif kind is ColumnKind.CATEGORICAL:
            codec = scalers.categorical[j]
            out = np.full(table.n, np.nan, dtype=np.float64)
            for i, v in enumerate(table.columns[j]):
                if v is not None:
                    out[i] = codec.to_unit(codec.encode(v))
            cols.append(out)
        else:
            cols.append(table.columns[j].copy())
    return Table(list(table.names), list(table.kinds), cols)


def invert_scalers(table: Table, scalers: ColumnScalers) -> Table:
    """Inverse of :func:`apply_scalers` on its domain."""
    cols: list[np.ndarray] = []
    for j, kind in enumerate(table.kinds):
        if kind is ColumnKind.NUMERICAL:
            scaler = scalers.numeric[j]
            src = table.columns[j].astype(np.float64)
            out = np.full_like(src, np.nan)
            seen = ~np.isnan(src)
            if scaler.hi == scaler.lo:
                out[seen] = scaler.lo
            else:
                out[seen] = scaler.lo + src[seen] * (scaler.hi - scaler.lo)
            cols.append(out)
        elif kind is ColumnKind.CATEGORICAL:
            codec = scalers.categorical[j]
            src = table.columns[j].astype(np.float64)
            out = np.empty(table.n, dtype=object)
            for i, v in enumerate(src):
                out[i] = None if np.isnan(v) else codec.decode(codec.from_unit(v))
            cols.append(out)
        else:
            cols.append(table.columns[j].copy())
    return Table(list(table.names), list(table.kinds), cols)


# ---------------------------------------------------------------------------
# Mask persistence: CSV of 0/1 with the table's shape, no header.
# ---------------------------------------------------------------------------

def load_mask(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInputError(f"{path}: empty mask file")
    width = len(rows[0])
    out = np.empty((len(rows), width), dtype=np.uint8)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise StructureError(f"{path}: ragged mask row {i}")
        for j, v in enumerate(row):
            if v not in ("0", "1"):
                raise StructureError(f"{path}: mask entry {v!r} not 0/1")
            out[i, j] = int(v)
    return out


def write_mask(mask: np.ndarray, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(mask, dtype=np.uint8):
            writer.writerow([int(v) for v in row])
    os.replace(tmp, path)


def masked_copy(table: Table, mask: np.ndarray) -> Table:
    """Return a copy with mask==0 cells blanked out."""
    out = table.copy()
    for j, kind in enumerate(table.kinds):
        hide = mask[:, j] == 0
        if kind is ColumnKind.NUMERICAL:
            col = out.columns[j].astype(np.float64)
            col[hide] = np.nan
            out.columns[j] = col
        else:
            col = out.columns[j]
            for i in np.nonzero(hide)[0]:
                col[i] = None
    return out
