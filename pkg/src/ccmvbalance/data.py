"""Partially observed tabular data and response-pattern indexing.

A dataset is a numeric table where any cell may be missing.  Rows are grouped
by their response pattern (the bit-vector of observed columns); the complete
pattern, with every bit set, plays a special role downstream.  All reads of
cell values go through an access guard that refuses to return a masked cell.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError",
    "MaskedReadError",
    "Column",
    "ResponsePattern",
    "Dataset",
    "PatternIndex",
    "parse_dataset",
    "index_patterns",
    "pattern_rows",
    "dataset_to_csv_bytes",
]

CONTINUOUS = "continuous"
BINARY = "binary"


class DataError(ValueError):
    """Malformed input data (schema, arity, or value errors)."""


class MaskedReadError(RuntimeError):
    """A computation attempted to read a cell that is not observed."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "continuous" | "binary"

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True, order=True)
class ResponsePattern:
    """Bit-vector of observed variables; bit j set means column j is observed."""

    mask: tuple[int, ...]

    def __post_init__(self):
        if not all(b in (0, 1) for b in self.mask):
            raise DataError("pattern mask bits must be 0 or 1")

    @classmethod
    def from_string(cls, bits: str) -> "ResponsePattern":
        return cls(tuple(int(c) for c in bits))

    @property
    def n_observed(self) -> int:
        return sum(self.mask)

    @property
    def is_complete(self) -> bool:
        return all(self.mask)

    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.mask, dtype=bool))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.mask)


def complete_pattern(d: int) -> ResponsePattern:
    return ResponsePattern((1,) * d)


class Dataset:
    """Immutable numeric table with per-cell observation masks.

    ``values`` holds NaN at masked cells purely as a sentinel; the only
    sanctioned way to read cells is :meth:`observed`, which raises
    :class:`MaskedReadError` if any requested cell is masked.
    """

    def __init__(self, columns, values, mask, outcome_col):
        self.columns: tuple[Column, ...] = tuple(columns)
        values = np.array(values, dtype=float)
        mask = np.array(mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError("values and mask must be matching 2-d arrays")
        if values.shape[1] != len(self.columns):
            raise DataError("column count does not match value width")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        if outcome_col not in names:
            raise DataError(f"outcome column {outcome_col!r} not in header {names}")
        obs = values[mask]
        if not np.isfinite(obs).all():
            raise DataError("observed cells must be finite numbers")
        for j, col in enumerate(self.columns):
            if col.kind == BINARY:
                vj = values[mask[:, j], j]
                if vj.size and not np.isin(vj, (0.0, 1.0)).all():
                    raise DataError(f"binary column {col.name!r} has values outside {{0,1}}")
        values = values.copy()
        values[~mask] = np.nan
        values.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        self.values = values
        self.mask = mask
        self.outcome_col = outcome_col

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def outcome_index(self) -> int:
        return self.column_names.index(self.outcome_col)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    def row_pattern(self, i: int) -> ResponsePattern:
        return ResponsePattern(tuple(int(b) for b in self.mask[i]))

    def observed(self, rows, cols) -> np.ndarray:
        """Access guard: return values[rows, cols], refusing masked cells."""
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        sub = self.mask[np.ix_(rows, cols)]
        if not sub.all():
            bad = np.argwhere(~sub)[0]
            raise MaskedReadError(
                f"read of unobserved cell (row {rows[bad[0]]}, "
                f"column {self.columns[cols[bad[1]]].name!r})"
            )
        return self.values[np.ix_(rows, cols)]

    def observed_range(self, col: int) -> tuple[float, float]:
        """Min/max of the observed values in one column."""
        v = self.values[self.mask[:, col], col]
        if v.size == 0:
            raise DataError(f"column {self.columns[col].name!r} has no observed values")
        return float(v.min()), float(v.max())


@dataclass(frozen=True)
class PatternIndex:
    """Distinct response patterns with their row-index lists."""

    patterns: tuple[ResponsePattern, ...]
    rows: tuple[np.ndarray, ...] = field(repr=False)
    n_rows: int

    @property
    def counts(self) -> list[int]:
        return [len(r) for r in self.rows]

    @property
    def has_complete(self) -> bool:
        return any(p.is_complete for p in self.patterns)

    @property
    def complete_ids(self) -> np.ndarray:
        for p, r in zip(self.patterns, self.rows):
            if p.is_complete:
                return r
        return np.empty(0, dtype=int)

    def missing_patterns(self) -> list[ResponsePattern]:
        return [p for p in self.patterns if not p.is_complete]


def _infer_kind(observed_values: np.ndarray) -> str:
    if observed_values.size and np.isin(observed_values, (0.0, 1.0)).all():
        return BINARY
    return CONTINUOUS


def parse_dataset(csv_bytes: bytes, outcome_col: str, type_hints: dict[str, str] | None = None) -> Dataset:
    """Parse UTF-8 CSV bytes into a Dataset.

    The first row is the header; an empty cell denotes a missing value.  A
    literal "NA" (or any other non-numeric token) is rejected rather than
    silently coerced.  Columns without a type hint are inferred binary iff
    every observed value is exactly 0 or 1.
    """
    text = csv_bytes.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV input") from None
    header = [h.strip() for h in header]
    d = len(header)
    if outcome_col not in header:
        raise DataError(f"outcome column {outcome_col!r} not in header {header}")

    values = []
    mask = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != d:
            raise DataError(f"line {lineno}: expected {d} cells, got {len(row)}")
        vrow = np.empty(d)
        mrow = np.empty(d, dtype=bool)
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                vrow[j] = np.nan
                mrow[j] = False
                continue
            try:
                vrow[j] = float(cell)
            except ValueError:
                raise DataError(
                    f"line {lineno}, column {header[j]!r}: non-numeric cell {cell!r} "
                    "(missing values must be empty cells)"
                ) from None
            mrow[j] = True
        values.append(vrow)
        mask.append(mrow)
    if not values:
        raise DataError("CSV has a header but no data rows")

    values = np.asarray(values)
    mask = np.asarray(mask)
    hints = dict(type_hints or {})
    unknown = set(hints) - set(header)
    if unknown:
        raise DataError(f"type hints reference unknown columns {sorted(unknown)}")
    columns = []
    for j, name in enumerate(header):
        kind = hints.get(name) or _infer_kind(values[mask[:, j], j])
        columns.append(Column(name, kind))
    return Dataset(columns, values, mask, outcome_col)


def dataset_to_csv_bytes(ds: Dataset) -> bytes:
    """Inverse of parse_dataset: empty cells at masked positions."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ds.column_names)
    for i in range(ds.n_rows):
        row = []
        for j in range(ds.n_cols):
            row.append(repr(float(ds.values[i, j])) if ds.mask[i, j] else "")
        writer.writerow(row)
    return buf.getvalue().encode("utf-8")


def index_patterns(ds: Dataset) -> PatternIndex:
    """Group rows by their response pattern.

    Patterns are ordered by descending number of observed variables, then by
    descending mask (so the complete pattern, when present, comes first and
    the order is reproducible).
    """
    if ds.n_rows == 0:
        raise DataError("dataset is empty")
    seen: dict[tuple[int, ...], list[int]] = {}
    for i in range(ds.n_rows):
        key = tuple(int(b) for b in ds.mask[i])
        seen.setdefault(key, []).append(i)
    order = sorted(seen, key=lambda m: (-sum(m), tuple(-b for b in m)))
    patterns = tuple(ResponsePattern(m) for m in order)
    rows = tuple(np.asarray(seen[m], dtype=int) for m in order)
    return PatternIndex(patterns=patterns, rows=rows, n_rows=ds.n_rows)


def pattern_rows(ix: PatternIndex, r: ResponsePattern) -> np.ndarray:
    """Row indices whose mask equals r, in original order."""
    for p, rows in zip(ix.patterns, ix.rows):
        if p == r:
            return rows
    raise DataError(f"pattern {r} not present in the index")
