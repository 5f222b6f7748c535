"""In-memory data table: named numeric/categorical columns of equal length."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class NumericColumn:
    values: np.ndarray  # float64, NaN marks missing

    @property
    def n(self):
        return len(self.values)

    def isna(self):
        return np.isnan(self.values)


@dataclass
class FactorColumn:
    codes: np.ndarray  # int64, -1 marks missing
    levels: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.codes)

    def isna(self):
        return self.codes < 0

    def label(self, code: int) -> str:
        return self.levels[code]


Column = NumericColumn | FactorColumn


@dataclass
class DataTable:
    columns: dict  # name -> Column, insertion ordered

    @property
    def nrow(self) -> int:
        for col in self.columns.values():
            return col.n
        return 0

    @property
    def names(self):
        return list(self.columns.keys())

    def __contains__(self, name):
        return name in self.columns

    def __getitem__(self, name) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def subset(self, mask: np.ndarray) -> "DataTable":
        """Row subset; factor levels are re-derived so unused levels drop."""
        out = {}
        for name, col in self.columns.items():
            if isinstance(col, NumericColumn):
                out[name] = NumericColumn(col.values[mask])
            else:
                kept = col.codes[mask]
                out[name] = factor_from_labels(
                    [col.levels[c] if c >= 0 else None for c in kept])
        return DataTable(out)


def factor_from_labels(labels) -> FactorColumn:
    """Build a factor with levels in first-observed order; None marks missing."""
    levels = []
    index = {}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab is None:
            codes[i] = -1
            continue
        code = index.get(lab)
        if code is None:
            code = len(levels)
            index[lab] = code
            levels.append(lab)
        codes[i] = code
    return FactorColumn(codes, levels)


def numeric_column(values) -> NumericColumn:
    return NumericColumn(np.asarray(values, dtype=np.float64))


def table_from_dict(data: dict) -> DataTable:
    """Convenience constructor; lists of strings become factors."""
    cols = {}
    n = None
    for name, values in data.items():
        if isinstance(values, (NumericColumn, FactorColumn)):
            col = values
        else:
            seq = list(values)
            if all(v is None or isinstance(v, str) for v in seq):
                col = factor_from_labels(seq)
            else:
                col = numeric_column([np.nan if v is None else v for v in seq])
        if n is None:
            n = col.n
        elif col.n != n:
            raise DataError(f"column {name!r} has length {col.n}, expected {n}")
        cols[name] = col
    return DataTable(cols)
