"""Order consistency of several segregation indexes across feature values.

Indexes are consistent when they rank the feature values the same way. We
compare pairwise: a violation is a pair of feature values that one index
orders strictly one way and another index strictly the other way. Ties
(within ``tie_tolerance``) agree with either order.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IncompleteTable


@dataclass(frozen=True, eq=False)
class IndexTable:
    """``values[k][j]`` is index ``index_names[k]`` evaluated on ``feature_values[j]``."""

    index_names: tuple[str, ...]
    feature_values: tuple
    values: np.ndarray

    def __post_init__(self):
        names = tuple(self.index_names)
        feats = tuple(self.feature_values)
        try:
            vals = np.array(self.values, dtype=float)
        except (TypeError, ValueError) as exc:
            raise IncompleteTable(f"table is ragged or non-numeric: {exc}") from None
        if vals.shape != (len(names), len(feats)):
            raise IncompleteTable(
                f"expected {len(names)}x{len(feats)} values, got shape {vals.shape}"
            )
        if np.isnan(vals).any():
            raise IncompleteTable("table has missing cells")
        if len(names) < 2:
            raise IncompleteTable("consistency compares at least two indexes")
        if len(feats) < 2:
            raise IncompleteTable("consistency needs at least two feature values")
        vals.setflags(write=False)
        object.__setattr__(self, "index_names", names)
        object.__setattr__(self, "feature_values", feats)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_columns(cls, feature_values: Sequence, columns: dict[str, Sequence[float]]):
        return cls(tuple(columns), tuple(feature_values), [list(v) for v in columns.values()])


@dataclass(frozen=True)
class Violation:
    features: tuple  # (X, Y)
    indexes: tuple[str, str]  # (I_a, I_b)
    orderings: tuple[str, str]  # e.g. ("X > Y", "X < Y")


@dataclass(frozen=True)
class ConsistencyVerdict:
    consistent: bool
    violations: tuple[Violation, ...]
    rankings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "violations": [
                {
                    "features": [str(f) for f in v.features],
                    "indexes": list(v.indexes),
                    "orderings": list(v.orderings),
                }
                for v in self.violations
            ],
            "rankings": {k: [str(x) for x in r] for k, r in self.rankings.items()},
        }

    def render(self) -> str:
        lines = [f"consistent: {'yes' if self.consistent else 'no'}"]
        for name, ranking in self.rankings.items():
            lines.append(f"  {name}: " + " > ".join(map(str, ranking)))
        for v in self.violations:
            x, y = v.features
            lines.append(
                f"  violation {x} vs {y}: {v.indexes[0]} says {v.orderings[0]}, "
                f"{v.indexes[1]} says {v.orderings[1]}"
            )
        return "\n".join(lines)


def _order(a: float, b: float, tol: float) -> int:
    if a - b > tol:
        return 1
    if b - a > tol:
        return -1
    return 0


def check_consistency(table: IndexTable, tie_tolerance: float = 0.0) -> ConsistencyVerdict:
    if tie_tolerance < 0:
        raise ValueError("tie_tolerance must be >= 0")
    v = table.values
    names = table.index_names
    feats = table.feature_values
    symbol = {1: ">", -1: "<"}
    violations = []
    for i, j in combinations(range(len(feats)), 2):
        orders = [_order(v[k, i], v[k, j], tie_tolerance) for k in range(len(names))]
        for a, b in combinations(range(len(names)), 2):
            if orders[a] * orders[b] < 0:
                x, y = feats[i], feats[j]
                violations.append(
                    Violation(
                        (x, y),
                        (names[a], names[b]),
                        (f"{x} {symbol[orders[a]]} {y}", f"{x} {symbol[orders[b]]} {y}"),
                    )
                )
    rankings = {
        name: tuple(feats[j] for j in sorted(range(len(feats)), key=lambda j: -v[k, j]))
        for k, name in enumerate(names)
    }
    return ConsistencyVerdict(not violations, tuple(violations), rankings)


REPORT_INDEXES = ("fsi", "hi", "mean_obi")


def table_from_report(report: dict, indexes: Sequence[str] = REPORT_INDEXES) -> IndexTable:
    """Index table (FSI, HI, OBI by default) over the groups of one JSON run report."""
    groups = report["groups"]
    feats = [g["label"] for g in groups]
    rows = []
    for key in indexes:
        row = [g.get(key) for g in groups]
        if any(x is None for x in row):
            raise IncompleteTable(f"report has no {key!r} value for some group")
        rows.append(row)
    names = tuple("obi" if k == "mean_obi" else k for k in indexes)
    return IndexTable(names, tuple(feats), rows)


def table_from_csv(text: str) -> IndexTable:
    """Parse a matrix CSV: header ``feature,<index1>,<index2>,...``, one row per feature value."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or len(header) < 3:
        raise IncompleteTable("matrix CSV needs a feature column and at least two index columns")
    names = [h.strip() for h in header[1:]]
    feats, cols = [], [[] for _ in names]
    for row in reader:
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise IncompleteTable(f"row {row!r} has {len(row)} cells, expected {len(header)}")
        feats.append(row[0].strip())
        for col, cell in zip(cols, row[1:]):
            try:
                col.append(float(cell))
            except ValueError:
                raise IncompleteTable(f"non-numeric cell {cell!r} in row {row[0]!r}") from None
    return IndexTable(tuple(names), tuple(feats), cols)


def load_table(path: str | Path) -> IndexTable:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return table_from_report(json.loads(text))
    return table_from_csv(text)
