"""Baseline segregation indexes: Freeman, Coleman homophily and dissimilarity.

Freeman and Coleman indexes are defined for two groups. Multi-group
features are handled one-vs-rest: group ``g`` against the union of all
other groups. Both are evaluated in exact rational arithmetic from the
integer tie counts of a :class:`MixingMatrix` and rounded once at the end.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateGroups,
    EmptyGraph,
    EmptyGroup,
    IsolatedGroup,
    UnlabeledEndpoint,
)
from .model import InteractionGraph, MixingMatrix


def build_mixing_matrix(
    graph: InteractionGraph | Iterable[tuple],
    labels: Mapping[Hashable, Hashable] | Sequence,
    groups: Sequence | None = None,
    weighted: bool = True,
) -> MixingMatrix:
    """Count ties within and between groups.

    ``graph`` is an :class:`InteractionGraph` or an iterable of ``(u, v)`` /
    ``(u, v, weight)`` edges. ``labels`` maps node id to group; for an
    ``InteractionGraph`` it may also be a sequence aligned with
    ``graph.nodes``. With ``weighted`` (the default) repeated calls between a
    pair count as repeated ties; otherwise each pair counts once.

    Group sizes count the labelled nodes of the graph, isolated ones included.
    """
    if not isinstance(graph, InteractionGraph):
        graph = InteractionGraph.from_edges(graph)
    if graph.n_edges == 0:
        raise EmptyGraph("graph has no edges")
    if isinstance(labels, Mapping):
        node_labels = [labels.get(n) for n in graph.nodes.tolist()]
    else:
        node_labels = list(labels)
        if len(node_labels) != graph.n_nodes:
            raise ValueError(f"{len(node_labels)} labels for {graph.n_nodes} nodes")
    missing = [n for n, lab in zip(graph.nodes.tolist(), node_labels) if lab is None]
    if missing:
        raise UnlabeledEndpoint(f"{len(missing)} nodes lack a label, e.g. {missing[:3]!r}")
    if groups is None:
        groups = sorted(set(node_labels), key=lambda x: (type(x).__name__, x))
    pos = {g: i for i, g in enumerate(groups)}
    try:
        code = np.array([pos[lab] for lab in node_labels], dtype=np.int64)
    except KeyError as exc:
        raise UnlabeledEndpoint(f"label {exc.args[0]!r} not among groups {list(groups)!r}") from None
    m = len(groups)
    a = code[graph.src]
    b = code[graph.dst]
    w = graph.weight if weighted else np.ones(graph.n_edges, dtype=np.int64)
    flat = np.bincount(np.minimum(a, b) * m + np.maximum(a, b), weights=w, minlength=m * m)
    upper = flat.reshape(m, m).astype(np.int64)
    counts = upper + np.triu(upper, 1).T
    sizes = np.bincount(code, minlength=m)
    return MixingMatrix(tuple(groups), tuple(sizes.tolist()), counts)


def _reduce(m: MixingMatrix, group) -> tuple[int, int, int, int, int]:
    # Same numbers as m.one_vs_rest(group), without building the 2x2 matrix.
    i = m.index(group)
    c = m.edge_counts
    n_a = m.group_sizes[i]
    n_b = sum(m.group_sizes) - n_a
    t_aa = int(c[i, i])
    t_ab = int(c[i].sum()) - t_aa
    t_bb = m.total_edges - t_aa - t_ab
    return n_a, n_b, t_aa, t_ab, t_bb


def freeman_exact(m: MixingMatrix, group) -> Fraction:
    n_a, n_b, t_aa, t_ab, t_bb = _reduce(m, group)
    if n_a == 0 or n_b == 0:
        raise DegenerateGroups(f"group {group!r} vs rest has sizes ({n_a}, {n_b})")
    total = t_aa + t_ab + t_bb
    if total == 0:
        raise EmptyGraph("mixing matrix has no ties")
    n = n_a + n_b
    # E(X) uses node counts; with relative sizes summing to one its denominator vanishes.
    expected = Fraction(2 * n_a * n_b, n * (n - 1))
    observed = Fraction(t_ab, total)
    return 1 - observed / expected


def freeman_index(m: MixingMatrix, group) -> float:
    """Freeman Segregation Index of ``group`` against all other groups.

    ``1 - X / E(X)`` where ``X`` is the observed fraction of cross-group ties
    and ``E(X) = 2 n_A n_B / (n (n - 1))`` the fraction expected if ties were
    placed at random over node pairs. Negative when cross ties exceed chance;
    not clamped.
    """
    return float(freeman_exact(m, group))


def coleman_exact(m: MixingMatrix, group) -> Fraction:
    n_a, n_b, t_aa, t_ab, _ = _reduce(m, group)
    if n_a == 0 or n_b == 0:
        raise DegenerateGroups(f"group {group!r} vs rest has sizes ({n_a}, {n_b})")
    endpoints = 2 * t_aa + t_ab
    if endpoints == 0:
        raise IsolatedGroup(f"group {group!r} has no tie endpoints")
    t = Fraction(2 * t_aa, endpoints)
    share = Fraction(n_a, n_a + n_b)
    return (t - share) / (1 - share)


def coleman_hi(m: MixingMatrix, group) -> float:
    """Coleman homophily index of ``group`` against all other groups.

    ``T = 2 P_AA / (2 P_AA + P_AB)`` is the chance that a tie endpoint of the
    group leads back into it; the excess of ``T`` over the group's relative
    size is normalised by its maximum ``1 - N_A``. At most 1; the minimum is
    ``-N_A / (1 - N_A)``, which is below -1 for a majority group. Not clamped.
    """
    return float(coleman_exact(m, group))


@dataclass(frozen=True)
class UnitPopulations:
    """Per-unit counts of two groups ``g`` and ``other``."""

    units: tuple
    g: tuple[float, ...]
    other: tuple[float, ...]

    def __post_init__(self):
        g = tuple(self.g)
        other = tuple(self.other)
        if not (len(self.units) == len(g) == len(other)):
            raise ValueError("units, g and other must have equal length")
        if not g:
            raise EmptyGroup("no units")
        if any(x < 0 for x in g + other):
            raise ValueError("population counts must be non-negative")
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "other", other)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]):
        return cls(tuple(range(len(pairs))), tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def swapped(self) -> "UnitPopulations":
        return UnitPopulations(self.units, self.other, self.g)


def dissimilarity_index(units: UnitPopulations) -> float:
    """Aspatial dissimilarity index ``D = 1/2 sum_i |g_i/G - o_i/O|``."""
    total_g = sum(units.g)
    total_o = sum(units.other)
    if total_g <= 0 or total_o <= 0:
        raise EmptyGroup(f"group totals must be positive, got ({total_g}, {total_o})")
    g = np.asarray(units.g, dtype=float) / total_g
    o = np.asarray(units.other, dtype=float) / total_o
    return float(0.5 * np.abs(g - o).sum())
