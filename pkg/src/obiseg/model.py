"""Core domain types shared by the index, baseline and ingestion code.

All types are immutable after construction. Numpy arrays held by them are
flagged read-only so they can be shared between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidGroupSpace,
    ZeroContacts,
)

SUM_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroupSpace:
    """Ordered group labels and the population share of each group.

    All per-group vectors in the package are aligned to ``labels``.
    """

    labels: tuple
    alpha: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1:
            raise InvalidGroupSpace("alpha must be a 1-d vector")
        if len(labels) < 2:
            raise InvalidGroupSpace(f"need at least two groups, got {len(labels)}")
        if len(labels) != alpha.size:
            raise InvalidGroupSpace(
                f"{len(labels)} labels but {alpha.size} population shares"
            )
        if len(set(labels)) != len(labels):
            raise InvalidGroupSpace(f"duplicate group labels in {labels!r}")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise InvalidGroupSpace(f"population shares must be > 0, got {alpha.tolist()}")
        if abs(alpha.sum() - 1.0) > SUM_TOL:
            raise InvalidGroupSpace(f"population shares sum to {alpha.sum()!r}, not 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "_pos", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def from_counts(cls, counts: Mapping[Hashable, float], order: Sequence | None = None):
        """Shares proportional to ``counts`` (e.g. sample marginals)."""
        labels = list(order) if order is not None else list(counts)
        total = float(sum(counts[lab] for lab in labels))
        if total <= 0:
            raise InvalidGroupSpace("group counts sum to zero")
        return cls(tuple(labels), np.array([counts[lab] / total for lab in labels]))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def min_alpha(self) -> float:
        return float(self.alpha.min())

    def index(self, label) -> int:
        try:
            return self._pos[label]
        except KeyError:
            raise KeyError(f"{label!r} is not a group of {self.labels!r}") from None

    def __contains__(self, label) -> bool:
        return label in self._pos

    def share(self, label) -> float:
        return float(self.alpha[self.index(label)])

    def __eq__(self, other):
        if not isinstance(other, GroupSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash((self.labels, self.alpha.tobytes()))

    def __repr__(self):
        shares = ", ".join(f"{lab}={a:.4g}" for lab, a in zip(self.labels, self.alpha))
        return f"GroupSpace({shares})"


@dataclass(frozen=True)
class ContactProfile:
    """Connection counts of one individual, one entry per group."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative contact count in {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def exact_proportions(self) -> tuple[Fraction, ...]:
        if self.total == 0:
            raise ZeroContacts("contact profile has no connections")
        return tuple(Fraction(c, self.total) for c in self.counts)


def proportions(profile: ContactProfile) -> np.ndarray:
    """Share of an individual's connections going to each group."""
    total = profile.total
    if total == 0:
        raise ZeroContacts("contact profile has no connections")
    return np.array(profile.counts, dtype=float) / total


@dataclass(frozen=True)
class Individual:
    id: Hashable
    profile: ContactProfile
    own_group: Hashable | None = None
    attributes: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class IndexRecord:
    id: Hashable
    group: Hashable
    isi: float
    iii: float
    obi: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.isi, self.iii, self.obi)


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Tie counts within and between groups.

    ``edge_counts[x, y]`` (x != y) is the number of ties with one endpoint in
    group x and the other in y; ``edge_counts[x, x]`` counts within-group ties
    once. The matrix is symmetric. ``edge_fractions`` divides by the total so
    that the upper triangle (diagonal included) sums to one.
    """

    labels: tuple
    group_sizes: tuple[int, ...]
    edge_counts: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        sizes = tuple(int(s) for s in self.group_sizes)
        counts = np.asarray(self.edge_counts, dtype=np.int64)
        m = len(labels)
        if counts.shape != (m, m) or len(sizes) != m:
            raise DimensionMismatch(
                f"{m} labels, {len(sizes)} sizes, matrix of shape {counts.shape}"
            )
        if np.any(counts < 0) or any(s < 0 for s in sizes):
            raise ValueError("negative tie or node count")
        if not np.array_equal(counts, counts.T):
            raise ValueError("tie-count matrix must be symmetric")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "edge_counts", _frozen(counts))

    @property
    def total_edges(self) -> int:
        c = self.edge_counts
        return (int(c.sum()) + int(c.trace())) // 2

    @property
    def edge_fractions(self) -> np.ndarray:
        total = self.total_edges
        if total == 0:
            return np.zeros(self.edge_counts.shape)
        return self.edge_counts / total

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"{label!r} is not a group of {self.labels!r}") from None

    def one_vs_rest(self, label) -> "MixingMatrix":
        """Collapse every group other than ``label`` into a single "rest" group."""
        i = self.index(label)
        c = self.edge_counts
        within = int(c[i, i])
        rest_mask = np.ones(len(self.labels), dtype=bool)
        rest_mask[i] = False
        cross = int(c[i, rest_mask].sum())
        rest_within = int(np.triu(c[np.ix_(rest_mask, rest_mask)]).sum())
        n_rest = sum(s for j, s in enumerate(self.group_sizes) if j != i)
        return MixingMatrix(
            (label, "__rest__"),
            (self.group_sizes[i], n_rest),
            np.array([[within, cross], [cross, rest_within]]),
        )


@dataclass(frozen=True)
class GroupReport:
    """Per-group aggregate of individual index records.

    Means are ``None`` when the group has no members. ``fsi``/``hi`` stay
    ``None`` until filled from the baseline engine.
    """

    group: Hashable
    member_count: int
    mean_isi: float | None
    mean_iii: float | None
    mean_obi: float | None
    obi_histogram: tuple[float, ...]
    bin_edges: tuple[float, ...]
    fsi: float | None = None
    hi: float | None = None


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Undirected weighted graph over opaque node ids.

    Nodes are held in sorted order; edges are ``(src[i], dst[i])`` index
    pairs with ``src < dst``, sorted lexicographically, with ``weight[i]``
    calls between the pair. This makes the representation canonical: two
    graphs with the same node set and weighted edges compare equal however
    they were built.
    """

    nodes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        weight = np.asarray(self.weight, dtype=np.int64)
        if not (src.shape == dst.shape == weight.shape):
            raise DimensionMismatch("src, dst and weight must have equal length")
        if src.size and (np.any(src >= dst) or dst.max() >= len(self.nodes)):
            raise ValueError("edges must satisfy src < dst < n_nodes")
        for name, arr in (("nodes", self.nodes), ("src", src), ("dst", dst), ("weight", weight)):
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple],
        nodes: Iterable[Hashable] = (),
    ) -> "InteractionGraph":
        """Build from ``(u, v)`` or ``(u, v, weight)`` tuples; repeated pairs add up.

        ``nodes`` may list extra (possibly isolated) nodes.
        """
        acc: dict[tuple, int] = {}
        node_set = set(nodes)
        for e in edges:
            u, v = e[0], e[1]
            w = int(e[2]) if len(e) > 2 else 1
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            node_set.update((u, v))
            key = (u, v) if _sort_key(u) < _sort_key(v) else (v, u)
            acc[key] = acc.get(key, 0) + w
        ordered = sorted(node_set, key=_sort_key)
        pos = {n: i for i, n in enumerate(ordered)}
        triples = sorted((pos[u], pos[v], w) for (u, v), w in acc.items())
        arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
        node_arr = np.empty(len(ordered), dtype=object)
        node_arr[:] = ordered
        return cls(node_arr, arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def total_weight(self) -> int:
        return int(self.weight.sum())

    def degree(self, weighted: bool = False) -> np.ndarray:
        w = self.weight if weighted else None
        n = self.n_nodes
        return np.bincount(self.src, w, minlength=n) + np.bincount(self.dst, w, minlength=n)

    def node_index(self) -> dict:
        return {n: i for i, n in enumerate(self.nodes.tolist())}

    def edges(self):
        """Yield ``(u, v, weight)`` with node ids."""
        nodes = self.nodes
        for s, d, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            yield nodes[s], nodes[d], w

    def subgraph(self, keep: np.ndarray) -> "InteractionGraph":
        """Induced subgraph on the nodes where boolean mask ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.cumsum(keep) - 1
        emask = keep[self.src] & keep[self.dst]
        return InteractionGraph(
            self.nodes[keep],
            remap[self.src[emask]],
            remap[self.dst[emask]],
            self.weight[emask],
        )

    def __eq__(self, other):
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (
            self.nodes.tolist() == other.nodes.tolist()
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
        )

    __hash__ = None

    def __repr__(self):
        return f"InteractionGraph(nodes={self.n_nodes}, edges={self.n_edges}, calls={self.total_weight})"


def _sort_key(x):
    # Ids may mix ints and strings in hand-built graphs; order by type name first.
    return (type(x).__name__, x)
