"""Synthetic group-labelled call networks and the ten-person gender fixture."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .ingest import write_attributes, write_cdr
from .model import IndexRecord, InteractionGraph

# 2017-05-08T00:00:00Z, start of the six-day observation window.
WINDOW_START = 1494201600
WINDOW_SECONDS = 6 * 86400


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the generator.

    Each tie picks a uniformly random first endpoint ``u``; with probability
    ``within_prob[group(u)]`` the second endpoint is drawn uniformly from
    ``u``'s own group, otherwise uniformly from all other groups. Setting
    ``within_prob`` to the groups' relative sizes gives random mixing.
    ``calls_per_tie`` > 1 repeats ties (geometric multiplicity with that mean).
    """

    seed: int = 0
    group_sizes: tuple[int, ...] = (600, 400)
    within_prob: tuple[float, ...] = (0.6, 0.4)
    mean_degree: float = 20.0
    calls_per_tie: float = 1.0
    feature: str = "group"
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.group_sizes)
        probs = tuple(float(p) for p in self.within_prob)
        if len(sizes) != len(probs):
            raise ValueError("group_sizes and within_prob must have equal length")
        if any(s < 1 for s in sizes):
            raise ValueError(f"group sizes must be >= 1, got {sizes}")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"within_prob must lie in [0, 1], got {probs}")
        if self.mean_degree <= 0:
            raise ValueError("mean_degree must be positive")
        if self.calls_per_tie < 1:
            raise ValueError("calls_per_tie must be >= 1")
        labels = self.labels
        if labels is None:
            labels = tuple(f"g{i}" for i in range(len(sizes)))
        elif len(labels) != len(sizes):
            raise ValueError("labels and group_sizes must have equal length")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "within_prob", probs)
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def n_nodes(self) -> int:
        return sum(self.group_sizes)


@dataclass
class SynthResult:
    graph: InteractionGraph
    attributes: pd.DataFrame
    ledger: dict
    config: SynthConfig = field(repr=False, default=None)

    def write(self, out_dir, seed: int | None = None) -> dict[str, Path]:
        """Write ``cdr.csv`` and ``attributes.csv`` (and the ledger as JSON)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if seed is None:
            seed = self.config.seed if self.config else 0
        paths = {
            "cdr": out / "cdr.csv",
            "attributes": out / "attributes.csv",
            "ledger": out / "ledger.json",
        }
        write_graph_cdr(self.graph, paths["cdr"], seed)
        write_attributes(paths["attributes"], self.attributes)
        paths["ledger"].write_text(json.dumps(self.ledger, indent=2, sort_keys=True) + "\n")
        return paths


def _node_ids(n: int) -> np.ndarray:
    width = len(str(max(n - 1, 0)))
    return np.array([f"u{i:0{width}d}" for i in range(n)], dtype=object)


def generate(config: SynthConfig) -> SynthResult:
    rng = np.random.default_rng(config.seed)
    sizes = np.array(config.group_sizes, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n = int(sizes.sum())
    group_of = np.repeat(np.arange(sizes.size), sizes)
    n_ties = int(round(n * config.mean_degree / 2.0))

    u = rng.integers(0, n, n_ties)
    gu = group_of[u]
    size_u = sizes[gu]
    within = rng.random(n_ties) < np.array(config.within_prob)[gu]
    # No partner available on one side: fall back to the other.
    within = np.where(size_u == 1, False, within)
    within = np.where(size_u == n, True, within)

    # Within: uniform over own group minus u.
    local_u = u - offsets[gu]
    r = (rng.random(n_ties) * np.maximum(size_u - 1, 1)).astype(np.int64)
    v_within = offsets[gu] + r + (r >= local_u)
    # Across: uniform over the n - size_u nodes outside u's group.
    r2 = (rng.random(n_ties) * np.maximum(n - size_u, 1)).astype(np.int64)
    v_across = r2 + np.where(r2 >= offsets[gu], size_u, 0)
    v = np.where(within, v_within, v_across)

    if config.calls_per_tie > 1:
        calls = rng.geometric(1.0 / config.calls_per_tie, n_ties)
    else:
        calls = np.ones(n_ties, dtype=np.int64)

    lo, hi = np.minimum(u, v), np.maximum(u, v)
    keys, inverse = np.unique(lo * n + hi, return_inverse=True)
    weight = np.bincount(inverse, weights=calls).astype(np.int64)
    src, dst = keys // n, keys % n
    # Node ids are zero-padded so numeric order equals sorted string order.
    ids = _node_ids(n)
    graph = InteractionGraph(ids, src, dst, weight)

    labels = np.array(config.labels, dtype=object)[group_of]
    attrs = pd.DataFrame({config.feature: labels}, index=pd.Index(ids, name="id"))
    return SynthResult(graph, attrs, _ledger(graph, group_of, config), config)


def _ledger(graph: InteractionGraph, group_of: np.ndarray, config: SynthConfig) -> dict:
    m = len(config.group_sizes)
    a, b = group_of[graph.src], group_of[graph.dst]
    key = np.minimum(a, b) * m + np.maximum(a, b)
    calls = np.bincount(key, weights=graph.weight, minlength=m * m).astype(np.int64).reshape(m, m)
    pairs = np.bincount(key, minlength=m * m).reshape(m, m)
    labels = list(config.labels)
    tie_counts = {
        f"{labels[i]}|{labels[j]}": {"calls": int(calls[i, j]), "pairs": int(pairs[i, j])}
        for i in range(m)
        for j in range(i, m)
    }
    total_calls = int(graph.weight.sum())
    within_calls = int(np.trace(calls))
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "nodes": graph.n_nodes,
        "distinct_pairs": graph.n_edges,
        "calls": total_calls,
        "group_sizes": dict(zip(labels, map(int, config.group_sizes))),
        "tie_counts": tie_counts,
        "within_fraction": within_calls / total_calls if total_calls else None,
    }


def graph_call_rows(graph: InteractionGraph, seed: int = 0):
    """Expand a weighted graph into one call record per unit of weight.

    Direction, timestamp and cell are random but fixed by ``seed``; rows are
    shuffled.
    """
    rng = np.random.default_rng(seed)
    idx = np.repeat(np.arange(graph.n_edges), graph.weight)
    idx = idx[rng.permutation(idx.size)]
    flip = rng.random(idx.size) < 0.5
    s, d = graph.src[idx], graph.dst[idx]
    caller = np.where(flip, d, s)
    callee = np.where(flip, s, d)
    ts = WINDOW_START + rng.integers(0, WINDOW_SECONDS, idx.size)
    cell = rng.integers(0, 500, idx.size)
    return graph.nodes[caller], graph.nodes[callee], ts, cell


def write_graph_cdr(graph: InteractionGraph, path, seed: int = 0) -> None:
    write_cdr(path, *graph_call_rows(graph, seed))


# -- the ten-person example -------------------------------------------------------

FIG6_PUBLISHED = {
    "F1": (0.39, 0.58, 0.48),
    "F2": (0.67, 1.0, 0.83),
    "F3": (0.67, 1.0, 0.83),
    "F4": (0.67, 1.0, 0.83),
    "F5": (0.67, 1.0, 0.83),
    "F6": (0.39, 0.58, 0.48),
    "M1": (0.5, 0.58, 0.54),
    "M2": (1.0, 1.0, 1.0),
    "M3": (1.0, 1.0, 1.0),
    "M4": (0.5, 0.58, 0.54),
}

# F1/F6 link to every other woman and one man; F2-F5 only to women;
# the men form a clique, with M1 and M4 each also linked to one woman.
FIG6_EDGES = (
    [("F1", f"F{i}") for i in range(2, 7)]
    + [("F6", f"F{i}") for i in range(2, 6)]
    + [("F2", "F3"), ("F4", "F5")]
    + [(f"M{i}", f"M{j}") for i in range(1, 5) for j in range(i + 1, 5)]
    + [("F1", "M1"), ("F6", "M4")]
)


def fig6_fixture():
    """Ten-person gender network with its published per-person index values.

    Contact profiles: F1 and F6 have 5 female / 1 male contacts, F2-F5 only
    female, M1 and M4 3 male / 1 female, M2 and M3 only male. Population
    shares are 6/10 female and 4/10 male.

    Returns ``(graph, attributes, expected)``, ``expected`` being the
    published records.
    """
    graph = InteractionGraph.from_edges(FIG6_EDGES)
    ids = graph.nodes.tolist()
    attrs = pd.DataFrame(
        {"gender": ["female" if i.startswith("F") else "male" for i in ids]},
        index=pd.Index(ids, name="id", dtype=object),
    )
    expected = [
        IndexRecord(pid, "female" if pid.startswith("F") else "male", *vals)
        for pid, vals in FIG6_PUBLISHED.items()
    ]
    return graph, attrs, expected


def write_fixture(out_dir, graph: InteractionGraph, attrs: pd.DataFrame, seed: int = 0) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cdr": out / "cdr.csv", "attributes": out / "attributes.csv"}
    write_graph_cdr(graph, paths["cdr"], seed)
    write_attributes(paths["attributes"], attrs)
    return paths


def random_mix_config(n: int = 10_000, shares: Sequence[float] = (0.6, 0.4), seed: int = 0, mean_degree: float = 50.0) -> SynthConfig:
    sizes = [int(round(n * s)) for s in shares]
    sizes[-1] = n - sum(sizes[:-1])
    probs = tuple(s / n for s in sizes)
    return SynthConfig(seed=seed, group_sizes=tuple(sizes), within_prob=probs, mean_degree=mean_degree)
