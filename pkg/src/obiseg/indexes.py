"""Individual segregation (ISI), inclination (III) and overall behaviour (OBI) indexes.

Scalar functions are the reference definitions. The ``*_batch`` variants
apply the same formulas to arrays of individuals for large graphs and are
tested against the scalar ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateGroupSpace,
    DimensionMismatch,
    MissingOwnGroup,
    MixedGroups,
    UnsupportedDimension,
    ZeroContacts,
)
from .model import SUM_TOL, GroupReport, GroupSpace, Individual, IndexRecord, proportions

DEFAULT_BINS = 40


def compute_isi(p: Sequence[float], gs: GroupSpace) -> float:
    """Individual Segregation Index.

    Half the L1 distance between the contact proportions ``p`` and the
    population shares, normalised by ``1 - min(alpha)`` so that a profile
    concentrated on the smallest group scores exactly 1.
    """
    if len(p) != gs.n:
        raise DimensionMismatch(f"proportion vector has {len(p)} entries, group space has {gs.n}")
    alpha = gs.alpha.tolist()
    l1 = math.fsum(abs(float(pi) - ai) for pi, ai in zip(p, alpha))
    return min(l1 / _isi_scale(alpha), 1.0)


def _isi_scale(alpha) -> float:
    # 2 * (1 - min(alpha)) evaluated as the L1 distance of the min-share corner:
    # identical when shares sum to one, and exact at that corner in floating point.
    k = min(range(len(alpha)), key=alpha.__getitem__)
    return math.fsum([1.0 - alpha[k]] + [a for i, a in enumerate(alpha) if i != k])


def compute_iii(p_own: float, alpha_own: float) -> float:
    """Individual Inclination Index toward the individual's own group.

    Above the population share the excess is scaled by ``1 - alpha_own``;
    below it the deficit is scaled by ``p_own`` and clamped at -1, with
    ``p_own == 0`` mapping to -1.
    """
    p_own = float(p_own)
    alpha_own = float(alpha_own)
    if not 0.0 <= p_own <= 1.0:
        raise ValueError(f"own-group proportion {p_own} outside [0, 1]")
    if alpha_own >= 1.0:
        raise DegenerateGroupSpace("own-group share is 1; inclination is undefined")
    if alpha_own <= 0.0:
        raise ValueError(f"own-group share {alpha_own} must be > 0")
    diff = p_own - alpha_own
    if diff >= 0.0:
        return diff / (1.0 - alpha_own)
    if p_own == 0.0:
        return -1.0
    return max(diff / p_own, -1.0)


def compute_obi(isi: float, iii: float) -> float:
    """Overall Behavioural Index: segregation strength signed by inclination."""
    if not 0.0 <= isi <= 1.0:
        raise ValueError(f"ISI {isi} outside [0, 1]")
    if not -1.0 <= iii <= 1.0:
        raise ValueError(f"III {iii} outside [-1, 1]")
    if iii != 0.0:
        return math.copysign((isi + abs(iii)) / 2.0, iii)
    return 0.0 - isi / 2.0


def compute_individual(ind: Individual, gs: GroupSpace) -> IndexRecord:
    if ind.own_group is None:
        raise MissingOwnGroup(f"individual {ind.id!r} has no own group")
    k = gs.index(ind.own_group)
    p = proportions(ind.profile)
    if p.size != gs.n:
        raise DimensionMismatch(
            f"individual {ind.id!r} has {p.size} group counts, group space has {gs.n}"
        )
    isi = compute_isi(p, gs)
    iii = compute_iii(p[k], gs.alpha[k])
    return IndexRecord(ind.id, ind.own_group, isi, iii, compute_obi(isi, iii))


def isi_batch(P: np.ndarray, gs: GroupSpace) -> np.ndarray:
    """ISI for each row of an (individuals x groups) proportion matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != gs.n:
        raise DimensionMismatch(f"expected (k, {gs.n}) proportions, got {P.shape}")
    l1 = np.abs(P - gs.alpha).sum(axis=1)
    return np.minimum(l1 / _isi_scale(gs.alpha.tolist()), 1.0)


def iii_batch(p_own: np.ndarray, alpha_own: np.ndarray) -> np.ndarray:
    p_own = np.asarray(p_own, dtype=float)
    alpha_own = np.broadcast_to(np.asarray(alpha_own, dtype=float), p_own.shape)
    if np.any(alpha_own >= 1.0):
        raise DegenerateGroupSpace("own-group share is 1; inclination is undefined")
    diff = p_own - alpha_own
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = diff / (1.0 - alpha_own)
        lower = np.where(p_own > 0, diff / np.where(p_own > 0, p_own, 1.0), -1.0)
    return np.where(diff >= 0, upper, np.maximum(lower, -1.0))


def obi_batch(isi: np.ndarray, iii: np.ndarray) -> np.ndarray:
    isi = np.asarray(isi, dtype=float)
    iii = np.asarray(iii, dtype=float)
    return np.where(iii != 0, np.sign(iii) * (isi + np.abs(iii)) / 2.0, 0.0 - isi / 2.0)


def compute_batch(counts: np.ndarray, own: np.ndarray, gs: GroupSpace):
    """Indexes for many individuals at once.

    ``counts`` is an (individuals x groups) matrix of contact counts and
    ``own`` the column index of each individual's group. Rows must have a
    positive total. Returns ``(isi, iii, obi)`` arrays.
    """
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise ZeroContacts(f"{int((totals <= 0).sum())} individuals have no contacts")
    P = counts / totals[:, None]
    rows = np.arange(len(P))
    isi = isi_batch(P, gs)
    iii = iii_batch(P[rows, own], gs.alpha[own])
    return isi, iii, obi_batch(isi, iii)


def obi_histogram(values, bins: int = DEFAULT_BINS):
    """Bin masses of OBI values over [-1, 1]; masses sum to one."""
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(-1.0, 1.0))
    total = counts.sum()
    masses = counts / total if total else np.zeros(bins)
    return masses, edges


def aggregate_group(records: Sequence[IndexRecord], bins: int = DEFAULT_BINS, group=None) -> GroupReport:
    """Unweighted means of a group's index records plus its OBI histogram.

    ``group`` names the group when ``records`` is empty.
    """
    labels = {r.group for r in records}
    if len(labels) > 1:
        raise MixedGroups(f"records span several groups: {sorted(map(str, labels))}")
    if labels:
        (label,) = labels
        if group is not None and group != label:
            raise MixedGroups(f"records belong to {label!r}, not {group!r}")
    else:
        label = group
    masses, edges = obi_histogram([r.obi for r in records], bins)
    if not records:
        return GroupReport(label, 0, None, None, None, tuple(masses.tolist()), tuple(edges.tolist()))
    n = len(records)
    return GroupReport(
        label,
        n,
        math.fsum(r.isi for r in records) / n,
        math.fsum(r.iii for r in records) / n,
        math.fsum(r.obi for r in records) / n,
        tuple(masses.tolist()),
        tuple(edges.tolist()),
    )


@dataclass(frozen=True)
class HeatmapGrid:
    step: float
    cells: tuple[tuple[tuple[float, float, float], float], ...]

    def as_array(self) -> np.ndarray:
        """Rows of ``(p1, p2, p3, isi)``."""
        return np.array([(*p, v) for p, v in self.cells])


def isi_heatmap(gs: GroupSpace, step: float) -> HeatmapGrid:
    """ISI over a regular lattice on the three-group probability simplex."""
    if gs.n != 3:
        raise UnsupportedDimension(f"heatmap needs exactly 3 groups, got {gs.n}")
    if not 0.0 < step <= 0.5:
        raise ValueError(f"step must be in (0, 0.5], got {step}")
    m = round(1.0 / step)
    if abs(m * step - 1.0) > SUM_TOL:
        raise ValueError(f"1/step must be an integer, got 1/{step} = {1.0 / step}")
    cells = []
    for i in range(m + 1):
        for j in range(m + 1 - i):
            p = (i / m, j / m, (m - i - j) / m)
            cells.append((p, compute_isi(p, gs)))
    return HeatmapGrid(1.0 / m, tuple(cells))
