import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from obiseg.errors import DegenerateGroupSpace, DimensionMismatch, MissingOwnGroup, MixedGroups, UnsupportedDimension
from obiseg.indexes import (
    aggregate_group,
    compute_batch,
    compute_iii,
    compute_individual,
    compute_isi,
    compute_obi,
    isi_heatmap,
)
from obiseg.model import ContactProfile, GroupSpace, Individual, IndexRecord

from oracles import iii_straight, isi_l1, obi_straight

GENDER = GroupSpace(("female", "male"), (0.6, 0.4))
LANG = GroupSpace(("Estonian", "Russian", "English"), (0.69, 0.30, 0.01))

TABLE3 = {
    "F1": (0.39, 0.58, 0.48), "F2": (0.67, 1, 0.83), "F3": (0.67, 1, 0.83),
    "F4": (0.67, 1, 0.83), "F5": (0.67, 1, 0.83), "F6": (0.39, 0.58, 0.48),
    "M1": (0.5, 0.58, 0.54), "M2": (1, 1, 1), "M3": (1, 1, 1), "M4": (0.5, 0.58, 0.54),
}


# -- strategies ---------------------------------------------------------------

@st.composite
def group_spaces(draw, n=None):
    n = n or draw(st.integers(2, 6))
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    a = np.array(w) / sum(w)
    return GroupSpace(tuple(f"g{i}" for i in range(n)), a)


@st.composite
def simplex(draw, n):
    w = draw(st.lists(st.integers(0, 50), min_size=n, max_size=n).filter(lambda c: sum(c) > 0))
    return np.array(w) / sum(w)


# -- ISI -------------------------------------------------------------------------

def test_isi_worked_example():
    assert compute_isi((5 / 6, 1 / 6), GENDER) == pytest.approx(7 / 18, abs=1e-12)
    assert round(compute_isi((5 / 6, 1 / 6), GENDER), 2) == 0.39


def test_isi_special_points():
    assert compute_isi(GENDER.alpha, GENDER) == 0.0
    assert compute_isi((0, 1), GENDER) == 1.0
    # Oracle: 0.62 / 1.98.
    assert compute_isi((1, 0, 0), LANG) == pytest.approx(0.3131, abs=5e-4)
    assert compute_isi((1, 0, 0), LANG) == pytest.approx(float(isi_l1((1, 0, 0), (0.69, 0.30, 0.01))), abs=1e-12)


def test_isi_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        compute_isi((1.0,), GENDER)


@given(st.data())
def test_isi_matches_l1_oracle(data):
    gs = data.draw(group_spaces())
    p = data.draw(simplex(gs.n))
    assert compute_isi(p, gs) == pytest.approx(float(isi_l1(p, gs.alpha)), abs=1e-12)


@given(st.data())
def test_isi_range_and_extremes(data):
    gs = data.draw(group_spaces())
    p = data.draw(simplex(gs.n))
    v = compute_isi(p, gs)
    assert 0.0 <= v <= 1.0
    assert compute_isi(gs.alpha, gs) == 0.0
    k = int(np.argmin(gs.alpha))
    corner = np.zeros(gs.n)
    corner[k] = 1.0
    assert compute_isi(corner, gs) == 1.0
    if v == 1.0:
        hot = np.flatnonzero(p > 0)
        assert hot.size == 1 and math.isclose(gs.alpha[hot[0]], gs.min_alpha, abs_tol=1e-12)
    if v < 1e-9:
        np.testing.assert_allclose(p, gs.alpha, atol=1e-8)


@given(st.data())
def test_isi_permutation_invariant(data):
    gs = data.draw(group_spaces())
    p = data.draw(simplex(gs.n))
    perm = data.draw(st.permutations(range(gs.n)))
    gs2 = GroupSpace(tuple(gs.labels[i] for i in perm), gs.alpha[list(perm)])
    assert compute_isi(p[list(perm)], gs2) == pytest.approx(compute_isi(p, gs), abs=1e-12)


# -- III -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "p_own, alpha_own, expected",
    [
        (5 / 6, 0.6, 7 / 12),
        (0.6, 0.6, 0.0),
        (1.0, 0.6, 1.0),
        (0.0, 0.6, -1.0),
        (0.0, 0.01, -1.0),
        (0.2, 0.6, -1.0),  # lower branch gives -2 before clamping
        (0.4, 0.6, -0.5),
    ],
)
def test_iii_values(p_own, alpha_own, expected):
    assert compute_iii(p_own, alpha_own) == pytest.approx(expected, abs=1e-12)


def test_iii_rejects():
    with pytest.raises(DegenerateGroupSpace):
        compute_iii(0.5, 1.0)
    with pytest.raises(ValueError):
        compute_iii(1.5, 0.5)


@given(st.floats(0, 1), st.floats(0.001, 0.999))
def test_iii_sign_and_range(p, a):
    v = compute_iii(p, a)
    assert -1.0 <= v <= 1.0
    assert np.sign(v) == np.sign(p - a) or (p == 0 and v == -1.0)
    assert (v == 1.0) == (p == 1.0)
    assert v == iii_straight(p, a)


# -- OBI -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "isi, iii, expected, tol",
    [
        (0.39, 0.58, 0.48, 0.01),
        (0.0, 0.0, 0.0, 0.0),
        (0.5, 0.58, 0.54, 1e-12),
        (1.0, 1.0, 1.0, 0.0),
        (0.4, 0.0, -0.2, 1e-12),
        (0.4, -0.5, -0.45, 1e-12),
    ],
)
def test_obi_values(isi, iii, expected, tol):
    assert compute_obi(isi, iii) == pytest.approx(expected, abs=tol)


@given(st.floats(0, 1), st.floats(-1, 1))
def test_obi_sign_agreement(isi, iii):
    v = compute_obi(isi, iii)
    assert -1.0 <= v <= 1.0
    if iii > 0:
        assert v > 0
    elif iii < 0:
        assert v < 0
    else:
        assert v == -isi / 2 and v <= 0
    assert v == obi_straight(isi, iii)


# -- individuals -----------------------------------------------------------------

def _ind(pid, counts, own):
    return Individual(pid, ContactProfile(counts), own)


def test_table3_consistent_rows():
    f1 = compute_individual(_ind("F1", (5, 1), "female"), GENDER)
    assert f1.isi == pytest.approx(0.39, abs=0.005)
    assert f1.iii == pytest.approx(0.58, abs=0.005)
    assert (f1.isi, f1.iii, f1.obi) == pytest.approx((7 / 18, 7 / 12, 35 / 72), abs=1e-12)
    f2 = compute_individual(_ind("F2", (3, 0), "female"), GENDER)
    assert f2.as_tuple() == pytest.approx(TABLE3["F2"], abs=0.005)
    m2 = compute_individual(_ind("M2", (0, 2), "male"), GENDER)
    assert m2.as_tuple() == (1.0, 1.0, 1.0)


def test_table3_m1_row_is_not_reachable():
    # Two groups, male share 0.4: ISI = |p_m - 0.4| / 0.6 and, for p_m >= 0.4,
    # III = (p_m - 0.4) / 0.6 as well. The published (0.5, 0.58) pair cannot
    # come from one profile; 1F/3M reproduces the III column.
    m1 = compute_individual(_ind("M1", (1, 3), "male"), GENDER)
    assert m1.iii == pytest.approx(0.58, abs=0.005)
    assert m1.as_tuple() == pytest.approx((7 / 12, 7 / 12, 7 / 12), abs=1e-12)
    for k in range(0, 101):
        p = Fraction(k, 100)
        isi = isi_l1((1 - p, p), (Fraction(3, 5), Fraction(2, 5)))
        if abs(isi - Fraction(1, 2)) <= Fraction(5, 1000):
            assert abs(compute_iii(float(p), 0.4) - 0.58) > 0.005


def test_individual_at_population_shares():
    rec = compute_individual(_ind("x", (3, 2), "female"), GENDER)
    assert rec.as_tuple() == pytest.approx((0.0, 0.0, 0.0), abs=1e-15)


def test_individual_errors():
    with pytest.raises(MissingOwnGroup):
        compute_individual(_ind("x", (1, 1), None), GENDER)
    with pytest.raises(DimensionMismatch):
        compute_individual(_ind("x", (1, 1, 1), "male"), GENDER)


@given(st.data())
def test_indexes_invariant_under_relabelling_other_groups(data):
    gs = data.draw(group_spaces())
    counts = data.draw(st.lists(st.integers(0, 30), min_size=gs.n, max_size=gs.n).filter(lambda c: sum(c) > 0))
    own = data.draw(st.integers(0, gs.n - 1))
    others = [i for i in range(gs.n) if i != own]
    shuffled = data.draw(st.permutations(others))
    order = list(range(gs.n))
    for src, dst in zip(others, shuffled):
        order[src] = dst
    gs2 = GroupSpace(tuple(gs.labels[i] for i in order), gs.alpha[order])
    a = compute_individual(_ind("x", counts, gs.labels[own]), gs)
    b = compute_individual(_ind("x", [counts[i] for i in order], gs.labels[own]), gs2)
    assert a.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-12)


@given(st.data())
def test_indexes_scale_invariant(data):
    gs = data.draw(group_spaces())
    counts = data.draw(st.lists(st.integers(0, 30), min_size=gs.n, max_size=gs.n).filter(lambda c: sum(c) > 0))
    m = data.draw(st.integers(2, 20))
    own = gs.labels[data.draw(st.integers(0, gs.n - 1))]
    a = compute_individual(_ind("x", counts, own), gs)
    b = compute_individual(_ind("x", [m * c for c in counts], own), gs)
    assert a.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-12)


@settings(max_examples=50)
@given(st.data())
def test_batch_matches_scalar(data):
    gs = data.draw(group_spaces())
    rows = data.draw(
        st.lists(
            st.lists(st.integers(0, 20), min_size=gs.n, max_size=gs.n).filter(lambda c: sum(c) > 0),
            min_size=1,
            max_size=20,
        )
    )
    own = data.draw(st.lists(st.integers(0, gs.n - 1), min_size=len(rows), max_size=len(rows)))
    isi, iii, obi = compute_batch(np.array(rows), np.array(own), gs)
    for k, (c, o) in enumerate(zip(rows, own)):
        rec = compute_individual(_ind(k, c, gs.labels[o]), gs)
        assert (isi[k], iii[k], obi[k]) == pytest.approx(rec.as_tuple(), abs=1e-12)


# -- aggregation -----------------------------------------------------------------

def _records(group, rows):
    return [IndexRecord(k, group, *vals) for k, vals in rows]


def test_aggregate_table3_female_and_male():
    fem = _records("female", [(k, v) for k, v in TABLE3.items() if k.startswith("F")])
    mal = _records("male", [(k, v) for k, v in TABLE3.items() if k.startswith("M")])
    f = aggregate_group(fem)
    m = aggregate_group(mal)
    assert f.member_count == 6 and m.member_count == 4
    assert f.mean_obi == pytest.approx((0.48 + 0.83 * 4 + 0.48) / 6, abs=1e-12)
    assert round(f.mean_obi, 3) == 0.713
    assert m.mean_obi == pytest.approx(0.77, abs=1e-12)
    assert sum(f.obi_histogram) == pytest.approx(1.0, abs=1e-9)
    assert len(f.obi_histogram) == 40


def test_aggregate_single_and_empty():
    r = aggregate_group([IndexRecord("a", "g", 0.2, -0.4, -0.3)], bins=4)
    assert (r.mean_isi, r.mean_iii, r.mean_obi) == (0.2, -0.4, -0.3)
    assert r.obi_histogram == (0.0, 1.0, 0.0, 0.0)
    e = aggregate_group([], bins=4, group="g")
    assert e.member_count == 0 and e.mean_obi is None and e.group == "g"


def test_aggregate_edge_values_binned():
    r = aggregate_group(_records("g", [(0, (1, 1, 1)), (1, (1, -1, -1))]), bins=2)
    assert r.obi_histogram == (0.5, 0.5)


def test_aggregate_mixed_groups():
    with pytest.raises(MixedGroups):
        aggregate_group([IndexRecord(1, "a", 0, 0, 0), IndexRecord(2, "b", 0, 0, 0)])


def test_group_mean_zero_when_everyone_follows_population():
    people = [_ind(i, (6 * m, 4 * m), "female" if i % 2 else "male") for i, m in enumerate(range(1, 9))]
    recs = [compute_individual(p, GENDER) for p in people]
    for g in ("female", "male"):
        r = aggregate_group([x for x in recs if x.group == g])
        assert abs(r.mean_obi) <= 1e-9


def test_group_mean_zero_when_symmetric():
    # Integer profiles rarely mirror exactly, so pair a computed record with its reflection.
    gs = GroupSpace(("a", "b"), (0.5, 0.5))
    up = compute_individual(_ind("u", (3, 1), "a"), gs)
    assert up.obi > 0
    down = IndexRecord("d", "a", up.isi, -up.iii, -up.obi)
    recs = [up, down] * 5 + [IndexRecord("z", "a", 0.0, 0.0, 0.0)]
    assert abs(aggregate_group(recs).mean_obi) <= 1e-9


# -- heatmap ---------------------------------------------------------------------

def test_heatmap_corners_and_alpha_point():
    grid = isi_heatmap(LANG, 0.01)
    cells = dict(grid.cells)
    assert cells[(1.0, 0.0, 0.0)] == pytest.approx(0.3131, abs=5e-4)
    assert cells[(0.0, 1.0, 0.0)] == pytest.approx(0.7071, abs=5e-4)
    assert cells[(0.0, 0.0, 1.0)] == 1.0
    assert cells[(0.69, 0.30, 0.01)] == 0.0
    assert len(cells) == 101 * 102 // 2
    for p, v in grid.cells:
        assert abs(sum(p) - 1) <= 1e-9 and 0 <= v <= 1


def test_heatmap_rejects():
    with pytest.raises(UnsupportedDimension):
        isi_heatmap(GENDER, 0.1)
    with pytest.raises(ValueError):
        isi_heatmap(LANG, 0.3)
    with pytest.raises(ValueError):
        isi_heatmap(LANG, 0.0)
