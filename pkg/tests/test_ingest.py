import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from obiseg.errors import (
    AgeOutOfRange,
    EmptyInput,
    InvalidAttribute,
    TooManyMalformedRows,
    UnknownGroupValue,
    ZeroPercentage,
)
from obiseg.ingest import (
    AGE_GROUPS,
    CdrRecord,
    census_difference,
    census_group_space,
    contact_profiles,
    encode_age,
    feature_labels,
    filter_min_connections,
    load_cdr,
    parse_cdr,
    read_attributes,
    read_census,
    sample_group_space,
    write_attributes,
)
from obiseg.model import GroupSpace, InteractionGraph
from obiseg.synth import SynthConfig, fig6_fixture, generate, graph_call_rows, write_graph_cdr

HEADER = "caller_id,callee_id,timestamp,cell\n"


def csv_bytes(rows):
    return io.BytesIO((HEADER + "".join(f"{a},{b},{t},c1\n" for a, b, t in rows)).encode())


def test_direction_folded():
    g = parse_cdr(csv_bytes([("A", "B", 1), ("B", "A", 2), ("A", "C", 3)]))
    assert sorted(g.edges()) == [("A", "B", 2), ("A", "C", 1)]


def test_records_and_csv_agree():
    recs = [CdrRecord("A", "B", 1), CdrRecord("B", "A", "2017-05-08T10:00:00Z"), ("A", "C", 3)]
    assert parse_cdr(recs) == parse_cdr(csv_bytes([("A", "B", 1), ("B", "A", "2017-05-08T10:00:00Z"), ("A", "C", 3)]))


def test_self_loop_counted_malformed():
    rows = [("A", "B", 1)] * 199 + [("A", "A", 5)]
    g, stats = load_cdr(csv_bytes(rows))
    assert stats.malformed == 1 and stats.self_loops == 1
    assert list(g.edges()) == [("A", "B", 199)]


def test_malformed_cap():
    rows = [("A", "B", 1)] * 98 + [("A", "A", 1), ("A", "B", "yesterday")]
    with pytest.raises(TooManyMalformedRows):
        load_cdr(csv_bytes(rows))
    g, stats = load_cdr(csv_bytes(rows), max_malformed_fraction=0.05)
    assert stats.bad_timestamps == 1 and g.total_weight == 98


def test_bad_shape_rows_skipped():
    text = HEADER + "A,B,1,c\n" * 200 + "A,B\n"
    g, stats = load_cdr(io.BytesIO(text.encode()))
    assert stats.bad_shape == 1 and g.total_weight == 200


@pytest.mark.parametrize("text", ["", HEADER])
def test_empty_input(text):
    with pytest.raises(EmptyInput):
        parse_cdr(io.BytesIO(text.encode()))


def test_shuffled_input_identical_graph(tmp_path):
    res = generate(SynthConfig(seed=3, group_sizes=(60, 40), mean_degree=8, calls_per_tie=3))
    caller, callee, ts, cell = graph_call_rows(res.graph, seed=1)
    order = np.random.default_rng(7).permutation(len(caller))
    recs = list(zip(caller, callee, ts))
    a = parse_cdr([recs[i] for i in order])
    b = parse_cdr(recs)
    assert a == b == res.graph
    write_graph_cdr(res.graph, tmp_path / "c.csv")
    assert parse_cdr(tmp_path / "c.csv", block_size=1 << 10) == res.graph


def test_generator_ledger_matches_parse(tmp_path):
    res = generate(SynthConfig(seed=1, group_sizes=(300, 200), mean_degree=10, calls_per_tie=2))
    paths = res.write(tmp_path)
    g, stats = load_cdr(paths["cdr"])
    assert g.n_nodes == res.ledger["nodes"]
    assert g.n_edges == res.ledger["distinct_pairs"]
    assert stats.rows == g.total_weight == res.ledger["calls"]


@pytest.mark.parametrize(
    "year, label",
    [(1990, "(24,54]"), (2003, "(0,14]"), (2002, "(14,24]"), (1953, "(54,64]"), (1952, "(64,100]"), (1917, "(64,100]"), (2016, "(0,14]")],
)
def test_encode_age(year, label):
    assert encode_age(year, 2017) == label


@pytest.mark.parametrize("year", [2017, 2020, 1916])
def test_encode_age_out_of_range(year):
    with pytest.raises(AgeOutOfRange):
        encode_age(year, 2017)


def test_encode_age_partitions_ages():
    labels = [encode_age(2017 - age, 2017) for age in range(1, 101)]
    assert set(labels) == set(AGE_GROUPS)
    # Groups are contiguous and in order.
    firsts = [labels.index(g) for g in AGE_GROUPS]
    assert firsts == sorted(firsts) == [0, 14, 24, 54, 64]


def star(n_leaves=6):
    return InteractionGraph.from_edges([("c", f"l{i}") for i in range(n_leaves)])


def clique(n):
    return InteractionGraph.from_edges([(f"v{i}", f"v{j}") for i in range(n) for j in range(i + 1, n)])


def test_filter_star_empties():
    g, stats = filter_min_connections(star(), 6)
    assert g.n_nodes == 0 and stats.stage1_dropped == 7 and stats.iterations == 3
    g1, _ = filter_min_connections(star(), 6, single_pass=True)
    assert g1.nodes.tolist() == ["c"]


def test_filter_clique_and_k1():
    g = clique(7)
    out, stats = filter_min_connections(g, 6)
    assert out == g and stats.stage1_dropped == 0
    with_iso = InteractionGraph.from_edges([("a", "b")], nodes=["z"])
    out, _ = filter_min_connections(with_iso, 1)
    assert out.nodes.tolist() == ["a", "b"]
    with pytest.raises(ValueError):
        filter_min_connections(g, 0)


def test_filter_counts_distinct_partners_by_default():
    g = InteractionGraph.from_edges([("a", "b", 10)])
    assert filter_min_connections(g, 2)[0].n_nodes == 0
    assert filter_min_connections(g, 2, count_calls=True)[0].n_nodes == 2


def test_filter_known_features_stage():
    g = clique(8)
    known = {f"v{i}" for i in range(7)}
    out, stats = filter_min_connections(g, 7, require_known_features=True, known=known)
    # Each known node has 6 known partners, v7 has 7.
    assert stats.stage2_dropped > 0
    out2, stats2 = filter_min_connections(g, 6, require_known_features=True, known=known)
    assert out2 == g and stats2.stage2_dropped == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.booleans())
def test_filter_idempotent(seed, k, known_stage):
    res = generate(SynthConfig(seed=seed, group_sizes=(30, 20), mean_degree=5))
    known = set(res.graph.nodes.tolist()[::3])
    out, _ = filter_min_connections(res.graph, k, known_stage, known)
    again, stats = filter_min_connections(out, k, known_stage, known)
    assert again == out
    assert stats.stage1_dropped == stats.stage2_dropped == 0


def test_census_difference():
    assert census_difference(10.0, 14.6) == pytest.approx(46.0, abs=1e-9)
    assert census_difference(14.6, 10.0) == pytest.approx(46.0, abs=1e-9)
    assert census_difference(5.0, 5.0) == 0.0
    with pytest.raises(ZeroPercentage):
        census_difference(0, 10)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_census_difference_symmetric(a, b):
    assert census_difference(a, b) == census_difference(b, a)


def test_contact_profiles_fixture():
    graph, attrs, _ = fig6_fixture()
    labels = feature_labels(attrs, "gender")
    gs = sample_group_space(labels, "gender")
    assert gs.labels == ("female", "male")
    np.testing.assert_allclose(gs.alpha, [0.6, 0.4])
    people = {p.id: p for p in contact_profiles(graph, labels, gs)}
    assert people["F1"].profile.counts == (5, 1)
    assert people["F3"].profile.counts == (3, 0)
    assert people["M1"].profile.counts == (1, 3)
    assert people["M2"].profile.counts == (0, 3)
    assert len(people) == 10


def test_contact_profiles_unique_ties_and_exclusion():
    g = InteractionGraph.from_edges([("a", "b", 4), ("a", "c"), ("d", "e")])
    labels = {"a": "x", "b": "y", "c": "x", "d": "x"}
    gs = GroupSpace(("x", "y"), (0.5, 0.5))
    weighted = {p.id: p.profile.counts for p in contact_profiles(g, labels, gs)}
    distinct = {p.id: p.profile.counts for p in contact_profiles(g, labels, gs, unique_ties=True)}
    assert weighted["a"] == (1, 4) and distinct["a"] == (1, 1)
    # d's only partner has no label: excluded. e has no label itself.
    assert "d" not in weighted and "e" not in weighted
    with pytest.raises(UnknownGroupValue):
        contact_profiles(g, labels | {"e": "z"}, gs)


def test_read_attributes_normalises_and_validates(tmp_path):
    text = "id,gender,birth_year,language,county\n1,F,1990,estonian,harju\n2,male,,Russian,\n3,,1950,,Tartu\n"
    df = read_attributes(io.StringIO(text))
    assert df.loc["1", "gender"] == "female" and df.loc["1", "language"] == "Estonian"
    assert df.loc["1", "county"] == "Harju"
    assert pd.isna(df.loc["2", "birth_year"])
    ages = feature_labels(df, "age_group")
    assert ages["1"] == "(24,54]" and ages["2"] is None
    write_attributes(tmp_path / "a.csv", df)
    pd.testing.assert_frame_equal(read_attributes(tmp_path / "a.csv"), df)
    for bad in ["id,gender\n1,other\n", "id,language\n1,Finnish\n", "id,birth_year\n1,abc\n", "id,gender\n1,f\n1,m\n", "gender\nf\n"]:
        with pytest.raises(InvalidAttribute):
            read_attributes(io.StringIO(bad))


def test_census_group_space():
    text = "feature,value,share\nlanguage,Estonian,0.69\nlanguage,Russian,0.30\nlanguage,English,0.01\ngender,male,0.47\ngender,female,0.5305\n"
    census = read_census(io.StringIO(text))
    gs = census_group_space(census, "language")
    assert gs.labels == ("Estonian", "Russian", "English")
    np.testing.assert_allclose(gs.alpha, [0.69, 0.30, 0.01])
    assert census_group_space(census, "gender").labels == ("female", "male")
    with pytest.raises(InvalidAttribute):
        census_group_space(census, "county")
    with pytest.raises(InvalidAttribute):
        read_census(io.StringIO("feature,value,share\ngender,male,0.4\ngender,female,0.4\n"))
