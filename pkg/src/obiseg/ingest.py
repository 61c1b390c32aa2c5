"""Call-record ingestion, attribute tables, connection filters and census checks.

CDR files are streamed in blocks through pyarrow so memory grows with the
number of distinct callers and caller pairs, not with the number of rows.
"""
from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv

from .errors import (
    AgeOutOfRange,
    EmptyInput,
    InvalidAttribute,
    SegregationError,
    TooManyMalformedRows,
    UnknownGroupValue,
    ZeroPercentage,
)
from .model import ContactProfile, GroupSpace, Individual, InteractionGraph

log = logging.getLogger(__name__)

CDR_COLUMNS = ("caller_id", "callee_id", "timestamp", "cell")
ATTRIBUTE_COLUMNS = ("id", "gender", "birth_year", "language", "county")

GENDERS = ("female", "male")
LANGUAGES = ("Estonian", "Russian", "English")
COUNTIES = (
    "Harju", "Hiiu", "Ida-Viru", "Järva", "Jõgeva", "Lääne", "Lääne-Viru", "Pärnu",
    "Põlva", "Rapla", "Saare", "Tartu", "Valga", "Viljandi", "Võru",
)
AGE_GROUPS = ("(0,14]", "(14,24]", "(24,54]", "(54,64]", "(64,100]")
_AGE_UPPER = (14, 24, 54, 64, 100)

DEFAULT_REFERENCE_YEAR = 2017
DEFAULT_MIN_CONNECTIONS = 6
MAX_MALFORMED_FRACTION = 0.01
FEATURE_ORDER = {
    "gender": GENDERS,
    "language": LANGUAGES,
    "county": COUNTIES,
    "age_group": AGE_GROUPS,
}


class CdrFormatError(SegregationError):
    pass


@dataclass(frozen=True)
class CdrRecord:
    caller_id: str
    callee_id: str
    timestamp: str | int
    cell_location: str = ""


@dataclass(frozen=True)
class AttributeRow:
    id: str
    gender: str | None = None
    birth_year: int | None = None
    language: str | None = None
    county: str | None = None


@dataclass
class ParseStats:
    rows: int = 0
    malformed: int = 0
    self_loops: int = 0
    bad_timestamps: int = 0
    missing_ids: int = 0
    bad_shape: int = 0

    @property
    def accepted(self) -> int:
        return self.rows - self.malformed


# -- CDR parsing -------------------------------------------------------------


class GraphBuilder:
    """Accumulates call records into canonical weighted pair counts.

    Node ids get provisional integer codes in order of first appearance;
    :meth:`finish` re-codes them in sorted id order so that the result does
    not depend on input row order.
    """

    def __init__(self):
        self._index: dict[str, int] = {}
        self._keys = np.empty(0, dtype=np.int64)
        self._counts = np.empty(0, dtype=np.int64)
        self.stats = ParseStats()

    def add_batch(self, caller: pa.Array, callee: pa.Array, timestamp: pa.Array) -> None:
        n = len(caller)
        self.stats.rows += n
        if n == 0:
            return
        has_ids = pc.and_(
            pc.and_(pc.is_valid(caller), pc.is_valid(callee)),
            pc.and_(pc.greater(pc.utf8_length(caller), 0), pc.greater(pc.utf8_length(callee), 0)),
        )
        has_ids = pc.fill_null(has_ids, False).to_numpy(zero_copy_only=False)
        loop = pc.fill_null(pc.equal(caller, callee), False).to_numpy(zero_copy_only=False) & has_ids
        ts_ok = _valid_timestamps(timestamp)
        ok = has_ids & ~loop & ts_ok
        self.stats.missing_ids += int((~has_ids).sum())
        self.stats.self_loops += int(loop.sum())
        self.stats.bad_timestamps += int((has_ids & ~loop & ~ts_ok).sum())
        self.stats.malformed += int(n - ok.sum())
        if not ok.any():
            return
        mask = pa.array(ok)
        caller = pc.filter(caller, mask)
        callee = pc.filter(callee, mask)
        uniq = pc.unique(pa.concat_arrays([caller, callee]))
        index = self._index
        codes = np.fromiter(
            (index.setdefault(u, len(index)) for u in uniq.to_pylist()),
            dtype=np.int64,
            count=len(uniq),
        )
        a = codes[pc.index_in(caller, value_set=uniq).to_numpy(zero_copy_only=False)]
        b = codes[pc.index_in(callee, value_set=uniq).to_numpy(zero_copy_only=False)]
        keys, counts = np.unique((np.minimum(a, b) << 32) | np.maximum(a, b), return_counts=True)
        self._merge(keys, counts)

    def _merge(self, keys: np.ndarray, counts: np.ndarray) -> None:
        if self._keys.size == 0:
            self._keys, self._counts = keys, counts.astype(np.int64)
            return
        all_keys = np.concatenate([self._keys, keys])
        all_counts = np.concatenate([self._counts, counts])
        self._keys, inverse = np.unique(all_keys, return_inverse=True)
        self._counts = np.bincount(inverse, weights=all_counts).astype(np.int64)

    def add_records(self, records: Iterable, chunk: int = 1 << 20) -> None:
        buf: list = []
        for rec in records:
            buf.append(_as_row(rec))
            if len(buf) >= chunk:
                self._add_rows(buf)
                buf = []
        if buf:
            self._add_rows(buf)

    def _add_rows(self, rows: list) -> None:
        self.add_batch(
            pa.array([r[0] for r in rows], type=pa.string()),
            pa.array([r[1] for r in rows], type=pa.string()),
            pa.array([r[2] for r in rows], type=pa.string()),
        )

    def finish(self, max_malformed_fraction: float = MAX_MALFORMED_FRACTION) -> InteractionGraph:
        st = self.stats
        if st.rows == 0:
            raise EmptyInput("no call records in input")
        if st.malformed > max_malformed_fraction * st.rows:
            raise TooManyMalformedRows(
                f"{st.malformed} of {st.rows} rows malformed "
                f"(> {max_malformed_fraction:.0%}): {st}"
            )
        if st.malformed:
            log.warning("skipped %d malformed call records of %d", st.malformed, st.rows)
        ids = np.empty(len(self._index), dtype=object)
        ids[list(self._index.values())] = list(self._index.keys())
        order = np.argsort(ids.astype(str), kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        lo = rank[self._keys >> 32]
        hi = rank[self._keys & 0xFFFFFFFF]
        src, dst = np.minimum(lo, hi), np.maximum(lo, hi)
        edge_order = np.lexsort((dst, src))
        return InteractionGraph(ids[order], src[edge_order], dst[edge_order], self._counts[edge_order])


def _as_row(rec) -> tuple:
    if isinstance(rec, CdrRecord):
        return (rec.caller_id, rec.callee_id, None if rec.timestamp is None else str(rec.timestamp))
    caller, callee, ts = rec[0], rec[1], rec[2]
    return (
        None if caller is None else str(caller),
        None if callee is None else str(callee),
        None if ts is None else str(ts),
    )


def _valid_timestamps(ts: pa.Array) -> np.ndarray:
    """Epoch seconds or ISO-8601 strings."""
    numeric = pc.fill_null(pc.match_substring_regex(ts, r"^\s*\d+\s*$"), False)
    ok = numeric.to_numpy(zero_copy_only=False).copy()
    rest = np.flatnonzero(~ok)
    if rest.size:
        others = pc.take(ts, pa.array(rest)).to_pandas()
        parsed = pd.to_datetime(others, format="ISO8601", errors="coerce", utc=True)
        ok[rest] = parsed.notna().to_numpy()
    return ok


def load_cdr(
    source,
    block_size: int = 1 << 24,
    max_malformed_fraction: float = MAX_MALFORMED_FRACTION,
) -> tuple[InteractionGraph, ParseStats]:
    """Parse call records into an undirected weighted graph plus parse statistics.

    ``source`` is a path, a binary/text file object, or an iterable of
    :class:`CdrRecord` / ``(caller, callee, timestamp[, cell])`` tuples.
    """
    builder = GraphBuilder()
    if isinstance(source, (str, os.PathLike)) or hasattr(source, "read"):
        _stream_csv(source, builder, block_size)
    else:
        builder.add_records(source)
    return builder.finish(max_malformed_fraction), builder.stats


def parse_cdr(source, **kwargs) -> InteractionGraph:
    return load_cdr(source, **kwargs)[0]


def _stream_csv(source, builder: GraphBuilder, block_size: int) -> None:
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
        source = pa.BufferReader(data)
    else:
        source = str(source)

    def on_invalid(row):
        builder.stats.rows += 1
        builder.stats.malformed += 1
        builder.stats.bad_shape += 1
        return "skip"

    wanted = CDR_COLUMNS[:3]
    try:
        reader = pacsv.open_csv(
            source,
            read_options=pacsv.ReadOptions(block_size=block_size),
            parse_options=pacsv.ParseOptions(invalid_row_handler=on_invalid),
            convert_options=pacsv.ConvertOptions(
                column_types={c: pa.string() for c in CDR_COLUMNS},
                include_columns=list(wanted),
                strings_can_be_null=True,
                null_values=[""],
            ),
        )
    except pa.ArrowInvalid as exc:
        msg = str(exc)
        if "Empty CSV file" in msg:
            raise EmptyInput("CDR input is empty") from None
        raise CdrFormatError(f"cannot read CDR header (expected {','.join(CDR_COLUMNS)}): {msg}") from None
    try:
        for batch in reader:
            builder.add_batch(*(batch.column(c) for c in wanted))
    except pa.ArrowInvalid as exc:
        raise CdrFormatError(f"unreadable CDR data: {exc}") from None


def write_cdr(path, caller, callee, timestamp, cell) -> None:
    """Write call records in the CDR CSV format (unquoted, header first)."""
    table = pa.table(
        {
            "caller_id": pa.array(caller, type=pa.string()),
            "callee_id": pa.array(callee, type=pa.string()),
            "timestamp": pc.cast(pa.array(timestamp), pa.string()),
            "cell": pc.cast(pa.array(cell), pa.string()),
        }
    )
    pacsv.write_csv(table, str(path), write_options=pacsv.WriteOptions(quoting_style="none"))


# -- attributes ----------------------------------------------------------------


def _canonical(value: str, allowed: Sequence[str], aliases: Mapping[str, str] | None = None):
    key = value.strip().casefold()
    for a in allowed:
        if a.casefold() == key:
            return a
    if aliases and key in aliases:
        return aliases[key]
    return None


_GENDER_ALIASES = {"f": "female", "m": "male"}


def read_attributes(source) -> pd.DataFrame:
    """Load the attribute table, indexed by id.

    Empty fields mean unknown. Known values of ``gender``, ``language`` and
    ``county`` are normalised to their canonical spelling; anything outside
    the allowed sets raises :class:`InvalidAttribute`. Extra columns are kept
    verbatim as additional features.
    """
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyInput("attribute table is empty") from None
    df.columns = [c.strip() for c in df.columns]
    if "id" not in df.columns:
        raise InvalidAttribute(f"attribute table needs an 'id' column, got {list(df.columns)}")
    df["id"] = df["id"].str.strip()
    if (df["id"] == "").any():
        raise InvalidAttribute("attribute rows with empty id")
    dup = df["id"][df["id"].duplicated()]
    if len(dup):
        raise InvalidAttribute(f"duplicate ids in attribute table, e.g. {dup.iloc[0]!r}")
    df = df.set_index("id")
    for col in df.columns:
        df[col] = df[col].str.strip().replace("", None)
    checks = {
        "gender": (GENDERS, _GENDER_ALIASES),
        "language": (LANGUAGES, None),
        "county": (COUNTIES, None),
    }
    for col, (allowed, aliases) in checks.items():
        if col not in df.columns:
            continue
        uniq = df[col].dropna().unique()
        mapping = {}
        for v in uniq:
            canon = _canonical(v, allowed, aliases)
            if canon is None:
                raise InvalidAttribute(f"invalid {col} value {v!r}; expected one of {allowed}")
            mapping[v] = canon
        df[col] = df[col].map(mapping, na_action="ignore")
    if "birth_year" in df.columns:
        years = pd.to_numeric(df["birth_year"], errors="coerce")
        bad = df["birth_year"].notna() & (years.isna() | (years % 1 != 0))
        if bad.any():
            raise InvalidAttribute(f"invalid birth_year {df['birth_year'][bad].iloc[0]!r}")
        df["birth_year"] = years.astype("Int64")
    return df


def write_attributes(path, df: pd.DataFrame) -> None:
    out = df.copy()
    for col in ATTRIBUTE_COLUMNS[1:]:
        if col not in out.columns:
            out[col] = None
    cols = list(ATTRIBUTE_COLUMNS[1:]) + [c for c in out.columns if c not in ATTRIBUTE_COLUMNS]
    out = out[cols]
    out.index.name = "id"
    out.to_csv(path, na_rep="", lineterminator="\n")


def encode_age(birth_year: int, reference_year: int = DEFAULT_REFERENCE_YEAR) -> str:
    """Age-group label for a birth year; intervals exclude the lower and include the upper bound."""
    age = int(reference_year) - int(birth_year)
    if not 0 < age <= 100:
        raise AgeOutOfRange(f"age {age} (born {birth_year}, reference {reference_year}) outside (0, 100]")
    for label, upper in zip(AGE_GROUPS, _AGE_UPPER):
        if age <= upper:
            return label
    raise AssertionError("unreachable")


def feature_labels(
    attrs: pd.DataFrame,
    feature: str,
    reference_year: int = DEFAULT_REFERENCE_YEAR,
) -> pd.Series:
    """Per-id group label for ``feature`` (``None`` when unknown).

    ``age_group`` is derived from ``birth_year``; ages outside (0, 100] are
    treated as unknown.
    """
    if feature == "age_group":
        if "birth_year" not in attrs.columns:
            raise InvalidAttribute("attribute table has no birth_year column")

        def enc(y):
            if pd.isna(y):
                return None
            try:
                return encode_age(int(y), reference_year)
            except AgeOutOfRange:
                return None

        labels = attrs["birth_year"].map(enc, na_action="ignore")
        dropped = int((attrs["birth_year"].notna() & labels.isna()).sum())
        if dropped:
            log.info("%d birth years fall outside the age range; treated as unknown", dropped)
        return labels.astype(object).where(labels.notna(), None)
    if feature not in attrs.columns:
        raise InvalidAttribute(f"unknown feature {feature!r}; columns are {list(attrs.columns)}")
    col = attrs[feature].astype(object)
    return col.where(col.notna(), None)


def node_labels(graph: InteractionGraph, labels: pd.Series | Mapping) -> list:
    """Labels aligned with ``graph.nodes``; ``None`` for unknown or absent ids."""
    if isinstance(labels, pd.Series):
        aligned = labels.reindex(pd.Index(graph.nodes, dtype=object))
        return [None if pd.isna(v) else v for v in aligned.tolist()]
    return [labels.get(n) for n in graph.nodes.tolist()]


# -- filters -------------------------------------------------------------------


@dataclass
class FilterStats:
    stage1_dropped: int = 0
    stage2_dropped: int = 0
    iterations: int = 0
    nodes_before: int = 0
    nodes_after: int = 0

    def to_dict(self) -> dict:
        return {
            "stage1_dropped": self.stage1_dropped,
            "stage2_dropped": self.stage2_dropped,
            "iterations": self.iterations,
            "nodes_before": self.nodes_before,
            "nodes_after": self.nodes_after,
        }


def filter_min_connections(
    graph: InteractionGraph,
    k: int = DEFAULT_MIN_CONNECTIONS,
    require_known_features: bool = False,
    known=None,
    single_pass: bool = False,
    count_calls: bool = False,
) -> tuple[InteractionGraph, FilterStats]:
    """Drop individuals with fewer than ``k`` connections.

    Stage 1 drops nodes with fewer than ``k`` connections overall. Stage 2
    (with ``require_known_features``) drops nodes with fewer than ``k``
    connections to counterparts whose feature is known; ``known`` is a
    boolean mask aligned with ``graph.nodes`` or a collection of ids.
    Connections count distinct partners unless ``count_calls`` is set.

    The two stages repeat until nothing changes, since removing a node lowers
    its neighbours' counts. ``single_pass`` runs each stage once instead.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if require_known_features:
        if known is None:
            raise ValueError("require_known_features needs the known-feature mask")
        known_mask = _as_mask(graph, known)
    stats = FilterStats(nodes_before=graph.n_nodes)
    g = graph
    while True:
        stats.iterations += 1
        changed = False
        keep = g.degree(weighted=count_calls) >= k
        if not keep.all():
            stats.stage1_dropped += int((~keep).sum())
            if require_known_features:
                known_mask = known_mask[keep]
            g = g.subgraph(keep)
            changed = True
        if require_known_features:
            w = g.weight if count_calls else np.ones(g.n_edges, dtype=np.int64)
            n = g.n_nodes
            known_deg = np.bincount(g.src, w * known_mask[g.dst], minlength=n) + np.bincount(
                g.dst, w * known_mask[g.src], minlength=n
            )
            keep = known_deg >= k
            if not keep.all():
                stats.stage2_dropped += int((~keep).sum())
                known_mask = known_mask[keep]
                g = g.subgraph(keep)
                changed = True
        if single_pass or not changed:
            break
    stats.nodes_after = g.n_nodes
    return g, stats


def _as_mask(graph: InteractionGraph, known) -> np.ndarray:
    if isinstance(known, np.ndarray) and known.dtype == bool:
        if known.shape != (graph.n_nodes,):
            raise ValueError("known mask must align with graph.nodes")
        return known
    known = set(known)
    return np.fromiter((n in known for n in graph.nodes.tolist()), dtype=bool, count=graph.n_nodes)


# -- contact profiles ------------------------------------------------------------


def label_codes(labels: Sequence, gs: GroupSpace) -> np.ndarray:
    """Group index per node, -1 for unknown; raises on values outside ``gs``."""
    codes = np.empty(len(labels), dtype=np.int64)
    pos = {lab: i for i, lab in enumerate(gs.labels)}
    for i, lab in enumerate(labels):
        if lab is None:
            codes[i] = -1
            continue
        try:
            codes[i] = pos[lab]
        except KeyError:
            raise UnknownGroupValue(f"value {lab!r} is not a group of {gs.labels!r}") from None
    return codes


def contact_counts(graph: InteractionGraph, codes: np.ndarray, n_groups: int, unique_ties: bool = False) -> np.ndarray:
    """(nodes x groups) matrix of ties from each node to counterparts of each known group."""
    w = np.ones(graph.n_edges, dtype=np.int64) if unique_ties else graph.weight
    n = graph.n_nodes
    out = np.zeros(n * n_groups, dtype=np.int64)
    for a, b in ((graph.src, graph.dst), (graph.dst, graph.src)):
        cb = codes[b]
        sel = cb >= 0
        out += np.bincount(a[sel] * n_groups + cb[sel], weights=w[sel], minlength=n * n_groups).astype(np.int64)
    return out.reshape(n, n_groups)


def contact_profiles(
    graph: InteractionGraph,
    labels: pd.Series | Mapping,
    gs: GroupSpace,
    unique_ties: bool = False,
) -> list[Individual]:
    """One :class:`Individual` per node with a known label and at least one known counterpart.

    Counts are per group of the counterparts; with ``unique_ties`` each
    partner counts once, otherwise every call counts.
    """
    labs = node_labels(graph, labels)
    codes = label_codes(labs, gs)
    counts = contact_counts(graph, codes, gs.n, unique_ties)
    people = []
    excluded = 0
    for i, node in enumerate(graph.nodes.tolist()):
        if codes[i] < 0:
            continue
        row = counts[i]
        if row.sum() == 0:
            excluded += 1
            continue
        people.append(Individual(node, ContactProfile(tuple(row.tolist())), labs[i]))
    if excluded:
        log.info("%d individuals have no counterpart with a known value; excluded", excluded)
    return people


# -- population shares and census ------------------------------------------------


def _ordered(values: Iterable, feature: str) -> list:
    values = list(values)
    order = FEATURE_ORDER.get(feature)
    if order is None:
        return sorted(values, key=str)
    rank = {v: i for i, v in enumerate(order)}
    return sorted(values, key=lambda v: (rank.get(v, len(rank)), str(v)))


def sample_group_space(labels: pd.Series, feature: str) -> GroupSpace:
    """Population shares from the known values of ``feature`` in the attribute table."""
    counts = labels.dropna().value_counts()
    counts = counts[counts > 0]
    order = _ordered(counts.index, feature)
    return GroupSpace.from_counts(counts.to_dict(), order)


CENSUS_SUM_TOL = 1e-3


def read_census(source) -> dict[str, dict[str, float]]:
    """Census shares by feature from ``feature,value,share`` rows.

    Shares of a feature must sum to one within 1e-3 (published tables are
    rounded); they are renormalised exactly.
    """
    df = pd.read_csv(source, dtype={"feature": str, "value": str}, keep_default_na=False)
    missing = {"feature", "value", "share"} - set(df.columns)
    if missing:
        raise InvalidAttribute(f"census file lacks columns {sorted(missing)}")
    out: dict[str, dict[str, float]] = {}
    for feature, grp in df.groupby("feature", sort=False):
        shares = dict(zip(grp["value"].str.strip(), grp["share"].astype(float)))
        total = sum(shares.values())
        if abs(total - 1.0) > CENSUS_SUM_TOL:
            raise InvalidAttribute(f"census shares for {feature!r} sum to {total}, not 1")
        out[feature.strip()] = {v: s / total for v, s in shares.items()}
    return out


def census_group_space(census: Mapping[str, Mapping[str, float]], feature: str) -> GroupSpace:
    if feature not in census:
        raise InvalidAttribute(f"census has no rows for feature {feature!r}")
    shares = census[feature]
    order = _ordered(shares, feature)
    return GroupSpace(tuple(order), np.array([shares[v] for v in order]))


def census_difference(sample_pct: float, population_pct: float) -> float:
    """Relative gap, in percent, between a sample share and the population share."""
    if sample_pct <= 0 or population_pct <= 0:
        raise ZeroPercentage(f"percentages must be > 0, got ({sample_pct}, {population_pct})")
    return abs(sample_pct - population_pct) / min(sample_pct, population_pct) * 100.0
