"""End-to-end run: call records -> filters -> per-person indexes -> group report."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import baselines, ingest
from .consistency import IndexTable, check_consistency
from .errors import DegenerateGroups, IsolatedGroup, SegregationError
from .indexes import DEFAULT_BINS, aggregate_group, compute_batch
from .model import GroupReport, GroupSpace, IndexRecord, InteractionGraph

log = logging.getLogger(__name__)


class EmptyAfterFilter(SegregationError):
    def __init__(self, message, filters: dict):
        super().__init__(message)
        self.filters = filters


@dataclass(frozen=True)
class RunOptions:
    feature: str
    min_connections: int = ingest.DEFAULT_MIN_CONNECTIONS
    unique_ties: bool = False
    alpha_source: str = "sample"
    single_pass: bool = False
    bins: int = DEFAULT_BINS
    reference_year: int = ingest.DEFAULT_REFERENCE_YEAR
    census_path: str | None = None

    def __post_init__(self):
        if self.alpha_source not in ("sample", "census"):
            raise ValueError(f"alpha_source must be 'sample' or 'census', got {self.alpha_source!r}")
        if self.alpha_source == "census" and not self.census_path:
            raise ValueError("alpha_source 'census' needs a census file")
        if self.min_connections < 1:
            raise ValueError("min_connections must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


@dataclass
class RunReport:
    meta: dict
    groups: list[GroupReport]
    consistency: dict | None
    filters: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        alpha = dict(zip(self.meta["labels"], self.meta["alpha"]))
        return {
            "meta": self.meta,
            "groups": [
                {
                    "label": str(g.group),
                    "n": g.member_count,
                    "alpha": alpha.get(str(g.group)),
                    "mean_isi": g.mean_isi,
                    "mean_iii": g.mean_iii,
                    "mean_obi": g.mean_obi,
                    "fsi": g.fsi,
                    "hi": g.hi,
                    "histogram": list(g.obi_histogram),
                    "bin_edges": list(g.bin_edges),
                }
                for g in self.groups
            ],
            "consistency": self.consistency,
            "filters": self.filters,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        groups = [
            GroupReport(
                g["label"], g["n"], g["mean_isi"], g["mean_iii"], g["mean_obi"],
                tuple(g["histogram"]), tuple(g.get("bin_edges", ())), g["fsi"], g["hi"],
            )
            for g in d["groups"]
        ]
        return cls(d["meta"], groups, d["consistency"], d["filters"], d.get("timing", {}))

    def to_json(self, timing: bool = True) -> str:
        d = self.to_dict()
        if not timing:
            d.pop("timing")
        return json.dumps(d, indent=2, ensure_ascii=False) + "\n"


def report_schema() -> dict:
    return json.loads(resources.files("obiseg").joinpath("report_schema.json").read_text())


def validate_report(d: dict) -> None:
    jsonschema.validate(d, report_schema())


@dataclass
class RunResult:
    report: RunReport
    records: list[IndexRecord]
    graph: InteractionGraph
    group_space: GroupSpace


def _group_space(opts: RunOptions, labels) -> GroupSpace:
    if opts.alpha_source == "census":
        census = ingest.read_census(opts.census_path)
        return ingest.census_group_space(census, opts.feature)
    return ingest.sample_group_space(labels, opts.feature)


def run_compute(cdr, attributes, opts: RunOptions) -> RunResult:
    """Parse, filter and score every individual; aggregate per group.

    ``cdr`` and ``attributes`` are paths/file objects, or an already built
    :class:`InteractionGraph` and attribute DataFrame.
    """
    t0 = time.perf_counter()
    timing = {}
    if isinstance(cdr, InteractionGraph):
        graph, parse = cdr, None
    else:
        graph, parse = ingest.load_cdr(cdr)
    timing["parse_s"] = time.perf_counter() - t0
    log.info("parsed %s", graph)
    attrs = attributes if not _is_source(attributes) else ingest.read_attributes(attributes)
    labels = ingest.feature_labels(attrs, opts.feature, opts.reference_year)
    gs = _group_space(opts, labels)

    t1 = time.perf_counter()
    node_labels = ingest.node_labels(graph, labels)
    known = np.array([lab is not None for lab in node_labels], dtype=bool)
    filtered, fstats = ingest.filter_min_connections(
        graph,
        opts.min_connections,
        require_known_features=True,
        known=known,
        single_pass=opts.single_pass,
    )
    filters = fstats.to_dict()
    timing["filter_s"] = time.perf_counter() - t1
    log.info(
        "filters: stage 1 dropped %d, stage 2 dropped %d, %d iterations, %d nodes left",
        fstats.stage1_dropped, fstats.stage2_dropped, fstats.iterations, fstats.nodes_after,
    )
    if filtered.n_nodes == 0:
        raise EmptyAfterFilter("no individuals left after filtering", filters)

    t2 = time.perf_counter()
    labs = ingest.node_labels(filtered, labels)
    codes = ingest.label_codes(labs, gs)
    counts = ingest.contact_counts(filtered, codes, gs.n, opts.unique_ties)
    scored = (codes >= 0) & (counts.sum(axis=1) > 0)
    if not scored.any():
        raise EmptyAfterFilter("no individual with a known group has known contacts", filters)
    isi, iii, obi = compute_batch(counts[scored], codes[scored], gs)
    ids = filtered.nodes[scored].tolist()
    groups = [gs.labels[c] for c in codes[scored].tolist()]
    records = [
        IndexRecord(i, g, a, b, c)
        for i, g, a, b, c in zip(ids, groups, isi.tolist(), iii.tolist(), obi.tolist())
    ]
    timing["indexes_s"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    by_group = {lab: [] for lab in gs.labels}
    for r in records:
        by_group[r.group].append(r)
    fsi_hi = _baselines(filtered, codes, gs, weighted=not opts.unique_ties)
    reports = []
    for lab in gs.labels:
        rep = aggregate_group(by_group[lab], opts.bins, group=lab)
        fsi, hi = fsi_hi.get(lab, (None, None))
        reports.append(
            GroupReport(rep.group, rep.member_count, rep.mean_isi, rep.mean_iii, rep.mean_obi,
                        rep.obi_histogram, rep.bin_edges, fsi, hi)
        )
    consistency = _consistency(reports)
    timing["aggregate_s"] = time.perf_counter() - t3
    timing["total_s"] = time.perf_counter() - t0

    meta = {
        "feature": opts.feature,
        "labels": [str(x) for x in gs.labels],
        "alpha": gs.alpha.tolist(),
        "alpha_source": opts.alpha_source,
        "min_connections": opts.min_connections,
        "unique_ties": opts.unique_ties,
        "single_pass": opts.single_pass,
        "bins": opts.bins,
        "reference_year": opts.reference_year,
        "reduction": "one-vs-rest",
        "graph": {
            "nodes": graph.n_nodes,
            "edges": graph.n_edges,
            "calls": graph.total_weight,
            "nodes_after_filter": filtered.n_nodes,
            "edges_after_filter": filtered.n_edges,
            "individuals": len(records),
        },
    }
    if parse is not None:
        meta["parse"] = {"rows": parse.rows, "malformed": parse.malformed, "self_loops": parse.self_loops}
    report = RunReport(meta, reports, consistency, filters, timing)
    return RunResult(report, records, filtered, gs)


def _is_source(x) -> bool:
    return isinstance(x, (str, Path)) or hasattr(x, "read")


def _baselines(graph: InteractionGraph, codes: np.ndarray, gs: GroupSpace, weighted: bool) -> dict:
    """One-vs-rest FSI and HI per group over the subgraph of labelled individuals."""
    keep = codes >= 0
    sub = graph.subgraph(keep)
    out = {}
    if sub.n_edges == 0:
        return out
    sub_labels = [gs.labels[c] for c in codes[keep].tolist()]
    m = baselines.build_mixing_matrix(sub, sub_labels, groups=gs.labels, weighted=weighted)
    for lab in gs.labels:
        try:
            fsi = baselines.freeman_index(m, lab)
        except (DegenerateGroups, ZeroDivisionError) as exc:
            log.warning("FSI undefined for %s: %s", lab, exc)
            fsi = None
        try:
            hi = baselines.coleman_hi(m, lab)
        except (DegenerateGroups, IsolatedGroup, ZeroDivisionError) as exc:
            log.warning("HI undefined for %s: %s", lab, exc)
            hi = None
        out[lab] = (fsi, hi)
    return out


def _consistency(reports: list[GroupReport]) -> dict | None:
    rows = [r for r in reports if None not in (r.fsi, r.hi, r.mean_obi)]
    if len(rows) < 2:
        return None
    table = IndexTable(
        ("fsi", "hi", "obi"),
        tuple(str(r.group) for r in rows),
        [[r.fsi for r in rows], [r.hi for r in rows], [r.mean_obi for r in rows]],
    )
    return check_consistency(table).to_dict()


def write_outputs(result: RunResult, out_dir) -> dict[str, Path]:
    """Write ``report.json``, ``records.csv`` and ``histograms.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "records": out / "records.csv",
        "histograms": out / "histograms.csv",
    }
    paths["report"].write_text(result.report.to_json(), encoding="utf-8")
    with open(paths["records"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "group", "isi", "iii", "obi"])
        for r in result.records:
            w.writerow([r.id, r.group, f"{r.isi:.4f}", f"{r.iii:.4f}", f"{r.obi:.4f}"])
    with open(paths["histograms"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["group", "bin_lo", "bin_hi", "mass"])
        for g in result.report.groups:
            edges = g.bin_edges
            for k, mass in enumerate(g.obi_histogram):
                w.writerow([g.group, f"{edges[k]:.4f}", f"{edges[k + 1]:.4f}", f"{mass:.4f}"])
    return paths
