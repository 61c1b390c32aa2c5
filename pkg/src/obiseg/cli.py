"""Command-line front end.

Exit codes: 0 success, 1 check failed (``example``), 2 bad arguments,
3 unreadable or invalid input, 4 nothing left after filtering.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import baselines, ingest, pipeline, synth
from .consistency import check_consistency, load_table
from .errors import InvalidAttribute, SegregationError
from .indexes import DEFAULT_BINS, isi_heatmap
from .model import GroupSpace

log = logging.getLogger("obiseg")

EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_EMPTY = 4

EXAMPLE_TOLERANCE = 0.005


class UsageError(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cdr", required=True, help="call records CSV (caller_id,callee_id,timestamp,cell)")
    p.add_argument("--attributes", required=True, help="attributes CSV (id,gender,birth_year,language,county)")
    p.add_argument("--feature", required=True, help="gender, age_group, language, county or any attribute column")
    p.add_argument("--min-connections", type=int, default=ingest.DEFAULT_MIN_CONNECTIONS)
    p.add_argument("--unique-ties", action="store_true", help="count distinct partners instead of calls")
    p.add_argument("--alpha-source", choices=["sample", "census"], default="sample")
    p.add_argument("--census", help="census CSV (feature,value,share); needed for --alpha-source census")
    p.add_argument("--single-pass", action="store_true", help="apply each filter stage once instead of to fixpoint")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--reference-year", type=int, default=ingest.DEFAULT_REFERENCE_YEAR)


def _options(args) -> pipeline.RunOptions:
    try:
        return pipeline.RunOptions(
            feature=args.feature,
            min_connections=args.min_connections,
            unique_ties=args.unique_ties,
            alpha_source=args.alpha_source,
            single_pass=args.single_pass,
            bins=args.bins,
            reference_year=args.reference_year,
            census_path=args.census,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _run(args) -> pipeline.RunResult:
    opts = _options(args)
    for path in filter(None, (args.cdr, args.attributes, args.census)):
        if not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
    try:
        attrs = ingest.read_attributes(args.attributes)
    except SegregationError as exc:
        raise _ParseFailure(str(exc)) from None
    if args.feature != "age_group" and args.feature not in attrs.columns:
        raise UsageError(f"unknown feature {args.feature!r}; attribute columns are {list(attrs.columns)}")
    try:
        return pipeline.run_compute(args.cdr, attrs, opts)
    except pipeline.EmptyAfterFilter:
        raise
    except SegregationError as exc:
        raise _ParseFailure(str(exc)) from None


class _ParseFailure(Exception):
    pass


def cmd_compute(args) -> int:
    result = _run(args)
    paths = pipeline.write_outputs(result, args.out_dir)
    for name, path in paths.items():
        log.info("wrote %s: %s", name, path)
    print(result.report.to_json(timing=False) if args.print else str(paths["report"]))
    return 0


def cmd_baselines(args) -> int:
    result = _run(args)
    units = _read_units(args.units) if args.units else None
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["group", "n", "fsi", "hi"] + (["d"] if units else []))
        for g in result.report.groups:
            row = [g.group, g.member_count, _fmt(g.fsi), _fmt(g.hi)]
            if units:
                row.append(_fmt(_unit_d(units, str(g.group))))
            w.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def _read_units(path) -> dict[str, list[float]]:
    """``unit,<group1>,<group2>,...`` counts per unit."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2 or len(rows[0]) < 3:
        raise _ParseFailure("units file needs a header unit,<group>,<group>[,...] and rows")
    header = [h.strip() for h in rows[0]]
    cols = {h: [] for h in header[1:]}
    for row in rows[1:]:
        if not row:
            continue
        for h, cell in zip(header[1:], row[1:]):
            try:
                cols[h].append(float(cell))
            except ValueError:
                raise _ParseFailure(f"non-numeric count {cell!r} in units file") from None
    return cols


def _unit_d(units: dict[str, list[float]], group: str):
    if group not in units:
        return None
    g = units[group]
    rest = np.sum([v for k, v in units.items() if k != group], axis=0)
    try:
        return baselines.dissimilarity_index(
            baselines.UnitPopulations(tuple(range(len(g))), tuple(g), tuple(rest.tolist()))
        )
    except SegregationError as exc:
        log.warning("D undefined for %s: %s", group, exc)
        return None


def cmd_consistency(args) -> int:
    if not args.reports and not args.matrix:
        raise UsageError("give report JSON files or --matrix")
    sources = list(args.reports) + ([args.matrix] if args.matrix else [])
    verdicts = {}
    for src in sources:
        if not Path(src).is_file():
            raise UsageError(f"no such file: {src}")
        try:
            table = load_table(src)
        except (SegregationError, KeyError, json.JSONDecodeError) as exc:
            raise _ParseFailure(f"{src}: {exc}") from None
        verdict = check_consistency(table, args.tie_tolerance)
        verdicts[str(src)] = verdict.to_dict()
        print(f"{src}\n{verdict.render()}")
    if args.json:
        Path(args.json).write_text(json.dumps(verdicts, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return 0


VALIDATE_FLAG_PCT = 20.0


def cmd_validate(args) -> int:
    for path in (args.attributes, args.census):
        if not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
    try:
        attrs = ingest.read_attributes(args.attributes)
        census = ingest.read_census(args.census)
    except SegregationError as exc:
        raise _ParseFailure(str(exc)) from None
    def has_values(f):
        col = "birth_year" if f == "age_group" else f
        return col in attrs.columns and attrs[col].notna().any()

    features = args.feature or [f for f in ingest.FEATURE_ORDER if has_values(f)]
    missing = [f for f in features if f not in census]
    if missing:
        raise UsageError(f"census has no rows for feature(s) {missing}")
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["feature", "value", "sample_pct", "population_pct", "difference_pct", "flagged"])
        for feature in features:
            for row in validation_rows(attrs, census, feature, args.reference_year):
                w.writerow([
                    row["feature"], row["value"], f"{row['sample_pct']:.4f}", f"{row['population_pct']:.4f}",
                    "inf" if row["difference_pct"] == float("inf") else f"{row['difference_pct']:.4f}",
                    "yes" if row["flagged"] else "no",
                ])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def validation_rows(attrs, census, feature: str, reference_year: int = ingest.DEFAULT_REFERENCE_YEAR) -> list[dict]:
    """Sample vs census share per value, with the relative difference in percent."""
    try:
        labels = ingest.feature_labels(attrs, feature, reference_year)
    except InvalidAttribute as exc:
        raise UsageError(str(exc)) from None
    counts = labels.dropna().value_counts()
    total = counts.sum()
    shares = census[feature]
    values = ingest._ordered(set(shares) | set(counts.index), feature)
    rows = []
    for v in values:
        sample_pct = 100.0 * counts.get(v, 0) / total if total else 0.0
        pop_pct = 100.0 * shares.get(v, 0.0)
        if sample_pct > 0 and pop_pct > 0:
            diff = ingest.census_difference(sample_pct, pop_pct)
        else:
            diff = float("inf")
        rows.append({
            "feature": feature,
            "value": v,
            "sample_pct": sample_pct,
            "population_pct": pop_pct,
            "difference_pct": diff,
            "flagged": diff > VALIDATE_FLAG_PCT,
        })
    return rows


def cmd_heatmap(args) -> int:
    labels = args.labels or ["p1", "p2", "p3"]
    if len(labels) != 3:
        raise UsageError("--labels needs exactly three names")
    try:
        gs = GroupSpace(tuple(labels), np.array(args.alpha))
        grid = isi_heatmap(gs, args.step)
    except (SegregationError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow([f"p_{lab}" if args.labels else lab for lab in labels] + ["isi"])
        for p, v in grid.cells:
            w.writerow([f"{x:.4f}" for x in p] + [f"{v:.4f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_synth(args) -> int:
    try:
        config = synth.SynthConfig(
            seed=args.seed,
            group_sizes=tuple(args.group_sizes),
            within_prob=tuple(args.within_prob),
            mean_degree=args.mean_degree,
            calls_per_tie=args.calls_per_tie,
            feature=args.feature,
            labels=tuple(args.labels) if args.labels else None,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = synth.generate(config)
    paths = result.write(args.out_dir)
    log.info("synthetic graph: %s", result.graph)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 0


def run_example(out_dir) -> tuple[list[dict], pipeline.RunResult]:
    """Run the ten-person fixture end to end through CSV files and compare with the published table."""
    graph, attrs, expected = synth.fig6_fixture()
    paths = synth.write_fixture(out_dir, graph, attrs)
    opts = pipeline.RunOptions(feature="gender", min_connections=1)
    result = pipeline.run_compute(paths["cdr"], paths["attributes"], opts)
    pipeline.write_outputs(result, Path(out_dir) / "out")
    got = {r.id: r for r in result.records}
    rows = []
    for exp in expected:
        rec = got.get(exp.id)
        for name in ("isi", "iii", "obi"):
            want = getattr(exp, name)
            have = getattr(rec, name) if rec else float("nan")
            rows.append({
                "id": exp.id,
                "index": name,
                "published": want,
                "computed": have,
                "ok": abs(have - want) <= EXAMPLE_TOLERANCE,
            })
    return rows, result


def cmd_example(args) -> int:
    if args.out_dir:
        rows, _ = run_example(args.out_dir)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            rows, _ = run_example(tmp)
    print(f"{'id':<4} {'index':<5} {'published':>9} {'computed':>9}  match(+-{EXAMPLE_TOLERANCE})")
    for r in rows:
        print(f"{r['id']:<4} {r['index']:<5} {r['published']:>9.4f} {r['computed']:>9.4f}  {'ok' if r['ok'] else 'MISMATCH'}")
    bad = [r for r in rows if not r["ok"]]
    print(f"{len(rows) - len(bad)}/{len(rows)} values match")
    return 0 if not bad else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obiseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="per-person ISI/III/OBI and per-group report")
    _add_run_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--print", action="store_true", help="print the report JSON (without timing) to stdout")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("baselines", help="Freeman and Coleman indexes per group (+ dissimilarity)")
    _add_run_flags(p)
    p.add_argument("--units", help="CSV unit,<group>,<group>,... for the dissimilarity index")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("consistency", help="order consistency of FSI, HI and OBI")
    p.add_argument("reports", nargs="*", help="report.json files from 'compute'")
    p.add_argument("--matrix", help="CSV: feature,<index>,<index>,...")
    p.add_argument("--tie-tolerance", type=float, default=0.0)
    p.add_argument("--json", help="write verdicts as JSON here")
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("validate", help="compare attribute shares with census shares")
    p.add_argument("--attributes", required=True)
    p.add_argument("--census", required=True)
    p.add_argument("--feature", action="append")
    p.add_argument("--reference-year", type=int, default=ingest.DEFAULT_REFERENCE_YEAR)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("heatmap", help="ISI over the three-group simplex")
    p.add_argument("--alpha", type=float, nargs=3, required=True)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--labels", nargs=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("synth", help="generate a synthetic labelled call network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group-sizes", type=int, nargs="+", default=[600, 400])
    p.add_argument("--within-prob", type=float, nargs="+", default=[0.6, 0.4])
    p.add_argument("--mean-degree", type=float, default=20.0)
    p.add_argument("--calls-per-tie", type=float, default=1.0)
    p.add_argument("--feature", default="group")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("example", help="run the ten-person gender example and compare with the published values")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"obiseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _ParseFailure as exc:
        print(f"obiseg: invalid input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except pipeline.EmptyAfterFilter as exc:
        print(f"obiseg: {exc}", file=sys.stderr)
        print(json.dumps({"filters": exc.filters}), file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
