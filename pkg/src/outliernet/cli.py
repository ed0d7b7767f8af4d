"""Command-line front end: validate configs, run simulations, sweep parameters.

``run`` executes one scenario and writes ``nodes.csv`` plus ``summary.json``
into the output directory. ``sweep`` runs every (value, repeat) cell of a
sweep file, averages the repeats and writes one CSV with the series a plot
needs. ``validate`` checks a scenario and prints the normalized effective
config. Exit codes: 0 success, 2 configuration error (every violation is
listed), 3 broken run-time invariant (a bug, not a config problem).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import yaml

from .protocol import ProtocolError
from .scenario import Scenario, ScenarioError, SweepSpec
from .simnet import RunMetrics, SimulationError, run

SWEEP_CSV_SCHEMA = (
    "# outliernet-sweep-v1: parameter,value,series,algorithm,rating,repeats,"
    "avg_tx_J_per_node_per_interval,avg_rx_J_per_node_per_interval,"
    "min_J,avg_J,max_J,accuracy,points_sent_total"
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def default_out_dir() -> Path:
    return Path(os.environ.get("OUTLIERNET_OUT", "out"))


def _apply_overrides(sc: Scenario, args) -> Scenario:
    overrides = {
        "algorithm": args.algorithm,
        "rating": args.rating,
        "seed": args.seed,
        "w": args.w,
        "n": args.n,
        "k": args.k,
        "d": args.d,
        "p_drop": args.p_drop,
        "sink": args.sink,
    }
    return sc.with_overrides(**overrides)


def write_run_outputs(metrics: RunMetrics, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "nodes.csv").write_text(metrics.nodes_csv())
    (out_dir / "summary.json").write_text(metrics.summary_json())


def cmd_run(args) -> int:
    try:
        sc = _apply_overrides(Scenario.load(args.config), args)
        sc.ensure_valid()
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        metrics = run(sc, debug=args.debug)
    except (SimulationError, ProtocolError, AssertionError) as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    out_dir = Path(args.out) if args.out else default_out_dir() / sc.name
    write_run_outputs(metrics, out_dir)
    print(f"{sc.name}: accuracy={metrics.accuracy:.4f} "
          f"points={metrics.total_points_sent} out={out_dir}")
    return EXIT_OK


def _run_cell(payload):
    label, value, repeat, cell_dict = payload
    sc = Scenario.from_dict(cell_dict)
    metrics = run(sc)
    stats = metrics.energy_stats()
    return {
        "series": label,
        "value": value,
        "repeat": repeat,
        "algorithm": sc.algorithm,
        "rating": sc.rating,
        "avg_tx": metrics.per_interval("tx_J"),
        "avg_rx": metrics.per_interval("rx_J"),
        "min_J": stats["min_node_J"],
        "avg_J": stats["avg_node_J"],
        "max_J": stats["max_node_J"],
        "accuracy": metrics.accuracy,
        "points": metrics.total_points_sent,
    }


def _scenario_dict(sc: Scenario) -> dict:
    raw = asdict(sc)
    raw["topology"] = {
        "radio_range": raw.pop("radio_range"),
        "coords": [[nid, x, y] for nid, (x, y) in sorted(raw.pop("coords").items())],
    }
    raw["link_changes"] = [
        {"t": t, "a": a, "b": b, "change": change}
        for t, a, b, change in raw.pop("link_changes")
    ]
    if raw.get("weights"):
        raw["weights"] = list(raw["weights"])
    else:
        raw.pop("weights", None)
    return raw


def cmd_sweep(args) -> int:
    try:
        spec = SweepSpec.load(args.config)
        problems = spec.validate()
        if problems:
            for p in problems:
                print(f"config error: {p}", file=sys.stderr)
            return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cells = []
    for label, _ in spec.series:
        for value in spec.values:
            for repeat in range(spec.repeats):
                sc = spec.cell(label, value, repeat)
                cells.append((label, value, repeat, _scenario_dict(sc)))
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_cell, cells))
        else:
            results = [_run_cell(c) for c in cells]
    except (SimulationError, ProtocolError, AssertionError) as exc:
        print(f"invariant breach while sweeping: {exc}", file=sys.stderr)
        return EXIT_INVARIANT

    by_cell: dict = {}
    for r in results:
        by_cell.setdefault((r["series"], r["value"]), []).append(r)

    buf = io.StringIO()
    buf.write(SWEEP_CSV_SCHEMA + "\n")
    writer = csv.writer(buf)
    writer.writerow([
        "parameter", "value", "series", "algorithm", "rating", "repeats",
        "avg_tx_J_per_node_per_interval", "avg_rx_J_per_node_per_interval",
        "min_J", "avg_J", "max_J", "accuracy", "points_sent_total",
    ])
    for label, _ in spec.series:
        for value in spec.values:
            rows = sorted(by_cell[(label, value)], key=lambda r: r["repeat"])
            k = len(rows)
            mean = lambda key: sum(r[key] for r in rows) / k
            writer.writerow([
                spec.parameter, value, label, rows[0]["algorithm"], rows[0]["rating"], k,
                repr(mean("avg_tx")), repr(mean("avg_rx")),
                repr(mean("min_J")), repr(mean("avg_J")), repr(mean("max_J")),
                repr(mean("accuracy")), repr(mean("points")),
            ])
    out_dir = Path(args.out) if args.out else default_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{spec.name}.csv"
    out_path.write_text(buf.getvalue())
    print(f"{spec.name}: {len(cells)} cells -> {out_path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        sc = Scenario.load(args.config)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = sc.validate()
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_CONFIG
    print(yaml.safe_dump(_scenario_dict(sc), sort_keys=True).rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outliernet",
        description="In-network outlier detection simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweep=False):
        p.add_argument("--config", required=True, help="scenario (or sweep) YAML file")
        p.add_argument("--out", default=None, help="output directory (env OUTLIERNET_OUT)")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--algorithm", choices=("global", "semiglobal", "centralized"), default=None)
    p_run.add_argument("--rating", choices=("nn", "knn"), default=None)
    p_run.add_argument("--w", type=float, default=None)
    p_run.add_argument("--n", type=int, default=None)
    p_run.add_argument("--k", type=int, default=None)
    p_run.add_argument("--d", type=int, default=None)
    p_run.add_argument("--p-drop", dest="p_drop", type=float, default=None)
    p_run.add_argument("--sink", type=int, default=None)
    p_run.add_argument("--debug", action="store_true", help="assert protocol invariants per event")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(p_sweep, sweep=True)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel cells")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
