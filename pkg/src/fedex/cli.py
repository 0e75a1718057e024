"""Command line: plan, simulate, sweep, report.

Failures print a single JSON object to stderr and exit nonzero
(2 for bad input, 1 for anything that fails while running).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from fedex import analysis
from fedex.assignment import Objective, card
from fedex.charts import render_chart
from fedex.config import ConfigError, parse_config
from fedex.engine import Event, simulate
from fedex.experiments import (
    BASELINE_COLUMNS,
    SummaryRecord,
    build_world,
    centralized_baseline,
    mean_slots_to_target,
    plan_routes,
    sim_config,
    summarize,
    sweep,
    write_csv,
    write_json,
)
from fedex.topology import Topology

log = logging.getLogger("fedex")

EVENT_COLUMNS = ("slot", "transporter", "event", "client", "clu_norm")
DEFAULT_ROUTING = {"sync": Objective.MINMAX, "async": Objective.SWS}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def cmd_plan(args) -> int:
    topo = Topology.load(args.topology)
    res = card(topo, args.k, Objective(args.objective), sweeps=args.sweeps, seed=args.seed)
    doc = {
        "objective": Objective(args.objective).value,
        "k": args.k,
        "seed": args.seed,
        "assignment": res.assignment.to_dict(),
        "tours": [t.to_dict() for t in res.tours],
        "cost": res.cost,
    }
    if args.out:
        write_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=2))
    rtts = [t.rtt_slots for t in res.tours]
    sizes = [len(t.order) for t in res.tours]
    print(
        f"objective={doc['objective']} cost={res.cost:g} rtts={rtts} sizes={sizes} "
        f"max_rtt={max(rtts)} sum_r_delta2={sum(r * d * d for r, d in zip(sizes, rtts))}"
    )
    return 0


def cmd_simulate(args) -> int:
    spec = parse_config(args.config)
    seed = spec.seeds[0] if args.seed is None else args.seed
    world = build_world(spec, seed)
    objective = Objective(args.objective) if args.objective else DEFAULT_ROUTING[args.mode]
    tours = plan_routes(spec, world, objective).tours
    trace = simulate(sim_config(spec, world, args.mode, tours, record_events=bool(args.events)))
    rows = analysis.metrics_rows(trace, world.task, world.shards, world.test, every=spec.eval_every)
    write_csv(args.out, rows, analysis.METRIC_COLUMNS)
    if args.events:
        write_csv(args.events, [_event_row(e) for e in trace.events], EVENT_COLUMNS)
    target = None
    if world.task.classifier:
        base = centralized_baseline(world, spec.eta, spec.horizon, spec.batch_size, spec.eval_every)
        target = spec.target_fraction * base.best_accuracy
    rec = summarize(trace, world, args.mode, objective.value, target)
    _emit({"status": "ok", "out": str(args.out), **rec.to_row()})
    return 0


def _event_row(e: Event) -> dict:
    return {"slot": e.slot, "transporter": e.transporter, "event": e.event, "client": e.client, "clu_norm": e.clu_norm}


def cmd_sweep(args) -> int:
    spec = parse_config(args.config)
    if args.seed is not None:
        spec = spec.model_copy(update={"seeds": [args.seed]})
    out = Path(args.out or spec.out_dir)
    res = sweep(spec, out, jobs=args.jobs)
    means = mean_slots_to_target(res.records, spec.horizon)
    _emit(
        {
            "status": "ok" if not res.failures else "partial",
            "out": str(out),
            "runs": len(res.records),
            "failures": len(res.failures),
            "mean_slots_to_target": {f"{m}/{o}": v for (m, o), v in sorted(means.items())},
        }
    )
    return 0 if not res.failures else 1


def _read_summary(path: Path) -> list[SummaryRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                SummaryRecord(
                    row["mode"],
                    row["objective"],
                    int(row["seed"]),
                    int(row["slots_to_target"]) if row["slots_to_target"] else None,
                    float(row["target_accuracy"]) if row["target_accuracy"] else None,
                    float(row["final_loss"]),
                    float(row["final_accuracy"]),
                    int(row["sum_r_delta2"]),
                    int(row["max_delta"]),
                )
            )
    return out


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary = run_dir / "summary.csv"
    if not summary.is_file():
        raise FileNotFoundError(f"{summary} not found; run the sweep first")
    horizon = json.loads((run_dir / "resolved_config.json").read_text())["horizon"]
    records = _read_summary(summary)
    seeds = sorted({r.seed for r in records})
    seed = args.seed if args.seed is not None else (seeds[0] if seeds else None)
    charts = []
    if seed is not None:
        runs = sorted((run_dir / "runs").glob(f"*_seed{seed}.csv"))
        if args.metric not in BASELINE_COLUMNS:
            runs = [p for p in runs if not p.name.startswith("baseline_")]
        if runs:
            out = Path(args.out) if args.out else run_dir / f"{args.metric}_seed{seed}.svg"
            charts.append(str(render_chart(runs, args.metric, out)))
    means = mean_slots_to_target(records, horizon)
    _emit(
        {
            "status": "ok",
            "runs": len(records),
            "seeds": seeds,
            "mean_slots_to_target": {f"{m}/{o}": v for (m, o), v in sorted(means.items())},
            "mean_final_accuracy": _mean_by(records, "final_accuracy"),
            "charts": charts,
        }
    )
    return 0


def _mean_by(records, attr: str) -> dict[str, float]:
    acc: dict[str, list[float]] = {}
    for r in records:
        acc.setdefault(f"{r.mode}/{r.objective}", []).append(getattr(r, attr))
    return {k: sum(v) / len(v) for k, v in sorted(acc.items())}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedex", description="Transporter-assisted federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pl = sub.add_parser("plan", help="assign clients to transporters and route them")
    pl.add_argument("--topology", required=True, help="topology JSON {server, clients, speed}")
    pl.add_argument("--k", type=int, default=4)
    pl.add_argument("--objective", choices=[o.value for o in Objective], default="sws")
    pl.add_argument("--sweeps", type=int, default=200)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", help="write the plan JSON here instead of stdout")
    pl.set_defaults(func=cmd_plan)

    sm = sub.add_parser("simulate", help="run one training simulation")
    sm.add_argument("--config", required=True)
    sm.add_argument("--mode", choices=["sync", "async"], required=True)
    sm.add_argument("--objective", choices=[o.value for o in Objective], help="routing (default minmax for sync, sws for async)")
    sm.add_argument("--seed", type=int, help="defaults to the first seed in the config")
    sm.add_argument("--out", required=True, help="metrics CSV")
    sm.add_argument("--events", help="optional event log CSV")
    sm.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="run all mode x objective x seed tuples")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", help="output directory (default: out_dir from the config)")
    sw.add_argument("--seed", type=int, help="run only this seed")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="aggregate a sweep directory and chart one seed")
    rp.add_argument("run_dir")
    rp.add_argument("--metric", default="eval_accuracy", choices=analysis.METRIC_COLUMNS[1:])
    rp.add_argument("--seed", type=int)
    rp.add_argument("--out", help="SVG path")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"status": "error", "error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        doc = {"status": "error", "error": "ConfigError", "message": str(exc), **exc.to_dict()}
        print(json.dumps(doc), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
