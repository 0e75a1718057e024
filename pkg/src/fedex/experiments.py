"""Seed sweeps over (mode, routing objective) pairs.

Each seed gets its own world: topology, data, shards and a centralized
baseline. CARD routes are planned once per (seed, objective) and shared
by both modes. Every tuple is deterministic and independent of the others,
so the summary does not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fedex import analysis
from fedex.assignment import CardResult, Objective, card
from fedex.config import ExperimentSpec, FileTopology, IdxData, render_config
from fedex.data import ClientShard, Dataset, generate_synthetic, load_idx, pooled, split_dirichlet, split_iid, train_test_split
from fedex.engine import SimConfig, Trace, simulate
from fedex.routes import Tour
from fedex.tasks import QuadraticTask, Task, loss, make_task
from fedex.topology import Topology, build_topology, generate_grid_network

log = logging.getLogger(__name__)

BASELINE_COLUMNS = ("slot", "global_loss", "eval_accuracy")
SUMMARY_COLUMNS = (
    "mode",
    "objective",
    "seed",
    "slots_to_target",
    "target_accuracy",
    "final_loss",
    "final_accuracy",
    "sum_r_delta2",
    "max_delta",
)


@dataclass
class World:
    seed: int
    topology: Topology
    task: Task
    shards: list[ClientShard]
    test: Dataset
    f_star: float | None = None


@dataclass
class Baseline:
    best_accuracy: float
    rows: list[dict]


@dataclass(frozen=True)
class SummaryRecord:
    mode: str
    objective: str
    seed: int
    slots_to_target: int | None
    target_accuracy: float | None
    final_loss: float
    final_accuracy: float
    sum_r_delta2: int
    max_delta: int

    def to_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FailureRecord:
    mode: str
    objective: str
    seed: int
    error: str
    message: str


@dataclass
class SweepResult:
    records: list[SummaryRecord] = field(default_factory=list)
    failures: list[FailureRecord] = field(default_factory=list)

    def mean_slots(self, horizon: int) -> dict[tuple[str, str], float]:
        return mean_slots_to_target(self.records, horizon)


# --- building blocks ---------------------------------------------------------------


def build_topology_for(spec: ExperimentSpec, seed: int) -> Topology:
    src = spec.topology
    if isinstance(src, FileTopology):
        return Topology.load(src.file)
    gen_seed = seed if src.seed is None else src.seed
    server, clients = generate_grid_network(
        src.num_blocks, src.clients_per_block, src.block_width, src.block_height, gen_seed
    )
    return build_topology(server, clients, src.speed)


def build_world(spec: ExperimentSpec, seed: int) -> World:
    topo = build_topology_for(spec, seed)
    data = spec.task.data
    if isinstance(data, IdxData):
        ds = load_idx(data.images, data.labels)
    else:
        ds = generate_synthetic(data.generator, data.features, data.classes, data.samples, data.noise, seed)
    train, test = train_test_split(ds, spec.task.test_samples / len(ds), seed)
    n, per = topo.num_clients, spec.split.samples_per_client
    if spec.split.kind == "iid":
        shards = split_iid(train, n, per, seed)
    else:
        shards = split_dirichlet(train, n, spec.split.alpha, per, seed)
    task = make_task(spec.task.kind, ds.num_features, ds.num_classes, spec.task.hidden, spec.task.l2)
    f_star = QuadraticTask.optimum(shards)[1] if isinstance(task, QuadraticTask) else None
    return World(seed, topo, task, shards, test, f_star)


def centralized_baseline(world: World, eta: float, steps: int, batch_size: int, every: int) -> Baseline:
    """Single-worker SGD on the pooled shards, evaluated every ``every`` steps."""
    task = world.task
    data = pooled(world.shards, world.test.num_classes)
    rng = np.random.default_rng(world.seed)
    x = task.init_params(np.random.default_rng(world.seed))
    b = min(batch_size, len(data))
    best = float("nan") if not task.classifier else 0.0
    rows = []
    for s in range(steps):
        idx = rng.choice(len(data), b, replace=False)
        x = x - eta * task.grad(x, data.X[idx], data.y[idx])
        if s % every == 0 or s == steps - 1:
            acc = task.accuracy(x, world.test)
            if task.classifier:
                best = max(best, acc)
            rows.append({"slot": s + 1, "global_loss": loss(task, x, world.shards), "eval_accuracy": acc})
    return Baseline(best, rows)


def plan_routes(spec: ExperimentSpec, world: World, objective: Objective) -> CardResult:
    return card(world.topology, spec.k, Objective(objective), sweeps=spec.card_sweeps, seed=world.seed)


def sim_config(spec: ExperimentSpec, world: World, mode: str, tours: Sequence[Tour], **kw) -> SimConfig:
    return SimConfig(
        mode, spec.eta, spec.horizon, spec.batch_size, world.task, world.shards, world.topology, tours, seed=world.seed, **kw
    )


def summarize(
    trace: Trace, world: World, mode: str, objective: str, target: float | None
) -> SummaryRecord:
    task = world.task
    x_T = trace.x[-1]
    reached = None
    if target is not None and task.classifier:
        reached = analysis.slots_to_target(trace, task, world.test, target)
    rtts = [t.rtt_slots for t in trace.tours]
    return SummaryRecord(
        mode=mode,
        objective=str(Objective(objective).value),
        seed=world.seed,
        slots_to_target=reached,
        target_accuracy=target,
        final_loss=loss(task, x_T, world.shards),
        final_accuracy=task.accuracy(x_T, world.test),
        sum_r_delta2=int(sum(len(t.order) * d * d for t, d in zip(trace.tours, rtts))),
        max_delta=max(rtts),
    )


def run_one(
    spec: ExperimentSpec, world: World, mode: str, objective: str, tours: Sequence[Tour], target: float | None
) -> tuple[SummaryRecord, list[dict]]:
    """Simulate one tuple; returns its summary and metric rows."""
    trace = simulate(sim_config(spec, world, mode, tours))
    rows = analysis.metrics_rows(trace, world.task, world.shards, world.test, every=spec.eval_every)
    return summarize(trace, world, mode, objective, target), rows


def mean_slots_to_target(records: Iterable[SummaryRecord], horizon: int) -> dict[tuple[str, str], float]:
    """Mean slots-to-target per (mode, objective); a run that never hits the target counts as T + 1."""
    acc: dict[tuple[str, str], list[int]] = {}
    for r in records:
        v = r.slots_to_target if r.slots_to_target is not None else horizon + 1
        acc.setdefault((r.mode, r.objective), []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


# --- files ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def csv_text(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
    return buf.getvalue()


def write_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    _atomic_write(Path(path), csv_text(rows, columns))


def write_json(path: str | Path, doc) -> None:
    _atomic_write(Path(path), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_name(mode: str, objective: str, seed: int) -> str:
    return f"{mode}_{Objective(objective).value}_seed{seed}"


# --- sweep ----------------------------------------------------------------------------


def tuples(spec: ExperimentSpec) -> list[tuple[str, str, int]]:
    """Canonical (mode, objective, seed) order."""
    return [(m, Objective(o).value, s) for s, m, o in product(spec.seeds, spec.modes, spec.objectives)]


def _fail(t: tuple[str, str, int], exc: BaseException) -> FailureRecord:
    log.warning("run %s failed: %s", run_name(*t), exc)
    return FailureRecord(t[0], t[1], t[2], type(exc).__name__, str(exc))


def _run_seed(spec: ExperimentSpec, seed: int, todo: list[tuple[str, str, int]], out: Path | None):
    records, failures = [], []
    try:
        world = build_world(spec, seed)
        base = centralized_baseline(world, spec.eta, spec.horizon, spec.batch_size, spec.eval_every)
    except Exception as exc:
        return [], [_fail(t, exc) for t in todo]
    target = spec.target_fraction * base.best_accuracy if world.task.classifier else None
    if out is not None:
        world.topology.save(out / f"topology_seed{seed}.json")
        write_csv(out / "runs" / f"baseline_seed{seed}.csv", base.rows, BASELINE_COLUMNS)
    routes: dict[str, CardResult | Exception] = {}
    for t in todo:
        mode, obj, _ = t
        try:
            if obj not in routes:
                try:
                    routes[obj] = plan_routes(spec, world, obj)
                except Exception as exc:
                    routes[obj] = exc
                if out is not None and isinstance(routes[obj], CardResult):
                    res = routes[obj]
                    doc = {
                        "assignment": res.assignment.to_dict(),
                        "tours": [tr.to_dict() for tr in res.tours],
                        "cost": res.cost,
                    }
                    write_json(out / "routes" / f"{obj}_seed{seed}.json", doc)
            plan = routes[obj]
            if isinstance(plan, Exception):
                raise plan
            rec, rows = run_one(spec, world, mode, obj, plan.tours, target)
            if out is not None:
                write_csv(out / "runs" / f"{run_name(*t)}.csv", rows, analysis.METRIC_COLUMNS)
            records.append(rec)
        except Exception as exc:
            failures.append(_fail(t, exc))
    return records, failures


def sweep(
    spec: ExperimentSpec,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    order: Sequence[tuple[str, str, int]] | None = None,
) -> SweepResult:
    """Run every (mode, objective, seed) tuple; failures are recorded, not raised.

    ``order`` only changes execution order (it must be a permutation of
    ``tuples(spec)``); results are always reported in canonical order.
    With ``out_dir`` (default ``spec.out_dir``) each run writes its metrics
    CSV atomically, plus routes, baselines, ``summary.csv``,
    ``failures.json`` and the resolved config.
    """
    canon = tuples(spec)
    todo = list(order) if order is not None else canon
    if sorted(todo) != sorted(canon):
        raise ValueError("order must be a permutation of the spec's tuples")
    out = Path(out_dir if out_dir is not None else spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "resolved_config.json", render_config(spec))

    by_seed: dict[int, list[tuple[str, str, int]]] = {}
    for t in todo:
        by_seed.setdefault(t[2], []).append(t)
    if jobs > 1 and len(by_seed) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_run_seed, spec, s, ts, out) for s, ts in by_seed.items()]
            parts = [f.result() for f in futs]
    else:
        parts = [_run_seed(spec, s, ts, out) for s, ts in by_seed.items()]

    rank = {t: i for i, t in enumerate(canon)}
    key = lambda r: rank[(r.mode, r.objective, r.seed)]  # noqa: E731
    result = SweepResult(
        sorted((r for recs, _ in parts for r in recs), key=key),
        sorted((f for _, fails in parts for f in fails), key=key),
    )
    write_csv(out / "summary.csv", [r.to_row() for r in result.records], SUMMARY_COLUMNS)
    write_json(out / "failures.json", [asdict(f) for f in result.failures])
    return result
