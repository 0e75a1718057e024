"""Acceptance suite: one group of tests per criterion, summarized at the end of the run.

Artifacts (trend sweep outputs, convergence-bound report) are written to
``acceptance_artifacts/`` next to this package, or to ``$FEDEX_ARTIFACTS``.
"""

import dataclasses
import itertools
import json
import logging
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fedex import analysis as A
from fedex.assignment import Objective, brute_force_assignment, card
from fedex.config import parse_config, spec_from_dict
from fedex.data import generate_synthetic, split_dirichlet, split_iid
from fedex.engine import SimConfig, run_aligned, run_async, run_literal, run_sync, simulate
from fedex.experiments import build_world, mean_slots_to_target, plan_routes, sim_config, sweep
from fedex.routes import Tour, brute_force_tsp, is_two_opt_stable, tour_rtt, two_opt
from fedex.tasks import LogisticTask, MLPTask, QuadraticTask, estimate_constants, loss, make_task
from fedex.topology import build_topology, grid_preset

ROOT = Path(__file__).resolve().parent.parent
ARTIFACTS = Path(os.environ.get("FEDEX_ARTIFACTS", ROOT / "acceptance_artifacts"))

crit = pytest.mark.criterion
SEEDS = range(5)


def random_topology(seed, n, size=20.0, speed=4.0):
    rng = np.random.default_rng(seed)
    return build_topology((0, 0), rng.uniform(0, size, (n, 2)).tolist(), speed)


# --- shared runs ---------------------------------------------------------------------------

MATRIX = list(itertools.product(["sync", "async"], [1, 2, 4], ["iid", "dirichlet"]))


@pytest.fixture(scope="module")
def equivalence_runs():
    """Literal and aligned traces for every matrix config on the 40-client preset."""
    topo = grid_preset(0)
    ds = generate_synthetic("blobs", 10, 10, 2400, 0.25, 0)
    task = make_task("logistic", 10, 10)
    shards = {"iid": split_iid(ds, 40, 60, 0), "dirichlet": split_dirichlet(ds, 40, 0.3, 60, 0)}
    routes = {}
    runs = []
    t0 = time.perf_counter()
    for mode, k, split in MATRIX:
        obj = Objective.MINMAX if mode == "sync" else Objective.SWS
        if (k, obj) not in routes:
            routes[(k, obj)] = card(topo, k, obj, sweeps=20, seed=k).tours
        tours = routes[(k, obj)]
        P = max(t.rtt_slots for t in tours)
        cfg = SimConfig(mode, 0.2, 4 * P + 3, 5, task, shards[split], topo, tours, seed=k)
        lit = run_literal(cfg)
        ali = run_aligned(dataclasses.replace(cfg, mode="aligned-" + mode))
        runs.append(((mode, k, split), lit, ali))
    return runs, time.perf_counter() - t0


def symmetric_instance():
    # Rotating the first pair by 90 degrees three times gives four congruent tours.
    base = [(6.0, 1.0), (9.0, 5.0)]
    pts = []
    for r in range(4):
        for x, y in base:
            for _ in range(r):
                x, y = -y, x
            pts.append((x, y))
    topo = build_topology((0, 0), pts, 3.0)
    tours = []
    for k in range(4):
        order = (2 * k + 1, 2 * k + 2)
        tours.append(Tour(k + 1, order, tour_rtt(topo, order)))
    return topo, tours


@pytest.fixture(scope="module")
def symmetric_runs():
    topo, tours = symmetric_instance()
    ds = generate_synthetic("blobs", 4, 3, 400, 0.3, 1)
    out = []
    for kind, split in (("logistic", "iid"), ("mlp", "dirichlet")):
        shards = split_iid(ds, 8, 40, 1) if split == "iid" else split_dirichlet(ds, 8, 0.2, 40, 1)
        task = make_task(kind, 4, 3, hidden=6)
        cfg = SimConfig("sync", 0.3, 60, 4, task, shards, topo, tours, seed=3)
        out.append((kind, run_sync(cfg), run_async(dataclasses.replace(cfg, mode="async"))))
    return tours, out


QUAD_SPEC = {
    "task": {
        "kind": "quadratic",
        "data": {"generator": "quadratic", "features": 5, "classes": 10, "samples": 3400, "noise": 0.25},
    },
    "batch_size": 10,
    "card_sweeps": 200,
}
QUAD_ETA_FRACTION = 0.02  # eta = 0.02 / L_hat


@pytest.fixture(scope="module")
def convex_runs():
    """Quadratic task on the preset: sync on MinMax routes, async on SWS routes, T = 200 max RTT."""
    spec = spec_from_dict(QUAD_SPEC)
    runs = []
    for seed in SEEDS:
        world = build_world(spec, seed)
        consts = estimate_constants(world.task, world.shards, probes=5, seed=seed, batch_size=spec.batch_size)
        eta = QUAD_ETA_FRACTION / consts.L
        for mode, obj in (("sync", Objective.MINMAX), ("async", Objective.SWS)):
            tours = plan_routes(spec, world, obj).tours
            T = 200 * max(t.rtt_slots for t in tours)
            cfg = sim_config(spec.model_copy(update={"eta": eta, "horizon": T}), world, mode, tours)
            runs.append({"seed": seed, "mode": mode, "world": world, "constants": consts, "trace": simulate(cfg)})
    return runs


@pytest.fixture(scope="module")
def trend_sweep():
    spec = parse_config(ROOT / "configs" / "grid40.json")
    out = ARTIFACTS / "trend_sweep"
    res = sweep(spec, out)
    return spec, res, mean_slots_to_target(res.records, spec.horizon)


# --- 1 ---------------------------------------------------------------------------------------


@crit(1, "aligned and literal executors give identical global sequences")
def test_c1_aligned_literal_equivalence(equivalence_runs, note):
    runs, elapsed = equivalence_runs
    assert len(runs) >= 12
    worst = 0.0
    for label, lit, ali in runs:
        assert lit.x.shape == ali.x.shape, label
        worst = max(worst, float(np.max(np.abs(lit.x - ali.x))))
        assert np.array_equal(lit.x, ali.x), f"{label}: max deviation {np.max(np.abs(lit.x - ali.x))}"
        assert np.array_equal(lit.phi, ali.phi), label
    note(f"{len(runs)} configs, max |diff| = {worst:g}, {elapsed:.1f}s")
    assert elapsed < 60


# --- 2 ---------------------------------------------------------------------------------------


@crit(2, "sync and async coincide when all RTTs are equal")
def test_c2_equal_rtts(symmetric_runs, note):
    tours, out = symmetric_runs
    assert len({t.rtt_slots for t in tours}) == 1
    for kind, s, a in out:
        assert np.array_equal(s.x, a.x), kind
        assert np.array_equal(s.phi, a.phi), kind
        assert np.array_equal(s.grads, a.grads), kind
        assert [u.slot for u in s.updates] == [u.slot for u in a.updates]
    note(f"K=4, RTT={tours[0].rtt_slots} each, {len(out)} tasks")


# --- 3 ---------------------------------------------------------------------------------------


def all_traces(equivalence_runs, symmetric_runs, convex_runs):
    runs, _ = equivalence_runs
    for label, lit, ali in runs:
        yield f"{label} literal", lit
        yield f"{label} aligned", ali
    for kind, s, a in symmetric_runs[1]:
        yield f"symmetric {kind} sync", s
        yield f"symmetric {kind} async", a
    for r in convex_runs:
        yield f"quadratic seed {r['seed']} {r['mode']}", r["trace"]


@crit(3, "staleness never exceeds twice the period after the first update")
def test_c3_staleness_bound(equivalence_runs, symmetric_runs, convex_runs, note):
    count, worst_ratio = 0, 0.0
    for label, tr in all_traces(equivalence_runs, symmetric_runs, convex_runs):
        assert A.staleness_violations(tr) == [], label
        table = A.staleness_table(tr)
        for i in range(tr.num_clients):
            k = tr.client_transporter[i]
            start = A.first_update_slot(tr, k + 1)
            worst_ratio = max(worst_ratio, table[start:, i].max() / (2 * tr.periods[k]))
        count += 1
    note(f"{count} traces, worst staleness / bound = {worst_ratio:.3f}")


# --- 4 ---------------------------------------------------------------------------------------


@crit(4, "real-sequence reconstruction, residual identity and observed gap bound")
def test_c4_reconstruction(equivalence_runs, symmetric_runs, convex_runs, note):
    worst_rec = worst_res = 0.0
    count = 0
    for label, tr in all_traces(equivalence_runs, symmetric_runs, convex_runs):
        rec = np.max(np.abs(A.reconstruct_real(tr) - tr.x))
        v = A.virtual_sequence(tr)
        res = np.max(np.abs((v - tr.x) - A.residual(tr)))
        gap = np.sqrt(((v - tr.x) ** 2).sum(axis=1))
        bound = A.observed_gap_bound(tr)
        assert rec <= 1e-9, f"{label}: reconstruction error {rec}"
        assert res <= 1e-9, f"{label}: residual identity error {res}"
        assert int(np.sum(gap > bound)) == 0, label
        assert A.check_conservation(tr) == [], label
        worst_rec, worst_res = max(worst_rec, rec), max(worst_res, res)
        count += 1
    note(f"{count} traces, reconstruction {worst_rec:.1e}, residual {worst_res:.1e}")


# --- 5 ---------------------------------------------------------------------------------------


@crit(5, "2-opt against brute-force TSP on 8-client instances")
def test_c5_two_opt_oracle(note):
    ratios = []
    t0 = time.perf_counter()
    for seed in range(25):
        topo = random_topology(500 + seed, 8)
        subset = range(1, 9)
        heur = two_opt(topo, subset, seed=seed)
        exact = brute_force_tsp(topo, subset)
        assert heur.rtt_slots >= exact.rtt_slots
        assert is_two_opt_stable(topo, heur.order)
        ratios.append(heur.rtt_slots / exact.rtt_slots)
    mean = float(np.mean(ratios))
    note(f"mean ratio {mean:.4f}, worst {max(ratios):.3f}, {time.perf_counter() - t0:.1f}s")
    assert mean <= 1.15


# --- 6 ---------------------------------------------------------------------------------------


@crit(6, "CARD reaches the exhaustive optimum on at least 90% of seeds")
@pytest.mark.slow
@pytest.mark.parametrize("objective", list(Objective), ids=lambda o: o.value)
def test_c6_card_oracle(objective, note):
    worst = 20
    for inst in range(10):
        topo = random_topology(1000 + inst, 8)
        best = brute_force_assignment(topo, 2, objective).cost
        hits = sum(card(topo, 2, objective, sweeps=200, seed=s).cost == best for s in range(20))
        worst = min(worst, hits)
        assert hits >= 18, f"instance {inst}: {hits}/20"
    note(f"{objective.value} worst instance {worst}/20")


# --- 7 ---------------------------------------------------------------------------------------


@crit(7, "sync and async reach f - f* <= 1e-3 on the quadratic task")
@pytest.mark.slow
def test_c7_convex_convergence(convex_runs, note):
    gaps = []
    for r in convex_runs:
        w, tr = r["world"], r["trace"]
        assert tr.eta <= 1.0 / r["constants"].L
        assert tr.horizon == 200 * max(t.rtt_slots for t in tr.tours)
        gap = loss(w.task, tr.x[-1], w.shards) - w.f_star
        gaps.append(gap)
        assert gap <= 1e-3, f"seed {r['seed']} {r['mode']}: f - f* = {gap}"
    note(f"{len(gaps)} runs, worst f - f* = {max(gaps):.2e}")


# --- 8, 9 ------------------------------------------------------------------------------------


def _means_note(means):
    return ", ".join(f"{m}/{o} {v:.1f}" for (m, o), v in sorted(means.items()))


@crit(8, "async/SWS reaches the target sooner than sync/MinMax")
@pytest.mark.slow
def test_c8_async_beats_sync(trend_sweep, note):
    spec, res, means = trend_sweep
    assert not res.failures
    assert len(res.records) == len(spec.modes) * len(spec.objectives) * len(spec.seeds)
    a, s = means[("async", "sws")], means[("sync", "minmax")]
    note(f"async/sws {a:.1f} vs sync/minmax {s:.1f} slots over {len(spec.seeds)} seeds")
    assert a < s


@crit(9, "SWS at least as fast as Total (async); MinMax ~ SWS and both beat Total (sync)")
@pytest.mark.slow
def test_c9_route_design(trend_sweep, note):
    _, res, means = trend_sweep
    note(_means_note(means))
    assert means[("async", "sws")] <= means[("async", "total")]
    mm, sws, tot = means[("sync", "minmax")], means[("sync", "sws")], means[("sync", "total")]
    assert abs(mm - sws) <= 0.10 * max(mm, sws)
    assert mm < tot and sws < tot


# --- 10 --------------------------------------------------------------------------------------


def _fd_worst(task, X, y, probes=100, seed=0, h=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(task.num_params)
        u = rng.standard_normal(task.num_params)
        u /= np.linalg.norm(u)
        g = task.grad(x, X, y)
        fd = (task.loss(x + h * u, X, y) - task.loss(x - h * u, X, y)) / (2 * h)
        worst = max(worst, abs(fd - g @ u) / max(np.linalg.norm(g), 1e-12))
    return worst


@crit(10, "gradients match central differences; quadratic constants exact")
@pytest.mark.parametrize(
    "kind",
    ["quadratic", "logistic-binary", "logistic-softmax", "mlp"],
)
def test_c10_gradients(kind, note):
    if kind == "quadratic":
        task, ds = QuadraticTask(5), generate_synthetic("quadratic", 5, 3, 80, 0.5, 0)
    elif kind == "logistic-binary":
        task, ds = LogisticTask(6, 2), generate_synthetic("blobs", 6, 2, 80, 0.3, 1)
    elif kind == "logistic-softmax":
        task, ds = LogisticTask(6, 4), generate_synthetic("blobs", 6, 4, 80, 0.3, 2)
    else:
        task, ds = MLPTask(6, 8, 3), generate_synthetic("blobs", 6, 3, 80, 0.3, 3)
    worst = _fd_worst(task, ds.X, ds.y)
    note(f"{kind} worst rel err {worst:.1e}")
    assert worst < 1e-5


@crit(10, "gradients match central differences; quadratic constants exact")
def test_c10_quadratic_constants(note):
    ds = generate_synthetic("quadratic", 5, 4, 400, 0.4, 0)
    shards = split_iid(ds, 8, 50, 0)
    c = estimate_constants(QuadraticTask(5), shards, probes=8, seed=0, batch_size=50)
    assert abs(c.L - 1.0) <= 1e-6
    assert c.sigma == 0.0
    note(f"L_hat - 1 = {c.L - 1:.1e}, sigma_hat = {c.sigma}")


# --- 11 --------------------------------------------------------------------------------------


@crit(11, "convergence-bound diagnostic is finite on the quadratic runs (report only)")
@pytest.mark.slow
def test_c11_bound_diagnostics(convex_runs, note, caplog):
    reports = []
    with caplog.at_level(logging.WARNING, logger="fedex.analysis"):
        for r in convex_runs:
            w, tr = r["world"], r["trace"]
            rep = A.bound_diagnostics(tr, r["constants"], w.task, w.shards, f_star=w.f_star)
            assert math.isfinite(rep.lhs) and math.isfinite(rep.rhs) and math.isfinite(rep.rhs_sync)
            reports.append({"seed": r["seed"], "mode": r["mode"], **rep.to_dict()})
    held = sum(r["holds"] for r in reports)
    warnings = [rec.getMessage() for rec in caplog.records if "bound not met" in rec.getMessage()]
    ARTIFACTS.mkdir(parents=True, exist_ok=True)
    doc = {"reports": reports, "warnings": warnings}
    (ARTIFACTS / "bound_diagnostics.json").write_text(json.dumps(doc, indent=2) + "\n")
    note(f"LHS <= RHS on {held}/{len(reports)} runs, {len(warnings)} warnings logged")
