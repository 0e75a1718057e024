import dataclasses
import itertools

import numpy as np
import pytest

from fedex import analysis as A
from fedex.engine import SimConfig, local_round, run_aligned, run_async, run_literal, run_sync, simulate
from fedex.routes import Tour
from fedex.tasks import QuadraticTask
from fedex.topology import build_topology

from conftest import scalar_shard, small_world


def one_client_config(mode, eta=0.1, horizon=10, **kw):
    topo = build_topology((0, 0), [(4, 0)], 4)
    return SimConfig(
        mode, eta, horizon, 1, QuadraticTask(1), [scalar_shard()], topo, [Tour(1, (1,), 2)], x0=np.array([1.0]), **kw
    )


def test_local_round_hand_trace():
    final, m, grads = local_round(QuadraticTask(1), scalar_shard(), np.array([1.0]), 2, 0.1, 0, 1)
    assert np.allclose([g[0] for g in grads], [1.0, 0.9], atol=1e-15)
    assert abs(final[0] - 0.81) < 1e-15
    assert abs(m[0] - 0.19) < 1e-15
    assert np.array_equal(m, np.array([1.0]) - final)


def test_local_round_zero_step():
    final, m, _ = local_round(QuadraticTask(1), scalar_shard(), np.array([1.0]), 3, 0.0, 0, 1)
    assert final[0] == 1.0 and m[0] == 0.0
    with pytest.raises(ValueError):
        local_round(QuadraticTask(1), scalar_shard(), np.array([1.0]), 0, 0.1, 0, 1)


@pytest.mark.parametrize("mode", ["sync", "async", "aligned-sync", "aligned-async"])
def test_sync_hand_trace(mode):
    tr = simulate(one_client_config(mode))
    x = tr.x[:, 0]
    assert np.all(x[:4] == 1.0)
    assert abs(x[4] - 0.81) < 1e-12 and x[5] == x[4]
    assert abs(x[6] - 0.62) < 1e-12 and x[7] == x[6]
    assert abs(x[8] - 0.4661) < 1e-12


def test_staleness_hand_example():
    tr = run_sync(one_client_config("sync"))
    assert tr.phi[4, 0] == 1
    assert A.staleness(tr, 1, 5) == 3
    assert A.staleness(tr, 1, 5) <= 2 * 2


def test_zero_learning_rate_keeps_model():
    tr = run_sync(one_client_config("sync", eta=0.0))
    assert np.all(tr.x == 1.0)


def test_mode_guards():
    with pytest.raises(ValueError):
        run_sync(one_client_config("async"))
    with pytest.raises(ValueError):
        run_async(one_client_config("sync"))
    with pytest.raises(ValueError, match="too short"):
        one_client_config("sync", horizon=4)
    with pytest.raises(ValueError):
        one_client_config("turbo")


def two_three_config(mode="async", horizon=13, **kw):
    # transporter 1: out-and-back of 2 slots; transporter 2: triangle with unit legs (3 slots)
    topo = build_topology((0, 0), [(-4, 0), (4, 0), (2, 2 * np.sqrt(3))], 4)
    shards = [scalar_shard(v, c) for c, v in enumerate([0.5, -1.0, 2.0], start=1)]
    tours = [Tour(1, (1,), 2), Tour(2, (2, 3), 3)]
    return SimConfig(mode, 0.1, horizon, 1, QuadraticTask(1), shards, topo, tours, x0=np.array([1.0]), **kw)


def test_async_update_schedule_two_three():
    cfg = two_three_config()
    assert [t.arrival_offsets(cfg.topology) for t in cfg.tours] == [(1,), (1, 2)]
    tr = run_async(cfg)
    nonzero = {}
    for u in tr.updates:
        for k, r in zip(u.transporters, u.rounds):
            if r >= 0:
                nonzero.setdefault(k, []).append(u.slot)
    assert nonzero[1] == [4, 6, 8, 10, 12]
    assert nonzero[2] == [6, 9, 12]
    at6 = next(u for u in tr.updates if u.slot == 6)
    assert at6.transporters == (1, 2)
    # one global step at slot 6 combining both aggregated CLUs
    total = tr.clus[(1, 1)] + (tr.clus[(2, 0)] + tr.clus[(3, 0)])
    assert np.allclose(tr.x[6], tr.x[5] - total / 3, rtol=0, atol=1e-15)


def test_events_log():
    tr = run_async(two_three_config(record_events=True))
    ev = [(e.slot, e.transporter, e.event, e.client) for e in tr.events]
    assert ev[:3] == [(0, 1, "depart", None), (0, 2, "depart", None), (1, 1, "visit", 1)]
    assert (3, 2, "return", None) in ev
    first_visits = [e for e in tr.events if e.event == "visit" and e.slot < 3]
    assert all(e.clu_norm == 0.0 for e in first_visits)
    later = [e for e in tr.events if e.event == "visit" and e.slot >= 3]
    assert any(e.clu_norm > 0 for e in later)


def test_sync_transporters_wait_for_round():
    tr = run_sync(two_three_config("sync", record_events=True))
    departs = sorted({e.slot for e in tr.events if e.event == "depart"})
    assert departs[:4] == [0, 3, 6, 9]
    returns_t1 = [e.slot for e in tr.events if e.event == "return" and e.transporter == 1]
    assert returns_t1[:3] == [2, 5, 8]
    assert [u.slot for u in tr.updates][:4] == [3, 6, 9, 12]


def test_clients_idle_before_first_delivery():
    tr = run_async(two_three_config(record_events=True))
    first = {}
    for e in tr.events:
        if e.event == "visit":
            first.setdefault(e.client, e.slot)
    assert first == {1: 1, 2: 1, 3: 2}


# --- equivalence matrix ----------------------------------------------------------------

MATRIX = list(itertools.product(["sync", "async"], [1, 2, 4], ["iid", "dirichlet"]))


@pytest.mark.parametrize("mode, k, split", MATRIX)
def test_aligned_equals_literal(mode, k, split):
    cfg = small_world(seed=k * 7 + len(split), k=k, split=split, mode=mode)
    lit = run_literal(cfg)
    ali = run_aligned(dataclasses.replace(cfg, mode="aligned-" + mode))
    assert np.array_equal(lit.x, ali.x)
    assert np.array_equal(lit.phi, ali.phi)
    assert np.array_equal(lit.grads, ali.grads)


@pytest.mark.parametrize("seed", range(3))
def test_single_transporter_async_equals_sync(seed):
    cfg = small_world(seed, 1, mode="async")
    assert np.array_equal(run_async(cfg).x, run_sync(dataclasses.replace(cfg, mode="sync")).x)


def test_equal_rtts_sync_equals_async():
    from fedex.data import generate_synthetic, split_iid
    from fedex.tasks import make_task

    # Mirror-symmetric layout: every transporter has the same RTT.
    pts = [(6, 0), (-6, 0), (0, 6), (0, -6), (9, 3), (-9, -3), (-3, 9), (3, -9)]
    topo = build_topology((0, 0), pts, 3)
    tours = [Tour(1, (1, 5), 0), Tour(2, (2, 6), 0), Tour(3, (3, 7), 0), Tour(4, (4, 8), 0)]
    from fedex.routes import tour_rtt

    tours = [Tour(t.transporter_id, t.order, tour_rtt(topo, t.order)) for t in tours]
    assert len({t.rtt_slots for t in tours}) == 1
    ds = generate_synthetic("blobs", 3, 3, 160, 0.3, 0)
    shards = split_iid(ds, 8, 20, 0)
    cfg = SimConfig("sync", 0.3, 40, 5, make_task("logistic", 3, 3), shards, topo, tours, seed=2)
    a = run_sync(cfg)
    b = run_async(dataclasses.replace(cfg, mode="async"))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.phi, b.phi)


# --- trace invariants -------------------------------------------------------------------


@pytest.mark.parametrize("mode, k, split", MATRIX[::2])
def test_trace_invariants(mode, k, split):
    cfg = small_world(seed=3 + k, k=k, split=split, mode=mode, kind="mlp")
    tr = simulate(cfg)
    assert np.max(np.abs(A.reconstruct_real(tr) - tr.x)) <= 1e-9
    v = A.virtual_sequence(tr)
    assert np.array_equal(v[0], tr.x[0])
    assert np.max(np.abs((v - tr.x) - A.residual(tr))) <= 1e-9
    gap = np.sqrt(((v - tr.x) ** 2).sum(axis=1))
    assert np.all(gap <= A.observed_gap_bound(tr) + 1e-12)
    assert A.staleness_violations(tr) == []
    assert A.check_conservation(tr) == []


def test_phi_shared_within_groups():
    sync = simulate(small_world(1, 4, mode="sync"))
    assert np.all(sync.phi == sync.phi[:, :1])
    asyn = simulate(small_world(1, 4, mode="async"))
    for k in range(4):
        cols = asyn.phi[:, asyn.client_transporter == k]
        assert np.all(cols == cols[:, :1])


def test_aligned_windows_tile_time():
    cfg = small_world(2, 2, mode="aligned-async")
    tr = run_aligned(cfg)
    norms = np.linalg.norm(tr.grads, axis=2)
    assert np.all(norms > 0)  # every client has a gradient for every slot 0..T-1


def test_virtual_sequence_needs_gradients():
    tr = simulate(small_world(1, 2, record_gradients=False))
    with pytest.raises(ValueError, match="gradient"):
        A.virtual_sequence(tr)


def test_conservation_detects_tampering():
    tr = simulate(small_world(4, 2))
    tr.x[-1] = tr.x[-1] + 1.0
    assert A.check_conservation(tr)
