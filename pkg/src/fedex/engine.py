"""Slot-level execution of synchronous and asynchronous transporter rounds.

Two executors produce the global model sequence x^0..x^T:

* the literal executor moves transporters along their tours, so each
  client receives the model and starts training when it is visited;
* the aligned executor starts every client of transporter k at the
  beginning of each of k's periods and delays its upload by one period.

Both record gradients under the aligned step index, so for transporter k
with period P, round r's gradients are steps rP .. rP + P - 1 and they are
applied to the global model at slot (r + 2)P. In sync mode every
transporter uses P = max_k RTT_k; in async mode P = RTT_k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedex.data import ClientShard, Dataset
from fedex.routes import Tour
from fedex.tasks import Task, batch_plan
from fedex.topology import Topology

log = logging.getLogger(__name__)

MODES = ("sync", "async", "aligned-sync", "aligned-async")


@dataclass
class SimConfig:
    mode: str
    eta: float
    horizon: int
    batch_size: int
    task: Task
    shards: Sequence[ClientShard]
    topology: Topology
    tours: Sequence[Tour]
    seed: int = 0
    x0: np.ndarray | None = None
    record_gradients: bool = True
    record_events: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        n = len(self.shards)
        seen = sorted(c for t in self.tours for c in t.order)
        if seen != list(range(1, n + 1)):
            raise ValueError(f"tours must cover clients 1..{n} exactly once")
        ids = [s.client_id for s in self.shards]
        if ids != list(range(1, n + 1)):
            raise ValueError("shards must be ordered with client ids 1..N")
        need = 2 * max(self.periods) + 1
        if self.horizon < need:
            raise ValueError(f"horizon {self.horizon} too short: need at least 2 * max RTT + 1 = {need} slots")
        if self.x0 is None:
            self.x0 = self.task.init_params(np.random.default_rng(self.seed))
        self.x0 = np.asarray(self.x0, dtype=float)

    @property
    def synchronous(self) -> bool:
        return self.mode in ("sync", "aligned-sync")

    @property
    def aligned(self) -> bool:
        return self.mode.startswith("aligned")

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def periods(self) -> list[int]:
        rtts = [t.rtt_slots for t in self.tours]
        if self.mode in ("sync", "aligned-sync"):
            return [max(rtts)] * len(rtts)
        return rtts


@dataclass
class UpdateRecord:
    slot: int
    transporters: tuple[int, ...]
    rounds: tuple[int, ...]  # CLU round carried by each transporter (-1 = first tour, empty)
    clus: tuple[tuple[int, int], ...]  # (client, round) pairs summed into this update


@dataclass
class Event:
    slot: int
    transporter: int
    event: str
    client: int | None
    clu_norm: float


@dataclass
class Trace:
    mode: str
    eta: float
    horizon: int
    x: np.ndarray  # (T + 1, d)
    phi: np.ndarray  # (T + 1, N) highest aligned step reflected in x^t
    periods: list[int]
    tours: list[Tour]
    client_transporter: np.ndarray  # (N,) transporter index 0..K-1
    updates: list[UpdateRecord] = field(default_factory=list)
    clus: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    grads: np.ndarray | None = None  # (N, T, d) raw gradients g_i^s
    events: list[Event] = field(default_factory=list)

    @property
    def num_clients(self) -> int:
        return self.phi.shape[1]

    @property
    def x0(self) -> np.ndarray:
        return self.x[0]

    def client_period(self, client: int) -> int:
        return self.periods[self.client_transporter[client - 1]]

    def sizes(self) -> list[int]:
        return [len(t.order) for t in self.tours]


def local_round(
    task: Task,
    shard: ClientShard,
    init_params: np.ndarray,
    duration: int,
    eta: float,
    round_index: int,
    batch_size: int,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """``duration`` SGD steps from ``init_params``; returns (final, CLU, gradients).

    The CLU is ``init_params - final``, which equals eta times the sum of the
    round's gradients up to rounding.
    """
    if duration < 1:
        raise ValueError("duration must be >= 1")
    plan = batch_plan(seed, shard.client_id, round_index, duration, shard.num_samples, batch_size)
    x = np.array(init_params, dtype=float)
    grads = []
    for s in range(duration):
        idx = plan[s]
        g = task.grad(x, shard.X[idx], shard.y[idx])
        grads.append(g)
        x = x - eta * g
    return x, init_params - x, grads


def _apply_update(x: np.ndarray, aggregated: list[np.ndarray], n: int) -> np.ndarray:
    # Shared by both executors so the arithmetic order is identical.
    total = aggregated[0]
    for u in aggregated[1:]:
        total = total + u
    return x - total / n


def _new_trace(config: SimConfig) -> Trace:
    T, n, d = config.horizon, config.num_clients, config.x0.size
    owner = np.empty(n, dtype=np.int64)
    for k, tour in enumerate(config.tours):
        for c in tour.order:
            owner[c - 1] = k
    return Trace(
        mode=config.mode,
        eta=config.eta,
        horizon=T,
        x=np.empty((T + 1, d)),
        phi=np.full((T + 1, n), -1, dtype=np.int64),
        periods=config.periods,
        tours=list(config.tours),
        client_transporter=owner,
        grads=np.zeros((n, T, d)) if config.record_gradients else None,
    )


class _Client:
    __slots__ = ("shard", "params", "start", "round", "steps", "plan")

    def __init__(self, shard: ClientShard):
        self.shard = shard
        self.params = None
        self.start = None
        self.round = -1
        self.steps = 0
        self.plan = None


def _step_clients(config: SimConfig, trace: Trace, clients: list[_Client], t_limit: int) -> None:
    eta = config.eta
    for i, c in enumerate(clients):
        if c.params is None:
            continue
        period = trace.periods[trace.client_transporter[i]]
        if c.steps >= period:
            continue
        s = c.round * period + c.steps
        idx = c.plan[c.steps]
        g = config.task.grad(c.params, c.shard.X[idx], c.shard.y[idx])
        if trace.grads is not None and s < t_limit:
            trace.grads[i, s] = g
        c.params = c.params - eta * g
        c.steps += 1


def _record_update(trace: Trace, slot: int, applied: list[tuple[int, int, list[int]]], last_round: list[int]):
    pairs = []
    for k, r, members in applied:
        last_round[k] = r
        pairs.extend((c, r) for c in members if r >= 0)
    trace.updates.append(
        UpdateRecord(slot, tuple(k + 1 for k, _, _ in applied), tuple(r for _, r, _ in applied), tuple(pairs))
    )


def _fill_phi(trace: Trace, t: int, last_round: list[int]) -> None:
    for i, k in enumerate(trace.client_transporter):
        trace.phi[t, i] = (last_round[k] + 1) * trace.periods[k] - 1


def run_literal(config: SimConfig) -> Trace:
    """Move transporters along their tours slot by slot."""
    T, n = config.horizon, config.num_clients
    trace = _new_trace(config)
    periods = trace.periods
    K = len(config.tours)
    offsets = [t.arrival_offsets(config.topology) for t in config.tours]
    clients = [_Client(s) for s in config.shards]
    x = config.x0.copy()
    last_round = [-1] * K
    # Per transporter: current tour index, departure slot, carried model, aggregated CLU.
    tour_idx = [-1] * K
    depart = [0] * K
    carried: list[np.ndarray | None] = [None] * K
    agg: list[np.ndarray | None] = [None] * K
    events = trace.events if config.record_events else None
    t_end = T + 2 * max(periods)

    def visit(k: int, t: int, ongoing: bool) -> None:
        for pos, c in enumerate(config.tours[k].order):
            if depart[k] + offsets[k][pos] != t or (offsets[k][pos] > 0) != ongoing:
                continue
            cl = clients[c - 1]
            if cl.params is not None:
                if cl.steps != periods[k]:
                    raise RuntimeError(f"client {c} visited after {cl.steps} of {periods[k]} steps")
                m = cl.start - cl.params
                trace.clus[(c, cl.round)] = m
                agg[k] = agg[k] + m
                norm = float(np.linalg.norm(m))
            else:
                norm = 0.0
            if events is not None:
                events.append(Event(t, k + 1, "visit", c, norm))
            r = tour_idx[k]
            if r * periods[k] < T:
                cl.start = carried[k]
                cl.params = carried[k].copy()
                cl.round = r
                cl.steps = 0
                cl.plan = batch_plan(config.seed, c, r, periods[k], cl.shard.num_samples, config.batch_size)
            else:
                cl.params = None

    for t in range(t_end):
        for k in range(K):
            if tour_idx[k] >= 0 and t > depart[k]:
                visit(k, t, ongoing=True)
        if t <= T:
            applied = []
            for k in range(K):
                if events is not None and tour_idx[k] >= 0 and t == depart[k] + config.tours[k].rtt_slots:
                    events.append(Event(t, k + 1, "return", None, float(np.linalg.norm(agg[k]))))
                if tour_idx[k] >= 0 and t == depart[k] + periods[k]:
                    applied.append((k, tour_idx[k] - 1, [c for c in config.tours[k].order]))
            if applied:
                x = _apply_update(x, [agg[k] for k, _, _ in applied], n)
                _record_update(trace, t, applied, last_round)
            trace.x[t] = x
            _fill_phi(trace, t, last_round)
        for k in range(K):
            due = tour_idx[k] < 0 or t == depart[k] + periods[k]
            if due and t < T + periods[k]:
                tour_idx[k] += 1
                depart[k] = t
                carried[k] = x.copy()
                agg[k] = np.zeros_like(x)
                if events is not None:
                    events.append(Event(t, k + 1, "depart", None, 0.0))
                visit(k, t, ongoing=False)
        _step_clients(config, trace, clients, T)
    return trace


def run_aligned(config: SimConfig) -> Trace:
    """Equivalent schedule: all clients of a transporter train in lockstep."""
    T, n = config.horizon, config.num_clients
    trace = _new_trace(config)
    periods = trace.periods
    K = len(config.tours)
    x = config.x0.copy()
    last_round = [-1] * K
    pending: dict[tuple[int, int], np.ndarray] = {}
    for t in range(T + 1):
        applied = []
        for k in range(K):
            p = periods[k]
            if t >= p and t % p == 0:
                r = t // p - 2
                u = np.zeros_like(x)
                if r >= 0:
                    for c in config.tours[k].order:
                        u = u + pending.pop((c, r))
                applied.append((k, r, list(config.tours[k].order), u))
        if applied:
            x = _apply_update(x, [u for *_, u in applied], n)
            _record_update(trace, t, [a[:3] for a in applied], last_round)
        trace.x[t] = x
        _fill_phi(trace, t, last_round)
        if t == T:
            break
        for k in range(K):
            p = periods[k]
            if t % p:
                continue
            r = t // p
            for c in config.tours[k].order:
                shard = config.shards[c - 1]
                _, m, grads = local_round(config.task, shard, x, p, config.eta, r, config.batch_size, config.seed)
                pending[(c, r)] = m
                trace.clus[(c, r)] = m
                if trace.grads is not None:
                    stop = min(p, T - t)
                    trace.grads[c - 1, t : t + stop] = grads[:stop]
    return trace


def simulate(config: SimConfig) -> Trace:
    if config.aligned:
        return run_aligned(config)
    return run_literal(config)


def run_sync(config: SimConfig) -> Trace:
    if config.mode != "sync":
        raise ValueError(f"run_sync needs mode 'sync', got {config.mode!r}")
    return run_literal(config)


def run_async(config: SimConfig) -> Trace:
    if config.mode != "async":
        raise ValueError(f"run_async needs mode 'async', got {config.mode!r}")
    return run_literal(config)
