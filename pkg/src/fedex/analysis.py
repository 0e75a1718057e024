"""Post-hoc views of a trace: virtual sequence, staleness, bounds, metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from fedex.data import ClientShard, Dataset
from fedex.engine import Trace
from fedex.tasks import ConstantsEstimate, Task, full_gradient, loss

log = logging.getLogger(__name__)


def _require_grads(trace: Trace) -> np.ndarray:
    if trace.grads is None:
        raise ValueError("trace has no gradient records; run with record_gradients=True")
    return trace.grads


def virtual_sequence(trace: Trace, eta: float | None = None, n: int | None = None) -> np.ndarray:
    """v^t = x^0 - (eta/N) * sum_i sum_{s<t} g_i^s for t = 0..T."""
    grads = _require_grads(trace)
    eta = trace.eta if eta is None else eta
    n = trace.num_clients if n is None else n
    per_slot = grads.sum(axis=0)  # (T, d)
    cum = np.vstack([np.zeros((1, per_slot.shape[1])), np.cumsum(per_slot, axis=0)])
    return trace.x0 - (eta / n) * cum


def _client_prefix(grads: np.ndarray) -> np.ndarray:
    # prefix[i, s] = sum_{s' < s} g_i^{s'}
    n, T, d = grads.shape
    out = np.zeros((n, T + 1, d))
    np.cumsum(grads, axis=1, out=out[:, 1:])
    return out


def reconstruct_real(trace: Trace) -> np.ndarray:
    """x^t rebuilt from gradient records: x^0 - (eta/N) sum_i sum_{s <= phi_i(t)} g_i^s."""
    grads = _require_grads(trace)
    prefix = _client_prefix(grads)
    n = trace.num_clients
    idx = np.clip(trace.phi + 1, 0, grads.shape[1])  # (T+1, N)
    applied = prefix[np.arange(n)[None, :], idx].sum(axis=1)
    return trace.x0 - (trace.eta / n) * applied


def residual(trace: Trace) -> np.ndarray:
    """Direct sum for v^t - x^t = -(eta/N) sum_i sum_{s=phi_i(t)+1}^{t-1} g_i^s."""
    grads = _require_grads(trace)
    prefix = _client_prefix(grads)
    n = trace.num_clients
    T = trace.horizon
    t = np.arange(T + 1)[:, None]
    hi = np.broadcast_to(t, trace.phi.shape)
    lo = np.clip(trace.phi + 1, 0, T)
    cols = np.arange(n)[None, :]
    pending = (prefix[cols, hi] - prefix[cols, np.minimum(lo, hi)]).sum(axis=1)
    return -(trace.eta / n) * pending


def staleness(trace: Trace, client: int, t: int) -> int:
    """(t - 1) - phi_i(t); phi is -1 before any of the client's gradients land."""
    return int((t - 1) - trace.phi[t, client - 1])


def staleness_table(trace: Trace) -> np.ndarray:
    t = np.arange(trace.horizon + 1)[:, None]
    return (t - 1) - trace.phi


def first_update_slot(trace: Trace, transporter: int) -> int | None:
    for u in trace.updates:
        if transporter in u.transporters:
            return u.slot
    return None


def staleness_violations(trace: Trace) -> list[tuple[int, int, int, int]]:
    """(client, slot, staleness, bound) wherever staleness exceeds twice the client's period.

    Only slots at or after the transporter's first applied update count.
    """
    table = staleness_table(trace)
    out = []
    for i in range(trace.num_clients):
        k = int(trace.client_transporter[i])
        start = first_update_slot(trace, k + 1)
        if start is None:
            continue
        bound = 2 * trace.periods[k]
        bad = np.flatnonzero(table[start:, i] > bound) + start
        out.extend((i + 1, int(t), int(table[t, i]), bound) for t in bad)
    return out


def observed_gap_bound(trace: Trace) -> float:
    """(eta/N) * sum_k R_k * 2 P_k * max recorded ||g||, a hard bound on ||v^t - x^t||."""
    grads = _require_grads(trace)
    g_max = float(np.sqrt((grads**2).sum(axis=2)).max()) if grads.size else 0.0
    weight = sum(r * 2 * p for r, p in zip(trace.sizes(), trace.periods))
    return trace.eta / trace.num_clients * weight * g_max


def check_conservation(trace: Trace) -> list[str]:
    """Problems found when matching applied updates against collected CLUs."""
    problems = []
    n = trace.num_clients
    seen: set[tuple[int, int]] = set()
    prev = trace.x[0]
    update_slots = {u.slot: u for u in trace.updates}
    for t in range(1, trace.horizon + 1):
        u = update_slots.get(t)
        step = trace.x[t] - prev
        if u is None:
            if np.any(step != 0):
                problems.append(f"slot {t}: model changed without an update")
        else:
            dup = seen.intersection(u.clus)
            if dup:
                problems.append(f"slot {t}: CLUs applied twice: {sorted(dup)}")
            seen.update(u.clus)
            total = np.zeros_like(prev)
            for pair in u.clus:
                total = total + trace.clus[pair]
            if not np.allclose(trace.x[t], prev - total / n, rtol=1e-12, atol=1e-12):
                problems.append(f"slot {t}: update differs from (1/N) * sum of collected CLUs")
        prev = trace.x[t]
    # Each applied (client, round) accounts for exactly one period of gradients.
    for i in range(n):
        p = trace.periods[trace.client_transporter[i]]
        rounds = sorted(r for c, r in seen if c == i + 1)
        if rounds != list(range(len(rounds))):
            problems.append(f"client {i + 1}: applied rounds {rounds} are not contiguous from 0")
        expected = int(trace.phi[-1, i]) + 1
        if len(rounds) * p != expected:
            problems.append(f"client {i + 1}: {len(rounds) * p} gradients applied, phi implies {expected}")
    return problems


# --- objective tracking ----------------------------------------------------------


def change_points(trace: Trace) -> np.ndarray:
    """Slots t where x^t differs from x^{t-1} (slot 0 always included)."""
    diff = np.any(trace.x[1:] != trace.x[:-1], axis=1)
    return np.concatenate([[0], np.flatnonzero(diff) + 1])


def evaluate_along(trace: Trace, fn) -> np.ndarray:
    """fn(x^t) for every slot, computed once per piecewise-constant segment."""
    pts = change_points(trace)
    vals = [fn(trace.x[t]) for t in pts]
    seg = np.searchsorted(pts, np.arange(trace.horizon + 1), side="right") - 1
    return np.asarray(vals)[seg]


def sq_grad_norms(trace: Trace, task: Task, shards: Sequence[ClientShard]) -> np.ndarray:
    return evaluate_along(trace, lambda x: float(np.sum(full_gradient(task, x, shards) ** 2)))


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    rhs_sync: float
    holds: bool
    holds_sync: bool
    optimality_gap: float
    sum_r_delta2: float  # sum_k R_k * RTT_k^2 from the tours
    sum_r_period2: float  # same with the executed period (RTT_k async, max RTT sync)
    max_delta: int
    L: float
    G: float
    sigma: float
    eta: float
    horizon: int

    def to_dict(self) -> dict:
        return asdict(self)


def bound_diagnostics(
    trace: Trace,
    constants: ConstantsEstimate,
    task: Task,
    shards: Sequence[ClientShard],
    f_star: float = 0.0,
    horizon: int | None = None,
) -> BoundReport:
    """Compare the average squared gradient norm with the convergence bound.

    The right-hand side is 4/(eta T) * (f(x^0) - f*) + 44 eta^2 G^2 L^2 / N *
    sum_k R_k P_k^2 + 2 L eta sigma^2 / N. The synchronous variant is
    2/(eta T) * (f(x^0) - f*) + 18 eta^2 G^2 L^2 max_k RTT_k^2 + L eta sigma^2 / N.
    Report only; a violation is logged, not raised.
    """
    T = trace.horizon if horizon is None else horizon
    eta, n = trace.eta, trace.num_clients
    norms = sq_grad_norms(trace, task, shards)[:T]
    lhs = float(norms.mean())
    gap = loss(task, trace.x0, shards) - f_star
    L, G, sig = constants.L, constants.G, constants.sigma
    sizes = trace.sizes()
    rtts = [t.rtt_slots for t in trace.tours]
    s_rtt = float(sum(r * d * d for r, d in zip(sizes, rtts)))
    s_per = float(sum(r * p * p for r, p in zip(sizes, trace.periods)))
    max_d = max(rtts)
    if eta > 0:
        rhs = 4 / (eta * T) * gap + 44 * eta**2 * G**2 * L**2 / n * s_per + 2 * L * eta * sig**2 / n
        rhs_sync = 2 / (eta * T) * gap + 18 * eta**2 * G**2 * L**2 * max_d**2 + L * eta * sig**2 / n
    else:
        rhs = rhs_sync = math.inf
    report = BoundReport(
        lhs, rhs, rhs_sync, lhs <= rhs, lhs <= rhs_sync, gap, s_rtt, s_per, max_d, L, G, sig, eta, T
    )
    if not report.holds:
        log.warning("convergence bound not met: lhs=%.4g rhs=%.4g", lhs, rhs)
    return report


METRIC_COLUMNS = (
    "slot",
    "global_loss",
    "eval_accuracy",
    "avg_sq_grad_norm",
    "v_minus_x_sq",
    "max_staleness",
    "updates_applied",
)


def metrics_rows(
    trace: Trace,
    task: Task,
    shards: Sequence[ClientShard],
    eval_data: Dataset | None = None,
    every: int = 1,
) -> list[dict]:
    """One row per ``every`` slots (plus the final slot) with the metric columns."""
    T = trace.horizon
    losses = evaluate_along(trace, lambda x: loss(task, x, shards))
    if eval_data is not None and task.classifier:
        acc = evaluate_along(trace, lambda x: task.accuracy(x, eval_data))
    else:
        acc = np.full(T + 1, np.nan)
    g2 = sq_grad_norms(trace, task, shards)
    running = np.cumsum(g2) / np.arange(1, T + 2)
    if trace.grads is not None:
        gap = ((virtual_sequence(trace) - trace.x) ** 2).sum(axis=1)
    else:
        gap = np.full(T + 1, np.nan)
    stale = staleness_table(trace).max(axis=1)
    applied = np.zeros(T + 1, dtype=np.int64)
    for u in trace.updates:
        applied[u.slot] += len(u.transporters)
    applied = np.cumsum(applied)
    slots = sorted(set(range(0, T + 1, max(1, every))) | {T})
    return [
        {
            "slot": t,
            "global_loss": float(losses[t]),
            "eval_accuracy": float(acc[t]),
            "avg_sq_grad_norm": float(running[t]),
            "v_minus_x_sq": float(gap[t]),
            "max_staleness": int(stale[t]),
            "updates_applied": int(applied[t]),
        }
        for t in slots
    ]


def slots_to_target(trace: Trace, task: Task, eval_data: Dataset, target: float) -> int | None:
    """First slot whose global model reaches ``target`` accuracy, or None."""
    for t in change_points(trace):
        if task.accuracy(trace.x[t], eval_data) >= target:
            return int(t)
    return None
