"""Client-to-transporter assignment (CARD outer level).

Transporters are numbered 1..K and clients 1..N, matching the server-at-0
indexing of the topology. ``Assignment.assign[i - 1]`` is client i's
transporter.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from fedex.routes import MAX_BRUTE_FORCE, Tour, brute_force_tsp, two_opt
from fedex.topology import Topology

TspSolver = Callable[[Topology, tuple[int, ...]], Tour]
Schedule = Callable[[int], float]


class Objective(str, enum.Enum):
    MINMAX = "minmax"
    SWS = "sws"
    TOTAL = "total"

    def evaluate(self, sizes, rtts) -> float:
        if self is Objective.MINMAX:
            return float(max(rtts))
        if self is Objective.SWS:
            return float(sum(r * d * d for r, d in zip(sizes, rtts)))
        return float(sum(rtts))


@dataclass(frozen=True)
class Assignment:
    assign: tuple[int, ...]
    num_transporters: int

    def __post_init__(self):
        if self.num_transporters < 1:
            raise ValueError("need at least one transporter")
        if not self.assign:
            raise ValueError("need at least one client")
        bad = [a for a in self.assign if not 1 <= a <= self.num_transporters]
        if bad:
            raise ValueError(f"assignment values {bad} outside 1..{self.num_transporters}")

    @property
    def num_clients(self) -> int:
        return len(self.assign)

    def subsets(self) -> list[tuple[int, ...]]:
        """Client subsets R_1..R_K, each in ascending client order."""
        out: list[list[int]] = [[] for _ in range(self.num_transporters)]
        for client, k in enumerate(self.assign, start=1):
            out[k - 1].append(client)
        return [tuple(s) for s in out]

    def sizes(self) -> list[int]:
        return [len(s) for s in self.subsets()]

    def transporter_of(self, client: int) -> int:
        return self.assign[client - 1]

    def to_dict(self) -> dict:
        return {"k": self.num_transporters, "assign": list(self.assign)}

    @classmethod
    def from_dict(cls, doc: dict) -> Assignment:
        return cls(tuple(int(a) for a in doc["assign"]), int(doc["k"]))


def _default_tsp(topology: Topology, subset: tuple[int, ...]) -> Tour:
    if len(subset) <= MAX_BRUTE_FORCE:
        return brute_force_tsp(topology, subset)
    return two_opt(topology, subset, restarts=4, seed=0)


def seeded_two_opt(restarts: int = 8, seed: int = 0) -> TspSolver:
    """2-opt solver whose randomness depends only on (seed, subset)."""

    def solve(topology: Topology, subset: tuple[int, ...]) -> Tour:
        sub_seed = np.random.SeedSequence([seed, *sorted(subset)])
        return two_opt(topology, subset, restarts=restarts, seed=sub_seed)

    return solve


def _tours_for(topology, assign: Assignment, tsp: TspSolver) -> list[Tour]:
    tours = []
    for k, subset in enumerate(assign.subsets(), start=1):
        t = tsp(topology, subset) if subset else Tour(k, (), 1)
        tours.append(Tour(k, t.order, t.rtt_slots))
    return tours


def assignment_cost(topology: Topology, assign: Assignment, objective: Objective, tsp: TspSolver | None = None) -> float:
    """Objective value with each R_k routed by ``tsp`` (exact by default for small subsets)."""
    objective = Objective(objective)
    tours = _tours_for(topology, assign, tsp or _default_tsp)
    return objective.evaluate(assign.sizes(), [t.rtt_slots for t in tours])


def _softmax_neg(costs: np.ndarray, tau: float) -> np.ndarray:
    z = -(costs - costs.min()) / tau
    w = np.exp(z)
    return w / w.sum()


def gibbs_conditional(
    topology: Topology,
    assign: Assignment,
    client: int,
    objective: Objective,
    tau: float,
    tsp: TspSolver | None = None,
) -> np.ndarray:
    """P(a_client = k | rest) proportional to exp(-cost_k / tau), k = 1..K."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau!r}")
    costs = np.empty(assign.num_transporters)
    base = list(assign.assign)
    for k in range(1, assign.num_transporters + 1):
        base[client - 1] = k
        costs[k - 1] = assignment_cost(topology, Assignment(tuple(base), assign.num_transporters), objective, tsp)
    return _softmax_neg(costs, tau)


def geometric_schedule(tau0: float, rho: float = 0.95) -> Schedule:
    return lambda sweep: tau0 * rho**sweep


@dataclass
class CardResult:
    assignment: Assignment
    tours: list[Tour]
    cost: float
    history: list[float] = field(default_factory=list)  # incumbent cost after each sweep


class _RttCache:
    """Memoized subset RTTs keyed by client bitmask."""

    def __init__(self, topology: Topology, tsp: TspSolver):
        self.topology = topology
        self.tsp = tsp
        self.tours: dict[int, Tour] = {}

    def tour(self, mask: int) -> Tour:
        t = self.tours.get(mask)
        if t is None:
            subset = tuple(i for i in range(1, mask.bit_length()) if mask >> i & 1)
            t = self.tsp(self.topology, subset) if subset else Tour(0, (), 1)
            self.tours[mask] = t
        return t

    def rtt(self, mask: int) -> int:
        return self.tour(mask).rtt_slots


def card(
    topology: Topology,
    k: int,
    objective: Objective,
    sweeps: int = 200,
    schedule: Schedule | None = None,
    seed: int = 0,
    tsp: TspSolver | None = None,
) -> CardResult:
    """Gibbs-sampling assignment with 2-opt inner tours.

    Starts from a seeded uniform random assignment and performs ``sweeps``
    passes over clients 1..N, resampling each client's transporter from its
    conditional at temperature ``schedule(sweep)``. The default schedule is
    geometric annealing from the starting cost with ratio 0.95. The best
    assignment ever visited is returned (ties to the lexicographically
    smaller vector).
    """
    objective = Objective(objective)
    n = topology.num_clients
    if k < 1:
        raise ValueError("K must be >= 1")
    if n < 1:
        raise ValueError("N must be >= 1")
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    rng = np.random.default_rng(seed)
    cache = _RttCache(topology, tsp or seeded_two_opt(seed=seed))

    a = [int(v) for v in rng.integers(1, k + 1, size=n)]
    masks = [0] * k
    for client, t in enumerate(a, start=1):
        masks[t - 1] |= 1 << client

    def cost_of(ms: list[int]) -> float:
        sizes = [m.bit_count() for m in ms]
        return objective.evaluate(sizes, [cache.rtt(m) for m in ms])

    current = cost_of(masks)
    if schedule is None:
        schedule = geometric_schedule(max(current, 1e-9))
    best_cost, best_a = current, tuple(a)
    history: list[float] = []

    for s in range(sweeps):
        tau = float(schedule(s))
        if not tau > 0:
            raise ValueError(f"schedule produced non-positive temperature {tau!r} at sweep {s}")
        for client in range(1, n + 1):
            bit = 1 << client
            old = a[client - 1]
            masks[old - 1] &= ~bit
            costs = np.empty(k)
            for cand in range(1, k + 1):
                masks[cand - 1] |= bit
                costs[cand - 1] = cost_of(masks)
                masks[cand - 1] &= ~bit
            if math.isinf(tau):
                p = np.full(k, 1.0 / k)
            else:
                p = _softmax_neg(costs, tau)
            new = int(rng.choice(k, p=p)) + 1
            a[client - 1] = new
            masks[new - 1] |= bit
            current = float(costs[new - 1])
            cand_a = tuple(a)
            if current < best_cost or (current == best_cost and cand_a < best_a):
                best_cost, best_a = current, cand_a
        history.append(best_cost)

    best = Assignment(best_a, k)
    tours = []
    for idx, mask in enumerate(_masks_of(best), start=1):
        t = cache.tour(mask)
        tours.append(Tour(idx, t.order, t.rtt_slots))
    return CardResult(best, tours, best_cost, history)


def _masks_of(assign: Assignment) -> list[int]:
    masks = [0] * assign.num_transporters
    for client, t in enumerate(assign.assign, start=1):
        masks[t - 1] |= 1 << client
    return masks


def brute_force_assignment(topology: Topology, k: int, objective: Objective) -> CardResult:
    """Global optimum by enumerating all K^N assignments (test oracle)."""
    objective = Objective(objective)
    n = topology.num_clients
    if k**n > 10**6:
        raise ValueError(f"K^N = {k}^{n} exceeds the enumeration limit of 10^6")
    cache = _RttCache(topology, _default_tsp)
    best: tuple[float, tuple[int, ...]] | None = None
    for a in itertools.product(range(1, k + 1), repeat=n):
        masks = [0] * k
        for client, t in enumerate(a, start=1):
            masks[t - 1] |= 1 << client
        cost = objective.evaluate([m.bit_count() for m in masks], [cache.rtt(m) for m in masks])
        if best is None or cost < best[0]:
            best = (cost, a)
    assign = Assignment(best[1], k)
    tours = [Tour(i, cache.tour(m).order, cache.rtt(m)) for i, m in enumerate(_masks_of(assign), start=1)]
    return CardResult(assign, tours, best[0], [best[0]])
