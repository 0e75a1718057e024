"""Round-trip tours for a single transporter.

A tour starts and ends at the server (index 0); ``order`` lists only the
client indices. Costs are the integer slot matrix from the topology, and
every RTT is floored at one slot so an idle transporter still has a period.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from fedex.topology import Topology

MAX_BRUTE_FORCE = 10


@dataclass(frozen=True)
class Tour:
    transporter_id: int
    order: tuple[int, ...]
    rtt_slots: int

    def to_dict(self) -> dict:
        return {"transporter": self.transporter_id, "order": list(self.order), "rtt_slots": self.rtt_slots}

    @classmethod
    def from_dict(cls, doc: dict) -> Tour:
        return cls(int(doc["transporter"]), tuple(int(i) for i in doc["order"]), int(doc["rtt_slots"]))

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges (i, j) of the closed tour, i.e. the pairs with z_ij = 1."""
        path = (0, *self.order, 0)
        if not self.order:
            return []
        return list(zip(path[:-1], path[1:]))

    def arrival_offsets(self, topology: Topology) -> tuple[int, ...]:
        """Slots after departure at which each client in ``order`` is reached."""
        offsets = []
        t, prev = 0, 0
        for c in self.order:
            t += int(topology.travel_slots[prev, c])
            offsets.append(t)
            prev = c
        return tuple(offsets)


def _check_order(topology: Topology, order) -> tuple[int, ...]:
    order = tuple(int(c) for c in order)
    n = topology.num_clients
    for c in order:
        if not 1 <= c <= n:
            raise ValueError(f"client index {c} out of range 1..{n}")
    if len(set(order)) != len(order):
        raise ValueError(f"duplicate client in tour order {order}")
    return order


def _path_length(slots: np.ndarray, order: tuple[int, ...]) -> int:
    if not order:
        return 0
    path = np.array((0, *order, 0))
    return int(slots[path[:-1], path[1:]].sum())


def tour_rtt(topology: Topology, order) -> int:
    """Slots to leave the server, visit ``order`` in sequence and come back (at least 1)."""
    order = _check_order(topology, order)
    return max(1, _path_length(topology.travel_slots, order))


def validate_tour(order, subset) -> bool:
    order = list(order)
    return len(order) == len(set(order)) and set(order) == set(subset)


@lru_cache(maxsize=64)
def _move_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Path has n + 2 nodes (server at both ends); reversing path[i+1 .. j]
    # for i + 2 <= j <= n is a 2-exchange. Row-major order = lexicographic.
    pairs = [(i, j) for i in range(n) for j in range(i + 2, n + 1)]
    if not pairs:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    arr = np.array(pairs, dtype=np.intp)
    return arr[:, 0], arr[:, 1]


def exchange_deltas(slots: np.ndarray, order) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cost change of every 2-exchange on the closed tour.

    Returns ``(i, j, delta)`` arrays; applying move k reverses the path
    segment ``path[i[k] + 1 : j[k] + 1]`` where ``path = [0, *order, 0]``.
    """
    path = np.array((0, *order, 0), dtype=np.intp)
    ii, jj = _move_pairs(len(order))
    a, b, c, d = path[ii], path[ii + 1], path[jj], path[jj + 1]
    delta = slots[a, c] + slots[b, d] - slots[a, b] - slots[c, d]
    return ii, jj, delta


def is_two_opt_stable(topology: Topology, order) -> bool:
    _, _, delta = exchange_deltas(topology.travel_slots, tuple(order))
    return bool(delta.size == 0 or delta.min() >= 0)


@numba.njit(cache=True)
def _descend_kernel(slots, path):
    # Best-improvement 2-opt on path = [0, c1, ..., cn, 0], in place. The
    # first strictly best (i, j) in lexicographic order is applied.
    n = path.shape[0] - 2
    while True:
        best = 0
        bi = -1
        bj = -1
        for i in range(n):
            a = path[i]
            b = path[i + 1]
            dab = slots[a, b]
            for j in range(i + 2, n + 1):
                c = path[j]
                d = path[j + 1]
                delta = slots[a, c] + slots[b, d] - dab - slots[c, d]
                if delta < best:
                    best = delta
                    bi = i
                    bj = j
        if bi < 0:
            return
        lo = bi + 1
        hi = bj
        while lo < hi:
            tmp = path[lo]
            path[lo] = path[hi]
            path[hi] = tmp
            lo += 1
            hi -= 1


def _descend(slots: np.ndarray, order: list[int]) -> list[int]:
    """Best-improvement 2-opt until no exchange strictly shortens the tour."""
    path = np.array([0, *order, 0], dtype=np.int64)
    _descend_kernel(slots, path)
    return path[1:-1].tolist()


def two_opt(topology: Topology, subset, restarts: int = 4, seed: int = 0, transporter_id: int = 0) -> Tour:
    """Multi-start best-improvement 2-opt over a client subset.

    Each restart begins from a seeded random permutation. The best tour
    over all restarts is returned, ties going to the lexicographically
    smaller order.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    nodes = sorted(_check_order(topology, subset))
    slots = topology.travel_slots
    if len(nodes) <= 2:
        order = tuple(nodes)
        return Tour(transporter_id, order, max(1, _path_length(slots, order)))
    rng = np.random.default_rng(seed)
    best: tuple[int, tuple[int, ...]] | None = None
    for _ in range(restarts):
        start = [nodes[k] for k in rng.permutation(len(nodes))]
        order = tuple(_descend(slots, start))
        cand = (_path_length(slots, order), order)
        if best is None or cand < best:
            best = cand
    return Tour(transporter_id, best[1], max(1, best[0]))


def brute_force_tsp(topology: Topology, subset, transporter_id: int = 0) -> Tour:
    """Exact minimum-RTT tour by enumerating every visiting order."""
    nodes = sorted(_check_order(topology, subset))
    n = len(nodes)
    if n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute_force_tsp handles at most {MAX_BRUTE_FORCE} clients, got {n}")
    slots = topology.travel_slots
    if n == 0:
        return Tour(transporter_id, (), 1)
    best: tuple[int, tuple[int, ...]] | None = None
    # One chunk per leading client keeps memory bounded; permutations()
    # yields lexicographic order so argmin picks the smallest tied order.
    for first in nodes:
        rest = [c for c in nodes if c != first]
        perm_list = list(itertools.permutations(rest))
        perms = np.array(perm_list, dtype=np.intp).reshape(len(perm_list), n - 1)
        m = perms.shape[0]
        paths = np.empty((m, n + 2), dtype=np.intp)
        paths[:, 0] = 0
        paths[:, 1] = first
        paths[:, 2:-1] = perms
        paths[:, -1] = 0
        cost = slots[paths[:, :-1], paths[:, 1:]].sum(axis=1)
        k = int(np.argmin(cost))
        cand = (int(cost[k]), tuple(int(c) for c in paths[k, 1:-1]))
        if best is None or cand < best:
            best = cand
    return Tour(transporter_id, best[1], max(1, best[0]))
