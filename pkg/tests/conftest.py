import numpy as np
import pytest

from fedex.data import ClientShard, generate_synthetic, split_dirichlet, split_iid
from fedex.engine import SimConfig
from fedex.routes import Tour, brute_force_tsp
from fedex.tasks import make_task
from fedex.topology import build_topology


def scalar_shard(value=0.0, cid=1):
    return ClientShard(cid, np.array([[value]]), np.zeros(1, dtype=np.int64), np.arange(1))


def round_robin_tours(topology, k):
    tours = []
    for t in range(1, k + 1):
        subset = [c for c in range(1, topology.num_clients + 1) if (c - 1) % k == t - 1]
        tour = brute_force_tsp(topology, subset)
        tours.append(Tour(t, tour.order, tour.rtt_slots))
    return tours


def small_world(seed, k, split="iid", kind="logistic", n=8, mode="async", eta=0.2, horizon=None, batch=4, **kw):
    rng = np.random.default_rng(seed)
    topo = build_topology((0, 0), rng.uniform(0, 16, (n, 2)).tolist(), 4)
    tours = round_robin_tours(topo, k)
    if kind == "quadratic":
        ds = generate_synthetic("quadratic", 3, 4, n * 20, 0.3, seed)
    else:
        ds = generate_synthetic("blobs", 3, 4, n * 20, 0.3, seed)
    shards = split_iid(ds, n, 20, seed) if split == "iid" else split_dirichlet(ds, n, 0.3, 20, seed)
    task = make_task(kind, 3, 4, hidden=5)
    max_rtt = max(t.rtt_slots for t in tours)
    T = horizon or 6 * max_rtt + 3
    return SimConfig(mode, eta, T, batch, task, shards, topo, tours, seed=seed, **kw)


@pytest.fixture
def world():
    return small_world


# --- acceptance bookkeeping -------------------------------------------------------------
# Tests marked ``criterion(n, title)`` are grouped and reported as one
# PASS/FAIL line per criterion at the end of the run.

_CRITERIA: dict[int, dict] = {}


def _entry(marker) -> dict:
    n = marker.args[0]
    return _CRITERIA.setdefault(n, {"title": marker.args[1] if len(marker.args) > 1 else "", "results": [], "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _entry(marker)
    if rep.when == "call":
        entry["results"].append("pass" if rep.passed else ("skip" if rep.skipped else "fail"))
    elif rep.failed:
        entry["results"].append("fail")
    elif rep.skipped and rep.when == "setup":
        entry["results"].append("skip")


@pytest.fixture
def note(request):
    """Attach a one-line detail to the criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if marker is not None:
            _entry(marker)["notes"].append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        res = e["results"]
        status = "FAIL" if "fail" in res else ("PASS" if "pass" in res else "SKIP")
        detail = f" ({'; '.join(e['notes'])})" if e["notes"] else ""
        tr.write_line(f"criterion {n:>2} {status}: {e['title']}{detail}")
