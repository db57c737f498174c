import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from deepgat.graph import build_graph

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(rng, n, p=None):
    p = rng.uniform(0.1, 0.8) if p is None else p
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_graph(pairs, n)


def dense_adjacency(g, self_loops=True):
    """Independent dense 0/1 adjacency built from the neighbor lists."""
    a = np.zeros((g.n, g.n))
    for v in range(g.n):
        for u in g.neighbors(v):
            a[v, u] = 1.0
    if not self_loops:
        np.fill_diagonal(a, 0.0)
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria: one verdict line per criterion at the end of the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "notes": []})
    if call.excinfo is not None:
        entry["ok"] = False
        entry["notes"].append(f"{item.name}: {call.excinfo.typename}: {str(call.excinfo.value).splitlines()[0][:160]}")
    if call.when == "call":
        entry["ran"] = True
    for key, value in item.user_properties:
        note = f"{key}={value}"
        if note not in entry["notes"]:
            entry["notes"].append(note)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {entry['title']}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")
