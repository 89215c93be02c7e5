import numpy as np
import pytest

from mrregger.core import SummaryDataset


def random_dataset(rng, p, *, sigma_x_zero=False, beta=0.3, mu=0.01):
    g = rng.normal(0.05, 0.03, p)
    sx = np.zeros(p) if sigma_x_zero else rng.uniform(0.002, 0.008, p)
    sy = rng.uniform(0.005, 0.02, p)
    G = beta * g + mu + rng.normal(0, 0.01, p)
    return SummaryDataset.from_arrays(g, sx, G, sy)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "ran": False, "details": []})
    if report.when == "call":
        entry["ran"] = True
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")
    if report.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["passed"] and e["ran"] else "FAIL"
        tr.write_line(f"criterion {n:2d}: {status}  {e['title']}")
        for d in e["details"]:
            tr.write_line(f"    {d}")
