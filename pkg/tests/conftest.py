import time

import numpy as np
import pytest

CRITERIA = {
    1: "detector probabilities",
    2: "plane-flux symmetry",
    3: "non-crossing",
    4: "equivariance",
    5: "cavity phenomenology",
    6: "energy audit",
    7: "D3/bubble branch selection",
    8: "numerical hygiene",
}

_outcomes = {}
_notes = {}
_exclusions = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or rep.failed:
        _outcomes.setdefault(m.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in CRITERIA.items():
        res = _outcomes.get(k)
        tag = "NOT RUN" if res is None else ("PASS" if all(res) else "FAIL")
        tr.write_line(f"criterion {k} ({name}): {tag}")
        for line in _notes.get(k, []):
            tr.write_line(f"    {line}")


@pytest.fixture
def note():
    def add(k, text):
        _notes.setdefault(k, []).append(text)
    return add


@pytest.fixture(scope="session")
def exclusions():
    """name -> (excluded, total) for every acceptance ensemble."""
    return _exclusions


@pytest.fixture(scope="session")
def big_ensembles(exclusions):
    """n = 10^5 Born-sampled runs of no_device and cavity, recorded at launch,
    I entry, crossing time, I exit and t_end.  Shared by criteria 4 to 6."""
    from bohmflow.dynamics import EnsembleSpec, default_dt, integrate_segments, sample_ensemble
    from bohmflow.scenarios import Geometry, build_cavity, build_no_device

    g = Geometry()
    ta, tb = g.i_window_times()
    stops = [g.t_launch, ta, g.t_cross, tb, g.t_end]
    out = {}
    for kind, builder in (("no_device", build_no_device), ("cavity", build_cavity)):
        sc = builder(g)
        s = sc.state
        t0 = time.perf_counter()
        q0 = sample_ensemble(s, EnsembleSpec(100_000, seed=2026), g.t_launch)
        res, marks = integrate_segments(s, q0, stops, dt=2 * default_dt(s), record_every=10 ** 9)
        out[kind] = (sc, res, marks, time.perf_counter() - t0)
        exclusions[f"{kind} n=1e5"] = (int(np.sum(~res.completed())), res.n)
    return out
