import dataclasses
import functools
import time

import numpy as np
import pytest

from midc_droop.dynamics import simulate
from midc_droop.network import Bus, GeneratorParams, LccParams, Line, build_network
from midc_droop.primal_dual import compare_with_dynamics
from midc_droop.scenario import load_fixture


RUN_SECONDS = {}
CRITERIA = {}


@functools.lru_cache(maxsize=None)
def fixture_run(name, **control):
    """Simulate a bundled fixture once per session, with control overrides."""
    scenario = load_fixture(name)
    if control:
        scenario = dataclasses.replace(scenario, control=dataclasses.replace(scenario.control, **control))
    start = time.perf_counter()
    traj = simulate(scenario)
    RUN_SECONDS[(name, tuple(sorted(control.items())))] = time.perf_counter() - start
    return scenario, traj


def cached_run(name, **control):
    return fixture_run(name, **dict(sorted(control.items())))


@functools.lru_cache(maxsize=None)
def cached_equivalence(name):
    """Primal-dual comparison on a bundled fixture, computed once per session."""
    return compare_with_dynamics(load_fixture(name))


@pytest.fixture
def two_bus():
    """Generator at bus 1, passive load of 1 p.u. at bus 2, B = 10."""
    return build_network(
        [Bus(1, "generator", 1.0), Bus(2, "passive", -1.0)],
        [Line(1, 2, 10.0)],
        [GeneratorParams(1, 10.0, 1.0, 9.0, 0.1)],
        [],
    )


@pytest.fixture
def triangle():
    return load_fixture("three_bus_minimal").network


def random_network(rng, n_gen=None, n_lcc=None, n_passive=None, interior=True, m_range=(2.0, 10.0)):
    """Small connected grid with random parameters.

    Buses are numbered from 1; generators first, then LCC buses, then
    passive buses.  Injections balance to zero before any event.
    """
    n_gen = n_gen or int(rng.integers(1, 4))
    n_lcc = n_lcc or int(rng.integers(1, 4))
    n_passive = int(rng.integers(0, 3)) if n_passive is None else n_passive
    n = n_gen + n_lcc + n_passive
    roles = ["generator"] * n_gen + ["lcc"] * n_lcc + ["passive"] * n_passive
    p = rng.uniform(-1.0, 1.0, n)
    p_nom = {}
    for k in range(n_gen, n_gen + n_lcc):
        p_nom[k + 1] = float(rng.choice([-1, 1]) * rng.uniform(1.0, 3.0))
    p[:n_gen] -= (p.sum() + sum(p_nom.values())) / n_gen
    buses = [Bus(k + 1, roles[k], float(p[k])) for k in range(n)]
    edges = set()
    for k in range(1, n):
        edges.add((int(rng.integers(0, k)) + 1, k + 1))
    for _ in range(int(rng.integers(0, n))):
        i, j = sorted(rng.choice(n, 2, replace=False) + 1)
        edges.add((int(i), int(j)))
    lines = [Line(i, j, float(rng.uniform(20.0, 60.0))) for i, j in sorted(edges)]
    gens = [GeneratorParams(k + 1, float(rng.uniform(*m_range)), 1.0, 1.0, float(rng.uniform(0.05, 0.5)))
            for k in range(n_gen)]
    lccs = []
    for bus, pn in p_nom.items():
        span = float(rng.uniform(0.5, 1.5)) if interior else float(rng.uniform(0.01, 0.05))
        lo, hi = pn - span, pn + span
        lccs.append(LccParams(bus, f"L{bus}", pn, hi, lo, float(rng.uniform(0.05, 0.2)), float(rng.uniform(0.02, 0.1)),
                              e=30.0, k_f=float(rng.uniform(10.0, 30.0))))
    return build_network(buses, lines, gens, lccs, name="random")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, status, detail = CRITERIA[number]
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
