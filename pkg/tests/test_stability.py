import math

import numpy as np
import pytest

from conftest import cached_run, random_network
from midc_droop.dynamics import Equilibrium
from midc_droop.errors import ZeroTotalDroop
from midc_droop.network import Bus, GeneratorParams, LccParams, Line, build_network
from midc_droop.oefc import DroopCoefficients, droop_coefficients
from midc_droop.scenario import load_fixture
from midc_droop.stability import (
    LyapunovConfig,
    check_security,
    hessian_blocks,
    hessian_fc,
    laplacian_spectrum,
    lyapunov_decrease_report,
    lyapunov_value,
    synchronous_frequency,
)


def test_security_examples(two_bus):
    assert check_security([0.0, 0.3], two_bus) == (True, pytest.approx(math.pi / 2 - 0.3))
    ok, margin = check_security([0.0, math.pi / 2], two_bus)
    assert not ok and margin == pytest.approx(0.0, abs=1e-15)
    assert not check_security([0.0, -2.0], two_bus)[0]


def test_two_bus_hessian(two_bus):
    assert hessian_fc([0.0, 0.0], two_bus) == pytest.approx(np.array([[10.0, -10.0], [-10.0, 10.0]]))
    h = hessian_fc([0.0, math.pi / 3], two_bus)
    assert h[0, 0] == pytest.approx(5.0)


def test_triangle_spectrum(triangle):
    spectrum = laplacian_spectrum(np.zeros(3), triangle)
    # complete graph with equal weights 10: eigenvalues 0, 30, 30
    assert spectrum.eigenvalues == pytest.approx([0.0, 30.0, 30.0], abs=1e-12)
    assert spectrum.ok and spectrum.kernel_dim == 1


def test_spectrum_on_random_secure_states(rng):
    for _ in range(50):
        net = random_network(rng)
        theta = rng.uniform(-0.3, 0.3, net.n)
        diff = np.abs(theta[net.edge_from] - theta[net.edge_to])
        if diff.max() >= math.pi / 2:
            continue
        assert laplacian_spectrum(theta, net).ok


def test_spectrum_flags_insecure_line(two_bus):
    spectrum = laplacian_spectrum([0.0, 2.0], two_bus)
    assert not spectrum.psd and not spectrum.ok


def two_bus_config(two_bus):
    eq = Equilibrium(np.zeros(2), 0.0, np.zeros(2), {1: 0.0}, {})
    return LyapunovConfig(eq, DroopCoefficients({1: 10.0}, {}))


def test_lyapunov_examples(two_bus):
    cfg = two_bus_config(two_bus)
    assert lyapunov_value([0.0, 0.0], [0.0, 0.0], [0, 0], cfg, two_bus).v == 0.0
    assert lyapunov_value([0.0, 0.0], [0.1, 0.0], [0, 0], cfg, two_bus).v == pytest.approx(0.05)
    val = lyapunov_value([0.0, 0.1], [0.0, 0.0], [0, 0], cfg, two_bus)
    assert val.v == pytest.approx(10 * (1 - math.cos(0.1)), rel=1e-12)
    # rigid rotation leaves the energy unchanged
    shifted = lyapunov_value([0.9, 1.0], [0.0, 0.0], [0, 0], cfg, two_bus)
    assert shifted.v == pytest.approx(val.v, rel=1e-12)


def test_lyapunov_link_term():
    net = build_network(
        [Bus(1, "generator", -2.0), Bus(2, "lcc", 0.0)],
        [Line(1, 2, 10.0)],
        [GeneratorParams(1, 10.0, 1.0, 9.0, 0.1)],
        [LccParams(2, "L", 2.0, 3.0, 1.0, 0.2, 0.05)],
    )
    eq = Equilibrium(np.zeros(2), 0.0, np.array([0.0, 2.0]), {1: 0.0}, {2: 0.0})
    cfg = LyapunovConfig(eq, DroopCoefficients({1: 10.0}, {2: 4.0}))
    val = lyapunov_value([0.0, 0.0], [0.0, 0.0], [0.0, 2.5], cfg, net)
    # d T (dp)^2 / 2 with d = 1/4
    assert val.v2 == pytest.approx(0.25 * 0.2 * 0.25 / 2)
    with pytest.raises(ValueError):
        LyapunovConfig(eq, DroopCoefficients({1: 10.0}, {2: 0.0})).weights(net)
    with pytest.raises(ValueError):
        LyapunovConfig(eq, cfg.coefficients, d={2: -1.0}).weights(net)


def test_positive_away_from_equilibrium(triangle, rng):
    c = DroopCoefficients({1: 10.0}, {2: 2.5})
    cfg = LyapunovConfig.for_network(triangle, c)
    for _ in range(200):
        theta = cfg.equilibrium.theta + rng.uniform(-0.5, 0.5, 3)
        omega = rng.uniform(-0.1, 0.1, 3)
        p = cfg.equilibrium.p_dc + np.array([0, rng.uniform(-0.5, 0.5), 0])
        assert lyapunov_value(theta, omega, p, cfg, triangle).v >= 0.0


def test_hessian_blocks(triangle):
    c = DroopCoefficients({1: 10.0}, {2: 2.5})
    blocks = hessian_blocks(LyapunovConfig.for_network(triangle, c), triangle)
    assert blocks["laplacian"].ok and blocks["inertia_pd"] and blocks["link_pd"]


def test_synchronous_frequency(triangle):
    c = DroopCoefficients({1: 10.0}, {2: 2.5})
    net = triangle.step_power(3, -1.0)
    assert synchronous_frequency(net, c) == pytest.approx(-0.08)
    doubled = DroopCoefficients({1: 20.0}, {2: 5.0})
    assert synchronous_frequency(net, doubled) == pytest.approx(-0.04)
    with pytest.raises(ZeroTotalDroop):
        synchronous_frequency(net, DroopCoefficients({1: 0.0}, {2: 0.0}))


def test_new_england_trip_frequency():
    # a 530 MW generator trip against all seven generators and four links
    sc = load_fixture("new_england_midc")
    c = droop_coefficients(sc)
    net = sc.network.step_power(35, -5.3)
    assert c.total() == pytest.approx(93.525)
    assert synchronous_frequency(net, c) == pytest.approx(-5.3 / 93.525, rel=1e-12)


def test_decrease_three_bus():
    sc, traj = cached_run("three_bus_minimal")
    rep = lyapunov_decrease_report(traj)
    assert rep.ok, rep.violations[:3]
    assert rep.v[0] > rep.v[-1] >= 0
    assert rep.v[-1] <= 1e-12 * rep.v[0]
