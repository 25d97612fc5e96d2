import dataclasses
import math

import numpy as np
import pytest

from conftest import cached_run, random_network
from midc_droop.dynamics import (
    algebraic_bus_frequencies,
    algebraic_residual,
    bus_flows,
    initial_state,
    line_flows,
    simulate,
    solve_algebraic,
    steady_state,
    step,
)
from midc_droop.errors import InfeasibleFlow, NoSecureSolution, SimulationError
from midc_droop.network import Bus, GeneratorParams, LccParams, Line, build_network
from midc_droop.oefc import DroopCoefficients
from midc_droop.scenario import ControlConfig, Event, EventKind, Scenario, load_fixture


def two_bus_net(p_load=-1.0, b=10.0):
    return build_network(
        [Bus(1, "generator", -p_load), Bus(2, "passive", p_load)],
        [Line(1, 2, b)],
        [GeneratorParams(1, 10.0, 1.0, 9.0, 0.1)],
        [],
    )


def test_line_flow_sign():
    net = two_bus_net()
    # oriented line value is -B sin(theta_i - theta_j)
    flows = line_flows(np.array([0.0, -0.1]), net)
    assert flows[0] == pytest.approx(-10 * math.sin(0.1))
    assert bus_flows(np.array([0.0, -0.1]), net) == pytest.approx([10 * math.sin(0.1), -10 * math.sin(0.1)])


def test_residual_examples():
    net = two_bus_net()
    assert algebraic_residual([0.0, 0.0], [], net) == pytest.approx([-1.0])
    theta = solve_algebraic([0.0, 0.0], [], net)
    assert theta[1] == pytest.approx(-0.10016742116155977, abs=1e-12)
    assert abs(algebraic_residual(theta, [], net)[0]) <= 1e-10


def test_infeasible_flow():
    net = two_bus_net(p_load=-15.0)
    with pytest.raises(InfeasibleFlow):
        solve_algebraic([0.0, 0.0], [], net)
    with pytest.raises(NoSecureSolution):
        steady_state(net, DroopCoefficients({1: 10.0}, {}))


def test_rigid_rotation_invariance(triangle):
    theta = np.array([0.0, 0.05, -0.12])
    f0 = bus_flows(theta, triangle)
    assert bus_flows(theta + 0.7, triangle) == pytest.approx(f0, abs=1e-13)
    w = algebraic_bus_frequencies(theta, np.array([-0.01, 0, 0]), triangle)
    w_shift = algebraic_bus_frequencies(theta + 0.7, np.array([-0.01, 0, 0]), triangle)
    assert w == pytest.approx(w_shift, abs=1e-13)
    # a uniform frequency everywhere with no DC ramp is consistent
    assert w == pytest.approx([-0.01, -0.01], abs=1e-13)


def test_frequencies_match_angle_rates():
    """Algebraic-bus frequencies equal the time derivative of the relative angles plus the reference."""
    sc, traj = cached_run("three_bus_minimal")
    dt = traj.t[1] - traj.t[0]
    k = np.searchsorted(traj.t, 1.5)
    rate = (traj.theta[k + 1] - traj.theta[k - 1]) / (2 * dt)
    ref = sc.network.index[sc.network.reference_bus]
    expected = traj.omega[k] - traj.omega[k, ref]
    # central difference on the output grid is second order in the sample spacing
    assert rate == pytest.approx(expected, abs=5e-3 * np.abs(expected).max())


def test_single_generator_step():
    net = build_network(
        [Bus(1, "generator", 0.0), Bus(2, "passive", 0.0)],
        [Line(1, 2, 10.0)],
        [GeneratorParams(1, 10.0, 1.0, 9.0, 0.1)],
        [],
    )
    sc = Scenario(net, (Event(0.0, EventKind.POWER_STEP, 2, -1.0),),
                  ControlConfig(horizon=5.0, step=0.01, output=0.1))
    traj = simulate(sc)
    # M = 10, k = 10: omega = -0.1 (1 - exp(-t))
    expected = -0.1 * (1 - np.exp(-traj.t))
    assert traj.omega[:, 0] == pytest.approx(expected, abs=1e-9)


def test_lcc_lag_response():
    net = build_network(
        [Bus(1, "generator", -3.0), Bus(2, "lcc", -2.0)],
        [Line(1, 2, 10.0)],
        [GeneratorParams(1, 1e9, 1.0, 9.0, 0.1)],
        [LccParams(2, "L", 5.0, 6.0, 4.0, 0.5, 0.05)],
    )
    coeffs = DroopCoefficients({1: 10.0}, {2: 10.0})
    start = initial_state(net, coeffs)
    omega = start.omega.copy()
    omega[0] = -0.01
    y0 = dataclasses.replace(start, omega=omega)
    s1 = step(y0, net, coeffs, 1e-4)
    theta0 = start.theta[1] - start.theta[0]
    tau = 0.5 + 10.0 / (10.0 * math.cos(theta0))
    rate = (s1.p_dc[1] - start.p_dc[1]) / 1e-4
    assert rate == pytest.approx(0.1 / tau, rel=1e-3)
    sc = Scenario(net, (), ControlConfig(horizon=40.0, step=0.05, output=1.0))
    traj = simulate(sc, coefficients=coeffs, initial=y0)
    assert traj.p_dc[-1, 1] == pytest.approx(5.1, abs=1e-6)
    # the heavy generator drifts by about 1e-8, so allow that much backtracking
    assert np.all(np.diff(traj.p_dc[:, 1]) >= -1e-7)


def test_no_event_stays_at_equilibrium():
    sc = load_fixture("three_bus_minimal")
    sc = dataclasses.replace(sc, events=(), control=dataclasses.replace(sc.control, horizon=5.0))
    traj = simulate(sc)
    assert np.ptp(traj.omega, axis=0).max() <= 1e-12
    assert np.ptp(traj.theta, axis=0).max() <= 1e-12


def test_steady_state_examples(triangle):
    c = DroopCoefficients({1: 10.0}, {2: 2.5})
    eq = steady_state(triangle, c)
    assert eq.omega_syn == pytest.approx(0.0)
    stepped = triangle.step_power(3, -1.0)
    eq = steady_state(stepped, c)
    assert eq.omega_syn == pytest.approx(-0.08)
    assert eq.u_gen[1] == pytest.approx(0.8)
    assert eq.u_lcc[2] == pytest.approx(0.2)
    # limited link: order 2 + 0.2 k would exceed 2.5 when k is large
    eq = steady_state(stepped, DroopCoefficients({1: 10.0}, {2: 100.0}))
    assert 2 in eq.saturated
    assert eq.omega_syn == pytest.approx(-0.05)
    assert eq.p_dc[1] == pytest.approx(2.5)


def test_terminal_matches_steady_state():
    sc, traj = cached_run("three_bus_minimal")
    eq = steady_state(traj.final_network, traj.coefficients)
    assert traj.terminal_omega() == pytest.approx(eq.omega_syn, abs=1e-9)
    assert traj.terminal_spread() <= 1e-9


def test_step_halving_converges():
    sc = load_fixture("three_bus_minimal")
    runs = []
    for dt in (0.04, 0.02, 0.01):
        ctrl = dataclasses.replace(sc.control, horizon=3.0, step=dt, output=0.04)
        runs.append(simulate(dataclasses.replace(sc, control=ctrl)))
    e1 = np.abs(runs[0].omega - runs[2].omega).max()
    e2 = np.abs(runs[1].omega - runs[2].omega).max()
    assert e2 < e1
    assert e2 <= 1e-6


def test_event_sample_is_post_event():
    sc, traj = cached_run("three_bus_minimal")
    k = int(np.argmin(np.abs(traj.t - 1.0)))
    assert traj.t[k] == pytest.approx(1.0)
    assert traj.network_at(1.0).p[2] == pytest.approx(-4.0)
    assert traj.since_last_event()[0] == k + 1


def test_partial_trajectory_on_failure():
    net = two_bus_net(p_load=-1.0)
    sc = Scenario(net, (Event(1.0, EventKind.POWER_STEP, 2, -20.0),),
                  ControlConfig(horizon=3.0, step=0.05, output=0.1))
    with pytest.raises(SimulationError) as info:
        simulate(sc)
    traj = info.value.trajectory
    assert traj is not None and traj.failure
    assert len(traj.t) >= 10 and traj.t[-1] < 1.0 + 1e-9


def test_generator_trip_runs_to_new_equilibrium():
    sc, traj = cached_run("g6_trip")
    eq = steady_state(traj.final_network, traj.coefficients)
    assert traj.terminal_omega() == pytest.approx(eq.omega_syn, abs=1e-6)
    assert 35 not in traj.final_network.generators


def test_random_networks_relax(rng):
    for _ in range(3):
        net = random_network(rng, m_range=(1.0, 4.0))
        k_gen = {g: 1 / net.generators[g].beta for g in net.generator_ids}
        k_lcc = {l: 5.0 for l in net.lcc_ids}
        c = DroopCoefficients(k_gen, k_lcc)
        bus = net.buses[-1].id
        sc = Scenario(net, (Event(0.5, EventKind.POWER_STEP, bus, -0.2),),
                      ControlConfig(horizon=20.0, step=0.05, output=0.5))
        traj = simulate(sc, coefficients=c)
        eq = steady_state(traj.final_network, c)
        assert traj.terminal_omega() == pytest.approx(eq.omega_syn, abs=1e-5)
