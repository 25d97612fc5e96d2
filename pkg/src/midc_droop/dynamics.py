"""Closed-loop grid dynamics.

The grid is a semi-explicit index-1 DAE.  Generator buses carry swing
dynamics with effective droop, LCC buses a first-order DC power lag towards
the droop order, and the angles of LCC and passive buses are fixed by the
lossless flow balance.  Frequencies at algebraic buses are obtained by
differentiating that balance in time.

Integration is fixed-step classical RK4 on the differential states with a
Newton solve of the algebraic angles at every stage.  Angles are kept
relative to the reference bus (lowest generator id).

An LCC with zero time constant is treated as instantaneous: its DC power is
an algebraic function of the local frequency and its bus angle becomes a
differential state.  Such links must have a positive droop coefficient, no
dead zone, and must stay inside their order limits.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .droop import LinkController
from .errors import (
    InfeasibleFlow,
    NewtonDivergence,
    NoSecureSolution,
    SimulationError,
    SingularJacobian,
    SolverError,
    ZeroTotalDroop,
)
from .network import Network, Role
from .oefc import DroopCoefficients, droop_coefficients
from .scenario import Scenario

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


# -- network algebra ------------------------------------------------------------

def bus_flows(theta: np.ndarray, network: Network) -> np.ndarray:
    """Net power leaving each bus, sum_j B_ij sin(theta_i - theta_j)."""
    a = network.incidence
    return a.T @ (network.b_eff * np.sin(a @ theta))


def line_flows(theta: np.ndarray, network: Network) -> np.ndarray:
    """Per-line P_ij = -B_ij sin(theta_i - theta_j) in the line's orientation."""
    return -network.b_eff * np.sin(theta[network.edge_from] - theta[network.edge_to])


def flow_laplacian(theta: np.ndarray, network: Network) -> np.ndarray:
    """Laplacian with line weights B_ij cos(theta_i - theta_j)."""
    a = network.incidence
    w = network.b_eff * np.cos(a @ theta)
    return a.T @ (w[:, None] * a)


def _as_bus_vector(p_dc, network: Network) -> np.ndarray:
    p_dc = np.asarray(p_dc, dtype=float)
    if p_dc.shape == (network.n,):
        return p_dc
    lccs = network.lcc_ids
    if p_dc.shape != (len(lccs),):
        raise ValueError(f"p_dc must have length {len(lccs)} (LCCs) or {network.n} (buses)")
    out = np.zeros(network.n)
    out[[network.index[b] for b in lccs]] = p_dc
    return out


def _algebraic_index(network: Network, instantaneous=()) -> np.ndarray:
    return np.array(
        [network.index[b.id] for b in network.buses
         if b.role is Role.PASSIVE or (b.role is Role.LCC and b.id not in instantaneous)],
        dtype=int,
    )


def algebraic_residual(theta, p_dc, network: Network) -> np.ndarray:
    """Flow-balance residual at LCC and passive buses, in bus order.

    ``p_dc`` is indexed either by LCC (network order) or by bus.
    """
    theta = np.asarray(theta, dtype=float)
    p_bus = _as_bus_vector(p_dc, network)
    alg = _algebraic_index(network)
    return (network.p + p_bus - bus_flows(theta, network))[alg]


def solve_algebraic(
    theta,
    p_dc,
    network: Network,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    alg: np.ndarray | None = None,
) -> np.ndarray:
    """Newton solve for the angles at algebraic buses.

    ``theta`` supplies the fixed differential angles and the starting guess
    for the rest.  Returns the full angle vector.

    Raises
    ------
    InfeasibleFlow
        A bus needs more power than its lines can carry, or the solution
        leaves the security region.
    NewtonDivergence
        No convergence within ``max_iter`` iterations.
    """
    theta = np.array(theta, dtype=float)
    p_bus = _as_bus_vector(p_dc, network)
    if alg is None:
        alg = _algebraic_index(network)
    if alg.size == 0:
        return theta
    inj = network.p + p_bus
    grid = np.ix_(alg, alg)
    for it in range(max_iter + 1):
        res = (inj - bus_flows(theta, network))[alg]
        if np.max(np.abs(res)) <= tol:
            break
        if it == max_iter:
            _diagnose_infeasible(inj, network, alg)
            raise NewtonDivergence(f"algebraic solve did not converge (residual {np.max(np.abs(res)):.3e})")
        jac = flow_laplacian(theta, network)[grid]
        try:
            delta = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            _diagnose_infeasible(inj, network, alg)
            raise SingularJacobian("flow Jacobian is singular") from None
        if not np.all(np.isfinite(delta)):
            _diagnose_infeasible(inj, network, alg)
            raise NewtonDivergence("algebraic solve produced non-finite angles")
        theta[alg] += delta
    diff = theta[network.edge_from] - theta[network.edge_to]
    if np.any(np.abs(diff) >= math.pi / 2):
        raise InfeasibleFlow("algebraic solution leaves the security region")
    return theta


def _diagnose_infeasible(inj, network: Network, alg) -> None:
    capacity = np.abs(network.incidence).T @ network.b_eff
    bad = [int(k) for k in alg if abs(inj[k]) > capacity[k]]
    if bad:
        ids = [network.buses[k].id for k in bad]
        raise InfeasibleFlow(f"injection exceeds line capacity at buses {ids}")


def algebraic_bus_frequencies(theta, omega_diff, network: Network, p_dc_dot=None) -> np.ndarray:
    """Frequencies at LCC and passive buses from the differentiated balance.

    ``omega_diff`` gives the generator-bus frequencies (indexed by generator
    order or by bus); ``p_dc_dot`` the DC power rates (by LCC or by bus).
    Returns the frequencies at the algebraic buses in bus order.
    """
    theta = np.asarray(theta, dtype=float)
    gens = np.array([network.index[g] for g in network.generator_ids], dtype=int)
    omega_diff = np.asarray(omega_diff, dtype=float)
    omega = np.zeros(network.n)
    if omega_diff.shape == (network.n,):
        omega[gens] = omega_diff[gens]
    else:
        omega[gens] = omega_diff
    pdot = np.zeros(network.n) if p_dc_dot is None else _as_bus_vector(p_dc_dot, network)
    alg = _algebraic_index(network)
    h = flow_laplacian(theta, network)
    rhs = pdot[alg] - h[np.ix_(alg, gens)] @ omega[gens]
    try:
        return np.linalg.solve(h[np.ix_(alg, alg)], rhs)
    except np.linalg.LinAlgError:
        raise SingularJacobian("frequency system is singular at the security boundary") from None


# -- states and trajectories -----------------------------------------------------

@dataclass(frozen=True)
class SystemState:
    """Grid state at one instant.

    ``theta`` is relative to the reference bus, ``omega`` holds frequency
    deviations at every bus (differential at generators, derived elsewhere),
    ``p_dc`` the DC injection per bus (zero away from LCCs).
    """

    t: float
    theta: np.ndarray
    omega: np.ndarray
    p_dc: np.ndarray
    links: dict = field(default_factory=dict)
    saturated: np.ndarray | None = None


@dataclass(frozen=True)
class Equilibrium:
    theta: np.ndarray
    omega_syn: float
    p_dc: np.ndarray
    u_gen: dict
    u_lcc: dict
    saturated: frozenset = frozenset()

    def as_state(self, t: float = 0.0) -> SystemState:
        n = len(self.theta)
        return SystemState(t, self.theta.copy(), np.full(n, self.omega_syn), self.p_dc.copy())


@dataclass
class Trajectory:
    """Uniformly sampled simulation output.

    Arrays are indexed ``[sample, bus]`` (``[sample, line]`` for flows).
    ``networks`` lists ``(t, network)`` pairs: the network in force from time
    ``t`` on.
    """

    network: Network
    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    p_dc: np.ndarray
    saturated: np.ndarray
    u_gen: np.ndarray
    u_lcc: np.ndarray
    flows: np.ndarray
    latched: np.ndarray
    events: list
    networks: list
    coefficients: DroopCoefficients
    failure: str | None = None

    @property
    def final_network(self) -> Network:
        return self.networks[-1][1]

    def network_at(self, t: float) -> Network:
        current = self.networks[0][1]
        for start, net in self.networks:
            if start <= t:
                current = net
        return current

    def state(self, k: int) -> SystemState:
        return SystemState(
            float(self.t[k]), self.theta[k].copy(), self.omega[k].copy(), self.p_dc[k].copy(),
            saturated=self.saturated[k].copy(),
        )

    def terminal_omega(self) -> float:
        return float(self.omega[-1].mean())

    def terminal_spread(self) -> float:
        return float(np.ptp(self.omega[-1]))

    def since_last_event(self) -> np.ndarray:
        """Sample indices strictly after the last event (or all samples)."""
        if not self.events:
            return np.arange(len(self.t))
        t_last = self.events[-1][0]
        return np.nonzero(self.t > t_last + 1e-12)[0]


class _Recorder:
    def __init__(self, network: Network, coefficients: DroopCoefficients):
        self.network = network
        self.coefficients = coefficients
        self.rows = {k: [] for k in ("t", "theta", "omega", "p_dc", "sat", "u_gen", "u_lcc", "flows", "latched")}

    def add(self, model: "_Model", state: SystemState):
        r = self.rows
        n = self.network.n
        r["t"].append(state.t)
        r["theta"].append(state.theta.copy())
        r["omega"].append(state.omega.copy())
        r["p_dc"].append(state.p_dc.copy())
        r["sat"].append(state.saturated.copy())
        u_gen = np.zeros(n)
        u_gen[model.gen] = -model.k_gen * state.omega[model.gen]
        r["u_gen"].append(u_gen)
        u_lcc = np.zeros(n)
        u_lcc[model.lcc] = state.p_dc[model.lcc] - model.p_nominal[model.lcc]
        r["u_lcc"].append(u_lcc)
        r["flows"].append(line_flows(state.theta, self.network))
        latched = np.zeros(n, dtype=bool)
        for bus, link in state.links.items():
            latched[self.network.index[bus]] = link.active
        r["latched"].append(latched)

    def build(self, events, networks, failure=None) -> Trajectory:
        r = self.rows
        stack = lambda key, width: np.array(r[key]) if r[key] else np.zeros((0, width))
        n, m = self.network.n, len(self.network.lines)
        return Trajectory(
            network=self.network,
            t=np.array(r["t"]),
            theta=stack("theta", n),
            omega=stack("omega", n),
            p_dc=stack("p_dc", n),
            saturated=stack("sat", n).astype(bool),
            u_gen=stack("u_gen", n),
            u_lcc=stack("u_lcc", n),
            flows=stack("flows", m),
            latched=stack("latched", n).astype(bool),
            events=list(events),
            networks=list(networks),
            coefficients=self.coefficients,
            failure=failure,
        )


# -- compiled model ------------------------------------------------------------------

class _Model:
    """Index bookkeeping and right-hand side for one network configuration."""

    def __init__(self, network: Network, coefficients: DroopCoefficients):
        self.network = net = network
        n = net.n
        ix = net.index
        self.gen = np.array([ix[g] for g in net.generator_ids], dtype=int)
        if self.gen.size == 0:
            raise SimulationError("the grid has no generator left")
        self.ref = ix[net.reference_bus]
        self.lcc = np.array([ix[l] for l in net.lcc_ids], dtype=int)
        inst = [l for l in net.lcc_ids if net.lccs[l].t_d == 0.0]
        self.inst = np.array([ix[l] for l in inst], dtype=int)
        self.dyn = np.array([ix[l] for l in net.lcc_ids if net.lccs[l].t_d > 0.0], dtype=int)
        self.alg = _algebraic_index(net, set(inst))
        diff = np.concatenate([self.gen, self.inst])
        self.diff = np.sort(diff)
        self.diff_free = self.diff[self.diff != self.ref]

        self.m = np.array([net.generators[net.buses[k].id].m for k in self.gen])
        self.k_gen = np.array([coefficients.k_gen[net.buses[k].id] for k in self.gen])
        self.k_lcc = np.zeros(n)
        self.t_d = np.zeros(n)
        self.p_nominal = np.zeros(n)
        self.p_lo = np.zeros(n)
        self.p_hi = np.zeros(n)
        for k in self.lcc:
            lcc = net.lccs[net.buses[k].id]
            self.k_lcc[k] = coefficients.k_lcc[lcc.bus]
            self.t_d[k] = lcc.t_d
            self.p_nominal[k] = lcc.p_nominal
            self.p_lo[k] = lcc.p_min
            self.p_hi[k] = lcc.p_max
        for k in self.inst:
            if self.k_lcc[k] <= 0:
                raise SimulationError(f"instantaneous link at bus {net.buses[k].id} needs a positive droop")
        self.p = net.p
        self.known = np.setdiff1d(np.arange(n), self.alg)
        self.dyn_pos = np.nonzero(np.isin(self.alg, self.dyn))[0]
        self.dyn_bus = self.alg[self.dyn_pos]
        self.grid_aa = np.ix_(self.alg, self.alg)
        self.grid_ak = np.ix_(self.alg, self.known)
        self.sizes = (len(self.diff_free), len(self.gen), len(self.dyn))

    # state vector layout: [theta at non-reference differential buses, omega_G, p_dc at lagged LCCs]

    def pack(self, state: SystemState) -> np.ndarray:
        return np.concatenate([state.theta[self.diff_free], state.omega[self.gen], state.p_dc[self.dyn]])

    def unpack(self, y: np.ndarray, theta_guess: np.ndarray):
        a, g, _ = self.sizes
        theta = theta_guess.copy()
        theta[self.ref] = 0.0
        theta[self.diff_free] = y[:a]
        omega_g = y[a:a + g]
        p_dyn = y[a + g:]
        return theta, omega_g, p_dyn

    def active_mask(self, links: dict) -> np.ndarray:
        mask = np.zeros(self.network.n, dtype=bool)
        for k in self.dyn:
            mask[k] = links[self.network.buses[k].id].active
        return mask

    def inst_omega(self, theta, flows) -> np.ndarray:
        k = self.inst
        return (self.p[k] + self.p_nominal[k] - flows[k]) / self.k_lcc[k]

    def solve_frequencies(self, theta, omega_known, p_bus, active):
        """Frequencies at algebraic buses with the lagged LCC orders coupled in.

        Saturation of the droop order is handled by an active-set iteration;
        returns ``(omega_alg, saturated_mask)``.
        """
        if self.alg.size == 0:
            return np.zeros(0), np.zeros(self.network.n, dtype=bool)
        h = flow_laplacian(theta, self.network)
        base_rhs = -h[self.grid_ak] @ omega_known[self.known]
        h_aa = h[self.grid_aa]
        pos, bus = self.dyn_pos, self.dyn_bus
        tau = self.t_d[bus]
        on = active[bus]
        side = np.zeros(len(bus))  # +1 held at upper bound, -1 at lower
        for _ in range(len(bus) + 3):
            free = on & (side == 0)
            held = np.where(~on, self.p_nominal[bus], np.where(side > 0, self.p_hi[bus], self.p_lo[bus]))
            mat = h_aa.copy()
            mat[pos[free], pos[free]] += self.k_lcc[bus[free]] / tau[free]
            rhs = base_rhs.copy()
            rhs[pos] += np.where(free, self.p_nominal[bus], held) / tau - p_bus[bus] / tau
            try:
                omega_alg = np.linalg.solve(mat, rhs)
            except np.linalg.LinAlgError:
                raise SingularJacobian("frequency system is singular at the security boundary") from None
            order = self.p_nominal[bus] - self.k_lcc[bus] * omega_alg[pos]
            new_side = np.where(on & (order > self.p_hi[bus]), 1.0, np.where(on & (order < self.p_lo[bus]), -1.0, 0.0))
            if np.array_equal(new_side, side):
                break
            side = new_side
        sat = np.zeros(self.network.n, dtype=bool)
        sat[bus] = side != 0
        return omega_alg, sat

    def evaluate(self, y, theta_guess, active):
        """Consistent algebraic variables and state derivative at ``y``."""
        net = self.network
        theta, omega_g, p_dyn = self.unpack(y, theta_guess)
        p_bus = np.zeros(net.n)
        p_bus[self.dyn] = p_dyn
        omega = np.zeros(net.n)
        omega[self.gen] = omega_g
        if self.inst.size:
            # angles of instantaneous links are differential; their DC power follows omega
            theta = solve_algebraic(theta, p_bus, net, alg=self.alg) if self.alg.size else theta
            flows = bus_flows(theta, net)
            omega[self.inst] = self.inst_omega(theta, flows)
            p_bus[self.inst] = self.p_nominal[self.inst] - self.k_lcc[self.inst] * omega[self.inst]
            bad = (p_bus[self.inst] > self.p_hi[self.inst]) | (p_bus[self.inst] < self.p_lo[self.inst])
            if np.any(bad):
                raise SimulationError("instantaneous link order left its limits")
            # algebraic angles depend on inst p_dc only through inst buses, which are differential
        else:
            theta = solve_algebraic(theta, p_bus, net, alg=self.alg)
            flows = bus_flows(theta, net)
        omega_alg, sat = self.solve_frequencies(theta, omega, p_bus, active)
        omega[self.alg] = omega_alg

        target = np.where(active, np.clip(self.p_nominal - self.k_lcc * omega, self.p_lo, self.p_hi), self.p_nominal)
        d_theta = omega[self.diff_free] - omega[self.ref]
        d_omega = (self.p[self.gen] - flows[self.gen] - self.k_gen * omega_g) / self.m
        d_p = (target[self.dyn] - p_dyn) / self.t_d[self.dyn]
        return np.concatenate([d_theta, d_omega, d_p]), theta, omega, p_bus, sat


# -- stepping -------------------------------------------------------------------------

def _rk4(model: _Model, state: SystemState, dt: float) -> SystemState:
    active = model.active_mask(state.links)
    y0 = model.pack(state)
    k1, theta, *_ = model.evaluate(y0, state.theta, active)
    k2, theta, *_ = model.evaluate(y0 + 0.5 * dt * k1, theta, active)
    k3, theta, *_ = model.evaluate(y0 + 0.5 * dt * k2, theta, active)
    k4, theta, *_ = model.evaluate(y0 + dt * k3, theta, active)
    y1 = y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _consistent(model, y1, theta, state.t + dt, state.links)


def _consistent(model: _Model, y, theta_guess, t, links) -> SystemState:
    """Complete a differential state with algebraic angles, frequencies and latches."""
    active = model.active_mask(links)
    _, theta, omega, p_bus, sat = model.evaluate(y, theta_guess, active)
    new_links = {bus: link.observe(omega[model.network.index[bus]]) for bus, link in links.items()}
    return SystemState(t, theta, omega, p_bus, new_links, sat)


def step(state: SystemState, network: Network, coefficients: DroopCoefficients, dt: float) -> SystemState:
    """Advance a consistent state by one RK4 step of size ``dt``."""
    return _rk4(_Model(network, coefficients), state, dt)


def _links_for(network: Network, coefficients: DroopCoefficients, threshold: float, old=None) -> dict:
    links = {}
    for bus, lcc in network.lccs.items():
        if old and bus in old:
            links[bus] = old[bus]
        else:
            links[bus] = LinkController.from_lcc(lcc, coefficients.k_lcc[bus], threshold)
    return links


def initial_state(network: Network, coefficients: DroopCoefficients, threshold: float = 0.0, t: float = 0.0) -> SystemState:
    """Equilibrium start with droop corrections as seen through the dead zones."""
    links = _links_for(network, coefficients, threshold)
    # links only count towards the starting equilibrium if their dead zone is already open
    k_start = dict(coefficients.k_lcc)
    if threshold > 0:
        k_start = {b: 0.0 for b in k_start}
    eq = steady_state(network, DroopCoefficients(coefficients.k_gen, k_start))
    model = _Model(network, coefficients)
    state = eq.as_state(t)
    links = {bus: link.observe(eq.omega_syn) for bus, link in links.items()}
    state = dataclasses.replace(state, links=links)
    return _consistent(model, model.pack(state), state.theta, t, links)


def _rebase(state: SystemState, old: _Model, new: _Model) -> SystemState:
    theta = state.theta - state.theta[new.ref]
    return dataclasses.replace(state, theta=theta)


def simulate(
    scenario: Scenario,
    coefficients: DroopCoefficients | None = None,
    initial: SystemState | None = None,
) -> Trajectory:
    """Integrate a scenario over its horizon.

    Events are applied at their exact times; the post-event state is the
    one recorded at that instant.  On a solver failure a
    :class:`SimulationError` is raised whose ``trajectory`` holds the
    samples recorded so far.
    """
    network = scenario.network
    control = scenario.control
    if coefficients is None:
        coefficients = droop_coefficients(scenario)
    dt, horizon, out = control.step, control.horizon, control.output
    if out < dt * (1 - 1e-9):
        out = dt

    recorder = _Recorder(network, coefficients)
    networks = [(0.0, network)]
    applied = []
    model = _Model(network, coefficients)
    state = initial if initial is not None else initial_state(network, coefficients, control.dead_zone)
    pending = [e for e in scenario.events if e.t <= horizon]
    eps = 1e-9 * max(1.0, horizon)

    try:
        next_out = state.t
        while True:
            while pending and pending[0].t <= state.t + eps:
                event = pending.pop(0)
                network = event.apply(network)
                networks.append((event.t, network))
                applied.append((event.t, event))
                new_model = _Model(network, coefficients)
                state = _rebase(state, model, new_model)
                links = _links_for(network, coefficients, control.dead_zone, state.links)
                links = {b: l for b, l in links.items() if b in network.lccs}
                p_bus = state.p_dc.copy()
                p_bus[[k for k in range(network.n) if network.buses[k].role is not Role.LCC]] = 0.0
                state = dataclasses.replace(state, p_dc=p_bus, links=links)
                model = new_model
                state = _consistent(model, model.pack(state), state.theta, state.t, state.links)
            if state.t >= next_out - eps:
                recorder.add(model, state)
                next_out += out
            if state.t >= horizon - eps:
                break
            t_stop = min(next_out, horizon, pending[0].t if pending else math.inf)
            h = min(dt, t_stop - state.t)
            if t_stop - (state.t + h) < eps:
                h = t_stop - state.t
            state = _rk4(model, state, h)
            if abs(state.t - t_stop) < eps:
                state = dataclasses.replace(state, t=t_stop)
    except (SolverError, SimulationError) as exc:
        traj = recorder.build(applied, networks, failure=f"{type(exc).__name__} at t={state.t:.6g}: {exc}")
        raise SimulationError(str(exc), trajectory=traj) from exc
    return recorder.build(applied, networks)


# -- steady state -------------------------------------------------------------------

def solve_power_flow(injection: np.ndarray, network: Network, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER):
    """Angles with the reference bus at zero that carry a balanced injection."""
    ref = network.index[network.reference_bus]
    free = np.array([k for k in range(network.n) if k != ref], dtype=int)
    theta = np.zeros(network.n)
    for it in range(max_iter + 1):
        res = (injection - bus_flows(theta, network))[free]
        if np.max(np.abs(res), initial=0.0) <= tol:
            return theta
        if it == max_iter:
            break
        jac = flow_laplacian(theta, network)[np.ix_(free, free)]
        try:
            theta[free] += np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(theta)):
            break
    raise NoSecureSolution("no power-flow solution found")


def steady_state(network: Network, coefficients: DroopCoefficients, tol: float = NEWTON_TOL) -> Equilibrium:
    """Droop equilibrium: common frequency, DC powers and angles.

    The common frequency follows from the total imbalance over the total
    droop.  LCCs whose order would leave its limits are held at the bound and
    the frequency is recomputed until the saturated set settles.
    """
    k_gen = np.array([coefficients.k_gen[g] for g in network.generator_ids])
    lccs = [network.lccs[b] for b in network.lcc_ids]
    k_lcc = np.array([coefficients.k_lcc[l.bus] for l in lccs])
    p_nom = np.array([l.p_nominal for l in lccs])
    lo = np.array([l.p_min for l in lccs])
    hi = np.array([l.p_max for l in lccs])
    p_total = float(network.p.sum())

    held = np.zeros(len(lccs))  # +1 upper, -1 lower, 0 free
    for _ in range(len(lccs) + 2):
        free = held == 0
        num = p_total + p_nom[free].sum() + hi[held > 0].sum() + lo[held < 0].sum()
        den = k_gen.sum() + k_lcc[free].sum()
        if den <= 0:
            if abs(num) > 0:
                raise ZeroTotalDroop("imbalance with zero total droop")
            omega = 0.0
        else:
            omega = num / den
        order = p_nom - k_lcc * omega
        new_held = np.where(order > hi, 1.0, np.where(order < lo, -1.0, 0.0))
        if np.array_equal(new_held, held):
            break
        held = new_held
    p_dc = np.clip(p_nom - k_lcc * omega, lo, hi)

    p_bus = _as_bus_vector(p_dc, network)
    injection = network.p + p_bus
    gen_idx = [network.index[g] for g in network.generator_ids]
    injection[gen_idx] -= k_gen * omega
    theta = solve_power_flow(injection, network, tol=tol)
    diff = theta[network.edge_from] - theta[network.edge_to]
    if np.any(np.abs(diff) >= math.pi / 2):
        raise NoSecureSolution("power-flow solution is outside the security region")
    return Equilibrium(
        theta=theta,
        omega_syn=float(omega),
        p_dc=p_bus,
        u_gen={g: float(-k * omega) for g, k in zip(network.generator_ids, k_gen)},
        u_lcc={l.bus: float(p - l.p_nominal) for l, p in zip(lccs, p_dc)},
        saturated=frozenset(l.bus for l, h in zip(lccs, held) if h != 0),
    )
