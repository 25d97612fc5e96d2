"""Partial primal-dual algorithm for the distributed allocation problem.

Every bus carries a price ``lam`` and every line a flow multiplier ``nu``.
Generator prices follow a gradient flow, line multipliers integrate price
differences, and prices at LCC and passive buses are fixed by algebraic
stationarity conditions.  With stepsizes tau = 1/M and gamma = B cos theta
the iteration reproduces the grid dynamics with instantaneous links, which
:func:`compare_with_dynamics` checks sample by sample.

LCC regulation is taken unprojected, u = -k lam; the equivalence is only
claimed away from the order limits.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory, line_flows, simulate
from .errors import NewtonDivergence, NoConvergence, SingularJacobian
from .network import Network, Role
from .oefc import DroopCoefficients, OefcProblem, optimal_droop
from .scenario import Scenario


@dataclass(frozen=True)
class PdProblem:
    """Bus and line data the algorithm needs, all indexed by bus position.

    ``k_gen`` is 1/beta at generator buses, ``k_lcc`` the link droop at LCC
    buses (zero elsewhere).  ``b_eff`` bounds the line multipliers when the
    stepsizes are tied to the flows.
    """

    p: np.ndarray
    p_dc: np.ndarray
    k_gen: np.ndarray
    k_lcc: np.ndarray
    gen: np.ndarray
    lcc: np.ndarray
    passive: np.ndarray
    incidence: np.ndarray
    b_eff: np.ndarray

    @classmethod
    def from_network(cls, network: Network, coefficients: DroopCoefficients | None = None) -> "PdProblem":
        if coefficients is None:
            coefficients = optimal_droop(OefcProblem.from_network(network))
        n = network.n
        k_gen = np.zeros(n)
        k_lcc = np.zeros(n)
        p_dc = np.zeros(n)
        for g in network.generator_ids:
            k_gen[network.index[g]] = coefficients.k_gen[g]
        for l in network.lcc_ids:
            k_lcc[network.index[l]] = coefficients.k_lcc[l]
            p_dc[network.index[l]] = network.lccs[l].p_nominal
        roles = [b.role for b in network.buses]
        pick = lambda role: np.array([k for k, r in enumerate(roles) if r is role], dtype=int)
        gen, lcc, passive = pick(Role.GENERATOR), pick(Role.LCC), pick(Role.PASSIVE)
        if np.any(k_lcc[lcc] <= 0):
            raise ValueError("every link needs a positive droop for the algebraic price condition")
        return cls(network.p.copy(), p_dc, k_gen, k_lcc, gen, lcc, passive, network.incidence, network.b_eff)

    @property
    def n(self) -> int:
        return len(self.p)

    def imbalance(self) -> float:
        return float(self.p.sum() + self.p_dc.sum())


@dataclass(frozen=True)
class PdState:
    """Prices per bus, multipliers per line and the stepsizes.

    ``nu[e]`` is the multiplier of line ``e`` in its stored orientation
    (i to j); the reverse orientation is ``-nu[e]``.  ``gamma`` is either a
    per-line array of fixed stepsizes or ``None``, in which case
    gamma = sqrt(B^2 - nu^2) follows the multipliers.
    """

    t: float
    lam: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.tau) <= 0):
            raise ValueError("stepsizes tau must be positive")
        if self.gamma is not None and np.any(np.asarray(self.gamma) <= 0):
            raise ValueError("stepsizes gamma must be positive")

    def nu_oriented(self, i: int, j: int, problem: PdProblem) -> float:
        """Multiplier from bus position ``i`` to ``j``; antisymmetric by construction."""
        a = problem.incidence
        for e in range(a.shape[0]):
            if a[e, i] == 1 and a[e, j] == -1:
                return float(self.nu[e])
            if a[e, i] == -1 and a[e, j] == 1:
                return float(-self.nu[e])
        raise KeyError(f"no line between positions {i} and {j}")


def _gamma(nu, gamma, problem: PdProblem) -> np.ndarray:
    if gamma is not None:
        return gamma
    g2 = problem.b_eff**2 - nu**2
    if np.any(g2 <= 0):
        raise SingularJacobian("line multiplier reached the line capacity")
    return np.sqrt(g2)


def algebraic_prices(lam_gen, nu, gamma, problem: PdProblem) -> np.ndarray:
    """Full price vector given generator prices and line multipliers.

    LCC prices solve their balance, passive prices keep the passive balance
    stationary (the line update must not change the net multiplier there).
    """
    a = problem.incidence
    lam = np.zeros(problem.n)
    lam[problem.gen] = lam_gen
    net = a.T @ nu
    lam[problem.lcc] = (problem.p[problem.lcc] + problem.p_dc[problem.lcc] + net[problem.lcc]) / problem.k_lcc[problem.lcc]
    if problem.passive.size:
        lap = a.T @ (gamma[:, None] * a)
        known = np.concatenate([problem.gen, problem.lcc])
        pp = np.ix_(problem.passive, problem.passive)
        try:
            lam[problem.passive] = np.linalg.solve(lap[pp], -lap[np.ix_(problem.passive, known)] @ lam[known])
        except np.linalg.LinAlgError:
            raise NewtonDivergence("passive price block is singular") from None
    return lam


def pd_derivative(lam_gen, nu, tau, gamma, problem: PdProblem):
    """Time derivative of generator prices and line multipliers, plus the full prices."""
    g = _gamma(nu, gamma, problem)
    lam = algebraic_prices(lam_gen, nu, g, problem)
    net = problem.incidence.T @ nu
    gen = problem.gen
    d_lam = tau * (-problem.k_gen[gen] * lam_gen + problem.p[gen] + net[gen])
    d_nu = -g * (problem.incidence @ lam)
    return d_lam, d_nu, lam


def pd_step(state: PdState, problem: PdProblem, h: float) -> PdState:
    """One classical RK4 step of size ``h`` on generator prices and line multipliers."""
    x0, y0 = state.lam[problem.gen], state.nu
    tau, gam = state.tau, state.gamma
    a1, b1, _ = pd_derivative(x0, y0, tau, gam, problem)
    a2, b2, _ = pd_derivative(x0 + 0.5 * h * a1, y0 + 0.5 * h * b1, tau, gam, problem)
    a3, b3, _ = pd_derivative(x0 + 0.5 * h * a2, y0 + 0.5 * h * b2, tau, gam, problem)
    a4, b4, _ = pd_derivative(x0 + h * a3, y0 + h * b3, tau, gam, problem)
    x1 = x0 + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    y1 = y0 + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    lam = algebraic_prices(x1, y1, _gamma(y1, gam, problem), problem)
    return PdState(state.t + h, lam, y1, tau, gam)


def initial_pd_state(problem: PdProblem, tau=None, gamma=None, lam_gen=None) -> PdState:
    """Start with zero generator prices and multipliers that balance every passive bus."""
    m = problem.incidence.shape[0]
    gamma = np.asarray(problem.b_eff if gamma is None else gamma, dtype=float)
    tau = np.ones(len(problem.gen)) if tau is None else np.asarray(tau, dtype=float)
    a = problem.incidence
    lap = a.T @ (gamma[:, None] * a)
    phi = np.zeros(problem.n)
    if problem.passive.size:
        pp = np.ix_(problem.passive, problem.passive)
        phi[problem.passive] = np.linalg.solve(lap[pp], problem.p[problem.passive])
    nu = -gamma * (a @ phi) if m else np.zeros(0)
    lam_gen = np.zeros(len(problem.gen)) if lam_gen is None else np.asarray(lam_gen, dtype=float)
    lam = algebraic_prices(lam_gen, nu, gamma, problem)
    return PdState(0.0, lam, nu, tau, gamma)


def stable_step(problem: PdProblem, state: PdState, safety: float = 0.5) -> float:
    """Step size inside the RK4 stability region for fixed stepsizes.

    With fixed gamma the iteration is linear; the step is ``safety`` times
    2.5 over the spectral radius of its Jacobian (estimated by finite
    differences on the generator-price and multiplier coordinates).
    """
    x0, y0 = state.lam[problem.gen], state.nu
    dim = len(x0) + len(y0)
    jac = np.zeros((dim, dim))
    base = np.concatenate(pd_derivative(x0, y0, state.tau, state.gamma, problem)[:2])
    eps = 1e-6
    for k in range(dim):
        dx = np.zeros(dim)
        dx[k] = eps
        xk, yk = x0 + dx[: len(x0)], y0 + dx[len(x0):]
        jac[:, k] = (np.concatenate(pd_derivative(xk, yk, state.tau, state.gamma, problem)[:2]) - base) / eps
    rho = max(np.abs(np.linalg.eigvals(jac)).max(), 1e-12) if dim else 1.0
    return safety * 2.5 / rho


@dataclass(frozen=True)
class PdResult:
    lam: np.ndarray
    nu: np.ndarray
    t: float
    steps: int
    residual: float

    @property
    def consensus_gap(self) -> float:
        return float(np.ptp(self.lam)) if self.lam.size else 0.0


def run_pd(
    problem: PdProblem,
    init: PdState | None = None,
    tol: float = 1e-10,
    max_time: float = 1e4,
    h: float | None = None,
) -> PdResult:
    """Integrate until every derivative is below ``tol``.

    Stepsizes gamma are frozen at their initial values (there are no angles
    in the standalone iteration).

    Raises
    ------
    NoConvergence
        ``max_time`` reached first.
    """
    state = init if init is not None else initial_pd_state(problem)
    if state.gamma is None:
        state = dataclasses.replace(state, gamma=_gamma(state.nu, None, problem))
    if h is None:
        h = stable_step(problem, state)
    steps = 0
    while True:
        d_lam, d_nu, _ = pd_derivative(state.lam[problem.gen], state.nu, state.tau, state.gamma, problem)
        res = max(np.max(np.abs(d_lam), initial=0.0), np.max(np.abs(d_nu), initial=0.0))
        if res <= tol:
            return PdResult(state.lam, state.nu, state.t, steps, float(res))
        if state.t >= max_time:
            raise NoConvergence(f"primal-dual iteration not converged by t={state.t:.3g} (residual {res:.3e})")
        state = pd_step(state, problem, h)
        steps += 1


def map_dynamics_to_pd(theta, omega, network: Network, t: float = 0.0) -> PdState:
    """Primal-dual view of a grid state.

    Prices are the bus frequencies, multipliers the line flows, tau = 1/M
    and gamma left state-dependent (it equals B cos theta_ij).
    """
    theta = np.asarray(theta, dtype=float)
    tau = np.array([1.0 / network.generators[g].m for g in network.generator_ids])
    return PdState(t, np.array(omega, dtype=float), line_flows(theta, network), tau, None)


def identified_gamma(theta, network: Network) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return network.b_eff * np.cos(theta[network.edge_from] - theta[network.edge_to])


@dataclass(frozen=True)
class EquivalenceReport:
    """Largest pointwise gaps between the two runs and the reference tolerance.

    ``integration_tol`` is the simulator's own global error estimate: the
    largest gap between runs at ``dt`` and ``dt/2`` over the same window.
    """

    max_lam_gap: float
    max_nu_gap: float
    integration_tol: float
    samples: int
    factor: float = 10.0

    @property
    def ok(self) -> bool:
        bound = self.factor * self.integration_tol
        return self.max_lam_gap <= bound and self.max_nu_gap <= bound


def instantaneous_variant(scenario: Scenario, step: float | None = None) -> Scenario:
    """The scenario with instantaneous links and no dead zone, sampled every step."""
    control = scenario.control
    step = control.step if step is None else step
    control = dataclasses.replace(control, dead_zone=0.0, step=step, output=step)
    return dataclasses.replace(scenario, network=scenario.network.with_lcc_params(t_d=0.0), control=control)


def _pd_along(traj: Trajectory, start: int, problem: PdProblem, network: Network):
    state = map_dynamics_to_pd(traj.theta[start], traj.omega[start], network, traj.t[start])
    lam = [state.lam]
    nu = [state.nu]
    for k in range(start + 1, len(traj.t)):
        state = pd_step(state, problem, traj.t[k] - traj.t[k - 1])
        lam.append(state.lam)
        nu.append(state.nu)
    return np.array(lam), np.array(nu)


def compare_with_dynamics(scenario: Scenario, coefficients: DroopCoefficients | None = None) -> EquivalenceReport:
    """Run the grid with instantaneous links and the primal-dual iteration side by side.

    Both start from the same post-event state and take identical RK4 steps.
    """
    variant = instantaneous_variant(scenario)
    traj = simulate(variant, coefficients)
    network = traj.final_network
    problem = PdProblem.from_network(network, traj.coefficients)
    start = int(traj.since_last_event()[0]) - 1 if traj.events else 0
    start = max(start, 0)
    lam, nu = _pd_along(traj, start, problem, network)
    omega = traj.omega[start:]
    flows = traj.flows[start:]

    fine = simulate(instantaneous_variant(scenario, variant.control.step / 2), coefficients)
    coarse_t = traj.t[start:]
    idx = np.searchsorted(fine.t, coarse_t - 1e-9)
    tol = max(np.abs(fine.omega[idx] - omega).max(), np.abs(fine.flows[idx] - flows).max())
    return EquivalenceReport(
        max_lam_gap=float(np.abs(lam - omega).max()),
        max_nu_gap=float(np.abs(nu - flows).max()),
        integration_tol=float(tol),
        samples=len(coarse_t),
    )
