"""Optimal emergency frequency control (OEFC) allocation.

The allocation problem is a separable QP: quadratic regulation costs on every
generator and LCC, one power-balance equality, and a box on each LCC
regulation.  This module provides the cost model, the closed-form droop
coefficients that realise the interior optimum, the Lagrangian dual
function, and an independent bisection solver used as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, MissingParameter
from .network import LccParams, Network
from .scenario import DroopMode, MarginDirection, Objective, Scenario


def cost_generator(u, beta):
    return 0.5 * beta * np.square(u)


def regulation_margin(p_nominal: float, p_max: float, p_min: float, direction: MarginDirection) -> float:
    """Distance from the nominal DC power to the bound in ``direction``."""
    if p_min > p_max:
        raise ValueError("bounds out of order")
    if MarginDirection(direction) is MarginDirection.INCREASE:
        return p_max - p_nominal
    return p_nominal - p_min


def cost_lcc(u, objective: Objective, *, alpha=None, z=None, e=None, k_f=None):
    """Quadratic LCC regulation cost for either objective.

    Objective I penalises regulation relative to the margin ``z``; objective
    II penalises the adjacent system's frequency deviation ``u / k_f``.
    """
    if Objective(objective) is Objective.I:
        return alpha * np.square(u / z)
    return e * np.square(u / k_f)


def lcc_weight(lcc: LccParams, objective: Objective, margin: MarginDirection) -> float:
    """Coefficient of u**2 in the LCC cost."""
    if Objective(objective) is Objective.I:
        # margins are measured on the transmitted power, whatever the link direction
        if lcc.receiving:
            z = regulation_margin(lcc.p_nominal, lcc.p_max, lcc.p_min, margin)
        else:
            z = regulation_margin(-lcc.p_nominal, -lcc.p_min, -lcc.p_max, margin)
        if not z > 0:
            raise ValueError(f"{lcc.name}: regulation margin is zero in the {margin.value} direction")
        return lcc.alpha / z**2
    if lcc.e is None or lcc.k_f is None:
        raise MissingParameter(f"{lcc.name}: objective II needs e and K_f")
    return lcc.e / lcc.k_f**2


@dataclass(frozen=True)
class OefcProblem:
    """Separable allocation problem.

    ``beta`` are generator cost coefficients, ``weight`` the LCC quadratic
    weights, ``u_min``/``u_max`` the LCC regulation boxes and ``b`` the total
    imbalance to be absorbed (sum of u plus b must vanish).
    """

    beta: np.ndarray
    weight: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    b: float
    gen_ids: tuple = ()
    lcc_ids: tuple = ()

    def __post_init__(self):
        for name in ("beta", "weight", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.gen_ids:
            object.__setattr__(self, "gen_ids", tuple(range(len(self.beta))))
        if not self.lcc_ids:
            object.__setattr__(self, "lcc_ids", tuple(range(len(self.weight))))
        if np.any(self.beta <= 0) or np.any(self.weight <= 0):
            raise ValueError("cost coefficients must be positive")
        if np.any(self.u_min > 0) or np.any(self.u_max < 0):
            raise ValueError("regulation boxes must contain zero")

    @classmethod
    def from_network(
        cls,
        network: Network,
        objective: Objective = Objective.I,
        margin: MarginDirection = MarginDirection.INCREASE,
    ) -> "OefcProblem":
        gens = network.generator_ids
        lccs = network.lcc_ids
        return cls(
            beta=[network.generators[g].beta for g in gens],
            weight=[lcc_weight(network.lccs[l], objective, margin) for l in lccs],
            u_min=[network.lccs[l].p_min - network.lccs[l].p_nominal for l in lccs],
            u_max=[network.lccs[l].p_max - network.lccs[l].p_nominal for l in lccs],
            b=network.imbalance(),
            gen_ids=tuple(gens),
            lcc_ids=tuple(lccs),
        )

    def scaled(self, c: float) -> "OefcProblem":
        """Same problem with every cost coefficient multiplied by ``c``."""
        return OefcProblem(self.beta * c, self.weight * c, self.u_min, self.u_max, self.b, self.gen_ids, self.lcc_ids)

    def total_cost(self, u_gen, u_lcc) -> float:
        return float(np.sum(cost_generator(np.asarray(u_gen), self.beta)) + np.sum(self.weight * np.square(u_lcc)))


@dataclass(frozen=True)
class DroopCoefficients:
    """Droop coefficients keyed by bus id."""

    k_gen: dict = field(default_factory=dict)
    k_lcc: dict = field(default_factory=dict)

    def total(self) -> float:
        return float(sum(self.k_gen.values()) + sum(self.k_lcc.values()))


def optimal_droop(problem: OefcProblem) -> DroopCoefficients:
    """Closed-form coefficients: 1/beta for generators, 1/(2 w) for LCCs.

    For objective I this is Z**2 / (2 alpha); for objective II K_f**2 / (2 e).
    """
    return DroopCoefficients(
        k_gen={g: float(1.0 / b) for g, b in zip(problem.gen_ids, problem.beta)},
        k_lcc={l: float(1.0 / (2.0 * w)) for l, w in zip(problem.lcc_ids, problem.weight)},
    )


def average_droop(coefficients: dict) -> dict:
    """Replace every coefficient of one unit class by the class mean."""
    if not coefficients:
        raise ValueError("no coefficients to average")
    mean = float(np.mean(list(coefficients.values())))
    return {k: mean for k in coefficients}


def droop_coefficients(scenario: Scenario, network: Network | None = None) -> DroopCoefficients:
    """Coefficients the scenario's control section asks for.

    Optimal and average modes follow the closed forms; manual mode takes
    the per-unit values from the scenario, falling back to the installed
    governor droop plus damping for generators.  Explicit per-unit values
    override either mode.
    """
    network = network or scenario.network
    c = scenario.control
    if c.droop is DroopMode.MANUAL:
        k_gen = {g: p.k_effective for g, p in network.generators.items()}
        missing = [l for l in network.lcc_ids if l not in c.k_lcc]
        if missing and c.lcc_droop:
            raise MissingParameter(f"manual droop needs k_lcc for buses {missing}")
        k_lcc = {l: 0.0 for l in network.lcc_ids}
    else:
        problem = OefcProblem.from_network(network, c.objective, c.margin)
        coeffs = optimal_droop(problem)
        k_gen, k_lcc = coeffs.k_gen, coeffs.k_lcc
        if c.droop is DroopMode.AVERAGE:
            k_gen = average_droop(k_gen) if k_gen else k_gen
            k_lcc = average_droop(k_lcc) if k_lcc else k_lcc
    k_gen = {g: c.k_gen.get(g, k) for g, k in k_gen.items()}
    k_lcc = {l: c.k_lcc.get(l, k) for l, k in k_lcc.items()}
    if not c.lcc_droop:
        k_lcc = {l: 0.0 for l in k_lcc}
    return DroopCoefficients(k_gen, k_lcc)


@dataclass(frozen=True)
class OefcSolution:
    u_gen: np.ndarray
    u_lcc: np.ndarray
    lam: float
    cost: float
    at_lower: np.ndarray
    at_upper: np.ndarray
    residual: float

    @property
    def interior(self) -> bool:
        return not (self.at_lower.any() or self.at_upper.any())


def _allocation(problem: OefcProblem, lam: float):
    u_gen = -lam / problem.beta
    u_lcc = np.clip(-lam / (2.0 * problem.weight), problem.u_min, problem.u_max)
    return u_gen, u_lcc


def _balance(problem: OefcProblem, lam: float) -> float:
    u_gen, u_lcc = _allocation(problem, lam)
    return problem.b + u_gen.sum() + u_lcc.sum()


def solve_oefc_oracle(problem: OefcProblem, tol: float = 1e-12, max_iter: int = 400) -> OefcSolution:
    """Solve the allocation QP by bisection on the balance multiplier.

    For fixed ``lam`` every unit's minimiser is explicit (a projection for
    boxed LCCs), and the balance residual is continuous and non-increasing
    in ``lam``.  The root is bracketed, bisected to ``tol`` and then polished
    by an exact solve on the identified active set.
    """
    b = problem.b
    beta_max = problem.beta.max() if problem.beta.size else 0.0
    lam_max = abs(b) * beta_max + 1.0
    for _ in range(200):
        if _balance(problem, -lam_max) >= 0.0 >= _balance(problem, lam_max):
            break
        lam_max *= 2.0
    else:
        raise Infeasible("imbalance exceeds the regulation capacity")
    if problem.beta.size == 0:
        lo_cap, hi_cap = problem.u_min.sum(), problem.u_max.sum()
        if not lo_cap - 1e-12 <= -b <= hi_cap + 1e-12:
            raise Infeasible("imbalance exceeds the LCC regulation boxes")

    lo, hi = -lam_max, lam_max
    lam = 0.0
    g = _balance(problem, lam)
    for _ in range(max_iter):
        if abs(g) <= tol:
            break
        if g > 0:
            lo = lam
        else:
            hi = lam
        lam = 0.5 * (lo + hi)
        g = _balance(problem, lam)
        if hi - lo <= np.finfo(float).eps * max(1.0, abs(lam)):
            break

    # exact solve with the saturated units fixed at their bounds
    u_gen, u_lcc = _allocation(problem, lam)
    free = (u_lcc > problem.u_min) & (u_lcc < problem.u_max)
    slope = (1.0 / problem.beta).sum() + (1.0 / (2.0 * problem.weight[free])).sum()
    if slope > 0:
        polished = (b + u_lcc[~free].sum()) / slope
        g_polished = _balance(problem, polished)
        if abs(g_polished) <= abs(g):
            lam, g = polished, g_polished

    u_gen, u_lcc = _allocation(problem, lam)
    return OefcSolution(
        u_gen=u_gen,
        u_lcc=u_lcc,
        lam=float(lam),
        cost=problem.total_cost(u_gen, u_lcc),
        at_lower=(u_lcc <= problem.u_min) & (problem.u_min < 0),
        at_upper=(u_lcc >= problem.u_max) & (problem.u_max > 0),
        residual=float(g),
    )


def dual_function_value(lam: float, problem: OefcProblem) -> float:
    """Lagrangian dual of the allocation problem evaluated at ``lam``."""
    u_gen, u_lcc = _allocation(problem, lam)
    return float(
        np.sum(problem.weight * u_lcc**2 + lam * u_lcc)
        - np.sum(lam**2 / (2.0 * problem.beta))
        + lam * problem.b
    )


def droop_allocation(problem: OefcProblem, coefficients: DroopCoefficients, omega: float):
    """Steady regulations produced by proportional droop at frequency ``omega``."""
    u_gen = np.array([-coefficients.k_gen[g] * omega for g in problem.gen_ids])
    u_lcc = np.array([-coefficients.k_lcc[l] * omega for l in problem.lcc_ids])
    return u_gen, u_lcc
