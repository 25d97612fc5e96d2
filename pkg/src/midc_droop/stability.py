"""Lyapunov certificate for the closed-loop equilibrium.

The energy function is V = V1 + V2 with

* V1: Bregman divergence of the line potential
  F_c(theta) = sum_lines B (1 - cos theta_ij) about the equilibrium angles,
  plus the generators' kinetic energy about the synchronous frequency;
* V2: sum over links of d_i T_i (p_i - p_i*)^2 / 2.

With d_i = 1/k_i^D the cross terms between link power and local frequency
cancel and V is non-increasing along unsaturated trajectories.  Angles are
always compared in the relative frame (reference bus subtracted), which
leaves V unchanged because the gradient of F_c sums to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Equilibrium, Trajectory, steady_state
from .errors import ZeroTotalDroop
from .network import Network
from .oefc import DroopCoefficients


def check_security(theta, network: Network) -> tuple[bool, float]:
    """Whether every line angle is strictly inside (-pi/2, pi/2), and the worst margin."""
    theta = np.asarray(theta, dtype=float)
    diff = np.abs(theta[network.edge_from] - theta[network.edge_to])
    margin = float(math.pi / 2 - diff.max()) if diff.size else math.pi / 2
    return margin > 0.0, margin


def hessian_fc(theta, network: Network) -> np.ndarray:
    """Hessian of the line potential: Laplacian with weights B_ij cos(theta_ij)."""
    theta = np.asarray(theta, dtype=float)
    a = network.incidence
    w = network.b_eff * np.cos(a @ theta)
    return a.T @ (w[:, None] * a)


@dataclass(frozen=True)
class LaplacianSpectrum:
    eigenvalues: np.ndarray
    symmetric: bool
    zero_row_sums: bool
    psd: bool
    kernel_dim: int
    ones_in_kernel: bool
    minors_pd: bool

    @property
    def ok(self) -> bool:
        return self.symmetric and self.zero_row_sums and self.psd and self.kernel_dim == 1 and self.ones_in_kernel and self.minors_pd


def laplacian_spectrum(theta, network: Network, rtol: float = 1e-10) -> LaplacianSpectrum:
    """Spectral checks on the F_c Hessian.

    The kernel dimension counts eigenvalues below ``rtol`` times the largest.
    The minor check removes each bus in turn and tests positive definiteness
    by Cholesky factorisation.
    """
    h = hessian_fc(theta, network)
    scale = max(np.abs(h).max(), 1.0)
    eig = np.linalg.eigvalsh(h)
    tol = rtol * max(eig.max(), 1.0)
    ones = np.ones(network.n)
    minors = True
    for k in range(network.n):
        keep = np.arange(network.n) != k
        try:
            np.linalg.cholesky(h[np.ix_(keep, keep)])
        except np.linalg.LinAlgError:
            minors = False
            break
    return LaplacianSpectrum(
        eigenvalues=eig,
        symmetric=bool(np.allclose(h, h.T, atol=1e-12 * scale)),
        zero_row_sums=bool(np.max(np.abs(h.sum(axis=1))) <= 1e-12 * scale * network.n),
        psd=bool(eig.min() >= -tol),
        kernel_dim=int(np.sum(np.abs(eig) <= tol)),
        ones_in_kernel=bool(np.max(np.abs(h @ ones)) <= 1e-12 * scale * network.n),
        minors_pd=minors,
    )


def synchronous_frequency(network: Network, coefficients: DroopCoefficients) -> float:
    """Common steady frequency deviation from total imbalance over total droop."""
    num = float(network.p.sum() + sum(l.p_nominal for l in network.lccs.values()))
    den = sum(coefficients.k_gen[g] for g in network.generator_ids)
    den += sum(coefficients.k_lcc[l] for l in network.lcc_ids)
    if den <= 0:
        raise ZeroTotalDroop("total droop is zero")
    return num / den


@dataclass(frozen=True)
class LyapunovConfig:
    """Weights and reference equilibrium for the energy function.

    ``d`` maps LCC bus ids to positive weights; ``None`` selects 1/k^D.
    """

    equilibrium: Equilibrium
    coefficients: DroopCoefficients
    d: dict | None = None

    def weights(self, network: Network) -> dict:
        if self.d is not None:
            d = dict(self.d)
        else:
            d = {}
            for bus in network.lcc_ids:
                k = self.coefficients.k_lcc[bus]
                if not k > 0:
                    raise ValueError(f"default weight 1/k needs a positive droop at bus {bus}")
                d[bus] = 1.0 / k
        if any(not v > 0 for v in d.values()):
            raise ValueError("Lyapunov weights must be positive")
        return d

    @classmethod
    def for_network(cls, network: Network, coefficients: DroopCoefficients, d_scale: float = 1.0) -> "LyapunovConfig":
        eq = steady_state(network, coefficients)
        d = None
        if d_scale != 1.0:
            d = {b: d_scale / coefficients.k_lcc[b] for b in network.lcc_ids}
        return cls(eq, coefficients, d)


@dataclass(frozen=True)
class LyapunovValue:
    v: float
    v1: float
    v2: float


def _bregman_lines(theta, theta_ref, network: Network) -> float:
    x = theta[network.edge_from] - theta[network.edge_to]
    xs = theta_ref[network.edge_from] - theta_ref[network.edge_to]
    # cos xs - cos x - sin xs (x - xs), written to stay accurate near x = xs
    half = 0.5 * (x - xs)
    term = 2.0 * np.sin(0.5 * (x + xs)) * np.sin(half) - np.sin(xs) * (x - xs)
    return float(np.sum(network.b_eff * term))


def lyapunov_value(theta, omega, p_dc, config: LyapunovConfig, network: Network) -> LyapunovValue:
    """Energy function at one state.

    ``theta``, ``omega`` and ``p_dc`` are bus-indexed; only generator
    frequencies and LCC powers enter.
    """
    eq = config.equilibrium
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    p_dc = np.asarray(p_dc, dtype=float)
    ref = network.index[network.reference_bus]
    rel = theta - theta[ref]
    rel_eq = eq.theta - eq.theta[ref]
    v_pot = _bregman_lines(rel, rel_eq, network)
    gens = [network.index[g] for g in network.generator_ids]
    m = np.array([network.generators[g].m for g in network.generator_ids])
    v_kin = 0.5 * float(np.sum(m * (omega[gens] - eq.omega_syn) ** 2))
    d = config.weights(network)
    v2 = 0.0
    for bus in network.lcc_ids:
        k = network.index[bus]
        lcc = network.lccs[bus]
        v2 += 0.5 * d[bus] * lcc.t_d * (p_dc[k] - eq.p_dc[k]) ** 2
    v1 = v_pot + v_kin
    return LyapunovValue(v1 + v2, v1, v2)


def hessian_blocks(config: LyapunovConfig, network: Network) -> dict:
    """Block checks of the energy function's Hessian at the equilibrium.

    Returns the Laplacian spectrum of the angle block together with the
    positivity of the inertia block and of the d T block.
    """
    d = config.weights(network)
    spectrum = laplacian_spectrum(config.equilibrium.theta, network)
    m = np.array([network.generators[g].m for g in network.generator_ids])
    dt = np.array([d[b] * network.lccs[b].t_d for b in network.lcc_ids])
    return {
        "laplacian": spectrum,
        "inertia_pd": bool(np.all(m > 0)),
        "link_pd": bool(np.all(dt > 0)),
    }


@dataclass
class DecreaseReport:
    t: np.ndarray
    v: np.ndarray
    t_dot: np.ndarray
    v_dot: np.ndarray
    tolerance: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_v_dot(self) -> float:
        return float(self.v_dot.max()) if self.v_dot.size else 0.0


def lyapunov_decrease_report(
    trajectory: Trajectory,
    config: LyapunovConfig | None = None,
    network: Network | None = None,
    rel_tol: float = 1e-8,
) -> DecreaseReport:
    """Energy along a trajectory and a central-difference estimate of its rate.

    Only samples after the last event are used: the certificate concerns
    the post-event system.  A sample is a violation when the rate exceeds
    ``rel_tol`` times the largest energy on the window.
    """
    network = network or trajectory.final_network
    if config is None:
        config = LyapunovConfig.for_network(network, trajectory.coefficients)
    idx = trajectory.since_last_event()
    t = trajectory.t[idx]
    v = np.array([
        lyapunov_value(trajectory.theta[k], trajectory.omega[k], trajectory.p_dc[k], config, network).v
        for k in idx
    ])
    if len(t) >= 3:
        v_dot = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
        t_dot = t[1:-1]
    else:
        v_dot = t_dot = np.zeros(0)
    tol = rel_tol * float(v.max()) if v.size else 0.0
    violations = [(float(tt), float(vd)) for tt, vd in zip(t_dot, v_dot) if vd > tol]
    return DecreaseReport(t=t, v=v, t_dot=t_dot, v_dot=v_dot, tolerance=tol, violations=violations)
