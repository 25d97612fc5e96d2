"""Trajectory export and run summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import MissingParameter
from .network import Network
from .oefc import cost_generator, lcc_weight
from .scenario import MarginDirection, Objective

SETTLING_BAND_HZ = 0.02


def fmt(x: float) -> str:
    """Nine significant digits, the precision used in every report."""
    return f"{x:.9g}"


def to_hz(omega_pu: float, network: Network) -> float:
    return network.f_nominal_hz * (1.0 + omega_pu)


def settling_time(traj: Trajectory, band_hz: float = SETTLING_BAND_HZ) -> float:
    """Time after the last event until every bus stays within the band around its terminal value.

    Returns 0 when the trajectory never leaves the band and ``inf`` when it
    is still outside at the final sample.
    """
    idx = traj.since_last_event()
    if idx.size == 0:
        return 0.0
    t0 = traj.events[-1][0] if traj.events else traj.t[0]
    band = band_hz / traj.network.f_nominal_hz
    dev = np.abs(traj.omega[idx] - traj.omega[-1]).max(axis=1)
    outside = np.nonzero(dev > band)[0]
    if outside.size == 0:
        return 0.0
    last = outside[-1]
    if last == len(idx) - 1:
        return float("inf")
    return float(traj.t[idx[last + 1]] - t0)


def steady_allocations(traj: Trajectory) -> tuple[dict, dict]:
    """Generator and LCC regulation at the final sample, keyed by bus id."""
    net = traj.final_network
    u_gen = {g: float(traj.u_gen[-1, net.index[g]]) for g in net.generator_ids}
    u_lcc = {l: float(traj.u_lcc[-1, net.index[l]]) for l in net.lcc_ids}
    return u_gen, u_lcc


def control_cost(network: Network, u_gen: dict, u_lcc: dict, objective: Objective, margin: MarginDirection) -> float:
    """Total regulation cost of an allocation under one objective."""
    total = sum(float(cost_generator(u, network.generators[g].beta)) for g, u in u_gen.items())
    total += sum(lcc_weight(network.lccs[l], objective, margin) * u**2 for l, u in u_lcc.items())
    return float(total)


@dataclass
class RunReport:
    scenario: str
    terminal_omega_pu: float
    terminal_f_hz: float
    settling_time_s: float
    u_gen: dict
    u_lcc: dict
    costs: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    failure: str | None = None

    @classmethod
    def from_trajectory(cls, name: str, traj: Trajectory, margin: MarginDirection = MarginDirection.INCREASE) -> "RunReport":
        net = traj.final_network
        omega = traj.terminal_omega() if len(traj.t) else 0.0
        u_gen, u_lcc = steady_allocations(traj) if len(traj.t) else ({}, {})
        costs = {}
        for obj in Objective:
            try:
                costs[obj.value] = control_cost(net, u_gen, u_lcc, obj, margin)
            except MissingParameter:
                continue
        return cls(
            scenario=name,
            terminal_omega_pu=omega,
            terminal_f_hz=to_hz(omega, net),
            settling_time_s=settling_time(traj) if len(traj.t) else float("inf"),
            u_gen=u_gen,
            u_lcc=u_lcc,
            costs=costs,
            failure=traj.failure,
        )

    def to_json(self) -> str:
        doc = asdict(self)
        doc["u_gen"] = {str(k): v for k, v in self.u_gen.items()}
        doc["u_lcc"] = {str(k): v for k, v in self.u_lcc.items()}
        return json.dumps(_finite(doc), indent=2, sort_keys=True) + "\n"

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("scenario", self.scenario),
            ("terminal_omega_pu", fmt(self.terminal_omega_pu)),
            ("terminal_f_hz", fmt(self.terminal_f_hz)),
            ("settling_time_s", fmt(self.settling_time_s)),
        ]
        out += [(f"u_gen.{k}", fmt(v)) for k, v in self.u_gen.items()]
        out += [(f"u_lcc.{k}", fmt(v)) for k, v in self.u_lcc.items()]
        out += [(f"cost.{k}", fmt(v)) for k, v in self.costs.items()]
        out += [(f"check.{k}", v) for k, v in self.checks.items()]
        if self.failure:
            out.append(("failure", self.failure))
        return out


def _finite(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def trajectory_columns(traj: Trajectory) -> list[str]:
    net = traj.network
    cols = ["time_s"]
    cols += [f"omega_pu_{b.id}" for b in net.buses]
    cols += [f"theta_rad_{b.id}" for b in net.buses]
    for l in net.lccs.values():
        cols += [f"pdc_pu_{l.name}", f"sat_{l.name}"]
    cols += [f"u_G_{g}" for g in net.generator_ids]
    return cols


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> Path:
    """One row per sample; columns as named by :func:`trajectory_columns`.

    Units that leave the network during the run (tripped generators,
    blocked links) keep their columns with zeros.
    """
    path = Path(path)
    net = traj.network
    lcc_idx = [net.index[l.bus] for l in net.lccs.values()]
    gen_idx = [net.index[g] for g in net.generator_ids]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(traj))
        for k in range(len(traj.t)):
            row = [fmt(traj.t[k])]
            row += [fmt(x) for x in traj.omega[k]]
            row += [fmt(x) for x in traj.theta[k]]
            for i in lcc_idx:
                row += [fmt(traj.p_dc[k, i]), str(int(traj.saturated[k, i]))]
            row += [fmt(traj.u_gen[k, i]) for i in gen_idx]
            w.writerow(row)
    return path
