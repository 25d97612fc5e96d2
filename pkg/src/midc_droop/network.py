"""Network data model for a multi-infeed AC-DC grid.

All powers are per unit on ``base_mva``; frequencies are per-unit deviations
from ``f_nominal_hz``.  Angles are radians.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DisconnectedGraph,
    DuplicateLccAttachment,
    MissingParameter,
    NetworkError,
    RolePartitionViolation,
)

DEFAULT_BASE_MVA = 100.0
DEFAULT_F_NOMINAL_HZ = 50.0


class Role(str, enum.Enum):
    GENERATOR = "generator"
    LCC = "lcc"
    PASSIVE = "passive"


@dataclass(frozen=True)
class Bus:
    id: int
    role: Role
    p: float = 0.0
    v: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.v > 0:
            raise NetworkError(f"bus {self.id}: voltage must be positive, got {self.v}")


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    b: float

    def __post_init__(self):
        if self.i == self.j:
            raise NetworkError(f"line ({self.i}, {self.j}) is a self-loop")
        if not self.b > 0:
            raise NetworkError(f"line ({self.i}, {self.j}): susceptance must be positive, got {self.b}")

    @property
    def key(self) -> frozenset:
        return frozenset((self.i, self.j))


@dataclass(frozen=True)
class GeneratorParams:
    """Swing-equation and cost data of one generator.

    ``m`` inertia, ``d`` damping, ``kg_bar`` governor droop, ``beta`` cost
    coefficient of the quadratic regulation cost.
    """

    bus: int
    m: float
    d: float
    kg_bar: float
    beta: float

    def __post_init__(self):
        if not self.m > 0:
            raise NetworkError(f"generator {self.bus}: inertia must be positive")
        if not self.d > 0:
            raise NetworkError(f"generator {self.bus}: damping must be positive")
        if self.kg_bar < 0:
            raise NetworkError(f"generator {self.bus}: governor droop must be non-negative")
        if not self.beta > 0:
            raise NetworkError(f"generator {self.bus}: cost coefficient must be positive")

    @property
    def k_effective(self) -> float:
        return self.kg_bar + self.d


@dataclass(frozen=True)
class LccParams:
    """One LCC-HVDC link attached to the main AC system.

    ``p_nominal`` is signed: positive when the link feeds the main system
    (main system is the receiving end), negative when it exports.  Bounds are
    signed the same way.  ``e`` and ``k_f`` are only needed for objective II.
    """

    bus: int
    name: str
    p_nominal: float
    p_max: float
    p_min: float
    t_d: float
    alpha: float
    e: float | None = None
    k_f: float | None = None
    u_d_kv: float = 660.0

    def __post_init__(self):
        if not self.p_min <= self.p_nominal <= self.p_max:
            raise NetworkError(f"{self.name}: need p_min <= p_nominal <= p_max")
        if self.t_d < 0:
            raise NetworkError(f"{self.name}: time constant must be non-negative")
        if not self.alpha > 0:
            raise NetworkError(f"{self.name}: alpha must be positive")
        if self.e is not None and not self.e > 0:
            raise NetworkError(f"{self.name}: e must be positive")
        if self.k_f is not None and not self.k_f > 0:
            raise NetworkError(f"{self.name}: K_f must be positive")

    @property
    def receiving(self) -> bool:
        """True when the main AC system is the receiving end of this link."""
        return self.p_nominal >= 0


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: Mapping[int, GeneratorParams]
    lccs: Mapping[int, LccParams]
    base_mva: float = DEFAULT_BASE_MVA
    f_nominal_hz: float = DEFAULT_F_NOMINAL_HZ
    name: str = ""

    def validate(self) -> "Network":
        _validate(self)
        return self

    # -- indexing -----------------------------------------------------------

    @cached_property
    def n(self) -> int:
        return len(self.buses)

    @cached_property
    def index(self) -> dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([bus.id for bus in self.buses], dtype=int)

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index[bus_id]]

    def ids_with_role(self, role: Role) -> list[int]:
        return [bus.id for bus in self.buses if bus.role is role]

    @property
    def generator_ids(self) -> list[int]:
        return self.ids_with_role(Role.GENERATOR)

    @property
    def lcc_ids(self) -> list[int]:
        return self.ids_with_role(Role.LCC)

    @property
    def passive_ids(self) -> list[int]:
        return self.ids_with_role(Role.PASSIVE)

    @cached_property
    def reference_bus(self) -> int:
        """Lowest-indexed generator bus, or the lowest bus id without generators."""
        gens = self.generator_ids
        return min(gens) if gens else min(b.id for b in self.buses)

    @cached_property
    def p(self) -> np.ndarray:
        return np.array([bus.p for bus in self.buses], dtype=float)

    @cached_property
    def v(self) -> np.ndarray:
        return np.array([bus.v for bus in self.buses], dtype=float)

    @cached_property
    def edge_from(self) -> np.ndarray:
        return np.array([self.index[ln.i] for ln in self.lines], dtype=int)

    @cached_property
    def edge_to(self) -> np.ndarray:
        return np.array([self.index[ln.j] for ln in self.lines], dtype=int)

    @cached_property
    def b_eff(self) -> np.ndarray:
        return np.array([effective_susceptance(ln, self) for ln in self.lines], dtype=float)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Dense (m, n) oriented incidence: +1 at the line's ``i`` end, -1 at ``j``."""
        a = np.zeros((len(self.lines), self.n))
        rows = np.arange(len(self.lines))
        a[rows, self.edge_from] = 1.0
        a[rows, self.edge_to] = -1.0
        return a

    def imbalance(self) -> float:
        """Total scheduled imbalance: bus injections plus nominal DC powers."""
        return float(self.p.sum() + sum(l.p_nominal for l in self.lccs.values()))

    # -- derived networks (events) ------------------------------------------

    def _replace_bus(self, bus_id: int, **changes) -> tuple[Bus, ...]:
        return tuple(dataclasses.replace(b, **changes) if b.id == bus_id else b for b in self.buses)

    def trip_generator(self, bus_id: int) -> "Network":
        """Remove the generator at ``bus_id``; the bus becomes passive with zero injection."""
        if bus_id not in self.generators:
            raise NetworkError(f"bus {bus_id} has no generator to trip")
        gens = {k: g for k, g in self.generators.items() if k != bus_id}
        return dataclasses.replace(
            self, buses=self._replace_bus(bus_id, role=Role.PASSIVE, p=0.0), generators=gens
        ).validate()

    def block_lcc(self, bus_id: int) -> "Network":
        """Block the link at ``bus_id``: its DC power is gone and the bus turns passive."""
        if bus_id not in self.lccs:
            raise NetworkError(f"bus {bus_id} has no LCC to block")
        lccs = {k: l for k, l in self.lccs.items() if k != bus_id}
        return dataclasses.replace(
            self, buses=self._replace_bus(bus_id, role=Role.PASSIVE), lccs=lccs
        ).validate()

    def step_power(self, bus_id: int, delta: float) -> "Network":
        bus = self.bus(bus_id)
        return dataclasses.replace(self, buses=self._replace_bus(bus_id, p=bus.p + delta)).validate()

    def with_lcc_params(self, **changes) -> "Network":
        """Copy with the given field overrides applied to every LCC (e.g. ``t_d=0``)."""
        lccs = {k: dataclasses.replace(l, **changes) for k, l in self.lccs.items()}
        return dataclasses.replace(self, lccs=lccs).validate()


def effective_susceptance(line: Line, network: Network) -> float:
    """Line susceptance scaled by the constant end-bus voltage magnitudes."""
    return line.b * network.bus(line.i).v * network.bus(line.j).v


def build_network(
    buses: Iterable[Bus],
    lines: Iterable[Line],
    gen_params: Iterable[GeneratorParams] | Mapping[int, GeneratorParams],
    lcc_params: Iterable[LccParams],
    base_mva: float = DEFAULT_BASE_MVA,
    f_nominal_hz: float = DEFAULT_F_NOMINAL_HZ,
    name: str = "",
) -> Network:
    """Assemble and validate a :class:`Network`.

    Raises
    ------
    RolePartitionViolation
        A bus is declared with two roles, or carries parameters for a role it
        does not have.
    DuplicateLccAttachment
        Two LCC records attach to the same bus.
    MissingParameter
        A generator or LCC bus lacks its parameter record.
    DisconnectedGraph
        The line graph does not connect every bus.
    """
    buses = list(buses)
    roles: dict[int, Role] = {}
    for bus in buses:
        if bus.id in roles:
            if roles[bus.id] is not bus.role:
                raise RolePartitionViolation(
                    f"bus {bus.id} declared as both {roles[bus.id].value} and {bus.role.value}"
                )
            raise NetworkError(f"bus {bus.id} declared twice")
        roles[bus.id] = bus.role

    if isinstance(gen_params, Mapping):
        gen_params = gen_params.values()
    gens: dict[int, GeneratorParams] = {}
    for g in gen_params:
        if g.bus in gens:
            raise NetworkError(f"bus {g.bus} has two generator records")
        gens[g.bus] = g
    lccs: dict[int, LccParams] = {}
    for l in lcc_params:
        if l.bus in lccs:
            raise DuplicateLccAttachment(f"bus {l.bus} has more than one LCC attached")
        lccs[l.bus] = l

    network = Network(
        buses=tuple(buses),
        lines=tuple(lines),
        generators=gens,
        lccs=lccs,
        base_mva=base_mva,
        f_nominal_hz=f_nominal_hz,
        name=name,
    )
    return network.validate()


def _validate(net: Network) -> None:
    roles = {}
    for bus in net.buses:
        if bus.id in roles:
            raise NetworkError(f"bus {bus.id} declared twice")
        roles[bus.id] = bus.role
    if not roles:
        raise NetworkError("network has no buses")

    for bus_id in net.generators:
        role = roles.get(bus_id)
        if role is None:
            raise NetworkError(f"generator record for unknown bus {bus_id}")
        if bus_id in net.lccs:
            raise RolePartitionViolation(f"bus {bus_id} is both generator and LCC-connected")
        if role is not Role.GENERATOR:
            raise RolePartitionViolation(f"generator record on {role.value} bus {bus_id}")
    for bus_id in net.lccs:
        role = roles.get(bus_id)
        if role is None:
            raise NetworkError(f"LCC record for unknown bus {bus_id}")
        if role is not Role.LCC:
            raise RolePartitionViolation(f"LCC record on {role.value} bus {bus_id}")
    for bus_id, role in roles.items():
        if role is Role.GENERATOR and bus_id not in net.generators:
            raise MissingParameter(f"generator bus {bus_id} has no generator parameters")
        if role is Role.LCC and bus_id not in net.lccs:
            raise MissingParameter(f"LCC bus {bus_id} has no LCC parameters")

    seen = set()
    for ln in net.lines:
        for end in (ln.i, ln.j):
            if end not in roles:
                raise NetworkError(f"line ({ln.i}, {ln.j}) references unknown bus {end}")
        if ln.key in seen:
            raise NetworkError(f"duplicate line between {ln.i} and {ln.j}")
        seen.add(ln.key)

    n = len(net.buses)
    if n > 1:
        adj = coo_matrix((np.ones(len(net.lines)), (net.edge_from, net.edge_to)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise DisconnectedGraph(f"network splits into {ncomp} islands")
