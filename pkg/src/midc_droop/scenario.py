"""Scenario files: network data, timed events and controller configuration.

A scenario is a TOML document with the sections ``[network]`` (bases and the
bus list), ``[[generators]]``, ``[[lccs]]``, ``[[lines]]``, ``[[events]]``
and ``[control]``.  Quantities are per unit unless the key carries a unit
suffix (``_mw``, ``_hz``, ``_s``, ``_kv``).  A top-level ``include`` names
another scenario file whose tables are used as defaults.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .errors import NetworkError, ParseError, UnknownBusReference
from .network import Bus, GeneratorParams, LccParams, Line, Network, Role, build_network


class EventKind(str, enum.Enum):
    GENERATOR_TRIP = "generator_trip"
    DC_BLOCK = "dc_block"
    POWER_STEP = "power_step"


@dataclass(frozen=True)
class Event:
    t: float
    kind: EventKind
    bus: int
    dp: float = 0.0

    def apply(self, network: Network) -> Network:
        if self.kind is EventKind.GENERATOR_TRIP:
            return network.trip_generator(self.bus)
        if self.kind is EventKind.DC_BLOCK:
            return network.block_lcc(self.bus)
        return network.step_power(self.bus, self.dp)


class Objective(str, enum.Enum):
    I = "I"
    II = "II"


class DroopMode(str, enum.Enum):
    OPTIMAL = "optimal"
    AVERAGE = "average"
    MANUAL = "manual"


class MarginDirection(str, enum.Enum):
    INCREASE = "increase"
    DECREASE = "decrease"


@dataclass(frozen=True)
class ControlConfig:
    """Controller settings carried by a scenario.

    ``k_gen`` and ``k_lcc`` hold manual droop coefficients keyed by bus id;
    they are used for every unit under ``DroopMode.MANUAL`` and as per-unit
    overrides otherwise.
    """

    dead_zone: float = 0.0
    objective: Objective = Objective.I
    droop: DroopMode = DroopMode.OPTIMAL
    margin: MarginDirection = MarginDirection.INCREASE
    lcc_droop: bool = True
    k_gen: dict = field(default_factory=dict)
    k_lcc: dict = field(default_factory=dict)
    lyapunov_d_scale: float = 1.0
    horizon: float = 20.0
    step: float = 1e-3
    output: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "droop", DroopMode(self.droop))
        object.__setattr__(self, "margin", MarginDirection(self.margin))
        if self.dead_zone < 0:
            raise ValueError("dead zone threshold must be non-negative")
        if not (self.horizon >= 0 and self.step > 0 and self.output > 0):
            raise ValueError("horizon must be >= 0, step and output interval > 0")
        if self.lyapunov_d_scale <= 0:
            raise ValueError("lyapunov_d_scale must be positive")


@dataclass(frozen=True)
class Scenario:
    network: Network
    events: tuple = ()
    control: ControlConfig = ControlConfig()
    name: str = ""

    @property
    def dead_zone(self) -> float:
        return self.control.dead_zone

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


# -- parsing ------------------------------------------------------------------

_SECTION_RE = r"^\s*\[\[\s*{name}\s*\]\]"


def _table_line(text: str | None, section: str, index: int | None) -> int | None:
    if text is None:
        return None
    if index is None:
        pattern = re.compile(rf"^\s*\[\s*{re.escape(section)}\s*\]", re.M)
        m = pattern.search(text)
        return text.count("\n", 0, m.start()) + 1 if m else None
    pattern = re.compile(_SECTION_RE.format(name=re.escape(section)), re.M)
    for k, m in enumerate(pattern.finditer(text)):
        if k == index:
            return text.count("\n", 0, m.start()) + 1
    return None


class _Reader:
    """Pulls typed fields out of one table, reporting location on failure."""

    def __init__(self, table: dict, section: str, index: int | None, text: str | None):
        if not isinstance(table, dict):
            raise ParseError("expected a table", line=_table_line(text, section, index), field=section)
        self.table = table
        self.section = section
        self.index = index
        self.text = text
        self.used: set[str] = set()

    def where(self, key: str) -> str:
        if self.index is None:
            return f"{self.section}.{key}"
        return f"{self.section}[{self.index}].{key}"

    def error(self, message: str, key: str, cls=ParseError):
        return cls(message, line=_table_line(self.text, self.section, self.index), field=self.where(key))

    def has(self, key: str) -> bool:
        return key in self.table

    def get(self, key: str, kind=float, default=...):
        self.used.add(key)
        if key not in self.table:
            if default is ...:
                raise self.error("missing required field", key)
            return default
        value = self.table[key]
        try:
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                return float(value)
            if kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
                return value
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            return kind(value)
        except (TypeError, ValueError):
            raise self.error(f"invalid value {value!r}", key) from None

    def power(self, key: str, base_mva: float, default=...):
        """Per-unit power from ``key`` or ``key_mw``."""
        if self.has(key) and self.has(f"{key}_mw"):
            raise self.error("give either p.u. or _mw value, not both", key)
        if self.has(f"{key}_mw"):
            return self.get(f"{key}_mw") / base_mva
        return self.get(key, default=default)

    def finish(self):
        extra = set(self.table) - self.used
        if extra:
            raise self.error("unknown field", sorted(extra)[0])


def _merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_include(name: str, base_dir: Path | None) -> Path:
    candidates = []
    if base_dir is not None:
        candidates.append(Path(base_dir) / name)
    candidates.append(Path(name))
    for path in candidates:
        if path.is_file():
            return path
    fixture = fixture_path(Path(name).stem)
    if fixture.is_file():
        return fixture
    raise ParseError(f"included scenario {name!r} not found", field="include")


def _parse_toml(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"malformed scenario text: {exc}", line=int(m.group(1)) if m else None) from None


def load_scenario(text: str, base_dir: str | Path | None = None) -> Scenario:
    """Parse scenario text into a validated :class:`Scenario`.

    Events come back sorted by time.  ``base_dir`` resolves relative
    ``include`` paths.
    """
    doc = _parse_toml(text)
    include = doc.pop("include", None)
    check_text = text
    if include is not None:
        if not isinstance(include, str):
            raise ParseError("include must be a file name", field="include")
        path = _resolve_include(include, Path(base_dir) if base_dir else None)
        parent = load_scenario(path.read_text(), base_dir=path.parent).to_dict()
        doc = _merge(parent, doc)
        check_text = None  # line numbers would point into two files
    return scenario_from_dict(doc, text=check_text)


def load_scenario_file(path: str | Path) -> Scenario:
    path = Path(path)
    return load_scenario(path.read_text(), base_dir=path.parent)


def scenario_from_dict(doc: dict, text: str | None = None) -> Scenario:
    top = _Reader(doc, "scenario", None, text)
    name = top.get("name", str, default="")

    net = _Reader(doc.get("network", {}), "network", None, text)
    top.used.add("network")
    base_mva = net.get("base_mva", default=100.0)
    f_nom = net.get("f_nominal_hz", default=50.0)
    raw_buses = net.get("buses", list)
    net.finish()

    buses = []
    for k, raw in enumerate(raw_buses):
        r = _Reader(raw, "network.buses", None, text)
        r.section = f"network.buses[{k}]"
        try:
            role = Role(r.get("role", str))
        except ValueError:
            raise r.error("role must be generator, lcc or passive", "role") from None
        try:
            buses.append(Bus(r.get("id", int), role, r.power("p", base_mva, default=0.0), r.get("v", default=1.0)))
        except NetworkError as exc:
            raise r.error(str(exc), "v") from None
        r.finish()

    def records(section):
        top.used.add(section)
        raw = doc.get(section, [])
        if not isinstance(raw, list):
            raise ParseError("expected an array of tables", line=_table_line(text, section, None), field=section)
        return [_Reader(item, section, k, text) for k, item in enumerate(raw)]

    gens = []
    for r in records("generators"):
        try:
            gens.append(GeneratorParams(
                bus=r.get("bus", int), m=r.get("m"), d=r.get("d"), kg_bar=r.get("kg_bar"), beta=r.get("beta"),
            ))
        except NetworkError as exc:
            raise r.error(str(exc), "bus") from None
        r.finish()

    lccs = []
    for r in records("lccs"):
        bus = r.get("bus", int)
        try:
            lccs.append(LccParams(
                bus=bus,
                name=r.get("name", str, default=f"LCC@{bus}"),
                p_nominal=r.power("p", base_mva),
                p_max=r.power("p_max", base_mva),
                p_min=r.power("p_min", base_mva),
                t_d=r.get("t_s"),
                alpha=r.get("alpha"),
                e=r.get("e", default=None),
                k_f=r.get("k_f", default=None),
                u_d_kv=r.get("u_d_kv", default=660.0),
            ))
        except NetworkError as exc:
            raise r.error(str(exc), "p") from None
        r.finish()

    lines = []
    for r in records("lines"):
        try:
            lines.append(Line(r.get("from", int), r.get("to", int), r.get("b")))
        except NetworkError as exc:
            raise r.error(str(exc), "b") from None
        r.finish()

    try:
        network = build_network(buses, lines, gens, lccs, base_mva=base_mva, f_nominal_hz=f_nom, name=name)
    except NetworkError as exc:
        raise ParseError(f"invalid network: {exc}", field="network") from exc

    lcc_by_name = {l.name: b for b, l in network.lccs.items()}
    events = []
    for r in records("events"):
        try:
            kind = EventKind(r.get("kind", str))
        except ValueError:
            raise r.error("kind must be generator_trip, dc_block or power_step", "kind") from None
        t = r.get("t_s")
        if t < 0:
            raise r.error("event time must be non-negative", "t_s")
        if r.has("lcc"):
            lcc_name = r.get("lcc", str)
            if lcc_name not in lcc_by_name:
                raise r.error(f"unknown LCC {lcc_name!r}", "lcc", UnknownBusReference)
            bus = lcc_by_name[lcc_name]
        else:
            bus = r.get("bus", int)
        if bus not in network.index:
            raise r.error(f"unknown bus {bus}", "bus", UnknownBusReference)
        dp = 0.0
        if kind is EventKind.POWER_STEP:
            dp = r.power("dp", base_mva)
        elif kind is EventKind.GENERATOR_TRIP and bus not in network.generators:
            raise r.error(f"bus {bus} has no generator", "bus", UnknownBusReference)
        elif kind is EventKind.DC_BLOCK and bus not in network.lccs:
            raise r.error(f"bus {bus} has no LCC", "bus", UnknownBusReference)
        events.append(Event(t, kind, bus, dp))
        r.finish()
    events.sort(key=lambda e: e.t)

    top.used.add("control")
    c = _Reader(doc.get("control", {}), "control", None, text)
    if c.has("dead_zone_hz") and c.has("dead_zone_pu"):
        raise c.error("give either dead_zone_hz or dead_zone_pu", "dead_zone_hz")
    if c.has("dead_zone_hz"):
        dead_zone = c.get("dead_zone_hz") / f_nom
    else:
        dead_zone = c.get("dead_zone_pu", default=0.0)
    objective = c.get("objective", str, default="I")
    objective = {"1": "I", "2": "II"}.get(objective, objective)
    k_gen = _coefficients(c, "k_gen", network, set(network.generators))
    k_lcc = _coefficients(c, "k_lcc", network, set(network.lccs), lcc_by_name)
    try:
        control = ControlConfig(
            dead_zone=dead_zone,
            objective=objective,
            droop=c.get("droop", str, default="optimal"),
            margin=c.get("margin", str, default="increase"),
            lcc_droop=c.get("lcc_droop", bool, default=True),
            k_gen=k_gen,
            k_lcc=k_lcc,
            lyapunov_d_scale=c.get("lyapunov_d_scale", default=1.0),
            horizon=c.get("horizon_s", default=20.0),
            step=c.get("step_s", default=1e-3),
            output=c.get("output_s", default=1e-2),
        )
    except ValueError as exc:
        raise c.error(str(exc), "objective") from None
    c.finish()
    top.finish()
    return Scenario(network=network, events=tuple(events), control=control, name=name)


def _coefficients(c: _Reader, key: str, network: Network, allowed: set, names: dict | None = None) -> dict:
    raw = c.get(key, dict, default={})
    out = {}
    for label, value in raw.items():
        if names and label in names:
            bus = names[label]
        else:
            try:
                bus = int(label)
            except ValueError:
                raise c.error(f"unknown unit {label!r}", key, UnknownBusReference) from None
        if bus not in allowed:
            raise c.error(f"bus {bus} has no matching unit", key, UnknownBusReference)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            raise c.error(f"invalid coefficient {value!r}", key)
        out[bus] = float(value)
    return out


# -- serialization ------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> dict:
    net = scenario.network
    doc: dict[str, Any] = {"name": scenario.name}
    doc["network"] = {
        "base_mva": net.base_mva,
        "f_nominal_hz": net.f_nominal_hz,
        "buses": [{"id": b.id, "role": b.role.value, "p": b.p, "v": b.v} for b in net.buses],
    }
    doc["generators"] = [
        {"bus": g.bus, "m": g.m, "d": g.d, "kg_bar": g.kg_bar, "beta": g.beta} for g in net.generators.values()
    ]
    lccs = []
    for l in net.lccs.values():
        rec = {
            "name": l.name, "bus": l.bus, "p": l.p_nominal, "p_max": l.p_max, "p_min": l.p_min,
            "t_s": l.t_d, "alpha": l.alpha, "u_d_kv": l.u_d_kv,
        }
        if l.e is not None:
            rec["e"] = l.e
        if l.k_f is not None:
            rec["k_f"] = l.k_f
        lccs.append(rec)
    doc["lccs"] = lccs
    doc["lines"] = [{"from": ln.i, "to": ln.j, "b": ln.b} for ln in net.lines]
    events = []
    for e in scenario.events:
        rec = {"t_s": e.t, "kind": e.kind.value, "bus": e.bus}
        if e.kind is EventKind.POWER_STEP:
            rec["dp"] = e.dp
        events.append(rec)
    doc["events"] = events
    c = scenario.control
    doc["control"] = {
        "dead_zone_pu": c.dead_zone,
        "objective": c.objective.value,
        "droop": c.droop.value,
        "margin": c.margin.value,
        "lcc_droop": c.lcc_droop,
        "k_gen": {str(k): v for k, v in c.k_gen.items()},
        "k_lcc": {str(k): v for k, v in c.k_lcc.items()},
        "lyapunov_d_scale": c.lyapunov_d_scale,
        "horizon_s": c.horizon,
        "step_s": c.step,
        "output_s": c.output,
    }
    return doc


def dump_scenario(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(scenario))


# -- bundled fixtures ---------------------------------------------------------

FIXTURES = ("three_bus_minimal", "new_england_midc", "g6_trip")


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("midc_droop") / "fixtures" / f"{name}.toml"))


def load_fixture(name: str) -> Scenario:
    path = fixture_path(name)
    if not path.is_file():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return load_scenario_file(path)
