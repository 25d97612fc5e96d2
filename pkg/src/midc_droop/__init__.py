"""Coordinated-droop emergency frequency control for multi-infeed AC-DC grids."""

from .droop import LccDroopController, LinkController, LockState, apply_dead_zone, current_order, lcc_power_order
from .dynamics import Equilibrium, SystemState, Trajectory, simulate, steady_state
from .network import Bus, GeneratorParams, LccParams, Line, Network, Role, build_network
from .oefc import DroopCoefficients, OefcProblem, droop_coefficients, optimal_droop, solve_oefc_oracle
from .scenario import Event, EventKind, Scenario, load_fixture, load_scenario, load_scenario_file

__version__ = "0.1.0"
