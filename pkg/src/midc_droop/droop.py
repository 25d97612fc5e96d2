"""Generator droop and the LCC-HVDC P-f droop controller.

The LCC controller has two droop channels: one driven by the frequency of
the receiving-end (RE) AC system, one by the sending-end (SE) system.  Each
channel sits behind a latching dead zone, and a selection-and-lock stage
lets only the first channel to act through.  The resulting power order is
clamped to the admissible order range.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

from .errors import ZeroDcVoltage
from .network import LccParams


class LockState(str, enum.Enum):
    UNLOCKED = "unlocked"
    RE = "locked_re"
    SE = "locked_se"


def effective_gen_droop(kg_bar: float, d: float) -> float:
    """Governor droop plus damping."""
    return kg_bar + d


def apply_dead_zone(omega_dev: float, threshold: float, latched: bool) -> tuple[float, bool]:
    """Gate a frequency deviation through a latching dead zone.

    Once ``|omega_dev|`` reaches ``threshold`` the channel latches and every
    later deviation passes unchanged until the latch is reset.
    """
    if threshold < 0:
        raise ValueError("dead zone threshold must be non-negative")
    if latched or abs(omega_dev) >= threshold:
        return omega_dev, True
    return 0.0, False


def select_and_lock(re_delta: float, se_delta: float, lock: LockState) -> tuple[float, LockState]:
    """Pass the first active channel and lock out the other.

    If both channels become active on the same call, RE wins.
    """
    if lock is LockState.RE:
        return re_delta, lock
    if lock is LockState.SE:
        return se_delta, lock
    if re_delta != 0.0:
        return re_delta, LockState.RE
    if se_delta != 0.0:
        return se_delta, LockState.SE
    return 0.0, LockState.UNLOCKED


@dataclass(frozen=True)
class PowerOrder:
    p_ord: float
    saturated: bool


@dataclass(frozen=True)
class LccDroopController:
    """State and settings of one P-f droop controller.

    Powers are transmitted-power magnitudes in p.u.; ``threshold`` is a p.u.
    frequency deviation.  Instances are immutable; :func:`lcc_power_order`
    returns the successor state.
    """

    k_re: float
    k_se: float
    p_nominal: float
    p_min: float
    p_max: float
    threshold: float = 0.0
    lock: LockState = LockState.UNLOCKED
    latched_re: bool = False
    latched_se: bool = False

    def __post_init__(self):
        if self.k_re < 0 or self.k_se < 0:
            raise ValueError("droop coefficients must be non-negative")
        if not self.p_min <= self.p_nominal <= self.p_max:
            raise ValueError("need p_min <= p_nominal <= p_max")
        if self.threshold < 0:
            raise ValueError("dead zone threshold must be non-negative")

    def reset(self) -> "LccDroopController":
        return dataclasses.replace(self, lock=LockState.UNLOCKED, latched_re=False, latched_se=False)

    def clamp(self, p: float) -> PowerOrder:
        if p > self.p_max:
            return PowerOrder(self.p_max, True)
        if p < self.p_min:
            return PowerOrder(self.p_min, True)
        return PowerOrder(p, False)


def lcc_power_order(
    ctrl: LccDroopController, omega_re_dev: float, omega_se_dev: float
) -> tuple[PowerOrder, LccDroopController]:
    """Evaluate the droop law for one controller.

    Returns the clamped power order together with the controller state after
    this evaluation (latches and lock updated).
    """
    gated_re, latched_re = apply_dead_zone(omega_re_dev, ctrl.threshold, ctrl.latched_re)
    gated_se, latched_se = apply_dead_zone(omega_se_dev, ctrl.threshold, ctrl.latched_se)
    delta, lock = select_and_lock(-ctrl.k_re * gated_re, ctrl.k_se * gated_se, ctrl.lock)
    order = ctrl.clamp(ctrl.p_nominal + delta)
    return order, dataclasses.replace(ctrl, lock=lock, latched_re=latched_re, latched_se=latched_se)


def current_order(p_ord_mw: float, u_d_kv: float) -> float:
    """Current order in kA for a power order in MW at DC voltage ``u_d_kv``."""
    if u_d_kv == 0:
        raise ZeroDcVoltage("DC voltage is zero")
    return p_ord_mw / u_d_kv


@dataclass(frozen=True)
class LinkController:
    """Droop controller of one link, seen from the main AC system.

    The main AC system is the RE side of a link that feeds it and the SE side
    of a link that exports from it.  The adjacent system's frequency is not
    modelled, so its channel always sees zero deviation.  :meth:`dc_power`
    maps the order back to the signed DC injection used by the grid model.
    """

    lcc: LccParams
    k: float
    ctrl: LccDroopController

    @classmethod
    def from_lcc(cls, lcc: LccParams, k: float, threshold: float = 0.0) -> "LinkController":
        if lcc.receiving:
            ctrl = LccDroopController(k, 0.0, lcc.p_nominal, lcc.p_min, lcc.p_max, threshold)
        else:
            ctrl = LccDroopController(0.0, k, -lcc.p_nominal, -lcc.p_max, -lcc.p_min, threshold)
        return cls(lcc, k, ctrl)

    @property
    def main_lock(self) -> LockState:
        return LockState.RE if self.lcc.receiving else LockState.SE

    @property
    def active(self) -> bool:
        """Droop on the main-system channel passes through to the order."""
        latched = self.ctrl.latched_re if self.lcc.receiving else self.ctrl.latched_se
        return latched and self.ctrl.lock in (LockState.UNLOCKED, self.main_lock)

    def _order(self, omega_main: float):
        if self.lcc.receiving:
            return lcc_power_order(self.ctrl, omega_main, 0.0)
        return lcc_power_order(self.ctrl, 0.0, omega_main)

    def dc_power(self, omega_main: float) -> tuple[float, bool]:
        """Signed DC injection and saturation flag, without advancing state."""
        order, _ = self._order(omega_main)
        sign = 1.0 if self.lcc.receiving else -1.0
        return sign * order.p_ord, order.saturated

    def observe(self, omega_main: float) -> "LinkController":
        """Advance latches and lock after seeing ``omega_main``."""
        _, ctrl = self._order(omega_main)
        return dataclasses.replace(self, ctrl=ctrl)

    def target(self, omega_main: float) -> float:
        """Signed DC power the converter tracks with the current latch/lock state."""
        if not self.active:
            return self.lcc.p_nominal
        return min(max(self.lcc.p_nominal - self.k * omega_main, self.lcc.p_min), self.lcc.p_max)
