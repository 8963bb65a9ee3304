"""Generator voltage control (steady-state feedforward + PI) and ESS current reference."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

from .errors import PlantCollapseError

__all__ = [
    "PiState",
    "DlcOutput",
    "feedforward",
    "pi_step",
    "dlc_command",
    "ess_current_ref",
    "default_windup_bound",
]


def default_windup_bound(v_ref, k_i):
    """Accumulator limit ``10 v_ref / k_i`` (inf without integral action)."""
    return math.inf if k_i == 0 else 10.0 * v_ref / k_i


@dataclass(frozen=True)
class PiState:
    """PI regulator state.

    ``integral_accum`` is the integral of the voltage error (V s).
    ``e_prev`` is the error at the previous call, used by the trapezoid
    rule; on the first call the current error stands in for it.
    ``windup`` bounds the accumulator symmetrically; ``None`` selects
    :func:`default_windup_bound`.
    """

    k_p: float = 1.0
    k_i: float = 10.0
    v_ref: float = 12000.0
    integral_accum: float = 0.0
    e_prev: float | None = None
    windup: float | None = None

    def __post_init__(self):
        if not (self.k_p >= 0 and self.k_i >= 0):
            raise ValueError("PI gains must be >= 0")
        if not math.isfinite(self.integral_accum):
            raise ValueError("integral accumulator must be finite")
        if self.windup is None:
            object.__setattr__(self, "windup", default_windup_bound(self.v_ref, self.k_i))
        if not self.windup > 0:
            raise ValueError("anti-windup bound must be positive")


class DlcOutput(NamedTuple):
    v_g_in: float
    state: PiState
    saturated: bool


def feedforward(v_ref, p_load, params):
    """Generator voltage that holds the bus at ``v_ref`` while serving ``p_load``."""
    if not v_ref > 0:
        raise ValueError("v_ref must be positive")
    return (params.r_g / params.r_d + 1.0) * v_ref + params.r_g / v_ref * p_load


def _pi_update(acc, e_prev, e, dt, k_p, k_i, bound):
    acc = acc + 0.5 * (e_prev + e) * dt
    if acc > bound:
        acc = bound
    elif acc < -bound:
        acc = -bound
    return k_p * e + k_i * acc, acc


def pi_step(state, v_meas, dt):
    """Advance the PI regulator one sample; returns ``(correction, new_state)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = state.v_ref - v_meas
    e_prev = e if state.e_prev is None else state.e_prev
    u, acc = _pi_update(state.integral_accum, e_prev, e, dt, state.k_p, state.k_i, state.windup)
    return u, replace(state, integral_accum=acc, e_prev=e)


def dlc_command(state, v_meas, p_load, params, dt, v_limits=(0.0, math.inf)):
    """Feedforward plus PI correction, clipped to the actuator range ``v_limits``."""
    u, new = pi_step(state, v_meas, dt)
    v = feedforward(state.v_ref, p_load, params) + u
    lo, hi = v_limits
    sat = v < lo or v > hi
    return DlcOutput(min(max(v, lo), hi), new, sat)


def ess_current_ref(p_ess_ref, v_bus, params, mode="nominal"):
    """Battery current reference for a power reference (positive = discharge).

    ``mode="nominal"`` divides by the nominal bus voltage, ``"measured"``
    by ``v_bus``. Either way ``v_bus`` must be above the plant voltage floor.
    """
    if not v_bus >= params.v_floor:
        raise PlantCollapseError(
            f"bus voltage {v_bus:.6g} V below the {params.v_floor:.6g} V floor")
    if mode == "nominal":
        return p_ess_ref / params.v_nominal
    if mode == "measured":
        return p_ess_ref / v_bus
    raise ValueError(f"unknown ESS voltage mode {mode!r}")
