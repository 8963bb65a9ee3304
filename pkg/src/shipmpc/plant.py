"""Averaged model of the generator + battery + constant-power-load string.

States (SI units)::

    dv_g/dt   = k (v_gin - v_g)                               generator filter
    L di_g/dt = v_g - R_g i_g - v_c                           generator line
    di_e/dt   = w (i_ref - i_e)                               battery current loop
    C dv_c/dt = i_g + i_e - v_c / R_d - P / v_c               common bus
    dsoc/dt   = -v_c i_e / Q                                  battery energy

The battery current enters the bus node. SOC is tracked in energy units,
with ``Q`` the battery capacity in joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, PlantCollapseError

__all__ = [
    "PlantParams",
    "PlantState",
    "PlantInputs",
    "StateRate",
    "derivatives",
    "step_rk4",
    "rk4_kernel",
    "steady_state",
    "soc_from_power_history",
    "soc_series",
    "load_bus_rate",
]


@dataclass(frozen=True)
class PlantParams:
    """Electrical parameters.

    ``l_g`` defaults to 1 mH. With 0.1 H the closed loop at the default PI
    gains has an unstable oscillatory pair near 69 rad/s, so the smaller
    line inductance is used (see ``shipmpc.sim.closed_loop_poles``).
    """

    r_g: float = 0.9
    l_g: float = 1e-3
    c_eq: float = 2.1e-3
    r_d: float = 1e4
    k_gen: float = 10.0
    omega_ess: float = 1000.0
    q_total_j: float = 2e10
    v_nominal: float = 12000.0
    v_floor_frac: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 \
                    or math.isnan(v):
                raise ConfigError(f"{f.name} must be a positive number", key=f"plant.{f.name}")
        if self.v_floor_frac >= 1:
            raise ConfigError("v_floor_frac must be below 1", key="plant.v_floor_frac")

    @property
    def v_floor(self):
        return self.v_floor_frac * self.v_nominal


@dataclass(frozen=True)
class PlantState:
    v_g: float
    i_g: float
    i_ess: float
    v_ceq: float
    soc: float
    soc_clamped: bool = False

    def as_array(self):
        return np.array([self.v_g, self.i_g, self.i_ess, self.v_ceq, self.soc])


@dataclass(frozen=True)
class PlantInputs:
    v_g_in: float
    i_ess_ref: float
    p_load: float


class StateRate(NamedTuple):
    dv_g: float
    di_g: float
    di_ess: float
    dv_ceq: float
    dsoc: float


def _collapse(v_c, floor, t=None, step=None):
    return PlantCollapseError(
        f"bus voltage {v_c:.6g} V fell below the {floor:.6g} V floor", time=t, step=step)


def _rates(vg, ig, ie, vc, vgin, iref, pl, k, l, rg, w, c, rd, q):
    return (k * (vgin - vg),
            (vg - rg * ig - vc) / l,
            w * (iref - ie),
            (ig + ie - vc / rd - pl / vc) / c,
            -vc * ie / q)


def derivatives(state, inputs, params):
    """Time derivative of the plant state.

    Raises
    ------
    PlantCollapseError
        ``v_ceq`` is below ``params.v_floor``.
    """
    if not state.v_ceq >= params.v_floor:
        raise _collapse(state.v_ceq, params.v_floor)
    p = params
    return StateRate(*_rates(state.v_g, state.i_g, state.i_ess, state.v_ceq,
                             inputs.v_g_in, inputs.i_ess_ref, inputs.p_load,
                             p.k_gen, p.l_g, p.r_g, p.omega_ess, p.c_eq, p.r_d, p.q_total_j))


def rk4_kernel(params):
    """Return a float-only RK4 step ``f(vg, ig, ie, vc, soc, vgin, iref, pl, dt)``.

    The returned soc is unclamped. Intended for tight simulation loops;
    raises PlantCollapseError when any stage sees the bus below the floor.
    """
    k, l, rg = params.k_gen, params.l_g, params.r_g
    w, c, rd, q = params.omega_ess, params.c_eq, params.r_d, params.q_total_j
    floor = params.v_floor

    def step(vg, ig, ie, vc, soc, vgin, iref, pl, dt):
        h2 = 0.5 * dt
        if not vc >= floor:
            raise _collapse(vc, floor)
        a1 = k * (vgin - vg)
        b1 = (vg - rg * ig - vc) / l
        c1 = w * (iref - ie)
        d1 = (ig + ie - vc / rd - pl / vc) / c
        e1 = -vc * ie / q

        vg2, ig2, ie2, vc2 = vg + h2 * a1, ig + h2 * b1, ie + h2 * c1, vc + h2 * d1
        if not vc2 >= floor:
            raise _collapse(vc2, floor)
        a2 = k * (vgin - vg2)
        b2 = (vg2 - rg * ig2 - vc2) / l
        c2 = w * (iref - ie2)
        d2 = (ig2 + ie2 - vc2 / rd - pl / vc2) / c
        e2 = -vc2 * ie2 / q

        vg3, ig3, ie3, vc3 = vg + h2 * a2, ig + h2 * b2, ie + h2 * c2, vc + h2 * d2
        if not vc3 >= floor:
            raise _collapse(vc3, floor)
        a3 = k * (vgin - vg3)
        b3 = (vg3 - rg * ig3 - vc3) / l
        c3 = w * (iref - ie3)
        d3 = (ig3 + ie3 - vc3 / rd - pl / vc3) / c
        e3 = -vc3 * ie3 / q

        vg4, ig4, ie4, vc4 = vg + dt * a3, ig + dt * b3, ie + dt * c3, vc + dt * d3
        if not vc4 >= floor:
            raise _collapse(vc4, floor)
        a4 = k * (vgin - vg4)
        b4 = (vg4 - rg * ig4 - vc4) / l
        c4 = w * (iref - ie4)
        d4 = (ig4 + ie4 - vc4 / rd - pl / vc4) / c
        e4 = -vc4 * ie4 / q

        s = dt / 6.0
        return (vg + s * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
                ig + s * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
                ie + s * (c1 + 2.0 * c2 + 2.0 * c3 + c4),
                vc + s * (d1 + 2.0 * d2 + 2.0 * d3 + d4),
                soc + s * (e1 + 2.0 * e2 + 2.0 * e3 + e4))

    return step


def step_rk4(state, inputs, params, dt):
    """One classic RK4 step with inputs held over the step.

    SOC is clamped to [0, 1]; ``soc_clamped`` records that the clamp was
    active at any point so far.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    vg, ig, ie, vc, soc = rk4_kernel(params)(
        state.v_g, state.i_g, state.i_ess, state.v_ceq, state.soc,
        inputs.v_g_in, inputs.i_ess_ref, inputs.p_load, dt)
    clamped = state.soc_clamped or soc < 0.0 or soc > 1.0
    return PlantState(vg, ig, ie, vc, min(max(soc, 0.0), 1.0), clamped)


def steady_state(p_load, params, soc=0.5):
    """Equilibrium with the bus at nominal voltage and the battery idle."""
    v = params.v_nominal
    ig = v / params.r_d + p_load / v
    return PlantState(v + ig * params.r_g, ig, 0.0, v, soc)


def soc_from_power_history(soc0, p_batt, dt, q_total_j):
    """``soc0 - sum(p) dt / Q`` clamped to [0, 1].

    Returns ``(soc, clamped)``. Positive battery power discharges.
    """
    if not 0.0 <= soc0 <= 1.0:
        raise ValueError("soc0 must lie in [0, 1]")
    p = np.asarray(p_batt, dtype=float)
    soc = soc0 - float(np.sum(p)) * dt / q_total_j
    return min(max(soc, 0.0), 1.0), bool(soc < 0.0 or soc > 1.0)


def soc_series(soc0, p_batt, dt, q_total_j):
    """SOC after each sample interval using the trapezoid rule (length ``len(p)``).

    Entry ``i`` is the SOC at the time of sample ``i``; entry 0 is ``soc0``.
    Unclamped.
    """
    p = np.asarray(p_batt, dtype=float)
    inc = 0.5 * (p[1:] + p[:-1]) * dt / q_total_j
    return soc0 - np.concatenate([[0.0], np.cumsum(inc)])


def load_bus_rate(v_c, i_in, p_load, r_l, c_l):
    """dv/dt of a load port modelled as a CPL in parallel with R_L and C_L."""
    if v_c <= 0:
        raise ValueError("load bus voltage must be positive")
    return (-p_load / v_c - v_c / r_l + i_in) / c_l
