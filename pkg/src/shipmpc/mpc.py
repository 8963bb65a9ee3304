"""Horizon dispatch of one generator and one battery as a convex QP.

Decision vector ``x = (P_g,1..P_g,h, P_b,1..P_b,h)`` in watts. The cost is

    sum_k (P_g,k + P_b,k - P^f_k)^2 + lambda * sum_k C(P_g,k)

with ``C(P) = alpha P^2 + beta P``, subject to SOC parking
(``sum_k P_b,k = Q_b``), power boxes and per-step ramp limits anchored at
the powers applied just before the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, InfeasibleDispatchError
from .qp import QpOptions, QpProblem, QpSolution, QpStatus, check_feasible, solve_qp

__all__ = [
    "MpcConfig",
    "LoadForecast",
    "DispatchInit",
    "DispatchSchedule",
    "DispatchAudit",
    "parking_energy",
    "generator_cost_coeffs",
    "generator_cost",
    "ramp_per_step",
    "generator_first_guess",
    "build_qp",
    "solve_dispatch",
    "receding_step",
    "receding_dispatch",
    "audit_schedule",
]

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class MpcConfig:
    """Dispatch problem parameters. Powers in W, ramps in W per step.

    The battery is sized by energy (``energy_capacity_j``); the charge
    capacity in ampere-hours at the nominal bus voltage is derived.
    The power limits, ramps and cost coefficients shipped as defaults are
    tuning choices for the reference scenario, not measured ship data.
    """

    horizon_h: int = 100
    step_ts: float = 1.0
    lambda_: float = 1e12
    gen_cost_alpha: float = 1e-14
    gen_cost_beta: float = 0.0
    p_g_min: float = 0.0
    p_g_max: float = 20e6
    p_b_min: float = -30e6
    p_b_max: float = 30e6
    ramp_g: float = 1e6
    ramp_b: float = 10e6
    energy_capacity_j: float = 2e10
    v_bus_nominal: float = 12000.0
    soc_initial: float = 0.8
    soc_final: float = 0.8

    def __post_init__(self):
        def bad(key, msg):
            raise ConfigError(msg, key=f"mpc.{key}")

        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
                bad(f.name, f"{f.name} must be a number")
        if int(self.horizon_h) != self.horizon_h or self.horizon_h < 1:
            bad("horizon_h", "horizon_h must be an integer >= 1")
        object.__setattr__(self, "horizon_h", int(self.horizon_h))
        if not (self.step_ts > 0 and math.isfinite(self.step_ts)):
            bad("step_ts", "step_ts must be positive")
        if not (self.lambda_ >= 0 and math.isfinite(self.lambda_)):
            bad("lambda", "lambda must be finite and >= 0")
        if not (self.gen_cost_alpha >= 0 and math.isfinite(self.gen_cost_alpha)):
            bad("gen_cost_alpha", "gen_cost_alpha must be >= 0 to keep the QP convex")
        if not math.isfinite(self.gen_cost_beta):
            bad("gen_cost_beta", "gen_cost_beta must be finite")
        if self.p_g_min < 0:
            bad("p_g_min", "p_g_min must be >= 0")
        if not self.p_g_min <= self.p_g_max:
            bad("p_g_max", "p_g_min must not exceed p_g_max")
        if not self.p_b_min <= self.p_b_max:
            bad("p_b_max", "p_b_min must not exceed p_b_max")
        for key in ("ramp_g", "ramp_b"):
            if not getattr(self, key) >= 0:
                bad(key, f"{key} must be >= 0")
        for key in ("energy_capacity_j", "v_bus_nominal"):
            v = getattr(self, key)
            if not (v > 0 and math.isfinite(v)):
                bad(key, f"{key} must be positive and finite")
        for key in ("soc_initial", "soc_final"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                bad(key, f"{key} must lie in [0, 1]")

    @property
    def q_total_ah(self):
        """Battery charge capacity in Ah at the nominal bus voltage."""
        return self.energy_capacity_j / (SECONDS_PER_HOUR * self.v_bus_nominal)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LoadForecast:
    """Forecast load ``P^f_k`` for k = 1..h, in W."""

    p_load: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_load, dtype=float).reshape(-1)
        if not np.all(np.isfinite(p)):
            raise ValueError("forecast contains non-finite values")
        p.setflags(write=False)
        object.__setattr__(self, "p_load", p)

    def __len__(self):
        return self.p_load.shape[0]

    def window(self, start, length=None):
        stop = len(self) if length is None else start + length
        return LoadForecast(self.p_load[start:stop])


@dataclass(frozen=True)
class DispatchInit:
    """Generator and battery power applied just before the horizon (W)."""

    p_g_prev: float = 0.0
    p_b_prev: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.p_g_prev) and math.isfinite(self.p_b_prev)):
            raise ValueError("DispatchInit powers must be finite")

    @classmethod
    def from_forecast(cls, cfg, forecast):
        """Generator-first split of the first forecast sample.

        The generator takes as much as its box allows and the battery the
        remainder, clipped to its own box.
        """
        p1 = float(forecast.p_load[0])
        pg = min(max(min(p1, cfg.p_g_max), cfg.p_g_min), cfg.p_g_max)
        pb = min(max(p1 - pg, cfg.p_b_min), cfg.p_b_max)
        return cls(pg, pb)


@dataclass(frozen=True, eq=False)
class DispatchSchedule:
    """Decoded dispatch. ``mismatch = p_gen + p_batt - forecast``."""

    p_gen: np.ndarray
    p_batt: np.ndarray
    mismatch: np.ndarray
    q_b_target: float
    status: QpStatus
    objective: float
    solution: QpSolution = field(repr=False)
    problem: QpProblem = field(repr=False)

    @property
    def optimal(self):
        return self.status is QpStatus.OPTIMAL

    @property
    def phase1_violation(self):
        return self.solution.phase1_violation


def parking_energy(cfg):
    """Required battery power sum over the horizon, ``Q_b`` (W summed over steps).

    Positive for net discharge (``soc_initial > soc_final``).
    """
    return (SECONDS_PER_HOUR * cfg.q_total_ah * cfg.v_bus_nominal / cfg.step_ts
            * (cfg.soc_initial - cfg.soc_final))


def generator_cost_coeffs(cfg):
    """Return ``(alpha, beta)`` of ``C(P) = alpha P^2 + beta P``."""
    if cfg.gen_cost_alpha < 0:
        raise ConfigError("gen_cost_alpha must be >= 0 to keep the QP convex",
                          key="mpc.gen_cost_alpha")
    return cfg.gen_cost_alpha, cfg.gen_cost_beta


def generator_cost(cfg, p_gen):
    """Total generator cost ``sum C(P_g,k)`` (unweighted by lambda)."""
    a, b = generator_cost_coeffs(cfg)
    p = np.asarray(p_gen, dtype=float)
    return float(np.sum(a * p * p + b * p))


def ramp_per_step(rate_w_per_s, step_ts):
    """Convert a ramp rate in W/s to the per-step limit used by the QP."""
    return float(rate_w_per_s) * float(step_ts)


def _ramp_block(h, ramp, prev, col0, n):
    """Rows for |P_k - P_{k-1}| <= ramp, k = 1..h (up rows, then down rows)."""
    d = np.zeros((h, n))
    idx = np.arange(h)
    d[idx, col0 + idx] = 1.0
    d[idx[1:], col0 + idx[1:] - 1] = -1.0
    rhs = np.full(h, float(ramp))
    up = rhs.copy()
    dn = rhs.copy()
    up[0] += prev
    dn[0] -= prev
    return np.vstack([d, -d]), np.concatenate([up, dn])


def build_qp(cfg, forecast, init):
    """Compile the horizon dispatch problem.

    Returns a :class:`QpProblem` with ``n = 2h``, one equality row
    (battery sum equals :func:`parking_energy`), ``4h`` ramp rows ordered
    (generator up, generator down, battery up, battery down) and boxes.
    ``offset`` holds ``p^f' p^f`` so the reported objective equals the
    mismatch energy plus the weighted generator cost.
    """
    h = cfg.horizon_h
    p = forecast.p_load
    if p.shape[0] != h:
        raise ConfigError(f"forecast has {p.shape[0]} samples but horizon_h is {h}",
                          key="mpc.horizon_h")
    alpha, beta = generator_cost_coeffs(cfg)
    n = 2 * h
    eye = np.eye(h)
    m = np.hstack([eye, eye])
    hm = m.T @ m
    hm[:h, :h] += cfg.lambda_ * alpha * eye
    fv = -2.0 * (m.T @ p)
    fv[:h] += cfg.lambda_ * beta

    a_eq = np.concatenate([np.zeros(h), np.ones(h)])[None, :]
    b_eq = np.array([parking_energy(cfg)])

    rg, bg = _ramp_block(h, cfg.ramp_g, init.p_g_prev, 0, n)
    rb, bb = _ramp_block(h, cfg.ramp_b, init.p_b_prev, h, n)
    a_in = np.vstack([rg, rb])
    b_in = np.concatenate([bg, bb])

    lower = np.concatenate([np.full(h, cfg.p_g_min), np.full(h, cfg.p_b_min)])
    upper = np.concatenate([np.full(h, cfg.p_g_max), np.full(h, cfg.p_b_max)])
    return QpProblem(hm, fv, a_eq, b_eq, a_in, b_in, lower, upper, offset=float(p @ p))


def _decode(cfg, forecast, problem, sol):
    h = cfg.horizon_h
    pg = np.array(sol.x_star[:h])
    pb = np.array(sol.x_star[h:])
    return DispatchSchedule(pg, pb, pg + pb - forecast.p_load, float(problem.b_eq[0]),
                            sol.status, sol.objective, sol, problem)


def generator_first_guess(cfg, forecast):
    """Starting guess: generator serves the forecast within its box, battery the rest."""
    pg = np.clip(forecast.p_load, cfg.p_g_min, cfg.p_g_max)
    pb = np.clip(forecast.p_load - pg, cfg.p_b_min, cfg.p_b_max)
    return np.concatenate([pg, pb])


def solve_dispatch(cfg, forecast, init=None, options=None, x0=None):
    """Build and solve the dispatch QP.

    The solver starts from the feasible point nearest to ``x0``
    (default :func:`generator_first_guess`). With ``lambda = 0`` the
    optimum is typically a whole face of equally good plans; this start
    picks one that leans on the generator and keeps battery use low.

    Infeasible parking targets are not raised; the schedule carries
    ``status = Infeasible`` and the feasibility-phase violation.
    """
    if init is None:
        init = DispatchInit.from_forecast(cfg, forecast)
    problem = build_qp(cfg, forecast, init)
    if x0 is None:
        x0 = generator_first_guess(cfg, forecast)
    sol = solve_qp(problem, options or QpOptions(), x0=x0)
    return _decode(cfg, forecast, problem, sol)


def receding_step(cfg, forecast_window, init, soc_now, options=None):
    """Solve over the remaining window from the current SOC.

    Returns ``((P_g,1, P_b,1), schedule)``.
    """
    h = len(forecast_window)
    if h < 1:
        raise ConfigError("receding window has no remaining steps", key="mpc.horizon_h")
    if not 0.0 <= soc_now <= 1.0:
        raise ConfigError(f"soc_now={soc_now} outside [0, 1]", key="mpc.soc_initial")
    step_cfg = replace(cfg, horizon_h=h, soc_initial=float(soc_now))
    sched = solve_dispatch(step_cfg, forecast_window, init, options)
    if not sched.optimal:
        return (math.nan, math.nan), sched
    return (float(sched.p_gen[0]), float(sched.p_batt[0])), sched


def receding_dispatch(cfg, forecast, init=None, options=None):
    """Shrinking-horizon dispatch with ideal SOC bookkeeping (no plant).

    At step k the window is ``forecast[k:]``, the SOC is advanced by the
    applied battery power, and the applied powers anchor the next ramp.
    Returns ``(p_gen_applied, p_batt_applied, soc_trajectory)``; the SOC
    array has ``h + 1`` entries.
    """
    h = cfg.horizon_h
    if init is None:
        init = DispatchInit.from_forecast(cfg, forecast)
    pg = np.zeros(h)
    pb = np.zeros(h)
    soc = np.zeros(h + 1)
    soc[0] = cfg.soc_initial
    for k in range(h):
        (g, b), sched = receding_step(cfg, forecast.window(k), init,
                                      min(max(soc[k], 0.0), 1.0), options)
        if not sched.optimal:
            raise InfeasibleDispatchError("receding dispatch infeasible",
                                          sched.phase1_violation, step=k)
        pg[k], pb[k] = g, b
        soc[k + 1] = soc[k] - b * cfg.step_ts / cfg.energy_capacity_j
        init = DispatchInit(g, b)
    return pg, pb, soc


@dataclass(frozen=True)
class DispatchAudit:
    """Constraint audit of a schedule in W.

    ``ok`` applies the acceptance tolerances: battery-sum error within
    1e-6 relative, boxes and ramps within ``1e-6 * max(1, p_g_max)``.
    """

    battery_sum: float
    q_b_target: float
    battery_sum_error: float
    max_gen_step: float
    max_batt_step: float
    box_violation: float
    ramp_violation: float
    feasible_report: object
    ok: bool


def audit_schedule(cfg, schedule, init):
    h = cfg.horizon_h
    tol = 1e-6 * max(1.0, cfg.p_g_max)
    qb = schedule.q_b_target
    total = float(np.sum(schedule.p_batt))
    err = abs(total - qb)
    dg = np.diff(np.concatenate([[init.p_g_prev], schedule.p_gen]))
    db = np.diff(np.concatenate([[init.p_b_prev], schedule.p_batt]))
    box = max(
        float(np.max(np.maximum(cfg.p_g_min - schedule.p_gen, 0.0), initial=0.0)),
        float(np.max(np.maximum(schedule.p_gen - cfg.p_g_max, 0.0), initial=0.0)),
        float(np.max(np.maximum(cfg.p_b_min - schedule.p_batt, 0.0), initial=0.0)),
        float(np.max(np.maximum(schedule.p_batt - cfg.p_b_max, 0.0), initial=0.0)),
    )
    ramp = max(float(np.max(np.abs(dg), initial=0.0)) - cfg.ramp_g,
               float(np.max(np.abs(db), initial=0.0)) - cfg.ramp_b, 0.0)
    x = np.concatenate([schedule.p_gen, schedule.p_batt])
    report = check_feasible(schedule.problem, x, tol)
    ok = (err <= 1e-6 * max(1.0, abs(qb)) and box <= tol and ramp <= tol and bool(report)
          and h == schedule.p_gen.shape[0])
    return DispatchAudit(total, qb, err, float(np.max(np.abs(dg), initial=0.0)),
                         float(np.max(np.abs(db), initial=0.0)), box, ramp, report, ok)
