"""Closed-loop experiments: MPC dispatch at T_s, DLC + plant at sim_dt.

Each plant step picks the battery power reference from the active
dispatch step, converts it to a current reference, runs the generator
voltage regulator on the measured bus voltage and advances the plant by
one RK4 step with all inputs held.

Battery reference policies (``ControlConfig.battery_reference``):

``"follow_load"`` (default)
    ``P_b,k + (P_L(t) - P^f_k)``: the battery also absorbs the difference
    between the actual load and the forecast sample of the current step,
    so the generator only sees its dispatched share plus slow drift.
``"hold"``
    ``P_b,k`` held for the whole step; the generator absorbs everything else.
``"strict"``
    ``P_L(t) - P_g,k``: the generator output is pinned to its dispatch and
    the battery balances the bus.

In every policy the generator feedforward uses the generator's net share
``P_L(t) - P_batt_ref(t)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dlc import default_windup_bound
from .errors import ConfigError, InfeasibleDispatchError, PlantCollapseError, ShipMpcError
from .loads import LoadProfile, compose, forecast_of, read_profile_csv, reference_components
from .mpc import DispatchInit, MpcConfig, generator_cost, solve_dispatch
from .plant import PlantParams, steady_state

__all__ = [
    "ControlConfig",
    "LoadSpec",
    "ScenarioConfig",
    "SimTrace",
    "SummaryMetrics",
    "SweepRow",
    "build_profile",
    "run_open_loop",
    "run_receding",
    "run_scenario",
    "metrics",
    "steady_mask",
    "lambda_sweep",
    "closed_loop_jacobian",
    "closed_loop_poles",
    "dispatch_step_energy",
    "dispatch_metrics",
    "edge_energy_fraction",
    "TRACE_COLUMNS",
]

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

BATTERY_REFERENCES = ("follow_load", "hold", "strict")


@dataclass(frozen=True)
class ControlConfig:
    """Generator regulator and battery reference settings.

    ``windup`` of ``None`` selects ``10 v_nominal / k_i``. The generator
    voltage command is clipped to ``[v_gin_min, v_gin_max]``; ``None`` for
    the upper limit means twice the nominal bus voltage.
    """

    k_p: float = 1.0
    k_i: float = 10.0
    windup: float | None = None
    v_gin_min: float = 0.0
    v_gin_max: float | None = None
    ess_voltage: str = "nominal"
    battery_reference: str = "follow_load"

    def __post_init__(self):
        if not (self.k_p >= 0 and self.k_i >= 0):
            raise ConfigError("PI gains must be >= 0", key="control.k_p")
        if self.windup is not None and not self.windup > 0:
            raise ConfigError("windup must be positive", key="control.windup")
        if self.ess_voltage not in ("nominal", "measured"):
            raise ConfigError("ess_voltage must be 'nominal' or 'measured'",
                              key="control.ess_voltage")
        if self.battery_reference not in BATTERY_REFERENCES:
            raise ConfigError(f"battery_reference must be one of {BATTERY_REFERENCES}",
                              key="control.battery_reference")
        if self.v_gin_max is not None and not self.v_gin_max > self.v_gin_min:
            raise ConfigError("v_gin_max must exceed v_gin_min", key="control.v_gin_max")


@dataclass(frozen=True)
class LoadSpec:
    """Where the load comes from and how it is forecast.

    ``components`` are load_gen component objects; ``profile_csv`` (if set)
    replaces them with a user trace, linearly interpolated onto the
    simulation grid.
    """

    components: tuple = field(default_factory=lambda: tuple(reference_components()))
    profile_csv: str | None = None
    seed: int = 0
    forecast_mode: str = "exact"
    forecast_sigma: float = 0.0
    forecast_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.forecast_mode not in ("exact", "noisy"):
            raise ConfigError("forecast_mode must be 'exact' or 'noisy'",
                              key="load.forecast_mode")
        if not self.forecast_sigma >= 0:
            raise ConfigError("forecast_sigma must be >= 0", key="load.forecast_sigma")


@dataclass(frozen=True)
class ScenarioConfig:
    mpc: MpcConfig = field(default_factory=MpcConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    control: ControlConfig = field(default_factory=ControlConfig)
    load: LoadSpec = field(default_factory=LoadSpec)
    mode: str = "open_loop"
    sim_dt: float = 1e-4
    duration: float = 100.0
    startup_window: float = 2.0
    soc_feedback: str = "measured"
    lambda_sweep: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lambda_sweep", tuple(float(v) for v in self.lambda_sweep))
        if self.mode not in ("open_loop", "receding"):
            raise ConfigError("mode must be 'open_loop' or 'receding'", key="sim.mode")
        if self.soc_feedback not in ("measured", "model"):
            raise ConfigError("soc_feedback must be 'measured' or 'model'",
                              key="sim.soc_feedback")
        ts = self.mpc.step_ts
        if not self.sim_dt > 0:
            raise ConfigError("sim_dt must be positive", key="sim.sim_dt")
        if self.sim_dt > ts / 10 * (1 + 1e-12):
            raise ConfigError("sim_dt must be at most step_ts / 10", key="sim.sim_dt")
        ratio = ts / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("step_ts must be an integer multiple of sim_dt", key="sim.sim_dt")
        steps = self.duration / self.sim_dt
        if not self.duration > 0 or abs(steps - round(steps)) > 1e-6:
            raise ConfigError("duration must be a positive multiple of sim_dt",
                              key="sim.duration")
        if self.duration < self.mpc.horizon_h * ts * (1 - 1e-12):
            raise ConfigError("duration must cover horizon_h * step_ts", key="sim.duration")
        if not self.startup_window >= 0:
            raise ConfigError("startup_window must be >= 0", key="sim.startup_window")
        if any(not (v >= 0 and math.isfinite(v)) for v in self.lambda_sweep):
            raise ConfigError("lambda_sweep values must be finite and >= 0",
                              key="lambda_sweep")

    @property
    def steps_per_ts(self):
        return int(round(self.mpc.step_ts / self.sim_dt))

    @property
    def n_steps(self):
        return int(round(self.duration / self.sim_dt))


TRACE_COLUMNS = ("time_s", "v_g", "i_g", "i_ess", "v_ceq", "soc", "p_load_w", "p_gen_cmd_w",
                 "p_batt_cmd_w", "p_gen_real_w", "p_batt_real_w", "v_gin_cmd")


@dataclass(eq=False)
class SimTrace:
    """Simulation record on the plant grid (``N + 1`` samples).

    Command columns at sample ``i`` are the values applied over
    ``[t_i, t_i + dt)``; the last sample repeats the final command.
    ``p_gen_cmd`` / ``p_batt_cmd`` are the dispatch step functions and
    ``p_batt_ref`` the instantaneous battery power reference after the
    reference policy. Dispatch-grid arrays have one entry per MPC step.
    """

    time: np.ndarray
    v_g: np.ndarray
    i_g: np.ndarray
    i_ess: np.ndarray
    v_ceq: np.ndarray
    soc: np.ndarray
    p_load: np.ndarray
    p_gen_cmd: np.ndarray
    p_batt_cmd: np.ndarray
    v_gin_cmd: np.ndarray
    p_batt_ref: np.ndarray
    dispatch_gen: np.ndarray
    dispatch_batt: np.ndarray
    forecast: np.ndarray
    mismatch: np.ndarray
    init: DispatchInit
    soc_clamped: bool = False
    saturated_steps: int = 0
    schedules: list = field(default_factory=list, repr=False)
    edge_times: tuple = ()

    @property
    def p_gen_real(self):
        return self.v_ceq * self.i_g

    @property
    def p_batt_real(self):
        return self.v_ceq * self.i_ess

    def columns(self):
        return {
            "time_s": self.time, "v_g": self.v_g, "i_g": self.i_g, "i_ess": self.i_ess,
            "v_ceq": self.v_ceq, "soc": self.soc, "p_load_w": self.p_load,
            "p_gen_cmd_w": self.p_gen_cmd, "p_batt_cmd_w": self.p_batt_cmd,
            "p_gen_real_w": self.p_gen_real, "p_batt_real_w": self.p_batt_real,
            "v_gin_cmd": self.v_gin_cmd,
        }


@dataclass(frozen=True)
class SummaryMetrics:
    """Reductions of a trace. Energies in J, powers in W, deviations as fractions."""

    final_soc: float
    soc_error: float
    max_bus_dev: float
    max_bus_dev_steady: float
    max_gen_step: float
    max_batt_step: float
    battery_processed_energy: float
    total_mismatch_rms: float
    gen_cost_total: float
    power_balance_max: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def build_profile(cfg):
    """Load profile on the simulation grid for ``cfg.duration``."""
    load = cfg.load
    if load.profile_csv:
        src = read_profile_csv(load.profile_csv)
        if src.duration < cfg.duration - 1e-9:
            raise ConfigError(f"profile {load.profile_csv} covers only {src.duration} s",
                              key="load.profile_csv")
        t = np.arange(cfg.n_steps + 1) * cfg.sim_dt
        return LoadProfile(cfg.sim_dt, np.interp(t, src.times, src.samples))
    return compose(load.components, cfg.duration, cfg.sim_dt, load.seed)


def _forecast(cfg, profile, h=None):
    load = cfg.load
    return forecast_of(profile, h or cfg.mpc.horizon_h, cfg.mpc.step_ts, load.forecast_mode,
                       load.forecast_sigma, load.forecast_seed)


def _simulate(cfg, profile, plan):
    """Inner loop shared by both modes.

    ``plan(k, soc_now, v_now)`` returns ``(P_g,k, P_b,k)``; it is called at
    each step boundary before the plant samples of that step. The RK4
    stages are written out inline (same arithmetic as
    :func:`shipmpc.plant.rk4_kernel`) because this loop runs ~1e6 times.
    """
    p, ctl = cfg.plant, cfg.control
    n, spt, dt = cfg.n_steps, cfg.steps_per_ts, cfg.sim_dt
    h = cfg.mpc.horizon_h
    load = profile.samples.tolist()
    forecast = [float(v) for v in plan.forecast]

    k_g, l_g, r_g = p.k_gen, p.l_g, p.r_g
    w_e, c_eq, r_d, q = p.omega_ess, p.c_eq, p.r_d, p.q_total_j
    v_nom = p.v_nominal
    v_floor = p.v_floor
    kp, ki = ctl.k_p, ctl.k_i
    bound = ctl.windup if ctl.windup is not None else default_windup_bound(v_nom, ki)
    lo = ctl.v_gin_min
    hi = ctl.v_gin_max if ctl.v_gin_max is not None else 2.0 * v_nom
    ff_a = (r_g / r_d + 1.0) * v_nom
    ff_b = r_g / v_nom
    nominal = ctl.ess_voltage == "nominal"
    policy = {"follow_load": 0, "hold": 1, "strict": 2}[ctl.battery_reference]
    h2 = 0.5 * dt
    s6 = dt / 6.0

    cols = [[] for _ in range(10)]
    (o_vg, o_ig, o_ie, o_vc, o_soc, o_vgin, o_pref, o_pg, o_pb, o_pl) = cols

    pl = load[0]
    pg_k, pb_k = plan(0, cfg.mpc.soc_initial, v_nom)
    pf_k = forecast[0]
    pref0 = pb_k + (pl - pf_k) if policy == 0 else (pb_k if policy == 1 else pl - pg_k)
    s0 = steady_state(pl - pref0, p, cfg.mpc.soc_initial)
    vg, ig, ie, vc, soc = s0.v_g, s0.i_g, pref0 / v_nom, s0.v_ceq, s0.soc

    acc = 0.0
    e_prev = v_nom - vc
    clamped = False
    saturated = 0
    i = 0
    while True:
        if i and i % spt == 0:
            k = i // spt
            if k < h:
                pg_k, pb_k = plan(k, soc, vc)
                pf_k = forecast[k]
        pl = load[i]
        if policy == 0:
            pref = pb_k + (pl - pf_k)
        elif policy == 1:
            pref = pb_k
        else:
            pref = pl - pg_k
        o_vg.append(vg)
        o_ig.append(ig)
        o_ie.append(ie)
        o_vc.append(vc)
        o_soc.append(soc)
        o_pref.append(pref)
        o_pg.append(pg_k)
        o_pb.append(pb_k)
        o_pl.append(pl)
        if not vc >= v_floor:
            raise PlantCollapseError(f"bus voltage {vc:.6g} V below the {v_floor:.6g} V floor "
                                     f"at t={i * dt:.6g} s", time=i * dt, step=i)
        iref = pref / v_nom if nominal else pref / vc
        e = v_nom - vc
        acc += 0.5 * (e_prev + e) * dt
        if acc > bound:
            acc = bound
        elif acc < -bound:
            acc = -bound
        e_prev = e
        vgin = ff_a + ff_b * (pl - pref) + kp * e + ki * acc
        if vgin < lo:
            vgin = lo
            saturated += 1
        elif vgin > hi:
            vgin = hi
            saturated += 1
        o_vgin.append(vgin)
        if i == n:
            break

        a1 = k_g * (vgin - vg)
        b1 = (vg - r_g * ig - vc) / l_g
        c1 = w_e * (iref - ie)
        d1 = (ig + ie - vc / r_d - pl / vc) / c_eq
        e1 = -vc * ie / q
        vg2 = vg + h2 * a1
        ig2 = ig + h2 * b1
        ie2 = ie + h2 * c1
        vc2 = vc + h2 * d1
        a2 = k_g * (vgin - vg2)
        b2 = (vg2 - r_g * ig2 - vc2) / l_g
        c2 = w_e * (iref - ie2)
        d2 = (ig2 + ie2 - vc2 / r_d - pl / vc2) / c_eq
        e2 = -vc2 * ie2 / q
        vg3 = vg + h2 * a2
        ig3 = ig + h2 * b2
        ie3 = ie + h2 * c2
        vc3 = vc + h2 * d2
        a3 = k_g * (vgin - vg3)
        b3 = (vg3 - r_g * ig3 - vc3) / l_g
        c3 = w_e * (iref - ie3)
        d3 = (ig3 + ie3 - vc3 / r_d - pl / vc3) / c_eq
        e3 = -vc3 * ie3 / q
        vg4 = vg + dt * a3
        ig4 = ig + dt * b3
        ie4 = ie + dt * c3
        vc4 = vc + dt * d3
        if not (vc2 >= v_floor and vc3 >= v_floor and vc4 >= v_floor):
            raise PlantCollapseError(f"bus voltage fell below the {v_floor:.6g} V floor "
                                     f"during the step at t={i * dt:.6g} s", time=i * dt, step=i)
        a4 = k_g * (vgin - vg4)
        b4 = (vg4 - r_g * ig4 - vc4) / l_g
        c4 = w_e * (iref - ie4)
        d4 = (ig4 + ie4 - vc4 / r_d - pl / vc4) / c_eq
        e4 = -vc4 * ie4 / q
        vg += s6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        ig += s6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        ie += s6 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        vc += s6 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        soc += s6 * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
        if soc < 0.0 or soc > 1.0:
            clamped = True
            soc = 0.0 if soc < 0.0 else 1.0
        i += 1

    arr = [np.array(c) for c in cols]
    return dict(time=np.arange(n + 1) * dt, v_g=arr[0], i_g=arr[1], i_ess=arr[2],
                v_ceq=arr[3], soc=arr[4], v_gin_cmd=arr[5], p_batt_ref=arr[6],
                p_gen_cmd=arr[7], p_batt_cmd=arr[8], p_load=arr[9],
                soc_clamped=clamped, saturated_steps=saturated)


class _FixedPlan:
    def __init__(self, sched, forecast):
        self.sched = sched
        self.forecast = forecast.p_load

    def __call__(self, k, soc_now, v_now):
        return float(self.sched.p_gen[k]), float(self.sched.p_batt[k])


def run_open_loop(cfg, profile=None):
    """Solve one horizon dispatch and replay it through the plant.

    Raises
    ------
    InfeasibleDispatchError
        The dispatch QP is infeasible (carries the feasibility violation).
    PlantCollapseError
        The bus voltage left the valid range.
    """
    profile = profile if profile is not None else build_profile(cfg)
    fc = _forecast(cfg, profile)
    init = DispatchInit.from_forecast(cfg.mpc, fc)
    sched = solve_dispatch(cfg.mpc, fc, init)
    if not sched.optimal:
        raise InfeasibleDispatchError(f"dispatch {sched.status}", sched.phase1_violation)
    data = _simulate(cfg, profile, _FixedPlan(sched, fc))
    return SimTrace(**data, dispatch_gen=sched.p_gen.copy(), dispatch_batt=sched.p_batt.copy(),
                    forecast=np.array(fc.p_load), mismatch=sched.mismatch.copy(), init=init,
                    schedules=[sched], edge_times=tuple(profile.pulse_edges()))


class _RecedingPlan:
    def __init__(self, cfg, forecast, init):
        self.cfg = cfg
        self.forecast = forecast.p_load
        self.fc = forecast
        self.init = init
        self.first_init = init
        self.pg = np.zeros(cfg.mpc.horizon_h)
        self.pb = np.zeros(cfg.mpc.horizon_h)
        self.schedules = []
        self.model_soc = cfg.mpc.soc_initial
        self.prev = None

    def __call__(self, k, soc_now, v_now):
        cfg = self.cfg
        if cfg.soc_feedback == "model":
            soc = self.model_soc
        else:
            soc = soc_now
        soc = min(max(soc, 0.0), 1.0)
        window = self.fc.window(k)
        x0 = None
        if self.prev is not None and self.prev.p_gen.shape[0] > 1:
            x0 = np.concatenate([self.prev.p_gen[1:], self.prev.p_batt[1:]])
        h = len(window)
        step_cfg = replace(cfg.mpc, horizon_h=h, soc_initial=soc)
        sched = solve_dispatch(step_cfg, window, self.init, x0=x0)
        if not sched.optimal:
            raise InfeasibleDispatchError(f"receding dispatch {sched.status}",
                                          sched.phase1_violation, step=k)
        g, b = float(sched.p_gen[0]), float(sched.p_batt[0])
        self.pg[k], self.pb[k] = g, b
        self.schedules.append(sched)
        self.prev = sched
        self.init = DispatchInit(g, b)
        self.model_soc = soc - b * cfg.mpc.step_ts / cfg.mpc.energy_capacity_j \
            if cfg.soc_feedback == "model" else soc
        return g, b


def run_receding(cfg, profile=None):
    """Shrinking-horizon MPC: re-solve at every step boundary up to the parking time.

    The SOC fed back is the plant's (``soc_feedback="measured"``) or the
    dispatch model's own bookkeeping (``"model"``); the ramp anchor is the
    previously applied command.
    """
    profile = profile if profile is not None else build_profile(cfg)
    fc = _forecast(cfg, profile)
    init = DispatchInit.from_forecast(cfg.mpc, fc)
    plan = _RecedingPlan(cfg, fc, init)
    data = _simulate(cfg, profile, plan)
    mismatch = plan.pg + plan.pb - fc.p_load
    return SimTrace(**data, dispatch_gen=plan.pg.copy(), dispatch_batt=plan.pb.copy(),
                    forecast=np.array(fc.p_load), mismatch=mismatch, init=init,
                    schedules=plan.schedules, edge_times=tuple(profile.pulse_edges()))


def run_scenario(cfg, profile=None):
    return run_open_loop(cfg, profile) if cfg.mode == "open_loop" else run_receding(cfg, profile)


def steady_mask(trace, cfg, settle=0.5):
    """Samples after the startup window that are at least ``settle`` seconds
    past every pulse edge and every dispatch step boundary at which the
    generator's share changed by more than 1% of ``p_g_max``."""
    t = trace.time
    mask = t >= cfg.startup_window
    events = list(trace.edge_times)
    ts = cfg.mpc.step_ts
    dg = np.abs(np.diff(np.concatenate([[trace.init.p_g_prev], trace.dispatch_gen])))
    thresh = 0.01 * cfg.mpc.p_g_max
    events += [k * ts for k in range(dg.shape[0]) if dg[k] > thresh]
    events = np.array(sorted(events)) if events else np.zeros(0)
    if events.size:
        # the latest event not after each t, from the rise (edge times are the nominal
        # instants; the rising edge starts edge_time earlier, covered by settle)
        idx = np.searchsorted(events, t, side="right") - 1
        since = np.where(idx >= 0, t - events[np.maximum(idx, 0)], np.inf)
        ahead = np.searchsorted(events, t, side="left")
        until = np.where(ahead < events.size, events[np.minimum(ahead, events.size - 1)] - t,
                         np.inf)
        mask &= (since >= settle) & (until >= 0.2)
    return mask


def dispatch_step_energy(trace, cfg):
    """Time-average of realized battery power over each MPC step (W)."""
    spt = cfg.steps_per_ts
    h = trace.dispatch_batt.shape[0]
    p = trace.p_batt_real
    out = np.empty(h)
    for k in range(h):
        seg = p[k * spt:(k + 1) * spt + 1]
        out[k] = _trapezoid(seg, dx=cfg.sim_dt) / cfg.mpc.step_ts if seg.size > 1 else np.nan
    return out


def metrics(trace, cfg):
    """Summary reductions of one run (see :class:`SummaryMetrics`)."""
    if trace.time.size == 0:
        raise ValueError("empty trace")
    v_nom = cfg.plant.v_nominal
    dev = np.abs(trace.v_ceq - v_nom) / v_nom
    after = trace.time >= cfg.startup_window
    steady = steady_mask(trace, cfg)
    pg, pb = trace.dispatch_gen, trace.dispatch_batt
    bal = trace.p_gen_real + trace.p_batt_real - trace.p_load - trace.v_ceq ** 2 / cfg.plant.r_d
    final = float(trace.soc[-1])
    return SummaryMetrics(
        final_soc=final,
        soc_error=abs(final - cfg.mpc.soc_final),
        max_bus_dev=float(np.max(dev[after], initial=0.0)),
        max_bus_dev_steady=float(np.max(dev[steady], initial=0.0)),
        max_gen_step=float(np.max(np.abs(np.diff(pg)), initial=0.0)),
        max_batt_step=float(np.max(np.abs(np.diff(pb)), initial=0.0)),
        battery_processed_energy=float(np.sum(np.abs(pb)) * cfg.mpc.step_ts),
        total_mismatch_rms=float(np.sqrt(np.mean(trace.mismatch ** 2))),
        gen_cost_total=generator_cost(cfg.mpc, pg),
        power_balance_max=float(np.max(np.abs(bal[steady]), initial=0.0)),
    )


def dispatch_metrics(cfg, profile=None):
    """Dispatch-only metrics (no plant run); plant-dependent fields are NaN."""
    profile = profile if profile is not None else build_profile(cfg)
    fc = _forecast(cfg, profile)
    init = DispatchInit.from_forecast(cfg.mpc, fc)
    sched = solve_dispatch(cfg.mpc, fc, init)
    if not sched.optimal:
        raise InfeasibleDispatchError(f"dispatch {sched.status}", sched.phase1_violation)
    pg, pb = sched.p_gen, sched.p_batt
    final = cfg.mpc.soc_initial - float(np.sum(pb)) * cfg.mpc.step_ts / cfg.mpc.energy_capacity_j
    nan = math.nan
    return SummaryMetrics(final, abs(final - cfg.mpc.soc_final), nan, nan,
                          float(np.max(np.abs(np.diff(pg)), initial=0.0)),
                          float(np.max(np.abs(np.diff(pb)), initial=0.0)),
                          float(np.sum(np.abs(pb)) * cfg.mpc.step_ts),
                          float(np.sqrt(np.mean(sched.mismatch ** 2))),
                          generator_cost(cfg.mpc, pg), nan)


def edge_energy_fraction(p_batt, edge_times, step_ts, window=2):
    """Share of ``sum |P_b,k|`` that falls within ``window`` steps of a load edge.

    Step ``k`` (0-based) covers ``[k T_s, (k + 1) T_s)``; an edge at ``t_e``
    belongs to step ``floor(t_e / T_s)``. Returns NaN when the battery is idle.
    """
    pb = np.abs(np.asarray(p_batt, dtype=float))
    total = float(np.sum(pb))
    if total == 0.0:
        return math.nan
    k = np.arange(pb.shape[0])
    near = np.zeros(pb.shape[0], dtype=bool)
    for t in edge_times:
        ke = math.floor(t / step_ts + 1e-9)
        near |= np.abs(k - ke) <= window
    return float(np.sum(pb[near]) / total)


@dataclass(frozen=True)
class SweepRow:
    lambda_: float
    metrics: SummaryMetrics | None
    error: str | None = None


def _sweep_one(args):
    cfg, lam, dispatch_only = args
    c = replace(cfg, mpc=replace(cfg.mpc, lambda_=lam))
    try:
        if dispatch_only:
            return SweepRow(lam, dispatch_metrics(c))
        return SweepRow(lam, metrics(run_scenario(c), c))
    except ShipMpcError as exc:
        return SweepRow(lam, None, f"{type(exc).__name__}: {exc}")


def lambda_sweep(cfg, lambdas=None, workers=1, dispatch_only=False):
    """One run per lambda with everything else fixed; rows sorted by lambda.

    Per-run failures are recorded in ``SweepRow.error`` rather than raised.
    ``workers > 1`` fans the runs out over processes.
    """
    lams = sorted(float(v) for v in (lambdas if lambdas is not None else cfg.lambda_sweep))
    if len(lams) < 2:
        raise ConfigError("lambda sweep needs at least two values", key="lambda_sweep")
    if any(not (v >= 0 and math.isfinite(v)) for v in lams):
        raise ConfigError("lambda values must be finite and >= 0", key="lambda_sweep")
    jobs = [(cfg, lam, dispatch_only) for lam in lams]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    return sorted(rows, key=lambda r: r.lambda_)


def closed_loop_jacobian(params, control=None, p_load=0.0, p_batt=0.0):
    """Linearization of plant + continuous PI about the regulated equilibrium.

    State order ``(v_g, i_g, i_ess, v_ceq, integral)``; the battery current
    reference is held (it does not depend on the bus voltage in nominal mode).
    """
    ctl = control or ControlConfig()
    p = params
    v = p.v_nominal
    k, kp, ki = p.k_gen, ctl.k_p, ctl.k_i
    a = np.zeros((5, 5))
    a[0, 0] = -k
    a[0, 3] = -k * kp
    a[0, 4] = k * ki
    a[1, 0] = 1.0 / p.l_g
    a[1, 1] = -p.r_g / p.l_g
    a[1, 3] = -1.0 / p.l_g
    a[2, 2] = -p.omega_ess
    a[3, 1] = 1.0 / p.c_eq
    a[3, 2] = 1.0 / p.c_eq
    a[3, 3] = (-1.0 / p.r_d + p_load / v ** 2) / p.c_eq
    a[4, 3] = -1.0
    return a


def closed_loop_poles(params, control=None, p_load=0.0):
    return np.linalg.eigvals(closed_loop_jacobian(params, control, p_load))
