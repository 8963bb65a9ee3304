"""YAML scenario files.

Layout (every key optional; omitted keys take the defaults shown by
``shipmpc dispatch --print-config`` or :func:`dump_config`)::

    mpc:      horizon_h, step_ts, lambda, gen_cost_alpha, gen_cost_beta,
              p_g_min, p_g_max, p_b_min, p_b_max, ramp_g, ramp_b,
              energy_capacity_j, v_bus_nominal, soc_initial, soc_final
    plant:    r_g, l_g, c_eq, r_d, k_gen, omega_ess, v_floor_frac
    control:  k_p, k_i, windup, v_gin_min, v_gin_max, ess_voltage,
              battery_reference
    load:     components (list of {type: hotel|pulse|ramp|noise, ...}),
              profile_csv, seed, forecast_mode, forecast_sigma, forecast_seed
    sim:      mode, sim_dt, duration, startup_window, soc_feedback
    lambda_sweep: [values]

The plant's battery capacity and nominal voltage are taken from
``mpc.energy_capacity_j`` and ``mpc.v_bus_nominal`` so they cannot drift
apart. Numbers may be written as ``1e7``; YAML 1.1 would otherwise read
that as a string.
"""

from __future__ import annotations

import math
from dataclasses import fields, replace

import yaml

from .errors import ConfigError
from .loads import HotelComponent, NoiseComponent, PulseComponent, RampComponent
from .mpc import MpcConfig
from .plant import PlantParams
from .sim import ControlConfig, LoadSpec, ScenarioConfig

__all__ = ["parse_config", "load_config", "dump_config", "apply_overrides", "default_config",
           "known_keys"]

_MPC_KEYS = {("lambda" if f.name == "lambda_" else f.name): f.name for f in fields(MpcConfig)}
_PLANT_KEYS = [f.name for f in fields(PlantParams) if f.name not in ("q_total_j", "v_nominal")]
_CONTROL_KEYS = [f.name for f in fields(ControlConfig)]
_LOAD_KEYS = ["components", "profile_csv", "seed", "forecast_mode", "forecast_sigma",
              "forecast_seed"]
_SIM_KEYS = ["mode", "sim_dt", "duration", "startup_window", "soc_feedback"]
_SECTIONS = {"mpc": list(_MPC_KEYS), "plant": _PLANT_KEYS, "control": _CONTROL_KEYS,
             "load": _LOAD_KEYS, "sim": _SIM_KEYS}
_COMPONENTS = {"hotel": HotelComponent, "pulse": PulseComponent, "ramp": RampComponent,
               "noise": NoiseComponent}
_INT_KEYS = {"mpc.horizon_h", "load.seed", "load.forecast_seed"}
_STR_KEYS = {"control.ess_voltage", "control.battery_reference", "load.profile_csv",
             "load.forecast_mode", "sim.mode", "sim.soc_feedback"}
_OPTIONAL_KEYS = {"control.windup", "control.v_gin_max", "load.profile_csv"}


def known_keys():
    """All dotted leaf keys accepted by the parser."""
    out = [f"{sec}.{k}" for sec, keys in _SECTIONS.items() for k in keys]
    return out + ["lambda_sweep"]


def _line_map(text):
    """Dotted key -> 1-based line, from the YAML node tree."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                key = f"{prefix}[{i}]"
                lines[key] = item.start_mark.line + 1
                walk(item, key)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


def _number(value, key, line, integer=False):
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise ConfigError(f"expected a number, got {value!r}", key=key, line=line) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key=key, line=line)
    if integer:
        if not (math.isfinite(value) and float(value).is_integer()):
            raise ConfigError(f"expected an integer, got {value!r}", key=key, line=line)
        return int(value)
    return float(value)


def _leaf(key, value, lines):
    line = lines.get(key)
    if key in _OPTIONAL_KEYS and value is None:
        return None
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key, line=line)
        return value
    return _number(value, key, line, integer=key in _INT_KEYS)


def _component(item, key, lines):
    line = lines.get(key)
    if not isinstance(item, dict) or "type" not in item:
        raise ConfigError("load component must be a mapping with a 'type'", key=key, line=line)
    kind = item["type"]
    cls = _COMPONENTS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown load component type {kind!r}", key=key, line=line)
    allowed = [f.name for f in fields(cls) if f.init]
    kwargs = {}
    for name, value in item.items():
        if name == "type":
            continue
        sub = f"{key}.{name}"
        if name not in allowed:
            raise ConfigError(f"unknown key '{name}' for {kind} component", key=sub,
                              line=lines.get(sub, line))
        kwargs[name] = _number(value, sub, lines.get(sub, line))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key=key, line=line) from None


def _build(data, lines):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    for sec in data:
        if sec not in _SECTIONS and sec != "lambda_sweep":
            raise ConfigError(f"unknown section '{sec}'", key=str(sec), line=lines.get(str(sec)))
    vals = {}
    for sec, keys in _SECTIONS.items():
        body = data.get(sec) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"section '{sec}' must be a mapping", key=sec, line=lines.get(sec))
        for k, v in body.items():
            key = f"{sec}.{k}"
            if k not in keys:
                raise ConfigError(f"unknown key '{k}' in section '{sec}'", key=key,
                                  line=lines.get(key))
            if key == "load.components":
                if not isinstance(v, list):
                    raise ConfigError("components must be a list", key=key, line=lines.get(key))
                vals[key] = tuple(_component(item, f"{key}[{i}]", lines)
                                  for i, item in enumerate(v))
            else:
                vals[key] = _leaf(key, v, lines)

    sweep = data.get("lambda_sweep", ())
    if sweep is None:
        sweep = ()
    if not isinstance(sweep, list | tuple):
        raise ConfigError("lambda_sweep must be a list", key="lambda_sweep",
                          line=lines.get("lambda_sweep"))
    sweep = tuple(_number(v, "lambda_sweep", lines.get(f"lambda_sweep[{i}]"))
                  for i, v in enumerate(sweep))

    def section(sec, mapping=None):
        out = {}
        for key, v in vals.items():
            s, _, name = key.partition(".")
            if s == sec:
                out[(mapping or {}).get(name, name)] = v
        return out

    try:
        mpc = MpcConfig(**section("mpc", _MPC_KEYS))
        plant = PlantParams(**section("plant"), q_total_j=mpc.energy_capacity_j,
                            v_nominal=mpc.v_bus_nominal)
        control = ControlConfig(**section("control"))
        load = LoadSpec(**section("load"))
        return ScenarioConfig(mpc=mpc, plant=plant, control=control, load=load,
                              lambda_sweep=sweep, **section("sim"))
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            key = exc.key.replace("mpc.lambda_", "mpc.lambda")
            raise ConfigError(str(exc).split(" (key")[0], key=key, line=lines.get(key)) from None
        raise


def _parse_yaml(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}", line=line) from None


def parse_config(text, overrides=()):
    """Parse scenario text, apply ``key=value`` overrides and validate."""
    data = _parse_yaml(text)
    lines = _line_map(text)
    if overrides:
        data = apply_overrides(data, overrides)
    return _build(data, lines)


def load_config(path, overrides=()):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", key=str(path)) from None
    return parse_config(text, overrides)


def default_config():
    return parse_config("")


def _resolve_key(key):
    if key == "lambda_sweep" or "." in key:
        full = key
    else:
        hits = [k for k in known_keys() if k.split(".")[-1] == key]
        if len(hits) != 1:
            raise ConfigError(f"override key '{key}' is "
                              + ("ambiguous" if hits else "unknown"), key=key)
        full = hits[0]
    if full not in known_keys():
        raise ConfigError(f"unknown override key '{key}'", key=key)
    return full


def apply_overrides(data, overrides):
    """Return a copy of the raw mapping with ``key=value`` strings applied.

    Keys are dotted (``mpc.soc_final``) or a leaf name that is unique
    across sections (``soc_final``). Values are parsed as YAML scalars.
    """
    data = {} if data is None else {k: (dict(v) if isinstance(v, dict) else v)
                                     for k, v in data.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        full = _resolve_key(key.strip())
        value = _parse_yaml(raw) if raw.strip() else None
        if full == "lambda_sweep":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            data["lambda_sweep"] = value if isinstance(value, list) else [value]
            continue
        sec, name = full.split(".", 1)
        body = data.get(sec)
        body = dict(body) if isinstance(body, dict) else {}
        body[name] = value
        data[sec] = body
    return data


def dump_config(cfg):
    """Serialize a :class:`ScenarioConfig` to YAML that parses back to an equal config."""
    mpc = {k: getattr(cfg.mpc, attr) for k, attr in _MPC_KEYS.items()}
    plant = {k: getattr(cfg.plant, k) for k in _PLANT_KEYS}
    control = {k: getattr(cfg.control, k) for k in _CONTROL_KEYS}
    comps = []
    for c in cfg.load.components:
        entry = {"type": c.kind}
        entry.update({f.name: getattr(c, f.name) for f in fields(c) if f.init})
        comps.append(entry)
    load = {"components": comps, "profile_csv": cfg.load.profile_csv, "seed": cfg.load.seed,
            "forecast_mode": cfg.load.forecast_mode,
            "forecast_sigma": cfg.load.forecast_sigma, "forecast_seed": cfg.load.forecast_seed}
    sim = {k: getattr(cfg, k) for k in _SIM_KEYS}
    data = {"mpc": mpc, "plant": plant, "control": control, "load": load, "sim": sim,
            "lambda_sweep": list(cfg.lambda_sweep)}
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


def with_seed(cfg, seed):
    """Set both the load-noise and forecast-noise seeds."""
    return replace(cfg, load=replace(cfg.load, seed=int(seed), forecast_seed=int(seed)))
