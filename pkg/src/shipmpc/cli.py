"""``shipmpc`` command line.

Subcommands: ``dispatch``, ``simulate``, ``sweep``, ``validate``. Exit
codes are 0 on success, 1 for a failed validation, an infeasible dispatch
or a simulation failure, and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import artifacts
from .config import dump_config, load_config, parse_config, with_seed
from .errors import ConfigError, InfeasibleDispatchError, PlantCollapseError, ShipMpcError
from .mpc import DispatchInit, audit_schedule, solve_dispatch
from .sim import SummaryMetrics, build_profile, _forecast, lambda_sweep, metrics, run_scenario
from .validate import format_table, run_all

__all__ = ["main", "build_parser", "OUTPUT_ENV"]

OUTPUT_ENV = "SHIPMPC_OUTPUT_DIR"
DEFAULT_OUTPUT = "shipmpc-out"


def _common(p):
    p.add_argument("-c", "--config", metavar="PATH",
                   help="scenario YAML file (default: built-in reference scenario)")
    p.add_argument("-o", "--output-dir", metavar="DIR",
                   help=f"directory for artifacts (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set mpc.soc_final=0.7 or "
                        "--set soc_final=0.7; repeatable")
    p.add_argument("--seed", type=int, help="seed for load noise and forecast noise")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration as YAML and exit")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shipmpc",
        description="MPC power dispatch for a shipboard DC bus with generator and battery.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("dispatch", help="solve one horizon dispatch and audit it")
    _common(p)

    p = sub.add_parser("simulate", help="run the dispatch through the plant model")
    _common(p)
    p.add_argument("--trace-every", type=int, default=1, metavar="N",
                   help="write every N-th plant sample to trace.csv (default 1)")

    p = sub.add_parser("sweep", help="repeat the run over several lambda values")
    _common(p)
    p.add_argument("--lambdas", metavar="L1,L2,...",
                   help="comma-separated lambda values (default: config lambda_sweep)")
    p.add_argument("--workers", type=int, default=1, help="parallel processes (default 1)")
    p.add_argument("--dispatch-only", action="store_true",
                   help="skip the plant; report dispatch metrics only")

    p = sub.add_parser("validate", help="run the built-in oracle checks")
    _common(p)
    p.add_argument("--perturb-h", type=float, default=0.0, metavar="EPS",
                   help="make the QP matrix asymmetric by EPS (the QP check must then fail)")
    p.add_argument("--dt", type=float, metavar="S",
                   help="plant step for the RK4 order check (default: sim_dt)")
    p.add_argument("--qp-count", type=int, default=40, metavar="N",
                   help="number of random QPs in the grid oracle (default 40)")
    return parser


def _load(args):
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = load_config(args.config, args.overrides)
    else:
        cfg = parse_config("", args.overrides)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _outdir(args):
    d = args.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    os.makedirs(d, exist_ok=True)
    return d


def _audit_block(cfg, sched, init):
    a = audit_schedule(cfg.mpc, sched, init)
    m = cfg.mpc
    lines = [
        f"dispatch: {sched.status}  h={m.horizon_h} Ts={m.step_ts:g} s lambda={m.lambda_:g}",
        f"  objective         {sched.objective:.6e}",
        f"  sum p_batt        {a.battery_sum:.6e} W   Q_b {a.q_b_target:.6e} W"
        f"   error {a.battery_sum_error:.3e}",
        f"  max |dP_g|        {a.max_gen_step:.6e} W   r_g {m.ramp_g:.6e} W",
        f"  max |dP_b|        {a.max_batt_step:.6e} W   r_b {m.ramp_b:.6e} W",
        f"  box violation     {a.box_violation:.3e} W",
        f"  ramp violation    {a.ramp_violation:.3e} W",
        f"  audit             {'PASS' if a.ok else 'FAIL'}",
    ]
    return "\n".join(lines), a.ok


def _cmd_dispatch(args, cfg, out):
    profile = build_profile(cfg)
    fc = _forecast(cfg, profile)
    init = DispatchInit.from_forecast(cfg.mpc, fc)
    sched = solve_dispatch(cfg.mpc, fc, init)
    if not sched.optimal:
        print(f"dispatch: {sched.status}; minimum constraint violation "
              f"{sched.phase1_violation:.6e} (scaled units)", file=sys.stderr)
        return 1
    block, ok = _audit_block(cfg, sched, init)
    path = os.path.join(out, "dispatch.csv")
    artifacts.atomic_write_text(path, artifacts.dispatch_csv(sched.p_gen, sched.p_batt,
                                                             fc.p_load, cfg.mpc.step_ts))
    print(block)
    print(f"wrote {path}")
    return 0 if ok else 1


def _print_metrics(m):
    for k, v in m.as_dict().items():
        print(f"  {k:<26s} {artifacts.format_number(v)}")


def _cmd_simulate(args, cfg, out):
    trace = run_scenario(cfg)
    m = metrics(trace, cfg)
    files = {
        "trace.csv": artifacts.trace_csv(trace, args.trace_every),
        "dispatch.csv": artifacts.dispatch_csv(trace.dispatch_gen, trace.dispatch_batt,
                                               trace.forecast, cfg.mpc.step_ts),
        "metrics.txt": artifacts.metrics_text(m),
        "metrics.csv": artifacts.metrics_csv(m),
    }
    for name, text in files.items():
        artifacts.atomic_write_text(os.path.join(out, name), text)
    print(f"simulate: {cfg.mode}  duration {cfg.duration:g} s  dt {cfg.sim_dt:g} s")
    _print_metrics(m)
    if trace.soc_clamped:
        print("  warning: SOC reached a limit and was clamped")
    print(f"wrote {', '.join(os.path.join(out, n) for n in files)}")
    return 0


def _cmd_sweep(args, cfg, out):
    if args.lambdas:
        try:
            lams = [float(v) for v in args.lambdas.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad --lambdas value {args.lambdas!r}", key="lambda_sweep") \
                from None
    else:
        lams = list(cfg.lambda_sweep)
    rows = lambda_sweep(cfg, lams, workers=args.workers, dispatch_only=args.dispatch_only)
    keys = list(SummaryMetrics.__dataclass_fields__)
    path = os.path.join(out, "sweep.csv")
    artifacts.atomic_write_text(path, artifacts.sweep_csv(rows, keys))
    print(f"{'lambda':>12s} {'final_soc':>10s} {'E_batt_J':>12s} {'gen_cost':>12s}  status")
    for r in rows:
        if r.metrics is None:
            print(f"{r.lambda_:12.4g} {'-':>10s} {'-':>12s} {'-':>12s}  {r.error}")
        else:
            mm = r.metrics
            print(f"{r.lambda_:12.4g} {mm.final_soc:10.6f} {mm.battery_processed_energy:12.6e} "
                  f"{mm.gen_cost_total:12.6e}  ok")
    print(f"wrote {path}")
    return 0 if all(r.error is None for r in rows) else 1


def _cmd_validate(args, cfg, out):
    if args.dt is not None and not args.dt > 0:
        raise ConfigError("--dt must be positive")
    results = run_all(cfg, dt=args.dt, perturb_h=args.perturb_h, qp_count=args.qp_count,
                      seed=cfg.load.seed)
    table = format_table(results)
    passed = all(r.passed for r in results)
    summary = f"{sum(r.passed for r in results)}/{len(results)} checks passed"
    path = os.path.join(out, "validate.txt")
    artifacts.atomic_write_text(path, table + "\n" + summary + "\n")
    print(table)
    print(summary)
    return 0 if passed else 1


_COMMANDS = {"dispatch": _cmd_dispatch, "simulate": _cmd_simulate, "sweep": _cmd_sweep,
             "validate": _cmd_validate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        out = _outdir(args)
        return _COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleDispatchError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except PlantCollapseError as exc:
        where = f" (plant step {exc.step})" if exc.step is not None else ""
        print(f"simulation failed{where}: {exc}", file=sys.stderr)
        return 1
    except ShipMpcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
