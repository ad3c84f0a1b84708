"""Command-line surface.

One subcommand per workflow: simulate a trace, evaluate a schedule against
SLOs, optimize a configuration with the control loop, generate or fit
workload models, provision capacity, and validate predictions.  Each command
writes machine-readable tables into --out and, where a picture helps, a PNG
alongside (disable with --no-plot).

Exit codes: 0 success (optimize: converged), 2 bad inputs, 3 optimize hit
max iterations, 4 optimize aborted.

Input paths can also come from environment variables (RMTUNE_TRACE,
RMTUNE_CONFIG, RMTUNE_SLOS, RMTUNE_LOOP, RMTUNE_MODEL, RMTUNE_SCHEDULE,
RMTUNE_PREDICTED, RMTUNE_OBSERVED, RMTUNE_OUT); flags win over the
environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .control import (STATUS_ABORTED, STATUS_CONVERGED, provision,
                      read_loop_config, run_loop, with_seed, write_journal)
from .formats import FormatError, format_number, write_header
from .metrics import evaluate, prediction_error, qs_ajr, read_slos
from .rmconfig import RmSimError, read_config, write_config
from .simulator import (effective_utilization, raw_utilization, read_schedule,
                        simulate, write_schedule)
from .workload import (fit_model, parse_trace, read_model, synthesize,
                       write_model, write_trace)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_MAX_ITERATIONS = 3
EXIT_ABORTED = 4


def _env_default(var: str) -> str | None:
    return os.environ.get(var) or None


def _path_arg(parser: argparse.ArgumentParser, flag: str, env: str, help_text: str,
              required: bool = True) -> None:
    default = _env_default(env)
    parser.add_argument(flag, default=default, required=required and default is None,
                        help=f"{help_text} (env {env})")


def _out_dir(args: argparse.Namespace) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_window(text: str) -> tuple[float, float]:
    try:
        t0_s, t1_s = text.split(",")
        return (float(t0_s), float(t1_s))
    except ValueError:
        raise FormatError(f"window must be 't0,t1', got {text!r}") from None


def _parse_capacities(text: str) -> list[int]:
    try:
        caps = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise FormatError(f"capacities must be comma-separated integers, got {text!r}") from None
    if not caps:
        raise FormatError("no capacities given")
    return caps


def _fmt(value) -> str:
    return "NA" if value is None else format_number(value)


def cmd_simulate(args: argparse.Namespace) -> int:
    w = parse_trace(args.trace)
    cfg = read_config(args.config)
    schedule = simulate(w, cfg)
    out = _out_dir(args)
    schedule_path = os.path.join(out, "schedule.txt")
    write_schedule(schedule, schedule_path)

    window = (0.0, w.horizon)
    eff = effective_utilization(schedule, window, cfg)
    raw = raw_utilization(schedule, window, cfg)
    summary_path = os.path.join(out, "summary.csv")
    with open(summary_path, "w", encoding="utf-8") as f:
        write_header(f, "summary", capacity=cfg.capacity,
                     horizon=format_number(w.horizon),
                     effective_utilization=format_number(eff),
                     raw_utilization=format_number(raw))
        f.write("tenant,completed_jobs,avg_job_response,preemptions\n")
        for tenant in cfg.tenant_ids:
            ajr = qs_ajr(schedule, tenant, window)
            f.write(f"{tenant},{len(schedule.completed_jobs(tenant))},"
                    f"{_fmt(ajr)},{schedule.preemption_count(tenant)}\n")
    artifacts = [schedule_path, summary_path]
    if not args.no_plot:
        from . import report
        png = os.path.join(out, "allocation.png")
        report.plot_schedule(schedule, png)
        artifacts.append(png)
    print(f"simulated {len(w.jobs)} jobs / {w.n_tasks} tasks; "
          f"effective utilization {eff:.3f}, raw {raw:.3f}")
    for p in artifacts:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    schedule = read_schedule(args.schedule)
    slos = read_slos(args.slos)
    window = _parse_window(args.window)
    qs = evaluate(slos, schedule, window)
    out = _out_dir(args)
    qs_path = os.path.join(out, "qs.csv")
    with open(qs_path, "w", encoding="utf-8") as f:
        write_header(f, "qs", window=f"{format_number(window[0])}:{format_number(window[1])}")
        f.write("tenant,metric,value\n")
        for slo, value in zip(slos, qs.values):
            f.write(f"{slo.tenant},{slo.metric},{_fmt(value)}\n")
    print("QS:", " ".join(f"{s.tenant}/{s.metric}={_fmt(v)}"
                          for s, v in zip(slos, qs.values)))
    print(f"wrote {qs_path}")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    w = parse_trace(args.trace)
    cfg = read_config(args.config)
    slos = read_slos(args.slos)
    loop_cfg = with_seed(read_loop_config(args.loop), args.seed)
    result = run_loop(w, cfg, slos, loop_cfg)
    out = _out_dir(args)
    journal_path = os.path.join(out, "journal.csv")
    write_journal(result, journal_path)
    config_path = os.path.join(out, "final_config.txt")
    write_config(result.final_config, config_path)
    table_path = os.path.join(out, "qs_table.csv")
    with open(table_path, "w", encoding="utf-8") as f:
        write_header(f, "qstable", status=result.status)
        cols = ",".join(f"{s.tenant}/{s.metric}" for s in slos)
        f.write(f"iteration,accepted,{cols}\n")
        for rec in result.records:
            vals = ",".join(_fmt(v) for v in rec.observed.values)
            f.write(f"{rec.iteration},{int(rec.accepted)},{vals}\n")
    artifacts = [journal_path, config_path, table_path]
    if not args.no_plot:
        from . import report
        png = os.path.join(out, "journal.png")
        report.plot_journal(result.records, slos, png)
        artifacts.append(png)
    accepted = sum(1 for r in result.records if r.accepted)
    print(f"{result.status} after {result.iterations} iterations "
          f"({accepted} accepted, {result.iterations - accepted} rolled back)")
    for p in artifacts:
        print(f"wrote {p}")
    if result.status == STATUS_CONVERGED:
        return EXIT_OK
    if result.status == STATUS_ABORTED:
        return EXIT_ABORTED
    return EXIT_MAX_ITERATIONS


def cmd_generate(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    w = synthesize(model, args.horizon, seed=args.seed)
    out = _out_dir(args)
    trace_path = os.path.join(out, "trace.txt")
    write_trace(w, trace_path)
    print(f"generated {len(w.jobs)} jobs / {w.n_tasks} tasks over horizon "
          f"{format_number(args.horizon)}")
    print(f"wrote {trace_path}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    w = parse_trace(args.trace)
    model = fit_model(w)
    if not model.tenants:
        print("error: no tenant had enough jobs to fit a model", file=sys.stderr)
        return EXIT_ERROR
    out = _out_dir(args)
    model_path = os.path.join(out, "model.txt")
    write_model(model, model_path)
    print(f"fitted {len(model.tenants)} tenant models from {len(w.jobs)} jobs")
    print(f"wrote {model_path}")
    return EXIT_OK


def cmd_provision(args: argparse.Namespace) -> int:
    w = parse_trace(args.trace)
    cfg = read_config(args.config)
    slos = read_slos(args.slos)
    capacities = _parse_capacities(args.capacities)
    rows = provision(w, cfg, slos, capacities)
    out = _out_dir(args)
    table_path = os.path.join(out, "provision.csv")
    with open(table_path, "w", encoding="utf-8") as f:
        write_header(f, "provision", slos=len(slos))
        cols = ",".join(f"{s.tenant}/{s.metric}" for s in slos)
        f.write(f"capacity,feasible,utilization,{cols}\n")
        for row in rows:
            if row.qs is None:
                vals = ",".join("NA" for _ in slos)
            else:
                vals = ",".join(_fmt(v) for v in row.qs.values)
            f.write(f"{row.capacity},{int(row.feasible)},{_fmt(row.utilization)},{vals}\n")
    artifacts = [table_path]
    if not args.no_plot:
        from . import report
        png = os.path.join(out, "provision.png")
        report.plot_provision(rows, slos, png)
        artifacts.append(png)
    feasible = sum(1 for r in rows if r.feasible)
    print(f"evaluated {len(rows)} capacities ({feasible} feasible)")
    for p in artifacts:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    predicted = read_schedule(args.predicted)
    observed = read_schedule(args.observed)
    pred_fin = dict(predicted.job_finish)
    obs_fin = dict(observed.job_finish)
    if set(pred_fin) != set(obs_fin):
        missing = sorted(set(pred_fin) ^ set(obs_fin))
        print(f"error: predicted and observed job sets differ: {missing[:10]}",
              file=sys.stderr)
        return EXIT_ERROR
    errors = prediction_error(pred_fin, obs_fin, observed.job_tenant)
    out = _out_dir(args)
    table_path = os.path.join(out, "errors.csv")
    with open(table_path, "w", encoding="utf-8") as f:
        write_header(f, "validation", jobs=len(obs_fin))
        f.write("tenant,rae,rse\n")
        for tenant in sorted(errors):
            rae, rse = errors[tenant]
            f.write(f"{tenant},{_fmt(rae)},{_fmt(rse)}\n")
    artifacts = [table_path]
    if not args.no_plot:
        from . import report
        png = os.path.join(out, "errors.png")
        report.plot_validation(errors, png)
        artifacts.append(png)
    for tenant in sorted(errors):
        rae, rse = errors[tenant]
        print(f"{tenant}: RAE={_fmt(rae)} RSE={_fmt(rse)}")
    for p in artifacts:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmtune",
        description="Simulate, evaluate, and self-tune multi-tenant scheduler configurations.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="run a trace through the scheduler")
    _path_arg(p, "--trace", "RMTUNE_TRACE", "workload trace file")
    _path_arg(p, "--config", "RMTUNE_CONFIG", "scheduler configuration file")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a schedule against SLOs")
    _path_arg(p, "--schedule", "RMTUNE_SCHEDULE", "schedule file")
    _path_arg(p, "--slos", "RMTUNE_SLOS", "SLO file")
    p.add_argument("--window", required=True, help="evaluation window as t0,t1")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="tune a configuration with the control loop")
    _path_arg(p, "--trace", "RMTUNE_TRACE", "workload trace file")
    _path_arg(p, "--config", "RMTUNE_CONFIG", "initial configuration file")
    _path_arg(p, "--slos", "RMTUNE_SLOS", "SLO file")
    _path_arg(p, "--loop", "RMTUNE_LOOP", "loop configuration file")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the loop config seed")
    p.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("generate", help="synthesize a trace from a workload model")
    _path_arg(p, "--model", "RMTUNE_MODEL", "workload model file")
    p.add_argument("--horizon", type=float, required=True, help="trace length")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a workload model to a trace")
    _path_arg(p, "--trace", "RMTUNE_TRACE", "workload trace file")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("provision", help="evaluate a config at alternative capacities")
    _path_arg(p, "--trace", "RMTUNE_TRACE", "workload trace file")
    _path_arg(p, "--config", "RMTUNE_CONFIG", "scheduler configuration file")
    _path_arg(p, "--slos", "RMTUNE_SLOS", "SLO file")
    p.add_argument("--capacities", required=True, help="comma-separated capacities, e.g. 8,12,16")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("validate", help="compare predicted and observed job finish times")
    _path_arg(p, "--predicted", "RMTUNE_PREDICTED", "predicted schedule file")
    _path_arg(p, "--observed", "RMTUNE_OBSERVED", "observed schedule file")
    _path_arg(p, "--out", "RMTUNE_OUT", "output directory")
    p.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="raise", under="ignore")
    try:
        return args.func(args)
    except (FormatError, RmSimError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
