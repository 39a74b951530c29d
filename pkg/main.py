import argparse
import csv
import datetime
import logging
import os
import sys
import time

import numpy as np

from config import VERSION, ConfigError, load_settings, parse_config
from cost_functional import estimate_j
from feedback_controls import control_sequence
from optimizer import minimize
from snse_integrator import map_paths, simulate_coupled, simulate_path, trajectory_table
from verification_harness import (
    continuity_experiment,
    gronwall_experiment,
    log_moment_experiment,
    ou_variance_experiment,
    solution_convergence_experiment,
    strong_order_experiment,
    subadditivity_check,
    tail_experiment,
)

logger = logging.getLogger("snse")

SUBCOMMANDS = ("simulate", "cost", "continuity", "convergence", "tail", "logmoment",
               "subadd", "gronwall", "optimize", "order", "ouvar")

REQUIRED_KEYS = {
    "continuity": ["experiment.n_list"],
    "convergence": ["experiment.n_list"],
    "tail": ["experiment.s_list"],
    "logmoment": ["experiment.dt_list", "experiment.t_list"],
    "optimize": ["experiment.box_coords", "experiment.budget"],
}

COST_COLUMNS = ["label", "n_paths", "seed", "mean", "ci_half", "blowups"]


def fmt(value):
    """17 significant digits for floats so values round-trip."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


class RunContext:
    """Everything a subcommand needs besides the parsed run configuration."""

    def __init__(self, subcommand, spec, out_dir, threads=1, long_format=False, label=None):
        self.subcommand = subcommand
        self.spec = spec
        self.out_dir = out_dir
        self.threads = max(1, int(threads))
        self.long_format = long_format
        self.label = label if label is not None else (spec.get("experiment.label") or subcommand)
        self.started = time.perf_counter()

    def header(self, extra=None):
        lines = [
            f"version={VERSION}",
            f"subcommand={self.subcommand}",
            f"config={self.spec.path}",
            f"seed={self.spec.seed}",
            f"paths={self.spec.paths}",
        ]
        lines += [f"config.{line}" for line in self.spec.echo()]
        for key, value in (extra or {}).items():
            lines.append(f"{key}={value}")
        lines.append(f"wall_time_s={time.perf_counter() - self.started:.3f}")
        lines.append(f"created={datetime.datetime.now().isoformat(timespec='seconds')}")
        return lines

    def write_csv(self, name, columns, rows, extra=None, append=False):
        path = os.path.join(self.out_dir, name)
        fresh = not (append and os.path.exists(path))
        with open(path, 'a' if not fresh else 'w', newline='', encoding='utf-8') as f:
            if fresh:
                for line in self.header(extra):
                    f.write(f"# {line}\n")
            writer = csv.writer(f, lineterminator="\n")
            if fresh:
                writer.writerow(columns)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
        return path


def _table_extra(table):
    extra = {f"param.{k}": v for k, v in table.params.items()}
    extra.update({f"summary.{k}": fmt(v) for k, v in table.summary.items()})
    extra.update({f"check.{k}": int(v) for k, v in table.checks.items()})
    return extra


def _write_table(ctx, table):
    path = ctx.write_csv(f"{table.name}.csv", table.columns, table.rows, _table_extra(table))
    print(f"📄 Wrote {path}")
    if table.passed:
        print(f"✅ {table.name}: all checks passed ({', '.join(table.checks) or 'none'})")
        return 0
    print(f"❌ {table.name}: failed checks: {', '.join(table.failed_checks)}")
    return 1


def cmd_simulate(ctx):
    spec = ctx.spec
    phis = [spec.control]
    n_list = spec.get("experiment.n_list")
    if n_list:
        phis.append(control_sequence(spec.control, n_list[0], spec.get("experiment.scheme")))

    def one(path_index):
        if len(phis) > 1:
            return simulate_coupled(spec.sim, phis, spec.noise, spec.seed, path_index)[0]
        return simulate_path(spec.sim, phis[0], spec.noise, spec.seed, path_index)

    trajs = map_paths(one, range(spec.paths), ctx.threads)
    blowups = sum(1 for t in trajs if t.blew_up)
    if ctx.long_format:
        columns, rows = None, []
        for p, traj in enumerate(trajs):
            cols, body = trajectory_table(traj)
            columns = ["path"] + cols
            rows.extend((p,) + row for row in body)
        print(f"📄 Wrote {ctx.write_csv('trajectories.csv', columns, rows)}")
    else:
        for p, traj in enumerate(trajs):
            columns, rows = trajectory_table(traj)
            extra = {"path_index": p, "exit_index": traj.exit_index, "blew_up": int(traj.blew_up),
                     "cap_events": traj.cap_events}
            ctx.write_csv(f"trajectory_{p:05d}.csv", columns, rows, extra)
        print(f"📄 Wrote {len(trajs)} trajectory files to {ctx.out_dir}")
    if blowups:
        print(f"⚠️ {blowups} of {len(trajs)} paths blew up (truncated)")
    return 0


def cmd_cost(ctx):
    spec = ctx.spec
    est = estimate_j(spec.sim, spec.control, spec.noise, spec.cost, spec.paths, spec.seed, ctx.threads)
    row = (ctx.label, spec.paths, spec.seed, est.mean, est.ci_half, est.blowups)
    path = ctx.write_csv("costs.csv", COST_COLUMNS, [row], append=True)
    print(f"💰 J = {est.mean:.6g} ± {est.ci_half:.3g} ({spec.paths} paths, {est.blowups} blow-ups)")
    print(f"📄 Appended to {path}")
    return 0


def cmd_continuity(ctx):
    s = ctx.spec
    return _write_table(ctx, continuity_experiment(
        s.sim, s.control, s.noise, s.cost, s.get("experiment.scheme"), s.get("experiment.n_list"),
        s.paths, s.seed, ctx.threads, abs_tol=s.get("experiment.abs_tol")))


def cmd_convergence(ctx):
    s = ctx.spec
    return _write_table(ctx, solution_convergence_experiment(
        s.sim, s.control, s.noise, s.get("experiment.scheme"), s.get("experiment.n_list"),
        s.paths, s.get("experiment.delta"), s.seed, ctx.threads,
        final_ratio=s.get("experiment.final_ratio")))


def cmd_tail(ctx):
    s = ctx.spec
    return _write_table(ctx, tail_experiment(
        s.sim, s.control, s.noise, s.get("experiment.s_list"), s.paths, s.seed, ctx.threads))


def cmd_logmoment(ctx):
    s = ctx.spec
    return _write_table(ctx, log_moment_experiment(
        s.sim, s.control, s.noise, s.get("experiment.dt_list"), s.get("experiment.t_list"),
        s.paths, s.seed, ctx.threads))


def cmd_subadd(ctx):
    s = ctx.spec
    return _write_table(ctx, subadditivity_check(s.cost.eps, s.get("experiment.samples"), s.seed))


def cmd_gronwall(ctx):
    s = ctx.spec
    return _write_table(ctx, gronwall_experiment(s.get("experiment.instances"), s.seed))


def cmd_order(ctx):
    s = ctx.spec
    return _write_table(ctx, strong_order_experiment(
        s.sim, s.control, s.noise, s.paths, s.seed, min_order=s.get("experiment.min_order"),
        threads=ctx.threads))


def cmd_ouvar(ctx):
    s = ctx.spec
    return _write_table(ctx, ou_variance_experiment(s.sim, s.noise, s.paths, s.seed, ctx.threads))


def cmd_optimize(ctx):
    s = ctx.spec
    result = minimize(s.box, s.sim, s.noise, s.cost, s.paths, s.seed, s.get("experiment.budget"), ctx.threads)
    columns = ["eval_index"] + [f"theta_{i}" for i in range(s.box.dims)] + ["objective", "phase"]
    rows = [(e.index,) + e.theta + (e.objective, e.phase) for e in result.trace]
    extra = {"theta_star": " ".join(fmt(v) for v in result.theta_star), "j_star": fmt(result.j_star),
             "evals": result.evals}
    path = ctx.write_csv("optimize.csv", columns, rows, extra)
    print(f"🎯 J* = {result.j_star:.6g} at theta = {[round(float(v), 6) for v in result.theta_star]}"
          f" after {result.evals} evaluations")
    print(f"📄 Wrote {path}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "cost": cmd_cost,
    "continuity": cmd_continuity,
    "convergence": cmd_convergence,
    "tail": cmd_tail,
    "logmoment": cmd_logmoment,
    "subadd": cmd_subadd,
    "gronwall": cmd_gronwall,
    "optimize": cmd_optimize,
    "order": cmd_order,
    "ouvar": cmd_ouvar,
}


def run(subcommand, spec, out_dir, threads=1, long_format=False, label=None):
    """
    Dispatch one subcommand and write its CSV output.

    Returns:
        int: 0 on success, 1 when an experiment check fails, 2 on a
        configuration or usage error.
    """
    if subcommand not in COMMANDS:
        print(f"❌ Unknown subcommand '{subcommand}'")
        return 2
    try:
        spec.require(REQUIRED_KEYS.get(subcommand, []), subcommand)
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise OSError(f"output directory {out_dir} is not writable")
        ctx = RunContext(subcommand, spec, out_dir, threads, long_format, label)
        return COMMANDS[subcommand](ctx)
    except ValueError as e:
        print(f"❌ {subcommand}: {e}")
        return 2
    except OSError as e:
        print(f"❌ {subcommand}: cannot write output: {e}")
        return 2
    except AssertionError as e:
        print(f"❌ {subcommand}: assertion failed: {e}")
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="snse",
        description="Feedback-controlled stochastic Navier-Stokes simulator and verification suite",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="run configuration (key = value file)")
    parser.add_argument("--out", help="output directory (default from data/settings.json)")
    parser.add_argument("--seed", type=int, help="override mc.seed")
    parser.add_argument("--paths", type=int, help="override mc.paths")
    parser.add_argument("--threads", type=int, help="worker threads for path fan-out")
    parser.add_argument("--long", action="store_true", help="simulate: one long-format trajectory file")
    parser.add_argument("--label", help="cost: row label in costs.csv")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    settings = load_settings()
    level = logging.DEBUG if args.verbose else getattr(logging, str(settings["log_level"]).upper(), logging.INFO)
    logging.basicConfig(level=level, format="[%(name)s] %(message)s")

    print(f"🌀 snse {VERSION} :: {args.subcommand}")
    try:
        spec = parse_config(args.config).with_overrides(seed=args.seed, paths=args.paths)
    except ConfigError as e:
        print(f"❌ {e}")
        return 2
    threads = args.threads if args.threads is not None else settings["threads"]
    long_format = args.long or bool(settings["long_format"])
    out_dir = args.out or settings["results_dir"]
    status = run(args.subcommand, spec, out_dir, threads, long_format, args.label)
    logger.debug("exit status %d", status)
    return status


if __name__ == "__main__":
    sys.exit(main())
