"""Command-line front end.

Subcommands: simulate | evolve | steady | residual | sweep.  Every run
writes its artifacts into --out and finishes with a manifest carrying the
config echo and SHA-256 digests.  Identical configuration and seed give
byte-identical CSV bodies; wall time lives only in the manifest.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import NumericError
from .fileio import (fmt, read_pdf_csv, write_manifest, write_pdf_csv,
                     write_population_csv)
from .grid import GridPdf, WealthGrid, distance, normalize
from .kinetics import (default_grid, default_seed_pdf, relaxation_time,
                       solve_steady)
from .models import ANGLE, KINDS, PURE, SAVING, ModelParams, gamma_residual
from .montecarlo import default_bin_edges, run_replicas


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


_CONFIG_KEYS = {
    "model", "lambda", "omega", "mean-wealth", "agents", "steps", "seed",
    "replicas", "grid", "nodes", "out", "jobs", "tol", "max-iter", "bins",
    "initial", "dt-steps", "t-max", "u-min", "u-max", "points",
}


def _dest(key: str) -> str:
    return {"lambda": "lam"}.get(key, key.replace("-", "_"))


def load_config_file(path) -> dict:
    """key=value defaults; unknown keys are rejected, flags win."""
    defaults = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"malformed config line: {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        defaults[_dest(key)] = value.strip()
    return defaults


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags win")
    common.add_argument("--model", choices=KINDS, default=PURE)
    common.add_argument("--lambda", dest="lam", default=None,
                        help="saving fraction, in [0,1)")
    common.add_argument("--omega", default=None,
                        help="exchange fraction, in (0,1]; "
                             "comma list for residual/sweep")
    common.add_argument("--mean-wealth", type=float, default=1.0)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--grid", choices=("auto", "uniform", "loghead"),
                        default="auto")
    common.add_argument("--nodes", type=int, default=4001)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--tol", type=float, default=None)

    parser = argparse.ArgumentParser(
        prog="kinex",
        description="Kinetic wealth-exchange models: Monte Carlo and "
                    "deterministic density evolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="agent-based Monte Carlo, replica-merged histogram")
    p.add_argument("--agents", type=int, default=10000)
    p.add_argument("--steps", type=int, default=10_000_000)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--initial", choices=("delta", "exponential"),
                   default="delta")

    p = sub.add_parser("steady", parents=[common],
                       help="fixed-point solve of the stationary density")
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--mc-hist", default=None,
                   help="pdf CSV from `simulate` to compare against")

    p = sub.add_parser("residual", parents=[common],
                       help="Gamma-exactness residual over a wealth range")
    p.add_argument("--u-min", type=float, default=0.05)
    p.add_argument("--u-max", type=float, default=6.0)
    p.add_argument("--points", type=int, default=120)

    p = sub.add_parser("evolve", parents=[common],
                       help="relax a perturbed density, fit the decay time")
    p.add_argument("--agents", type=int, default=1000)
    p.add_argument("--dt-steps", type=float, default=None)
    p.add_argument("--t-max", type=float, default=1.6,
                   help="time horizon in units of N collisions")

    p = sub.add_parser("sweep", parents=[common],
                       help="steady + relaxation across a parameter list")
    p.add_argument("--agents", type=int, default=1000)
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--skip-relaxation", action="store_true")
    return parser


def _parse_float(label: str, raw, lo=None, hi=None):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{label} must be a number, got {raw!r}")
    return value


def build_model(args, param_override=None) -> ModelParams:
    kind = args.model
    lam = param_override if (kind == SAVING and param_override is not None) \
        else args.lam
    omega = param_override if (kind == ANGLE and param_override is not None) \
        else args.omega
    try:
        if kind == SAVING:
            if lam is None:
                raise ConfigError("saving model requires --lambda")
            return ModelParams(SAVING, saving_fraction=_parse_float("lambda", lam),
                               mean_wealth=args.mean_wealth)
        if kind == ANGLE:
            if omega is None:
                raise ConfigError("angle model requires --omega")
            return ModelParams(ANGLE, exchange_fraction=_parse_float("omega", omega),
                               mean_wealth=args.mean_wealth)
        if lam is not None or omega is not None:
            raise ConfigError("the pure model takes no lambda/omega parameter")
        return ModelParams(PURE, mean_wealth=args.mean_wealth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def pick_grid(args, model: ModelParams) -> WealthGrid:
    if args.nodes < 3:
        raise ConfigError("nodes must be at least 3")
    if args.grid == "uniform":
        return WealthGrid.uniform(model.mean_wealth, args.nodes)
    if args.grid == "loghead":
        return WealthGrid.loghead(model.mean_wealth, args.nodes)
    return default_grid(model, args.nodes)


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("kinex-out") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _param_list(args):
    if args.model == SAVING:
        raw = args.lam
        if raw is None:
            raise ConfigError("saving model requires --lambda")
    elif args.model == ANGLE:
        raw = args.omega
        if raw is None:
            raise ConfigError("angle model requires --omega")
    else:
        raise ConfigError("sweep/residual need a parametrized model "
                          "(saving or angle)")
    return [tok.strip() for tok in str(raw).split(",") if tok.strip()]


def _config_echo(args, skip=("config",)) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or key == "command" or value is None:
            continue
        out[key] = value
    return out


def _hist_to_pdf(hist, model):
    """Merged histogram as a pdf CSV payload on bin centers."""
    grid = WealthGrid(hist.centers, "custom")
    return GridPdf(grid, hist.density(), model.mean_wealth)


def cmd_simulate(args) -> int:
    t0 = time.time()
    model = build_model(args)
    if args.agents < 2:
        raise ConfigError("agents must be at least 2")
    if args.steps < 0:
        raise ConfigError("steps must be nonnegative")
    if args.replicas < 1:
        raise ConfigError("replicas must be at least 1")
    out = _out_dir(args)
    edges = default_bin_edges(model.mean_wealth, args.bins)
    merged, pops = run_replicas(model, args.agents, args.steps, args.seed,
                                args.replicas, initial=args.initial,
                                bin_edges=edges, jobs=max(1, args.jobs))
    meta = {
        "model": model.kind, "mean_wealth": fmt(model.mean_wealth),
        "seed": str(args.seed), "agents": str(args.agents),
        "steps": str(args.steps), "replicas": str(args.replicas),
        "samples": str(merged.samples), "overflow": str(merged.overflow),
    }
    if model.saving_fraction is not None:
        meta["lambda"] = fmt(model.saving_fraction)
    if model.exchange_fraction is not None:
        meta["omega"] = fmt(model.exchange_fraction)
    write_pdf_csv(out / "histogram.csv", _hist_to_pdf(merged, model), meta)
    write_population_csv(out / "population_r000.csv", pops[0], args.seed)
    write_manifest(out, "simulate", _config_echo(args),
                   ["histogram.csv", "population_r000.csv"], time.time() - t0)
    print(f"simulate: {args.replicas} replica(s) x {args.steps} steps -> {out}")
    return 0


def _solve_for(args, model, grid):
    seed_pdf = default_seed_pdf(model, grid)
    return seed_pdf, solve_steady(model, seed_pdf=seed_pdf, grid=grid,
                                  max_iter=args.max_iter, tol=args.tol)


def cmd_steady(args) -> int:
    t0 = time.time()
    model = build_model(args)
    grid = pick_grid(args, model)
    out = _out_dir(args)
    seed_pdf, (solved, report) = _solve_for(args, model, grid)
    if not report.converged:
        print("warning: fixed point not converged at max-iter "
              f"(residual {report.final_sup_residual:.3e})", file=sys.stderr)
    meta = {
        "model": model.kind, "mean_wealth": fmt(model.mean_wealth),
        "iterations": str(report.iterations),
        "residual": fmt(report.final_sup_residual),
        "converged": str(report.converged).lower(),
    }
    if model.saving_fraction is not None:
        meta["lambda"] = fmt(model.saving_fraction)
    if model.exchange_fraction is not None:
        meta["omega"] = fmt(model.exchange_fraction)
    write_pdf_csv(out / "seed_pdf.csv", normalize(seed_pdf),
                  {k: meta[k] for k in meta if k not in
                   ("iterations", "residual", "converged")})
    write_pdf_csv(out / "steady_pdf.csv", solved, meta)

    report_lines = [
        f"iterations = {report.iterations}",
        f"final_sup_residual = {fmt(report.final_sup_residual)}",
        f"converged = {str(report.converged).lower()}",
        "residual_history = " + ",".join(fmt(r) for r in report.residuals),
    ]
    columns = ["u", "f_seed", "f_solved"]
    seed_norm = normalize(seed_pdf)
    table = [grid.nodes, seed_norm.values, solved.values]
    if args.mc_hist:
        mc_raw, _ = read_pdf_csv(args.mc_hist)
        mc_vals = np.interp(grid.nodes, mc_raw.grid.nodes, mc_raw.values,
                            left=mc_raw.values[0], right=0.0)
        mc = normalize(GridPdf(grid, np.clip(mc_vals, 0.0, None),
                               model.mean_wealth))
        columns.append("f_mc")
        table.append(mc.values)
        l1_seed = distance(seed_norm, mc).l1
        l1_solved = distance(solved, mc).l1
        report_lines += [f"l1_seed_vs_mc = {fmt(l1_seed)}",
                         f"l1_solved_vs_mc = {fmt(l1_solved)}"]
    lines = [",".join(columns)]
    for row in zip(*table):
        lines.append(",".join(fmt(v) for v in row))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    (out / "report.txt").write_text("\n".join(report_lines) + "\n")
    write_manifest(out, "steady", _config_echo(args),
                   ["seed_pdf.csv", "steady_pdf.csv", "comparison.csv",
                    "report.txt"], time.time() - t0)
    print(f"steady: {report.iterations} iteration(s), residual "
          f"{report.final_sup_residual:.3e} -> {out}")
    return 0


def cmd_residual(args) -> int:
    t0 = time.time()
    if args.model != ANGLE:
        raise ConfigError("the residual identity is defined for --model angle")
    values = _param_list(args)
    out = _out_dir(args)
    m = args.mean_wealth
    u = np.linspace(args.u_min * m, args.u_max * m, args.points)
    artifacts = []
    for tok in values:
        model = build_model(args, param_override=tok)
        r = gamma_residual(u, model)
        name = f"residual_omega{float(tok):g}.csv"
        lines = ["u,residual"] + [f"{fmt(a)},{fmt(b)}" for a, b in zip(u, r)]
        (out / name).write_text("\n".join(lines) + "\n")
        artifacts.append(name)
        print(f"residual omega={float(tok):g}: sup|r| = {np.max(np.abs(r)):.3e}")
    write_manifest(out, "residual", _config_echo(args), artifacts,
                   time.time() - t0)
    return 0


def cmd_evolve(args) -> int:
    t0 = time.time()
    model = build_model(args)
    if args.agents < 2:
        raise ConfigError("agents must be at least 2")
    if args.dt_steps is not None and args.dt_steps > args.agents / 4.0:
        raise ConfigError("dt-steps must be at most N/4 (stability bound)")
    grid = None if args.grid == "auto" and args.nodes == 4001 else \
        pick_grid(args, model)
    out = _out_dir(args)
    fit = relaxation_time(model, n_agents=args.agents, grid=grid,
                          dt_steps=args.dt_steps, t_max_in_n=args.t_max)
    lines = ["t,l1_distance"] + [f"{fmt(t)},{fmt(d)}"
                                 for t, d in zip(fit.times, fit.dists)]
    (out / "relaxation.csv").write_text("\n".join(lines) + "\n")
    report = [f"tau = {fmt(fit.tau)}",
              f"tau_over_n = {fmt(fit.tau_over_n)}",
              f"rms_residual = {fmt(fit.rms_residual)}",
              f"window_start = {fmt(fit.window[0])}",
              f"window_end = {fmt(fit.window[1])}",
              f"n_agents = {args.agents}"]
    (out / "report.txt").write_text("\n".join(report) + "\n")
    write_manifest(out, "evolve", _config_echo(args),
                   ["relaxation.csv", "report.txt"], time.time() - t0)
    print(f"evolve: tau/N = {fit.tau_over_n:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    t0 = time.time()
    values = _param_list(args)
    out = _out_dir(args)
    param_name = "lambda" if args.model == SAVING else "omega"

    def one_point(tok):
        model = build_model(args, param_override=tok)
        grid = pick_grid(args, model)
        point_dir = out / f"{param_name}{float(tok):g}"
        point_dir.mkdir(parents=True, exist_ok=True)
        pt0 = time.time()
        seed_pdf = default_seed_pdf(model, grid)
        solved, report = solve_steady(model, seed_pdf=seed_pdf, grid=grid,
                                      max_iter=args.max_iter, tol=args.tol)
        l1_gamma = distance(normalize(seed_pdf), solved).l1
        tau_over_n = float("nan")
        if not args.skip_relaxation:
            fit = relaxation_time(model, n_agents=args.agents)
            tau_over_n = fit.tau_over_n
        meta = {"model": model.kind, param_name: fmt(float(tok)),
                "mean_wealth": fmt(model.mean_wealth),
                "iterations": str(report.iterations),
                "residual": fmt(report.final_sup_residual)}
        write_pdf_csv(point_dir / "steady_pdf.csv", solved, meta)
        write_manifest(point_dir, "sweep-point", _config_echo(args),
                       ["steady_pdf.csv"], time.time() - pt0)
        return (float(tok), l1_gamma, report.final_sup_residual, tau_over_n,
                "ok")

    rows = []
    failed = False
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = {tok: pool.submit(one_point, tok) for tok in values}
            for tok in values:
                try:
                    rows.append(futures[tok].result())
                except (NumericError, ValueError) as exc:
                    print(f"sweep point {tok} failed: {exc}", file=sys.stderr)
                    rows.append((float(tok), float("nan"), float("nan"),
                                 float("nan"), "failed"))
                    failed = True
    else:
        for tok in values:
            try:
                rows.append(one_point(tok))
            except (NumericError, ValueError) as exc:
                print(f"sweep point {tok} failed: {exc}", file=sys.stderr)
                rows.append((float(tok), float("nan"), float("nan"),
                             float("nan"), "failed"))
                failed = True
    lines = [f"{param_name},l1_gamma_vs_solved,residual_sup,tau_over_n,status"]
    for value, l1g, res, ton, status in rows:
        lines.append(f"{fmt(value)},{fmt(l1g)},{fmt(res)},{fmt(ton)},{status}")
    (out / "index.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out, "sweep", _config_echo(args), ["index.csv"],
                   time.time() - t0)
    print(f"sweep: {len(rows)} point(s) -> {out}")
    return 3 if failed else 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "steady": cmd_steady,
    "residual": cmd_residual,
    "evolve": cmd_evolve,
    "sweep": cmd_sweep,
}


def _apply_config_defaults(parser, command: str, defaults: dict):
    sub_action = next(a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction))
    sub = sub_action.choices[command]
    actions = {a.dest: a for a in sub._actions}
    converted = {}
    for key, raw in defaults.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"config key not valid for '{command}': {key}")
        converted[key] = action.type(raw) if action.type else raw
    sub.set_defaults(**converted)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
        if getattr(pre, "config", None):
            _apply_config_defaults(parser, pre.command,
                                   load_config_file(pre.config))
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
