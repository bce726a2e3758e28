"""Command line interface: ``apmlmc {run,sweep,tables,analyze,trace}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import rng as streams
from .config import RunConfig, load_config, with_dt1
from .coupling import CouplingConfig, pair_params, simulate_pairs
from .mlmc import ConfigurationError, MlmcResult, adaptive_mlmc, leave_out_score, merged_level_stats, steps_in
from .runlength import DEFAULT_LAMBDA, build_tables
from .scheme import SchemeParams
from .variance import analysis_report

logger = logging.getLogger("apmlmc")

LEVELS_HEADER = "level,dt,samples,mean_diff,var_diff,var_level,cost"
TRACE_HEADER = ("t,x_fine,x_coarse,x_fine_diffusion_only,x_fine_transport_only,"
                "x_coarse_diffusion_only,x_coarse_transport_only")


def sci(x: float) -> str:
    return f"{x:.5e}"


def _write(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def levels_csv(result: MlmcResult) -> list[str]:
    lines = [LEVELS_HEADER]
    for l, (spec, s) in enumerate(zip(result.specs, result.levels)):
        lines.append(",".join([str(l), sci(spec.dt), sci(s.P), sci(s.mean), sci(s.variance),
                               sci(s.estimator_variance), sci(s.cost)]))
    return lines


def summary_csv(result: MlmcResult, cfg: RunConfig) -> list[str]:
    rows = [("estimate", sci(result.estimate)),
            ("total_cost", sci(result.total_cost)),
            ("estimator_variance", sci(result.estimator_variance)),
            ("probe_cost", sci(sum(s.probe_cost for s in result.levels))),
            ("levels", str(len(result.levels))),
            ("converged", str(result.converged).lower()),
            ("seed", str(cfg.seed)),
            ("dt1_effective", sci(cfg.fine_dt1))]
    # the output location is not part of the experiment
    rows += [(f"config.{k}", v) for k, v in cfg.items() if k != "output_dir"]
    return ["key,value"] + [f"{k},{v}" for k, v in rows]


def _output_dir(args, cfg: RunConfig) -> Path:
    return Path(args.output if args.output else cfg.output_dir)


def _config(args, **extra) -> RunConfig:
    if not args.config:
        raise ConfigurationError("missing --config")
    overrides = {"seed": args.seed}
    if getattr(args, "output", None):
        overrides["output_dir"] = args.output
    overrides.update(extra)
    try:
        streams.worker_count()
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return load_config(args.config, **overrides)


def cmd_run(args) -> int:
    cfg = _config(args)
    result = adaptive_mlmc(cfg.level_strategy(), cfg.rmse, cfg.context())
    out = _output_dir(args, cfg)
    _write(out / "levels.csv", levels_csv(result))
    _write(out / "summary.csv", summary_csv(result, cfg))
    print(f"estimate {result.estimate:.6g} cost {result.total_cost:.6g} levels {len(result.levels)}")
    if not result.converged:
        print(f"warning: {result.message}", file=sys.stderr)
        return 3
    return 0


def parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"invalid --dt1-grid: {text!r}") from None
    if not grid:
        raise ConfigurationError("empty --dt1-grid")
    return grid


def sweep_rows(cfg: RunConfig, grid: list[float]) -> list[str]:
    lines = ["dt1,total_cost,leave_out_score,estimate"]
    for i, dt1 in enumerate(grid):
        point = with_dt1(cfg, dt1)
        strategy = point.level_strategy()
        ctx = point.context()
        result = adaptive_mlmc(strategy, cfg.rmse, ctx)
        merged = merged_level_stats(strategy, ctx, cfg.leave_out_samples, level=1)
        score = leave_out_score(result.levels[1], result.levels[2], merged.unit_cost, merged.variance)
        logger.info("dt1=%g cost=%g score=%g", dt1, result.total_cost, score)
        lines.append(",".join([sci(dt1), sci(result.total_cost), sci(score), sci(result.estimate)]))
    return lines


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = parse_grid(args.dt1_grid)
    for dt1 in grid:
        with_dt1(cfg, dt1)  # validates divisibility before any work
    out = _output_dir(args, cfg)
    _write(out / "sweep.csv", sweep_rows(cfg, grid))
    return 0


def cmd_tables(args) -> int:
    if args.config:
        cfg = _config(args)
        M = steps_in(cfg.dt0, cfg.fine_dt1)
        p_nc = SchemeParams(cfg.epsilon, cfg.fine_dt1, cfg.v_char).p_nc
        lam = args.lambda_max or cfg.lambda_max
    else:
        if args.M is None or args.epsilon is None or args.dt is None:
            raise ConfigurationError("tables needs --config or all of --M, --epsilon, --dt")
        M, p_nc = args.M, SchemeParams(args.epsilon, args.dt).p_nc
        lam = args.lambda_max or DEFAULT_LAMBDA
    tables = build_tables(M, p_nc, min(lam, M))
    path = Path(args.output or "tables.txt")
    if path.is_dir():
        path = path / "tables.txt"
    with open(path, "w", newline="\n") as fh:
        fh.write(tables.to_text())
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    M = steps_in(cfg.dt0, cfg.fine_dt1)
    params = pair_params(cfg.epsilon, cfg.fine_dt1, M, steps_in(cfg.t_end, cfg.dt0), cfg.v_char)
    theta = None if cfg.theta == "auto" else float(cfg.theta)
    report = analysis_report(params, theta)
    for key, value in report.items():
        print(f"{key} {value:.17g}" if isinstance(value, float) else f"{key} {value}")
    return 0


def trace_rows(cfg: RunConfig, n_units: float) -> list[str]:
    M = steps_in(cfg.dt0, cfg.fine_dt1)
    n_coarse = steps_in(n_units, cfg.dt0)
    strategy = cfg.level_strategy()
    theta = strategy.theta1(cfg.epsilon, cfg.v_char)
    config = CouplingConfig(M, strategy.coupling, theta)
    trace: list = []
    g = streams.stream(cfg.seed, 0xC0FFEE)
    ctx = cfg.context()
    simulate_pairs(cfg.epsilon, cfg.fine_dt1, config, n_coarse, 1, cfg.velocity_model(), g,
                   init_speed=ctx.init_speed, trace=trace)

    def num(v):
        return f"{v:.17g}"

    lines = [TRACE_HEADER]
    for kind, t, x, xd, xt in trace:
        if kind == "fine":
            lines.append(",".join([num(t), num(x), "", num(xd), num(xt), "", ""]))
        else:
            lines.append(",".join([num(t), "", num(x), "", "", num(xd), num(xt)]))
    return lines


def cmd_trace(args) -> int:
    cfg = _config(args)
    out = _output_dir(args, cfg)
    _write(out / "trace.csv", trace_rows(cfg, args.units))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apmlmc", description="Asymptotic-preserving multilevel Monte Carlo")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_help="output directory"):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=lambda s: int(s, 0), help="64-bit master seed (overrides config)")
        p.add_argument("--output", help=output_help)

    common(sub.add_parser("run", help="adaptive MLMC estimate"))
    p = sub.add_parser("sweep", help="adaptive runs over a grid of dt1 values")
    common(p)
    p.add_argument("--dt1-grid", required=True, help="comma-separated dt1 values")
    p = sub.add_parser("tables", help="write run-length tables")
    common(p, "output file (or directory)")
    p.add_argument("--M", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dt", type=float, help="fine time step")
    p.add_argument("--lambda-max", type=int)
    common(sub.add_parser("analyze", help="closed-form variance report"))
    p = sub.add_parser("trace", help="trajectory of one coupled pair")
    common(p)
    p.add_argument("--units", type=float, default=1.0, help="simulated time")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "tables": cmd_tables, "analyze": cmd_analyze, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
