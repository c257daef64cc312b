"""Command line entry point: ``cafedsim <subcommand> [options]``.

Subcommands::

    simulate     train one strategy, write round CSV + metrics JSON per seed
    population   write a population spec and a sampled availability trace
    bounds       evaluate the error bounds for a config (one CSV row per seed)
    optimize-q   solve the weight optimisation problem from a JSON description
    sweep        learning-rate grid search, one CSV row per grid point

Failures print a JSON error record on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import availability as av
from ..bounds import (
    chi_square_divergence,
    client_values,
    eta_schedule,
    kkt_residuals,
    kkt_solution,
    theorem1_bound,
    theorem2_numerator,
    theorem3_bound,
    total_variation,
)
from ..build import build_run
from ..config import ExperimentConfig
from ..engine import biased_importance, run_experiment
from ..errors import CafedError
from . import output
from .analysis import problem_constants
from .metrics import average_metrics
from .presets import LR_LOCAL_GRID, LR_SERVER_GRID, PRESETS, best_learning_rates, learning_rate_grid

log = logging.getLogger("cafedsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _error_record(kind: str, message: str) -> str:
    return json.dumps({"error": kind, "message": message}, sort_keys=True)


# ---------------------------------------------------------------------------
# config assembly


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--strategy", choices=("cafed", "unbiased"))
    p.add_argument("--dataset", choices=("synthetic", "mnist"))
    p.add_argument("--mnist-path")
    p.add_argument("--seed", type=int, action="append", help="repeatable; default: config seeds")
    p.add_argument("--rounds", type=int)
    p.add_argument("--n-clients", type=int)
    p.add_argument("--lr-local", type=float)
    p.add_argument("--lr-server", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "inv_sqrt"))
    p.add_argument("--local-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--kappa-bar-sq", type=float)
    p.add_argument("--estimated-availability", action="store_true", help="CA-Fed uses its own estimates of pi and lambda")
    p.add_argument("--workers", type=int)


_FLAG_FIELDS = {
    "strategy": "strategy",
    "dataset": "dataset",
    "mnist_path": "mnist_path",
    "rounds": "rounds",
    "n_clients": "n_clients",
    "lr_local": "lr_local",
    "lr_server": "lr_server",
    "lr_schedule": "lr_schedule",
    "local_steps": "local_steps",
    "batch_size": "batch_size",
    "tau": "tau",
    "beta": "beta",
    "kappa_bar_sq": "kappa_bar_sq",
    "workers": "workers",
}


def config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_json(args.config.read_text())
    elif args.preset == "mnist":
        if not args.mnist_path:
            raise UsageError("--preset mnist needs --mnist-path")
        cfg = PRESETS["mnist"](args.mnist_path, args.strategy or "cafed")
    else:
        cfg = PRESETS["synthetic"](args.strategy or "cafed")
    changes = {f: getattr(args, a) for a, f in _FLAG_FIELDS.items() if getattr(args, a) is not None}
    if args.seed:
        changes["seeds"] = tuple(args.seed)
    if args.estimated_availability:
        changes["oracle_availability"] = False
    return cfg.with_(**changes).validate()


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    out = output.output_dir(args.output_dir)
    for seed in cfg.seeds:
        logs, metrics = run_experiment(cfg, seed)
        stem = f"{cfg.strategy}_seed{seed}"
        output.write_round_csv(out / f"rounds_{stem}.csv", logs, cfg, seed)
        output.write_json(
            out / f"metrics_{stem}.json", output.metrics_record(metrics, cfg, seed, not args.no_timestamp)
        )
        if args.estimates:
            output.write_estimates_jsonl(out / f"estimates_{stem}.jsonl", logs, cfg, seed)
        log.info(
            "seed %d: max %.4f  mean %.4f  std(2nd half) %.4f",
            seed,
            metrics.max_accuracy,
            metrics.mean_accuracy,
            metrics.std_second_half,
        )
    return 0


def cmd_population(args) -> int:
    spec = av.build_population(args.n, args.g, args.nu, args.eps, args.seed)
    out = output.output_dir(args.output_dir)
    h = {"seed": args.seed}
    output.write_json(out / f"population_seed{args.seed}.json", {**h, "population": spec.to_dict()})
    if args.rounds:
        trace = av.sample_trace(spec, args.rounds, args.seed)
        output.write_json(out / f"trace_seed{args.seed}.json", {**h, "trace": trace.to_dict()})
    log.info("population of %d clients written to %s", spec.n_clients, out)
    return 0


BOUND_COLUMNS = (
    "config_hash",
    "seed",
    "strategy_weights",
    "L",
    "mu",
    "kappa",
    "D",
    "G",
    "H",
    "Gamma",
    "Gamma_prime",
    "lambda_p",
    "chi2",
    "d_tv",
    "f_b_gap_w0",
    "theorem1",
    "theorem3",
    "theorem2",
)


def cmd_bounds(args) -> int:
    cfg = config_from_args(args)
    rows = []
    for seed in cfg.seeds:
        run = build_run(cfg, seed)
        fed, pop = run.federation, run.population
        q = fed.alpha / pop.pi_active
        consts, het = problem_constants(
            fed, run.model, pop, q=q, E=cfg.local_steps, batch_size=cfg.batch_size, seed=seed
        )
        p = biased_importance(pop.pi_active, q)
        vals = client_values(run.model, fed.train_sets())
        gap = max(0.0, float(p @ vals) - het.f_b_star)
        etas = eta_schedule(cfg.lr_local, cfg.rounds, cfg.lr_schedule)
        rows.append(
            {
                "config_hash": cfg.config_hash(),
                "seed": seed,
                "strategy_weights": "alpha/pi",
                **{k: consts.to_dict()[k] for k in ("L", "mu", "kappa", "D", "G", "H", "Gamma", "Gamma_prime", "lambda_p")},
                "chi2": chi_square_divergence(fed.alpha, p),
                "d_tv": total_variation(fed.alpha, p),
                "f_b_gap_w0": gap,
                "theorem1": theorem1_bound(consts, gap, fed.alpha, p),
                "theorem3": theorem3_bound(consts, gap, fed.alpha, p),
                "theorem2": theorem2_numerator(consts, q, pop.pi_active, etas, full=True),
            }
        )
    path = output.write_table_csv(output.output_dir(args.output_dir) / "bounds.csv", rows, BOUND_COLUMNS)
    log.info("bounds written to %s", path)
    return 0


def cmd_optimize_q(args) -> int:
    if args.problem is not None:
        prob = json.loads(Path(args.problem).read_text())
    else:
        prob = json.loads(sys.stdin.read())
    a = prob.get("sigma_diag", prob.get("a"))
    if a is None or "pi" not in prob or "B" not in prob or "Q" not in prob:
        raise UsageError("problem needs keys sigma_diag (or a), B, pi, Q")
    sol = kkt_solution(a, float(prob["B"]), prob["pi"], float(prob["Q"]))
    rec = {
        "q": sol.q.tolist(),
        "objective": sol.objective,
        "threshold": sol.threshold,
        "support": sol.support.tolist(),
        "residuals": kkt_residuals(a, float(prob["B"]), prob["pi"], float(prob["Q"]), sol.q),
    }
    sys.stdout.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


SWEEP_COLUMNS = ("config_hash", "strategy", "lr_local", "lr_server", "mean_accuracy", "max_accuracy", "std_second_half")


def _grid(text, default):
    if text is None:
        return default
    return tuple(float(v) for v in text.split(","))


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    rows = []
    grid = learning_rate_grid(_grid(args.lr_local_grid, LR_LOCAL_GRID), _grid(args.lr_server_grid, LR_SERVER_GRID))
    for lr, lr_s in grid:
        point = cfg.with_(lr_local=lr, lr_server=lr_s)
        runs = [run_experiment(point, s)[1] for s in point.seeds]
        m = average_metrics(runs)
        rows.append(
            {
                "config_hash": point.config_hash(),
                "strategy": point.strategy,
                "lr_local": lr,
                "lr_server": lr_s,
                "mean_accuracy": m.mean_accuracy,
                "max_accuracy": m.max_accuracy,
                "std_second_half": m.std_second_half,
            }
        )
        log.debug("lr=%g lr_s=%g -> %.4f", lr, lr_s, m.mean_accuracy)
    path = output.write_table_csv(output.output_dir(args.output_dir) / f"sweep_{cfg.strategy}.csv", rows, SWEEP_COLUMNS)
    best = best_learning_rates(rows)
    log.info("best (lr_local, lr_server) = %s; table in %s", best, path)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cafedsim", description=__doc__.splitlines()[0])
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true")
    verbosity.add_argument("--verbose", action="store_true")
    parser.add_argument("--output-dir", help=f"default: ${output.ENV_OUTPUT_DIR} or ./results")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run an experiment")
    _add_config_args(p)
    p.add_argument("--no-timestamp", action="store_true", help="omit generated_at from metrics JSON")
    p.add_argument("--estimates", action="store_true", help="also write estimator snapshots (JSONL)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("population", help="emit a population spec and trace")
    p.add_argument("--n", type=int, default=24)
    p.add_argument("--g", type=float, default=0.4)
    p.add_argument("--nu", type=float, default=0.9)
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=0)
    p.set_defaults(func=cmd_population)

    p = sub.add_parser("bounds", help="evaluate the error bounds")
    _add_config_args(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("optimize-q", help="solve the aggregation-weight problem")
    p.add_argument("--problem", help="JSON file with sigma_diag, B, pi, Q (default: stdin)")
    p.set_defaults(func=cmd_optimize_q)

    p = sub.add_parser("sweep", help="learning-rate grid search")
    _add_config_args(p)
    p.add_argument("--lr-local-grid", help="comma-separated values")
    p.add_argument("--lr-server-grid", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    for p in sub.choices.values():
        p.add_argument("--output-dir", default=argparse.SUPPRESS, help="same as the global option")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(_error_record("usage", str(exc)) + "\n")
        return 2
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(_error_record("usage", str(exc)) + "\n")
    except (CafedError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(_error_record(type(exc).__name__, str(exc)) + "\n")
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
