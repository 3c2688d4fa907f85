from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from app.core.config import RunConfig, load_run_config, settings
from app.core.errors import CalSensError
from app.core.logging import setup_logging
from app.services.experiments import EXPERIMENTS, get_experiment
from app.utils import exports
from app.utils.validators import parse_bootstrap_spec, parse_gamma_grid, parse_overrides
from app.worker.pipeline import run_analysis, run_robustness

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calsens", description="Calibrated sensitivity analysis for the ATE")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("analyze", "estimate bounds, confounder table and robustness value"), ("robustness", "robustness value only")):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", required=True, help="INI run file")
        command.add_argument("--model", choices=["effect-diff", "odds", "outcome"])
        command.add_argument("--gamma-grid", help="a:b:step or comma list")
        command.add_argument("--alpha", type=float)
        command.add_argument("--folds", type=int)
        command.add_argument("--seed", type=int)
        command.add_argument("--epsilon", type=float)
        command.add_argument("--bootstrap", help="B,m")
        command.add_argument("--variance", choices=["influence", "bootstrap"])
        command.add_argument("--threads", type=int)
        command.add_argument("--out", help="output directory")

    simulate = commands.add_parser("simulate", help="run a Monte Carlo experiment")
    simulate.add_argument("experiment", help=f"one of: {', '.join(sorted(EXPERIMENTS))}")
    simulate.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="experiment parameter")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--threads", type=int)
    simulate.add_argument("--out", help="output directory")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "model.model": args.model,
        "model.gamma_grid": parse_gamma_grid(args.gamma_grid) if args.gamma_grid else None,
        "inference.alpha": args.alpha,
        "inference.folds": args.folds,
        "inference.seed": args.seed,
        "nuisance.epsilon": args.epsilon,
        "inference.bootstrap": parse_bootstrap_spec(args.bootstrap) if args.bootstrap else None,
        "inference.variance": args.variance,
        "inference.threads": args.threads,
        "output_dir": args.out,
    }


def _config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, _overrides(args))


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _config(args)
    out_dir = Path(config.output_dir)
    ctx = run_analysis(config, out_dir)
    print(f"psi={ctx.curve.psi:.6g} M={ctx.measured.value:.6g} ({ctx.measured.maximizer_label})")
    if ctx.robustness is not None:
        print(f"Gamma0={ctx.robustness.gamma0:.6g} [{ctx.robustness.lower_ci:.6g}, {ctx.robustness.upper_ci:.6g}]")
    print(f"Artifacts written to {out_dir}")
    return 0


def cmd_robustness(args: argparse.Namespace) -> int:
    config = _config(args)
    value = run_robustness(config, Path(config.output_dir))
    print(
        f"Gamma0={value.gamma0:.6g} se={value.se:.6g} CI=[{value.lower_ci:.6g}, {value.upper_ci:.6g}] "
        f"method={value.method} residual={value.residual:.3g}"
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    experiment = get_experiment(args.experiment)
    overrides = parse_overrides(args.set)
    seed = settings.seed if args.seed is None else args.seed
    threads = settings.threads if args.threads is None else args.threads
    result = experiment.run(overrides, seed=seed, threads=threads)

    payload = json.dumps({"experiment": experiment.name, "overrides": overrides, "seed": seed}, sort_keys=True, default=str)
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
    out_dir = Path(args.out or settings.output_dir) / experiment.name
    exports.write_csv(result.replicates, out_dir / "replicates.csv", digest, seed)
    exports.write_json({"config_hash": digest, "seed": seed, **result.record()}, out_dir / "summary.json")

    status = "PASS" if result.passed else "FAIL"
    flag = " (underpowered)" if result.underpowered else ""
    print(f"{experiment.name}: {status}{flag}")
    for check, ok in result.checks.items():
        print(f"  {check}: {'ok' if ok else 'failed'}")
    return 0


COMMANDS = {"analyze": cmd_analyze, "robustness": cmd_robustness, "simulate": cmd_simulate}


def _error_dir(args: argparse.Namespace) -> Path | None:
    if getattr(args, "out", None):
        return Path(args.out)
    if getattr(args, "config", None):
        try:
            return Path(load_run_config(args.config).output_dir)
        except CalSensError:
            return None
    return None


def main(argv: Sequence[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CalSensError as exc:
        record = exc.to_record()
        logger.error("Command failed", extra={"command": args.command, "error": record["error"]})
        sys.stderr.write(exports.dumps(record))
        out_dir = _error_dir(args)
        if out_dir is not None:
            exports.write_json(record, out_dir / "error.json")
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
