#!/usr/bin/env python3
"""
Command-line entry point.

  python cli.py simulate --config exp.json --out mse.csv [--seed S] [--force] [--xlsx mse.xlsx]
  python cli.py batch-sweep --config exp.json --b-grid 0,1,2,4,8,16 --out batch.csv
  python cli.py oracle --model chain.json --out report.json

Exit codes: 0 success, 2 configuration error, 3 model certification failure.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from config import LOG_LEVEL
from errors import EXIT_OK, SweepCVError
from harness import batch_sweep, load_config, run_experiment
from models import load_finite_model
from oracle import certify

logger = logging.getLogger("sweepcv.cli")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _parse_b_grid(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"B grid must be comma-separated integers, got {text!r}")


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    return config


def _write_report(report, args) -> None:
    _ensure_parent(args.out)
    report.to_csv(args.out)
    logger.info("wrote %d rows to %s", len(report.frame), args.out)
    if args.xlsx:
        _ensure_parent(args.xlsx)
        report.to_excel(args.xlsx)
        logger.info("wrote Excel copy to %s", args.xlsx)


def cmd_simulate(args) -> int:
    _write_report(run_experiment(_load(args), force=args.force), args)
    return EXIT_OK


def cmd_batch_sweep(args) -> int:
    _write_report(batch_sweep(_load(args), args.b_grid, force=args.force), args)
    return EXIT_OK


def cmd_oracle(args) -> int:
    model = load_finite_model(args.model)
    report = certify(model)
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    logger.info("oracle report for %s written to %s", model.name, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweepcv",
                                     description="Control variates for deterministic-sweep MCMC")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p):
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", required=True, help="CSV report path")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--force", action="store_true", help="skip the kernel-application budget guard")
        p.add_argument("--xlsx", default=None, help="also write an Excel copy")

    sim = sub.add_parser("simulate", help="run an MSE study")
    experiment_args(sim)
    sim.set_defaults(func=cmd_simulate)

    bs = sub.add_parser("batch-sweep", help="MSE of batch-means weights across lags")
    experiment_args(bs)
    bs.add_argument("--b-grid", type=_parse_b_grid, default=[0, 1, 2, 4, 8, 16])
    bs.set_defaults(func=cmd_batch_sweep)

    orc = sub.add_parser("oracle", help="exact variances of a finite chain")
    orc.add_argument("--model", required=True, help="finite model JSON")
    orc.add_argument("--out", required=True, help="report JSON path")
    orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SweepCVError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
