"""Command-line entry point.

Subcommands mirror the experiment modes; flags override the config file.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import sys

import torch

from .config import POPULATIONS, RunConfig
from .env import AccountingError
from .io import DataError
from .otcalib import OTSolverError
from .policy import NumericalError
from .traits import ConfigError
from .experiment import run_experiment


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="hetmarket",
                     description="Artificial market simulations with "
                                 "heterogeneous learning agents")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, help_text in (
            ("sim", "run seeded market simulations and export logs/bars"),
            ("train", "train the shared policy and save a checkpoint"),
            ("calibrate", "grid-search trait priors against reference data"),
            ("analyze", "stylized-fact and OT report for a population"),
            ("ablate", "train and score trait-heterogeneity ablations")):
        p = sub.add_parser(mode, help=help_text)
        p.add_argument("--config", help="YAML run configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--population", choices=POPULATIONS)
        p.add_argument("--jobs", type=int)
        p.add_argument("--checkpoint", help="policy checkpoint (.npz)")
        p.add_argument("--bars", help="bar-panel CSV (analyze/calibrate input)")
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    try:
        args = build_parser().parse_args(argv)
        overrides = {key: getattr(args, key)
                     for key in ("seed", "episodes", "trials", "population",
                                 "jobs", "checkpoint", "bars")}
        cfg = RunConfig.from_file(args.config, overrides)
        out = run_experiment(cfg, args.mode, args.out)
        print(f"{args.mode}: artifacts written to {out}", file=sys.stderr)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, OTSolverError, AccountingError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
