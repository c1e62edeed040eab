"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module is the command-line entry point.
Every subcommand runs one stage into the run directory, resuming from the state saved by earlier stages;
run-all runs every enabled stage.
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 other stage failure, 1 anything else.
"""

import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

from wrml.experiment.config import ExperimentConfig
from wrml.experiment.runner import STAGES, ExperimentRunner
from wrml.utils.exceptions import ConfigError, NumericalError, StageError
from wrml.utils.functions import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_STAGE = 4


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="wrml", description="Weighted RML experiments with iterative ensemble smoothers"
    )
    parser.add_argument(
        "command",
        choices=list(STAGES) + ["run-all"],
        help="The stage to run, or run-all for every enabled stage",
    )
    parser.add_argument("--config", default=None, help="Experiment config YAML; the desk-scale defaults if omitted")
    parser.add_argument("--out", default=None, help="Run directory, overriding output_dir")
    parser.add_argument("--seed", type=int, default=None, help="Master seed, overriding master_seed")
    parser.add_argument("--log-level", default="INFO", help="Logging level")
    parser.add_argument("--fresh", action="store_true", help="Ignore the state saved by earlier stages")
    return parser.parse_args(argv)


def exit_code(error: Exception) -> int:
    cause = error.cause if isinstance(error, StageError) else error
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, StageError):
        return EXIT_STAGE
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig.desk()
        cfg = cfg.with_overrides(master_seed=args.seed, output_dir=args.out)
        if logging.getLogger().getEffectiveLevel() > logging.INFO:
            cfg = dataclasses.replace(cfg, progress=False)
        runner = ExperimentRunner(cfg, resume=not args.fresh)
        if args.command == "run-all":
            runner.run_all()
        else:
            runner.run_stage(args.command)
    except Exception as e:
        code = exit_code(e)
        logger.error("{} (exit code {})".format(e, code))
        return code
    print("Run directory: {}".format(cfg.output_dir))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
