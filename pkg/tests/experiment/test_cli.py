"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the command-line tests.
"""

import os

import pytest

from wrml.experiment.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_NUMERICAL, EXIT_OK, EXIT_STAGE, exit_code, main, parse_args
from wrml.utils.exceptions import ConfigError, DegenerateEnsemble, StageError, WRMLError


def test_exit_codes():
    assert exit_code(ConfigError("bad")) == EXIT_CONFIG
    assert exit_code(StageError("truth", ConfigError("bad"))) == EXIT_CONFIG
    assert exit_code(StageError("weigh", DegenerateEnsemble("flat"))) == EXIT_NUMERICAL
    assert exit_code(StageError("prior", WRMLError("order"))) == EXIT_STAGE
    assert exit_code(RuntimeError("boom")) == EXIT_FAILURE


def test_parse_args():
    args = parse_args(["run-all", "--seed", "3", "--fresh"])
    assert args.command == "run-all"
    assert args.seed == 3 and args.fresh
    assert args.config is None
    with pytest.raises(SystemExit):
        parse_args(["calibrate"])


def test_missing_config(tmp_path):
    assert main(["truth", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_stage_out_of_order(tmp_path, tiny_config):
    config_path = str(tmp_path / "tiny.yaml")
    tiny_config.to_yaml(config_path)
    assert main(["weigh", "--config", config_path, "--log-level", "WARNING"]) == EXIT_STAGE


def test_truth_stage(tmp_path, tiny_config):
    config_path = str(tmp_path / "tiny.yaml")
    tiny_config.to_yaml(config_path)
    out = str(tmp_path / "cli-run")

    assert main(["truth", "--config", config_path, "--out", out, "--log-level", "WARNING"]) == EXIT_OK
    assert os.path.isfile(os.path.join(out, "truth", "x_true.field"))
    assert os.path.isfile(os.path.join(out, "manifest.yaml"))
    assert not os.path.exists(tiny_config.output_dir)
