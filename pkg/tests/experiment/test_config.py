"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the experiment configuration tests.
"""

import dataclasses

import pytest

from wrml.assimilation.linalg import PrecisionPolicy
from wrml.assimilation.smoother import UpdateMode
from wrml.experiment.config import (
    STREAM_NAMES,
    ExperimentConfig,
    NoiseModelConfig,
    ObservationConfig,
)
from wrml.fields.transforms import TransformKind
from wrml.utils.exceptions import ConfigError


def test_desk_defaults():
    cfg = ExperimentConfig.desk()
    assert cfg.grid.nx_plus1 == 21 and cfg.grid.ny_plus1 == 21
    assert cfg.ensemble_size == 100
    assert cfg.transform_kind == TransformKind.NON_MONOTONIC
    assert cfg.update_modes == (UpdateMode.HYBRID, UpdateMode.IES)
    assert cfg.precision_policy == PrecisionPolicy.ENSEMBLE
    assert cfg.covariance.sigma == 0.8 and cfg.covariance.rho == 1.1
    assert len(cfg.sweep.exponents) == 21
    assert cfg.sweep.exponents[0] == 0.0 and cfg.sweep.exponents[-1] == 1.0


def test_full_scale_preset():
    cfg = ExperimentConfig.full_scale()
    assert cfg.grid.nx_plus1 == 41
    assert cfg.ensemble_size == 200
    assert cfg.replicate.enabled
    assert len(cfg.observations.history_times) * 9 == 540


def test_history_times():
    times = ObservationConfig().history_times
    assert len(times) == 60
    assert times[0] == 1.0 and times[-1] == 60.0
    assert ObservationConfig(interval=0.5, history_end=2.0, forecast_time=3.0).history_times == (0.5, 1.0, 1.5, 2.0)


def test_flow_config():
    flow = ExperimentConfig.desk().flow_config()
    assert flow.t_end == 70.0
    assert flow.grid.n_nodes == 441
    assert len(flow.wells.producer_cells) == 9


def test_empty_dict_is_desk():
    assert ExperimentConfig.from_dict({}) == ExperimentConfig.desk()
    assert ExperimentConfig.from_dict(None) == ExperimentConfig.desk()


def test_yaml_round_trip(tmp_path, tiny_config):
    config_path = str(tmp_path / "nested" / "config.yaml")
    tiny_config.to_yaml(config_path)
    assert ExperimentConfig.from_yaml(config_path) == tiny_config


def test_partial_yaml(tmp_path):
    config_path = tmp_path / "config.yaml"
    config_path.write_text("ensemble_size: 20\ngrid:\n  nx_plus1: 11\nmodes: [ies]\n", encoding="utf-8")
    cfg = ExperimentConfig.from_yaml(str(config_path))
    assert cfg.ensemble_size == 20
    assert cfg.grid.nx_plus1 == 11 and cfg.grid.ny_plus1 == 21
    assert cfg.modes == ("ies",)


@pytest.mark.parametrize(
    "values",
    [
        {"ensemble_siz": 10},
        {"grid": {"nx": 11}},
        {"grid": 5},
        {"ensemble_size": 1},
        {"transform": "cubic"},
        {"modes": ["enkf"]},
        {"observations": {"history_end": 60.0, "forecast_time": 50.0}},
        {"weights": {"precision": "exact"}},
        {"replicate": {"n_ensembles": 2}},
        {"landscape": {"grid_res": 2}},
        {"sweep": {"exponents": [0.0, 1.5]}},
        {"noise_model": {"sigma_o": -1.0}},
        {"grid": {"nx_plus1": 65, "ny_plus1": 65}},
    ],
)
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(values)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(str(tmp_path / "missing.yaml"))

    broken = tmp_path / "broken.yaml"
    broken.write_text("grid: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(str(broken))

    listing = tmp_path / "listing.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(str(listing))


def test_config_hash_ignores_runtime_keys():
    cfg = ExperimentConfig.desk()
    runtime = dataclasses.replace(cfg, n_jobs=4, progress=False, output_dir="elsewhere")
    assert cfg.config_hash() == runtime.config_hash()
    assert cfg.config_hash() != cfg.with_overrides(master_seed=1).config_hash()
    assert len(cfg.config_hash()) == 64


def test_with_overrides():
    cfg = ExperimentConfig.desk().with_overrides(master_seed=7, output_dir="runs/seven")
    assert cfg.master_seed == 7 and cfg.output_dir == "runs/seven"
    assert ExperimentConfig.desk().with_overrides() == ExperimentConfig.desk()


def test_seeds():
    cfg = ExperimentConfig.desk()
    seeds = cfg.seeds()
    assert sorted(seeds) == sorted(STREAM_NAMES)
    assert len(set(seeds.values())) == len(STREAM_NAMES)
    assert seeds == ExperimentConfig.desk().seeds()
    assert seeds["prior"] != cfg.with_overrides(master_seed=1).seed("prior")


def test_noise_defaults():
    assert ExperimentConfig.desk().noise_defaults() == (95.3, 13.0, 3.0)
    monotonic = ExperimentConfig(transform="monotonic", noise_model=NoiseModelConfig(sigma_o=10.0))
    assert monotonic.noise_defaults() == (10.0, 6.0, 4.0)


def test_large_grids_need_the_landscape_disabled():
    cfg = ExperimentConfig.from_dict({"grid": {"nx_plus1": 65, "ny_plus1": 65}, "landscape": {"enabled": False}})
    assert cfg.grid.to_grid().n_nodes == 65 * 65
    assert not cfg.landscape.enabled
