"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the fixtures shared by the WRML tests:
small grids with their covariance operators, a Gauss-linear inverse problem and a quick experiment configuration.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from wrml.assimilation.smoother import ObservationSet
from wrml.experiment.config import (
    ExperimentConfig,
    FlowSettings,
    GridConfig,
    LandscapeConfig,
    NoiseModelConfig,
    ObservationConfig,
    ReplicateConfig,
    SmootherConfig,
    SweepConfig,
)
from wrml.fields.grf import CovarianceOperator, CovarianceSpec, Grid2D, build_embedding
from wrml.simulation.flowsim import FlowConfig
from wrml.simulation.forward_models import LinearForwardModel


@dataclass
class LinearProblem:
    op: CovarianceOperator
    C: np.ndarray
    G: np.ndarray
    model: LinearForwardModel
    observations: ObservationSet
    x_true: np.ndarray

    @property
    def posterior_mean(self) -> np.ndarray:
        C, G, cd = self.C, self.G, self.observations.cd
        gain = C @ G.T @ np.linalg.inv(G @ C @ G.T + np.diag(cd))
        return gain @ self.observations.d_obs

    @property
    def posterior_cov(self) -> np.ndarray:
        C, G, cd = self.C, self.G, self.observations.cd
        gain = C @ G.T @ np.linalg.inv(G @ C @ G.T + np.diag(cd))
        return C - gain @ G @ C


@pytest.fixture
def covariance_spec():
    return CovarianceSpec(sigma=0.8, rho=1.1)


@pytest.fixture
def small_grid():
    """
    5 x 5 nodes with spacing 0.5.
    """
    return Grid2D.from_domain(2.0, 2.0, 5, 5)


@pytest.fixture
def small_operator(covariance_spec, small_grid):
    return build_embedding(covariance_spec, small_grid, strict=True)


@pytest.fixture
def coarse_operator(covariance_spec):
    """
    5 x 5 nodes with spacing 1.0; well conditioned enough for exact dense inverses.
    """
    return build_embedding(covariance_spec, Grid2D.from_domain(4.0, 4.0, 5, 5), strict=True)


@pytest.fixture
def desk_grid():
    return Grid2D.from_domain(2.0, 2.0, 21, 21)


@pytest.fixture
def desk_flow_config(desk_grid):
    return FlowConfig.default(grid=desk_grid)


@pytest.fixture
def linear_problem(coarse_operator):
    """
    A Gauss-linear problem with N_x = 25 and N_d = 10.
    """
    rng = np.random.default_rng(2024)
    C = np.array(coarse_operator.dense)
    G = rng.standard_normal((10, coarse_operator.n)) / 5.0
    x_true = np.linalg.cholesky(C) @ rng.standard_normal(coarse_operator.n)
    noise_std = 0.1
    d_obs = G @ x_true + noise_std * rng.standard_normal(10)
    return LinearProblem(
        op=coarse_operator,
        C=C,
        G=G,
        model=LinearForwardModel(G),
        observations=ObservationSet(d_obs=d_obs, noise_std=noise_std),
        x_true=x_true,
    )


@pytest.fixture
def tiny_config(tmp_path):
    """
    A quick end-to-end study with every stage enabled: a 13 x 13 grid flooded ten times faster than the desk
    default, so that water reaches the producers within the three observation times.
    """
    return ExperimentConfig(
        grid=GridConfig(nx_plus1=13, ny_plus1=13),
        flow=FlowSettings(total_rate=0.15),
        observations=ObservationConfig(interval=2.0, history_end=6.0, forecast_time=8.0),
        ensemble_size=8,
        smoother=SmootherConfig(max_iterations=2),
        noise_model=NoiseModelConfig(nu_grid=(3.0, 4.0)),
        sweep=SweepConfig(exponents=(0.0, 0.5, 1.0)),
        landscape=LandscapeConfig(grid_res=3),
        replicate=ReplicateConfig(enabled=True, n_ensembles=3, size=4),
        progress=False,
        output_dir=str(tmp_path / "run"),
    )
