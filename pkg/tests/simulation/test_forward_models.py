"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the forward model tests.
"""

import numpy as np
import pytest

from wrml.simulation.flowsim import simulate
from wrml.simulation.forward_models import FlowForwardModel, LinearForwardModel
from wrml.utils.exceptions import DimensionMismatch


@pytest.fixture
def flow_model(desk_flow_config):
    return FlowForwardModel(desk_flow_config, [1.0, 2.0])


@pytest.fixture
def log_permeabilities(desk_grid):
    return 0.3 * np.random.default_rng(9).standard_normal((desk_grid.n_nodes, 3))


def test_linear_model():
    G = np.arange(6.0).reshape(2, 3)
    model = LinearForwardModel(G, offset=np.array([1.0, -1.0]))
    M = np.eye(3)
    assert model.n_data == 2
    np.testing.assert_allclose(model.predict(np.ones(3)), [4.0, 11.0])
    np.testing.assert_allclose(model.predict_ensemble(M), G + np.array([[1.0], [-1.0]]))


def test_linear_model_offset_shape():
    with pytest.raises(DimensionMismatch):
        LinearForwardModel(np.ones((2, 3)), offset=np.ones(3))


def test_flow_model_flattens_time_major(flow_model, desk_flow_config, log_permeabilities):
    m = log_permeabilities[:, 0]
    prediction = flow_model.predict(m)
    water_cut = simulate(np.exp(m), desk_flow_config, [1.0, 2.0])
    assert flow_model.n_data == 18
    np.testing.assert_array_equal(prediction[:9], water_cut[0])
    np.testing.assert_array_equal(prediction[9:], water_cut[1])


def test_parallel_predictions_match_serial(flow_model, log_permeabilities):
    serial = flow_model.predict_ensemble(log_permeabilities, n_jobs=1)
    parallel = flow_model.predict_ensemble(log_permeabilities, n_jobs=2)
    assert serial.shape == (18, 3)
    np.testing.assert_array_equal(serial, parallel)
