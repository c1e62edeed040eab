"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the Gaussian random field tests:
FFT covariance products against the dense matrix, prior sampling statistics and embedding failures.
"""

import pickle

import numpy as np
import pytest

from wrml.fields.grf import (
    CovarianceSpec,
    Grid2D,
    apply_cov,
    build_embedding,
    covariance_value,
    dense_covariance,
    sample_prior,
)
from wrml.utils.exceptions import DimensionMismatch, NonPositiveEmbedding


def test_covariance_value(covariance_spec):
    assert covariance_value(covariance_spec, 0.0, 0.0) == pytest.approx(0.64)
    assert covariance_value(covariance_spec, 1.1, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert covariance_value(covariance_spec, 2.0, 0.0) < 0


def test_grid_layout(small_grid):
    xs, ys = small_grid.coordinates()
    assert small_grid.n_nodes == 25
    assert small_grid.shape == (5, 5)
    assert xs[1] == pytest.approx(0.5) and ys[1] == 0.0
    assert ys[5] == pytest.approx(0.5) and xs[5] == 0.0
    assert small_grid.nearest_node(2.0, 2.0) == 24


@pytest.mark.parametrize("nodes", [(4, 4), (7, 5), (16, 16)])
def test_apply_cov_matches_dense(covariance_spec, nodes):
    grid = Grid2D.from_domain(2.0, 2.0, *nodes)
    op = build_embedding(covariance_spec, grid)
    dense = dense_covariance(covariance_spec, grid)
    v = np.random.default_rng(0).standard_normal((op.n, 100))

    product = apply_cov(op, v)
    error = np.abs(product - dense @ v).max(axis=0)
    assert np.all(error <= 1e-10 * np.abs(v).max(axis=0))


def test_apply_cov_vector_shape(small_operator):
    v = np.ones(small_operator.n)
    product = apply_cov(small_operator, v)
    assert product.shape == (small_operator.n,)
    np.testing.assert_allclose(product, small_operator.dense @ v, atol=1e-12)


def test_apply_cov_dimension_mismatch(small_operator):
    with pytest.raises(DimensionMismatch):
        apply_cov(small_operator, np.ones(small_operator.n + 1))


def test_apply_cov_is_linear_and_symmetric(small_operator):
    rng = np.random.default_rng(4)
    u, v = rng.standard_normal((2, small_operator.n))
    Cu, Cv = apply_cov(small_operator, u), apply_cov(small_operator, v)
    assert u @ Cv == pytest.approx(Cu @ v, abs=1e-10)
    np.testing.assert_allclose(apply_cov(small_operator, 2.0 * u - 3.0 * v), 2.0 * Cu - 3.0 * Cv, atol=1e-12)
    np.testing.assert_array_equal(apply_cov(small_operator, np.zeros(small_operator.n)), np.zeros(small_operator.n))


def test_sample_prior_is_deterministic(small_operator):
    first = sample_prior(small_operator, np.zeros(small_operator.n), 7, 5)
    second = sample_prior(small_operator, np.zeros(small_operator.n), 7, 5)
    other = sample_prior(small_operator, np.zeros(small_operator.n), 8, 5)
    assert len(first) == 5
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)
    assert not np.allclose(first[0], other[0])


def test_sample_prior_covariance(small_operator):
    mean = np.full(small_operator.n, 0.3)
    samples = np.column_stack(sample_prior(small_operator, mean, 11, 100_000))
    empirical = np.cov(samples)
    assert np.abs(empirical - small_operator.dense).max() < 0.05
    assert np.abs(samples.mean(axis=1) - mean).max() < 0.02


def test_sample_prior_zero_count(small_operator):
    assert sample_prior(small_operator, np.zeros(small_operator.n), 1, 0) == []


def test_sample_prior_vanishing_variance(small_grid):
    op = build_embedding(CovarianceSpec(sigma=1e-12, rho=1.1), small_grid, strict=True)
    mean = np.linspace(-1.0, 1.0, op.n)
    for sample in sample_prior(op, mean, 3, 4):
        np.testing.assert_allclose(sample, mean, rtol=0.0, atol=1e-6)


def test_indefinite_embedding(covariance_spec):
    grid = Grid2D.from_domain(0.2, 0.2, 5, 5)
    with pytest.raises(NonPositiveEmbedding) as info:
        build_embedding(covariance_spec, grid, max_doublings=0, strict=True)
    assert info.value.min_eigenvalue < 0

    op = build_embedding(covariance_spec, grid, max_doublings=0, strict=False)
    assert not op.is_nonnegative
    with pytest.raises(NonPositiveEmbedding):
        sample_prior(op, np.zeros(op.n), 0, 1)
    np.testing.assert_allclose(apply_cov(op, np.ones(op.n)), op.dense @ np.ones(op.n), atol=1e-12)


def test_operator_pickle_drops_dense(small_operator):
    assert small_operator.dense is not None
    restored = pickle.loads(pickle.dumps(small_operator))
    assert restored._dense is None
    np.testing.assert_array_equal(restored.embedded_spectrum, small_operator.embedded_spectrum)
    np.testing.assert_allclose(restored.dense, small_operator.dense)


def test_invalid_spec():
    with pytest.raises(ValueError):
        CovarianceSpec(sigma=0.0, rho=1.0)
