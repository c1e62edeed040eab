"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the dense linear algebra tests.
"""

import numpy as np
import pytest

from wrml.assimilation.linalg import (
    PrecisionPolicy,
    PriorPrecision,
    centered_deviations,
    factor_logdet,
    spd_factor,
    spd_solve,
    symmetric_pinv,
    truncated_pinv,
)
from wrml.utils.exceptions import LinearSolveFailure, NonFiniteInput, RankDeficient


@pytest.fixture
def rng():
    return np.random.default_rng(17)


def test_truncated_pinv_full_rank(rng):
    a = rng.standard_normal((6, 4))
    pinv, rank = truncated_pinv(a, 1e-8)
    assert rank == 4
    np.testing.assert_allclose(pinv, np.linalg.pinv(a), atol=1e-10)


def test_truncated_pinv_rank_deficient(rng):
    a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    pinv, rank = truncated_pinv(a, 1e-8)
    assert rank == 2
    np.testing.assert_allclose(a @ pinv @ a, a, atol=1e-10)


def test_truncated_pinv_zero():
    pinv, rank = truncated_pinv(np.zeros((3, 2)), 1e-8)
    assert rank == 0
    assert pinv.shape == (2, 3)


def test_symmetric_pinv_inverts_spd(rng):
    b = rng.standard_normal((5, 5))
    c = b @ b.T + np.eye(5)
    np.testing.assert_allclose(symmetric_pinv(c, 1e-12) @ c, np.eye(5), atol=1e-10)


def test_spd_solve(rng):
    b = rng.standard_normal((4, 4))
    a = b @ b.T + 4 * np.eye(4)
    rhs = rng.standard_normal((4, 2))
    np.testing.assert_allclose(a @ spd_solve(a, rhs), rhs, atol=1e-10)


def test_spd_factor_jitter_rescues_semidefinite():
    factor = spd_factor(np.ones((3, 3)))
    assert np.all(np.isfinite(factor[0]))


def test_spd_factor_failures():
    with pytest.raises(LinearSolveFailure):
        spd_factor(-np.eye(3))
    with pytest.raises(NonFiniteInput):
        spd_factor(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_factor_logdet(rng):
    b = rng.standard_normal((5, 5))
    a = b @ b.T + np.eye(5)
    assert factor_logdet(spd_factor(a)) == pytest.approx(np.linalg.slogdet(a)[1])


def test_centered_deviations(rng):
    a = rng.standard_normal((3, 8))
    d = centered_deviations(a)
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(d @ d.T, np.cov(a), atol=1e-12)


def test_default_policy_on_small_grid(small_operator):
    assert PriorPrecision(small_operator).policy == PrecisionPolicy.PRIOR


def test_prior_coefficients(coarse_operator, rng):
    precision = PriorPrecision(coarse_operator, PrecisionPolicy.PRIOR)
    dX = rng.standard_normal((coarse_operator.n, 6))
    r = rng.standard_normal(coarse_operator.n)
    expected = dX.T @ np.linalg.solve(coarse_operator.dense, r)
    np.testing.assert_allclose(precision.coefficients(dX, r), expected, rtol=1e-6, atol=1e-8)


def test_ensemble_coefficients_project_onto_subspace(coarse_operator, rng):
    precision = PriorPrecision(coarse_operator, PrecisionPolicy.ENSEMBLE)
    assert precision.prior_pinv is None
    dX = rng.standard_normal((coarse_operator.n, 6))
    r = dX @ rng.standard_normal(6)
    np.testing.assert_allclose(dX @ precision.coefficients(dX, r), r, atol=1e-10)


def test_ensemble_coefficients_need_spread(coarse_operator):
    precision = PriorPrecision(coarse_operator, PrecisionPolicy.ENSEMBLE)
    with pytest.raises(RankDeficient):
        precision.coefficients(np.zeros((coarse_operator.n, 4)), np.ones(coarse_operator.n))
