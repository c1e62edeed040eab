"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module checks large ensembles on the Gauss-linear problem, where RML samples the posterior exactly.
One undamped hybrid step lands every member on its RML solution. A converged IES run reproduces
the analytic posterior mean and covariance, and both weight variants stay uniform.
"""

import numpy as np
import pytest

from wrml.assimilation.smoother import (
    LMSchedule,
    UpdateMode,
    ensemble_deviations,
    hybrid_update,
    init_ensemble,
    run_assimilation,
)
from wrml.assimilation.weights import hybrid_weights, ies_weights

N_E = 400
# Large enough that the sample covariance of exact posterior draws is within 15% in Frobenius norm.
N_E_CONVERGED = 1600


@pytest.fixture
def large_ensemble(linear_problem):
    ens = init_ensemble(linear_problem.op, np.zeros(25), linear_problem.observations, N_E, seed=11)
    return ens.with_members(ens.members, lam=0.0)


@pytest.fixture
def rml_samples(linear_problem, large_ensemble):
    G = linear_problem.G
    members = large_ensemble.members
    predictions = G @ members
    deviations = ensemble_deviations(members, predictions, members)
    return hybrid_update(large_ensemble, predictions, deviations, np.ones_like(members), linear_problem.op)


@pytest.fixture
def converged_ies(linear_problem):
    ens = init_ensemble(linear_problem.op, np.zeros(25), linear_problem.observations, N_E_CONVERGED, seed=11)
    converged, reports = run_assimilation(ens, linear_problem.model, UpdateMode.IES, LMSchedule(), linear_problem.op)
    assert converged.converged
    assert reports[-1].mean_misfit < reports[0].mean_misfit
    return converged


def test_single_hybrid_step_gives_rml_samples(linear_problem, large_ensemble, rml_samples):
    C, G, cd = linear_problem.C, linear_problem.G, linear_problem.observations.cd
    gain = C @ G.T @ np.linalg.inv(G @ C @ G.T + np.diag(cd))
    expected = large_ensemble.anchors + gain @ (large_ensemble.perturbed_obs - G @ large_ensemble.anchors)
    np.testing.assert_allclose(rml_samples.members, expected, atol=1e-8)


def test_converged_ies_mean_matches_posterior(linear_problem, converged_ies):
    standard_error = np.sqrt(np.diag(linear_problem.posterior_cov) / N_E_CONVERGED)
    deviation = np.abs(converged_ies.members.mean(axis=1) - linear_problem.posterior_mean)
    assert np.all(deviation <= 3.0 * standard_error)


def test_converged_ies_covariance_matches_posterior(linear_problem, converged_ies):
    expected = linear_problem.posterior_cov
    error = np.linalg.norm(np.cov(converged_ies.members) - expected) / np.linalg.norm(expected)
    assert error < 0.15


def test_converged_ies_weights_stay_uniform(linear_problem, converged_ies):
    ws = ies_weights(converged_ies, converged_ies.predictions, None, linear_problem.op)
    assert ws.ess >= 0.9 * N_E_CONVERGED


def test_hybrid_weights_stay_uniform(linear_problem, rml_samples):
    members = rml_samples.members
    predictions = linear_problem.G @ members
    ies = ies_weights(rml_samples, predictions, None, linear_problem.op)
    hybrid = hybrid_weights(
        rml_samples,
        predictions,
        ensemble_deviations(members, predictions, members),
        np.ones_like(members),
        linear_problem.op,
    )
    assert ies.ess >= 0.9 * N_E
    assert hybrid.ess >= 0.9 * N_E
