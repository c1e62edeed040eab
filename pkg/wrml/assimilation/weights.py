"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module computes importance weights of converged RML ensembles.
With V = C_d + G C_x G^T, eta = g(m) - d_obs - G (x - x_pr) and J = |I + C_x G^T C_d^-1 G|,
the log-weight of a sample is 1/2 log|V| - 1/2 eta^T V^-1 eta - log J.
J is always evaluated through the N_d-sized determinant |I + C_d^-1 G C_x G^T|.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from wrml.assimilation.linalg import (
    PrecisionPolicy,
    PriorPrecision,
    factor_logdet,
    spd_factor,
)
from wrml.assimilation.smoother import (
    Ensemble,
    EnsembleDeviations,
    ensemble_deviations,
    hybrid_gain_factors,
)
from wrml.fields.grf import CovarianceOperator, apply_cov
from wrml.utils.exceptions import DimensionMismatch, NonFiniteInput, UnnormalizedWeights

logger = logging.getLogger(__name__)


class WeightVariant(Enum):
    IES = "ies"
    HYBRID = "hybrid"


@dataclass
class WeightSet:
    log_weights: np.ndarray
    weights: np.ndarray
    ess: float
    variant: WeightVariant
    exponent: Optional[float] = None

    @classmethod
    def from_log_weights(
        cls, log_weights: np.ndarray, variant: WeightVariant, exponent: Optional[float] = None
    ) -> "WeightSet":
        """
        Normalize with log-sum-exp, so that adding a constant to every log-weight changes nothing.
        """
        log_weights = np.asarray(log_weights, dtype=float)
        if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf) or np.all(log_weights == -np.inf):
            raise NonFiniteInput("Log-weights must be finite or -inf, and not all -inf.")
        weights = np.exp(log_weights - logsumexp(log_weights))
        weights = weights / weights.sum()
        return cls(
            log_weights=log_weights,
            weights=weights,
            ess=effective_sample_size(weights),
            variant=variant,
            exponent=exponent,
        )

    @property
    def size(self) -> int:
        return self.weights.size


@dataclass
class WeightTerms:
    V: np.ndarray
    eta: np.ndarray
    logdetJ: float
    factor: Optional[tuple] = None

    @property
    def logdetV(self) -> float:
        return factor_logdet(self.factor)

    def quadratic(self) -> float:
        return float(self.eta @ linalg.cho_solve(self.factor, self.eta))

    def log_weight(self) -> float:
        return 0.5 * self.logdetV - 0.5 * self.quadratic() - self.logdetJ


def effective_sample_size(weights: np.ndarray) -> float:
    """
    Kong's effective sample size 1 / sum(w^2) of normalized weights.

    Parameters
    ----------
    weights : np.ndarray
        Weights summing to one.

    Returns
    -------
    float
        A value between 1 and the number of weights.
    """
    weights = np.asarray(weights, dtype=float)
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-9:
        raise UnnormalizedWeights("Weights sum to {:.12g} instead of 1.".format(total))
    return float(1.0 / np.sum(weights ** 2))


def weight_terms(
    x: np.ndarray,
    x_pr: np.ndarray,
    g_of_m: np.ndarray,
    d_obs: np.ndarray,
    G_action: Callable[[np.ndarray], np.ndarray],
    CxGt: np.ndarray,
    C_d: np.ndarray,
) -> WeightTerms:
    """
    Evaluate the terms of the weight of one sample.

    Parameters
    ----------
    x : np.ndarray
        The sample.
    x_pr : np.ndarray
        The prior mean.
    g_of_m : np.ndarray
        The predicted data of the sample.
    d_obs : np.ndarray
        The observed data.
    G_action : Callable[[np.ndarray], np.ndarray]
        Applies the sensitivity G to a vector or to the columns of a matrix.
    CxGt : np.ndarray
        The N_x x N_d product C_x G^T.
    C_d : np.ndarray
        The diagonal of the observation-noise covariance.

    Returns
    -------
    WeightTerms
        V, eta, log J and the Cholesky factor of V.
    """
    C_d = np.asarray(C_d, dtype=float)
    if CxGt.shape != (x.size, d_obs.size) or g_of_m.shape != d_obs.shape or C_d.shape != d_obs.shape:
        raise DimensionMismatch(
            "Inconsistent shapes: x {}, d_obs {}, g {}, C_x G^T {}, C_d {}.".format(
                x.shape, d_obs.shape, g_of_m.shape, CxGt.shape, C_d.shape
            )
        )
    for name, value in (("x", x), ("g", g_of_m), ("C_x G^T", CxGt)):
        if not np.all(np.isfinite(value)):
            raise NonFiniteInput("Weight input <{}> contains non-finite values.".format(name))

    gcgt = G_action(CxGt)
    gcgt = 0.5 * (gcgt + gcgt.T)
    V = np.diag(C_d) + gcgt
    eta = g_of_m - d_obs - G_action(x - x_pr)
    factor = spd_factor(V)
    logdetJ = factor_logdet(factor) - float(np.sum(np.log(C_d)))
    return WeightTerms(V=V, eta=eta, logdetJ=logdetJ, factor=factor)


def ies_weights(
    ens: Ensemble,
    predictions: np.ndarray,
    deviations: Optional[EnsembleDeviations],
    op: CovarianceOperator,
    C_d: Optional[np.ndarray] = None,
    precision: Optional[PriorPrecision] = None,
    full_formula: bool = False,
) -> WeightSet:
    """
    Weights of a standard IES ensemble. All members share one estimate of G with
    C_x G^T ~ dX dD^T and G C_x G^T ~ dD dD^T, so V and J are common and only eta varies.

    Parameters
    ----------
    ens : Ensemble
        The converged ensemble.
    predictions : np.ndarray
        The N_d x N_e predictions of the members.
    deviations : Optional[EnsembleDeviations]
        Deviations of the members and predictions; computed if missing.
    op : CovarianceOperator
        The prior covariance.
    C_d : Optional[np.ndarray]
        The diagonal of C_d, taken from the ensemble observations if missing.
    precision : Optional[PriorPrecision]
        How G ~ dD dX^T C_x^-1 is formed; the ensemble pseudo-inverse by default.
    full_formula : bool
        Whether to keep the common 1/2 log|V| - log J terms.

    Returns
    -------
    WeightSet
        The IES weights.
    """
    C_d = ens.observations.cd if C_d is None else np.asarray(C_d, dtype=float)
    if deviations is None:
        deviations = ensemble_deviations(ens.members, predictions)
    if precision is None:
        precision = PriorPrecision(op, PrecisionPolicy.ENSEMBLE)
    dX, dD = deviations.dX, deviations.dD

    V = np.diag(C_d) + dD @ dD.T
    factor = spd_factor(V)
    residuals = ens.members - ens.prior_mean[:, None]
    eta = predictions - ens.observations.d_obs[:, None] - dD @ precision.coefficients(dX, residuals)
    log_weights = -0.5 * np.sum(eta * linalg.cho_solve(factor, eta), axis=0)

    if full_formula:
        logdetV = factor_logdet(factor)
        logdetJ = logdetV - float(np.sum(np.log(C_d)))
        log_weights = log_weights + 0.5 * logdetV - logdetJ

    return WeightSet.from_log_weights(log_weights, WeightVariant.IES)


def hybrid_weights(
    ens: Ensemble,
    predictions: np.ndarray,
    dM: EnsembleDeviations,
    Mx_diag: np.ndarray,
    op: CovarianceOperator,
    C_d: Optional[np.ndarray] = None,
) -> WeightSet:
    """
    Weights of a hybrid IES ensemble. Member i uses G_i = dD dM^+ diag(M_x(x_i)), so V and J differ per member
    and the full log-weight is kept.

    Parameters
    ----------
    ens : Ensemble
        The converged ensemble.
    predictions : np.ndarray
        The N_d x N_e predictions of the members.
    dM : EnsembleDeviations
        Deviations with the transformed-field deviations filled in.
    Mx_diag : np.ndarray
        The N_x x N_e transform sensitivities of the members.
    op : CovarianceOperator
        The prior covariance.
    C_d : Optional[np.ndarray]
        The diagonal of C_d, taken from the ensemble observations if missing.

    Returns
    -------
    WeightSet
        The hybrid weights.
    """
    if dM.dM is None:
        raise ValueError("Hybrid weights need the deviations of the transformed fields.")
    C_d = ens.observations.cd if C_d is None else np.asarray(C_d, dtype=float)
    U, P = hybrid_gain_factors(dM.dM, dM.dD)
    d_obs = ens.observations.d_obs

    log_weights = np.empty(ens.size)
    for i in range(ens.size):
        B = Mx_diag[:, i, None] * U
        CxGt = apply_cov(op, B) @ P
        terms = weight_terms(
            x=ens.members[:, i],
            x_pr=ens.prior_mean,
            g_of_m=predictions[:, i],
            d_obs=d_obs,
            G_action=lambda v, B=B: P.T @ (B.T @ v),
            CxGt=CxGt,
            C_d=C_d,
        )
        log_weights[i] = terms.log_weight()

    return WeightSet.from_log_weights(log_weights, WeightVariant.HYBRID)
