"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module holds the dense linear algebra shared by the smoothers and the weights:
truncated pseudo-inverses, the prior-precision policy and jittered symmetric positive-definite solves.
"""

import logging
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from wrml.fields.grf import CovarianceOperator
from wrml.utils.constants import (
    DENSE_THRESHOLD,
    ENSEMBLE_PINV_RCOND,
    JITTER_SCALE,
    PRIOR_PINV_RCOND,
)
from wrml.utils.exceptions import LinearSolveFailure, NonFiniteInput, RankDeficient

logger = logging.getLogger(__name__)


class PrecisionPolicy(Enum):
    PRIOR = "prior"
    ENSEMBLE = "ensemble"


def truncated_pinv(a: np.ndarray, rcond: float) -> Tuple[np.ndarray, int]:
    """
    Pseudo-inverse through the SVD, dropping singular values below *rcond* times the largest.

    Returns
    -------
    Tuple[np.ndarray, int]
        The pseudo-inverse and the retained rank.
    """
    u, s, vt = linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        return np.zeros(a.shape[::-1]), 0
    rank = int(np.sum(s > rcond * s[0]))
    return (vt[:rank].T / s[:rank]) @ u[:, :rank].T, rank


def symmetric_pinv(c: np.ndarray, rcond: float) -> np.ndarray:
    w, v = linalg.eigh(c)
    keep = w > rcond * w.max()
    return (v[:, keep] / w[keep]) @ v[:, keep].T


def spd_factor(a: np.ndarray, jitter_scale: float = JITTER_SCALE):
    """
    Cholesky factor of a symmetric positive-definite matrix, retried once with a diagonal jitter
    of *jitter_scale* * trace(a) / n if the first factorization fails.

    Returns
    -------
    tuple
        The factor in the form returned by scipy.linalg.cho_factor.
    """
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("The matrix to factorize contains non-finite entries.")
    a = 0.5 * (a + a.T)
    try:
        return linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError:
        jitter = jitter_scale * np.trace(a) / a.shape[0]
        logger.warning("Cholesky factorization failed; retrying with jitter {:.3g}.".format(jitter))
        try:
            return linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
        except linalg.LinAlgError as e:
            raise LinearSolveFailure(
                "Matrix of size {} is not positive definite even with jitter {:.3g}: {}".format(a.shape[0], jitter, e)
            )


def spd_solve(a: np.ndarray, b: np.ndarray, jitter_scale: float = JITTER_SCALE) -> np.ndarray:
    return linalg.cho_solve(spd_factor(a, jitter_scale), b)


def factor_logdet(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def centered_deviations(a: np.ndarray) -> np.ndarray:
    """
    (1 / sqrt(N_e - 1)) a (I - 11^T / N_e) for a matrix whose columns are ensemble members.
    """
    n_e = a.shape[1]
    return (a - a.mean(axis=1, keepdims=True)) / np.sqrt(n_e - 1)


class PriorPrecision:
    def __init__(
        self,
        op: CovarianceOperator,
        policy: Optional[PrecisionPolicy] = None,
        prior_rcond: float = PRIOR_PINV_RCOND,
        ensemble_rcond: float = ENSEMBLE_PINV_RCOND,
    ):
        """
        The action of the prior precision C_x^-1 as it appears in ensemble updates and weights,
        i.e. the coefficients dX^T C_x^-1 r.

        With the PRIOR policy C_x^-1 is the truncated pseudo-inverse of the dense covariance.
        With the ENSEMBLE policy it is replaced by the pseudo-inverse of dX dX^T,
        so that dX dX^T C_x^-1 r becomes the ensemble-subspace projection dX dX^+ r.
        The default is PRIOR on grids with at most DENSE_THRESHOLD nodes and ENSEMBLE above.

        Parameters
        ----------
        op : CovarianceOperator
            The prior covariance.
        policy : Optional[PrecisionPolicy]
            The pseudo-inverse policy.
        prior_rcond : float
            Relative eigenvalue cutoff of the dense pseudo-inverse.
        ensemble_rcond : float
            Relative singular-value cutoff of the ensemble pseudo-inverse.
        """
        if policy is None:
            policy = PrecisionPolicy.PRIOR if op.n <= DENSE_THRESHOLD else PrecisionPolicy.ENSEMBLE
        if policy == PrecisionPolicy.PRIOR and op.n > DENSE_THRESHOLD:
            raise ValueError(
                "The dense prior pseudo-inverse is limited to {} nodes, got {}.".format(DENSE_THRESHOLD, op.n)
            )
        self._policy = policy
        self._ensemble_rcond = ensemble_rcond
        self._prior_pinv = None
        if policy == PrecisionPolicy.PRIOR:
            self._prior_pinv = symmetric_pinv(op.dense, prior_rcond)

    @property
    def policy(self) -> PrecisionPolicy:
        return self._policy

    @property
    def prior_pinv(self) -> Optional[np.ndarray]:
        return self._prior_pinv

    def coefficients(self, dX: np.ndarray, r: np.ndarray) -> np.ndarray:
        """
        Compute dX^T C_x^-1 r.

        Parameters
        ----------
        dX : np.ndarray
            The N_x x N_e deviation matrix.
        r : np.ndarray
            A vector of length N_x or a matrix with N_x rows.

        Returns
        -------
        np.ndarray
            N_e coefficients per column of *r*.
        """
        if self._policy == PrecisionPolicy.PRIOR:
            return dX.T @ (self._prior_pinv @ r)
        dX_pinv, rank = truncated_pinv(dX, self._ensemble_rcond)
        if rank == 0:
            raise RankDeficient("The ensemble deviations have rank zero.")
        return dX_pinv @ r
