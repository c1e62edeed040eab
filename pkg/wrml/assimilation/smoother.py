"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module implements the Levenberg-Marquardt iterative ensemble smoother (IES) and its hybrid variant.
Each member minimizes its own randomized maximum likelihood cost, paired with a prior draw (anchor)
and a perturbed observation vector that both stay fixed through the iterations.
The standard update shares one ensemble estimate of the sensitivity G among all members;
the hybrid update uses G_i = dD dM^+ M_x(x_i), with the analytic transform sensitivity of each member.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform
from sklearn.cluster import AgglomerativeClustering

from wrml.assimilation.linalg import (
    PriorPrecision,
    centered_deviations,
    spd_solve,
)
from wrml.fields import transforms
from wrml.fields.grf import CovarianceOperator, apply_cov, sample_prior
from wrml.fields.transforms import TransformKind
from wrml.simulation.forward_models import ForwardModel
from wrml.utils.constants import (
    DM_PINV_RCOND,
    LM_GAMMA,
    LM_MAX_ITERATIONS,
    LM_MAX_REJECTIONS,
    LM_PATIENCE,
    LM_REL_TOL,
)
from wrml.utils.exceptions import (
    DimensionMismatch,
    MaxIterationsExceeded,
    NonFiniteInput,
    RankDeficient,
)
from wrml.utils.functions import derive_seed

logger = logging.getLogger(__name__)


class UpdateMode(Enum):
    IES = "ies"
    HYBRID = "hybrid"


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """
    Observed data d_obs with independent Gaussian noise of standard deviation *noise_std*.
    Data are ordered time-major: all producers at the first time, then all producers at the next time.
    """

    d_obs: np.ndarray
    noise_std: np.ndarray
    times: Tuple[float, ...] = ()
    well_names: Tuple[str, ...] = ()

    def __post_init__(self):
        d_obs = np.asarray(self.d_obs, dtype=float)
        noise_std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), d_obs.shape).copy()
        if d_obs.ndim != 1:
            raise DimensionMismatch("Observed data must be a vector, got shape {}.".format(d_obs.shape))
        if not np.all(noise_std > 0):
            raise ValueError("Observation noise standard deviations must be positive.")
        if self.times and self.well_names and len(self.times) * len(self.well_names) != d_obs.size:
            raise DimensionMismatch(
                "{} times x {} wells does not match {} data.".format(len(self.times), len(self.well_names), d_obs.size)
            )
        d_obs.setflags(write=False)
        noise_std.setflags(write=False)
        object.__setattr__(self, "d_obs", d_obs)
        object.__setattr__(self, "noise_std", noise_std)

    @property
    def n_data(self) -> int:
        return self.d_obs.size

    @property
    def cd(self) -> np.ndarray:
        """
        The diagonal of C_d.
        """
        return self.noise_std ** 2


@dataclass(frozen=True)
class LMSchedule:
    gamma: float = LM_GAMMA
    rel_tol: float = LM_REL_TOL
    patience: int = LM_PATIENCE
    max_iterations: int = LM_MAX_ITERATIONS
    max_rejections: int = LM_MAX_REJECTIONS
    lambda_init: Optional[float] = None
    raise_on_max_iterations: bool = False

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError("The LM multiplier gamma must exceed 1, got {}.".format(self.gamma))
        if self.max_iterations < 1 or self.max_rejections < 1 or self.patience < 1:
            raise ValueError("Iteration limits must be positive.")
        if self.lambda_init is not None and self.lambda_init < 0:
            raise ValueError("The initial LM parameter must be nonnegative.")


@dataclass
class EnsembleDeviations:
    dX: np.ndarray
    dD: np.ndarray
    dM: Optional[np.ndarray] = None


@dataclass
class IterationReport:
    iteration: int
    mean_misfit: float
    lam: float
    misfits: np.ndarray
    accepted: bool


class Ensemble:
    def __init__(
        self,
        members: np.ndarray,
        anchors: np.ndarray,
        perturbed_obs: np.ndarray,
        prior_mean: np.ndarray,
        observations: ObservationSet,
        lam: Optional[float] = None,
        iteration: int = 0,
        predictions: Optional[np.ndarray] = None,
    ):
        """
        An RML ensemble. Members, anchors and perturbed observations are stored column-wise
        and are read-only; updates return new ensembles sharing the same anchors and perturbed observations.

        Parameters
        ----------
        members : np.ndarray
            The N_x x N_e current members.
        anchors : np.ndarray
            The N_x x N_e prior draws x* paired with each member.
        perturbed_obs : np.ndarray
            The N_d x N_e perturbed observations d* = d_obs + C_d^(1/2) e.
        prior_mean : np.ndarray
            The prior mean x_pr.
        observations : ObservationSet
            The observed data.
        lam : Optional[float]
            The current LM parameter, unset until the first predictions are known.
        iteration : int
            The number of accepted updates so far.
        predictions : Optional[np.ndarray]
            The N_d x N_e predictions of the current members, if already computed.
        """
        members = np.asarray(members, dtype=float)
        if members.ndim != 2 or anchors.shape != members.shape:
            raise DimensionMismatch(
                "Members {} and anchors {} must be matrices of equal shape.".format(members.shape, anchors.shape)
            )
        if perturbed_obs.shape != (observations.n_data, members.shape[1]):
            raise DimensionMismatch(
                "Expected perturbed observations of shape {} but got {}.".format(
                    (observations.n_data, members.shape[1]), perturbed_obs.shape
                )
            )
        if not np.all(np.isfinite(members)):
            raise NonFiniteInput("Ensemble members contain non-finite values.")
        for a in (members, anchors, perturbed_obs):
            a.setflags(write=False)
        self._members = members
        self._anchors = anchors
        self._perturbed_obs = perturbed_obs
        self._prior_mean = np.asarray(prior_mean, dtype=float)
        self._observations = observations
        self.lam = lam
        self.iteration = iteration
        self.predictions = predictions
        self.converged = False
        self.stop_reason = ""

    @property
    def members(self) -> np.ndarray:
        return self._members

    @property
    def anchors(self) -> np.ndarray:
        return self._anchors

    @property
    def perturbed_obs(self) -> np.ndarray:
        return self._perturbed_obs

    @property
    def prior_mean(self) -> np.ndarray:
        return self._prior_mean

    @property
    def observations(self) -> ObservationSet:
        return self._observations

    @property
    def size(self) -> int:
        return self._members.shape[1]

    def with_members(self, members: np.ndarray, lam: Optional[float] = None, iteration: Optional[int] = None) -> "Ensemble":
        return Ensemble(
            members=members,
            anchors=self._anchors,
            perturbed_obs=self._perturbed_obs,
            prior_mean=self._prior_mean,
            observations=self._observations,
            lam=self.lam if lam is None else lam,
            iteration=self.iteration if iteration is None else iteration,
        )

    def permuted(self, order: Sequence[int]) -> "Ensemble":
        order = np.asarray(order, dtype=int)
        ens = Ensemble(
            members=self._members[:, order].copy(),
            anchors=self._anchors[:, order].copy(),
            perturbed_obs=self._perturbed_obs[:, order].copy(),
            prior_mean=self._prior_mean,
            observations=self._observations,
            lam=self.lam,
            iteration=self.iteration,
        )
        if self.predictions is not None:
            ens.predictions = self.predictions[:, order]
        return ens


def init_ensemble(
    op: CovarianceOperator, x_pr: np.ndarray, obs: ObservationSet, n_e: int, seed: int
) -> Ensemble:
    """
    Draw the RML pairs: anchors from N(x_pr, C_x) and perturbed observations from N(d_obs, C_d).
    Members start at their anchors.

    Parameters
    ----------
    op : CovarianceOperator
        The prior covariance.
    x_pr : np.ndarray
        The prior mean.
    obs : ObservationSet
        The observed data.
    n_e : int
        The ensemble size, at least 2.
    seed : int
        The seed from which the anchor and perturbation streams are derived.

    Returns
    -------
    Ensemble
        The initial ensemble.
    """
    if n_e < 2:
        raise ValueError("An ensemble needs at least 2 members, got {}.".format(n_e))
    anchors = np.column_stack(sample_prior(op, x_pr, derive_seed(seed, "anchors"), n_e))
    rng = np.random.default_rng(derive_seed(seed, "perturbations"))
    noise = rng.standard_normal((obs.n_data, n_e))
    perturbed = obs.d_obs[:, None] + obs.noise_std[:, None] * noise
    return Ensemble(
        members=anchors.copy(),
        anchors=anchors,
        perturbed_obs=perturbed,
        prior_mean=x_pr,
        observations=obs,
    )


def member_misfits(predictions: np.ndarray, perturbed_obs: np.ndarray, cd: np.ndarray) -> np.ndarray:
    """
    Half the C_d-weighted squared residual of every member against its own perturbed observations.
    """
    return 0.5 * np.sum((predictions - perturbed_obs) ** 2 / cd[:, None], axis=0)


def ensemble_deviations(
    members: np.ndarray, predictions: np.ndarray, transformed: Optional[np.ndarray] = None
) -> EnsembleDeviations:
    return EnsembleDeviations(
        dX=centered_deviations(members),
        dD=centered_deviations(predictions),
        dM=None if transformed is None else centered_deviations(transformed),
    )


def _check_finite(members: np.ndarray, label: str):
    if not np.all(np.isfinite(members)):
        raise NonFiniteInput("The {} update produced non-finite members.".format(label))


def ies_update(
    ens: Ensemble,
    predictions: np.ndarray,
    op: CovarianceOperator,
    precision: Optional[PriorPrecision] = None,
) -> Ensemble:
    """
    One standard IES step

        x_new = x - dX dX^T C_x^-1 (x - x*) / (1 + lam)
                  - dX dD^T ((1 + lam) C_d + dD dD^T)^-1 (g - d* - dD dX^T C_x^-1 (x - x*) / (1 + lam)),

    applied to all members at once with one shared N_d x N_d solve.

    Parameters
    ----------
    ens : Ensemble
        The current ensemble, with its LM parameter set.
    predictions : np.ndarray
        The N_d x N_e predictions of the current members.
    op : CovarianceOperator
        The prior covariance.
    precision : Optional[PriorPrecision]
        The prior-precision policy; built from *op* if missing.

    Returns
    -------
    Ensemble
        The updated ensemble.
    """
    if predictions.shape != ens.perturbed_obs.shape:
        raise DimensionMismatch(
            "Expected predictions of shape {} but got {}.".format(ens.perturbed_obs.shape, predictions.shape)
        )
    precision = PriorPrecision(op) if precision is None else precision
    lam = 0.0 if ens.lam is None else ens.lam
    damping = 1.0 + lam

    X = ens.members
    dX = centered_deviations(X)
    dD = centered_deviations(predictions)
    W = precision.coefficients(dX, X - ens.anchors)

    inner = damping * np.diag(ens.observations.cd) + dD @ dD.T
    residual = predictions - ens.perturbed_obs - (dD @ W) / damping
    Y = spd_solve(inner, residual)
    X_new = X - (dX @ W) / damping - dX @ (dD.T @ Y)

    _check_finite(X_new, "IES")
    return ens.with_members(X_new)


def hybrid_gain_factors(dM: np.ndarray, dD: np.ndarray, rcond: float = DM_PINV_RCOND) -> Tuple[np.ndarray, np.ndarray]:
    """
    Factor the intermediate sensitivity G_m = dD dM^+ as P^T U^T, with dM = U S V^T truncated at *rcond*
    and P = S^-1 V^T dD^T.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        U (N_m x r) and P (r x N_d).
    """
    u, s, vt = linalg.svd(dM, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise RankDeficient("The transformed-field deviations are zero.")
    rank = int(np.sum(s > rcond * s[0]))
    P = (vt[:rank] / s[:rank, None]) @ dD.T
    return u[:, :rank], P


def hybrid_update(
    ens: Ensemble,
    predictions: np.ndarray,
    dM: EnsembleDeviations,
    Mx_diag: np.ndarray,
    op: CovarianceOperator,
) -> Ensemble:
    """
    One hybrid IES step. Member i uses its own sensitivity G_i = dD dM^+ diag(M_x(x_i)):

        x_new = x - (x - x*) / (1 + lam)
                  - C_x G_i^T ((1 + lam) C_d + G_i C_x G_i^T)^-1 (g - d* - G_i (x - x*) / (1 + lam)).

    Products with C_x go through the FFT operator and only ever act on the retained
    singular vectors of dM, so the per-member work scales with the ensemble size.

    Parameters
    ----------
    ens : Ensemble
        The current ensemble, with its LM parameter set.
    predictions : np.ndarray
        The N_d x N_e predictions of the current members.
    dM : EnsembleDeviations
        Deviations of the current ensemble, with the transformed-field deviations *dM* filled in.
    Mx_diag : np.ndarray
        The N_x x N_e transform sensitivities of the current members.
    op : CovarianceOperator
        The prior covariance.

    Returns
    -------
    Ensemble
        The updated ensemble.
    """
    if dM.dM is None:
        raise ValueError("The hybrid update needs the deviations of the transformed fields.")
    if Mx_diag.shape != ens.members.shape:
        raise DimensionMismatch(
            "Expected sensitivities of shape {} but got {}.".format(ens.members.shape, Mx_diag.shape)
        )
    lam = 0.0 if ens.lam is None else ens.lam
    damping = 1.0 + lam
    cd = ens.observations.cd
    U, P = hybrid_gain_factors(dM.dM, dM.dD)

    X = ens.members
    X_new = np.empty_like(X)
    for i in range(ens.size):
        B = Mx_diag[:, i, None] * U
        CB = apply_cov(op, B)
        gcgt = P.T @ (B.T @ CB) @ P
        r = X[:, i] - ens.anchors[:, i]
        rhs = predictions[:, i] - ens.perturbed_obs[:, i] - (P.T @ (B.T @ r)) / damping
        y = spd_solve(damping * np.diag(cd) + gcgt, rhs)
        X_new[:, i] = X[:, i] - r / damping - CB @ (P @ y)

    _check_finite(X_new, "hybrid")
    return ens.with_members(X_new)


def _predict(model: ForwardModel, members: np.ndarray, transform: TransformKind, n_jobs: int, progress: bool):
    return model.predict_ensemble(transforms.forward(transform, members), n_jobs=n_jobs, progress=progress)


def _propose(
    ens: Ensemble,
    predictions: np.ndarray,
    mode: UpdateMode,
    op: CovarianceOperator,
    transform: TransformKind,
    precision: Optional[PriorPrecision],
) -> Ensemble:
    if mode == UpdateMode.IES:
        return ies_update(ens, predictions, op, precision)
    deviations = ensemble_deviations(ens.members, predictions, transforms.forward(transform, ens.members))
    return hybrid_update(ens, predictions, deviations, transforms.sensitivity(transform, ens.members), op)


def run_assimilation(
    ens: Ensemble,
    model: ForwardModel,
    mode: UpdateMode,
    schedule: LMSchedule,
    op: CovarianceOperator,
    transform: TransformKind = TransformKind.IDENTITY,
    precision: Optional[PriorPrecision] = None,
    n_jobs: int = 1,
    progress: bool = False,
    callback: Optional[Callable[[Ensemble, IterationReport], None]] = None,
) -> Tuple[Ensemble, List[IterationReport]]:
    """
    Iterate the smoother with a Levenberg-Marquardt schedule.

    An iteration is accepted when the mean member misfit decreases; then lambda is divided by gamma.
    Otherwise the proposal is discarded and lambda is multiplied by gamma.
    The loop stops after *patience* consecutive accepted iterations with relative misfit change below *rel_tol*,
    after *max_rejections* consecutive rejections or after *max_iterations* iterations.
    In the last case the best ensemble so far is returned with *converged* False,
    or MaxIterationsExceeded is raised if the schedule asks for it.

    Parameters
    ----------
    ens : Ensemble
        The initial ensemble.
    model : ForwardModel
        The forward model acting on transformed fields.
    mode : UpdateMode
        Standard or hybrid update.
    schedule : LMSchedule
        The LM parameter schedule and stopping rule.
    op : CovarianceOperator
        The prior covariance.
    transform : TransformKind
        The point transform from latent to log-permeability.
    precision : Optional[PriorPrecision]
        The prior-precision policy of the standard update.
    n_jobs : int
        The number of parallel forward runs.
    progress : bool
        Whether to show progress bars.
    callback : Optional[Callable]
        Called after every accepted iteration with the current ensemble and its report.

    Returns
    -------
    Tuple[Ensemble, List[IterationReport]]
        The final ensemble (with *predictions* set) and the report of every iteration.
    """
    mode = UpdateMode(mode)
    cd = ens.observations.cd
    if mode == UpdateMode.IES and precision is None:
        precision = PriorPrecision(op)

    predictions = ens.predictions
    if predictions is None:
        predictions = _predict(model, ens.members, transform, n_jobs, progress)
    misfits = member_misfits(predictions, ens.perturbed_obs, cd)
    current = float(misfits.mean())
    if ens.lam is None:
        ens.lam = schedule.lambda_init if schedule.lambda_init is not None else current / ens.observations.n_data
    ens.predictions = predictions

    reports = [IterationReport(0, current, ens.lam, misfits, True)]
    logger.info("[{}] iteration 0: mean misfit {:.6g}, lambda {:.4g}".format(mode.value, current, ens.lam))
    if callback is not None:
        callback(ens, reports[-1])

    small_changes = 0
    rejections = 0
    stop_reason = "max_iterations"
    for iteration in range(1, schedule.max_iterations + 1):
        proposal = _propose(ens, predictions, mode, op, transform, precision)
        new_predictions = _predict(model, proposal.members, transform, n_jobs, progress)
        new_misfits = member_misfits(new_predictions, ens.perturbed_obs, cd)
        candidate = float(new_misfits.mean())

        if candidate < current:
            rel_change = (current - candidate) / current if current > 0 else 0.0
            small_changes = small_changes + 1 if rel_change < schedule.rel_tol else 0
            rejections = 0
            ens = proposal
            ens.lam = proposal.lam / schedule.gamma
            ens.iteration = iteration
            ens.predictions = new_predictions
            predictions, misfits, current = new_predictions, new_misfits, candidate
            report = IterationReport(iteration, current, ens.lam, misfits, True)
            reports.append(report)
            logger.info(
                "[{}] iteration {}: accepted, mean misfit {:.6g}, lambda {:.4g}".format(
                    mode.value, iteration, current, ens.lam
                )
            )
            if callback is not None:
                callback(ens, report)
            if small_changes >= schedule.patience:
                stop_reason = "converged"
                break
        else:
            rejections += 1
            small_changes = 0
            ens.lam = ens.lam * schedule.gamma
            reports.append(IterationReport(iteration, candidate, ens.lam, new_misfits, False))
            logger.info(
                "[{}] iteration {}: rejected (mean misfit {:.6g}), lambda raised to {:.4g}".format(
                    mode.value, iteration, candidate, ens.lam
                )
            )
            if rejections >= schedule.max_rejections:
                logger.warning("[{}] {} consecutive rejections; stopping.".format(mode.value, rejections))
                stop_reason = "rejections"
                break

    ens.converged = stop_reason != "max_iterations"
    ens.stop_reason = stop_reason
    if not ens.converged:
        message = "[{}] no convergence within {} iterations; returning the best ensemble so far.".format(
            mode.value, schedule.max_iterations
        )
        if schedule.raise_on_max_iterations:
            error = MaxIterationsExceeded(message)
            error.ensemble = ens
            error.reports = reports
            raise error
        logger.warning(message)
    return ens, reports


def count_basins(members: np.ndarray, distance_threshold: Optional[float] = None) -> int:
    """
    Count the groups of members left by average-linkage clustering cut at *distance_threshold*.
    The default threshold is 1.5 times the median nearest-neighbour distance, so a single
    Gaussian cloud forms one group while well separated modes stay apart.

    Parameters
    ----------
    members : np.ndarray
        The N_x x N_e members.
    distance_threshold : Optional[float]
        The Euclidean distance above which clusters are not merged.

    Returns
    -------
    int
        The number of clusters.
    """
    if members.shape[1] < 2:
        return members.shape[1]
    if distance_threshold is None:
        distances = squareform(pdist(members.T))
        np.fill_diagonal(distances, np.inf)
        distance_threshold = 1.5 * float(np.median(distances.min(axis=1)))
    clustering = AgglomerativeClustering(
        n_clusters=None, distance_threshold=distance_threshold, linkage="average"
    ).fit(members.T)
    return int(clustering.n_clusters_)
