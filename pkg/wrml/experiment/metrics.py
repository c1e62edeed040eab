"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module computes the evaluation metrics of a run:
data misfits, weighted posterior summaries, the Gaussian log score of forecasts
and the correlation between log-weights and misfits.
Lower log scores are better.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm
from tqdm import tqdm

from wrml.assimilation.denoise import power_regularize
from wrml.assimilation.weights import WeightSet, WeightVariant
from wrml.utils.exceptions import (
    DegenerateEnsemble,
    DimensionMismatch,
    InsufficientReplicates,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

MIN_FORECAST_VARIANCE = 1e-12


def _weight_vector(weights: Union[WeightSet, np.ndarray, None], n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = weights.weights if isinstance(weights, WeightSet) else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DimensionMismatch("Expected {} weights, got shape {}.".format(n, w.shape))
    return w / w.sum()


def misfit(prediction: np.ndarray, d_obs: np.ndarray, cd: np.ndarray) -> float:
    """
    Half the C_d-weighted squared residual 1/2 (g - d_obs)^T C_d^-1 (g - d_obs).

    Parameters
    ----------
    prediction : np.ndarray
        The predicted data.
    d_obs : np.ndarray
        The observed data.
    cd : np.ndarray
        The diagonal of C_d.

    Returns
    -------
    float
        The misfit.
    """
    prediction = np.asarray(prediction, dtype=float)
    d_obs = np.asarray(d_obs, dtype=float)
    cd = np.broadcast_to(np.asarray(cd, dtype=float), d_obs.shape)
    if prediction.shape != d_obs.shape:
        raise DimensionMismatch(
            "Prediction of shape {} does not match data of shape {}.".format(prediction.shape, d_obs.shape)
        )
    return float(0.5 * np.sum((prediction - d_obs) ** 2 / cd))


def ensemble_misfits(predictions: np.ndarray, d_obs: np.ndarray, cd: np.ndarray) -> np.ndarray:
    """
    The misfit of every column of *predictions* against the unperturbed data.
    """
    predictions = np.asarray(predictions, dtype=float)
    if predictions.shape[0] != np.asarray(d_obs).size:
        raise DimensionMismatch(
            "Predictions with {} rows do not match {} data.".format(predictions.shape[0], np.asarray(d_obs).size)
        )
    return np.array([misfit(predictions[:, i], d_obs, cd) for i in range(predictions.shape[1])])


def weighted_moments(samples: np.ndarray, weights: Union[WeightSet, np.ndarray, None] = None) -> Tuple[float, float]:
    """
    Weighted mean and variance of scalar samples.
    The variance carries the bias correction 1 / (1 - sum(w^2)), which gives the usual
    n - 1 estimator for uniform weights.

    Parameters
    ----------
    samples : np.ndarray
        The samples.
    weights : Union[WeightSet, np.ndarray, None]
        Weights of the samples; uniform if missing.

    Returns
    -------
    Tuple[float, float]
        The mean and the variance.
    """
    samples = np.asarray(samples, dtype=float)
    w = _weight_vector(weights, samples.size)
    mean = float(np.sum(w * samples))
    correction = 1.0 - float(np.sum(w ** 2))
    if correction <= MIN_FORECAST_VARIANCE:
        raise DegenerateEnsemble("All the weight sits on a single sample; the variance is undefined.")
    variance = float(np.sum(w * (samples - mean) ** 2)) / correction
    return mean, variance


def log_score(forecast_samples: np.ndarray, weights: Union[WeightSet, np.ndarray, None], outcome: float) -> float:
    """
    The log score -log N(outcome; mu, v) of the Gaussian fitted to weighted forecast samples.

    Parameters
    ----------
    forecast_samples : np.ndarray
        The forecast of every member.
    weights : Union[WeightSet, np.ndarray, None]
        Weights of the members; uniform if missing.
    outcome : float
        The realized value.

    Returns
    -------
    float
        The log score.
    """
    mean, variance = weighted_moments(forecast_samples, weights)
    if variance < MIN_FORECAST_VARIANCE:
        raise DegenerateEnsemble("The weighted forecast variance {:.3g} is too small.".format(variance))
    return float(-norm.logpdf(outcome, loc=mean, scale=np.sqrt(variance)))


def weight_misfit_correlation(weights: Union[WeightSet, np.ndarray], misfits: np.ndarray) -> float:
    """
    Pearson correlation between log-weights and misfits.

    Parameters
    ----------
    weights : Union[WeightSet, np.ndarray]
        A weight set, or the log-weights themselves.
    misfits : np.ndarray
        The misfit of every member.

    Returns
    -------
    float
        The correlation coefficient.
    """
    log_weights = weights.log_weights if isinstance(weights, WeightSet) else np.asarray(weights, dtype=float)
    misfits = np.asarray(misfits, dtype=float)
    if log_weights.shape != misfits.shape:
        raise DimensionMismatch(
            "{} log-weights do not match {} misfits.".format(log_weights.size, misfits.size)
        )
    if misfits.size < 3:
        raise InsufficientReplicates("A correlation needs at least 3 members, got {}.".format(misfits.size))
    if np.std(log_weights) == 0 or np.std(misfits) == 0:
        raise ZeroVariance("Log-weights or misfits are constant; the correlation is undefined.")
    return float(np.corrcoef(log_weights, misfits)[0, 1])


def rmse(field: np.ndarray, truth: np.ndarray) -> float:
    field = np.asarray(field, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if field.shape != truth.shape:
        raise DimensionMismatch("Field of shape {} does not match truth of shape {}.".format(field.shape, truth.shape))
    return float(np.sqrt(np.mean((field - truth) ** 2)))


def weighted_mean_field(members: np.ndarray, weights: Union[WeightSet, np.ndarray, None] = None) -> np.ndarray:
    members = np.asarray(members, dtype=float)
    return members @ _weight_vector(weights, members.shape[1])


def weighted_mean_misfit(misfits: np.ndarray, weights: Union[WeightSet, np.ndarray, None] = None) -> float:
    misfits = np.asarray(misfits, dtype=float)
    return float(np.sum(_weight_vector(weights, misfits.size) * misfits))


@dataclass
class ForecastReport:
    label: str
    well_names: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    outcome: np.ndarray
    log_scores: np.ndarray
    ess: float

    @property
    def mean_log_score(self) -> float:
        """
        The mean log score over the wells whose forecast is not degenerate; nan if there is none.
        """
        finite = self.log_scores[np.isfinite(self.log_scores)]
        return float(finite.mean()) if finite.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "label": self.label,
                "well": list(self.well_names),
                "mean": self.mean,
                "std": self.std,
                "outcome": self.outcome,
                "log_score": self.log_scores,
                "ess": self.ess,
            }
        )


def forecast_report(
    forecasts: np.ndarray,
    weights: Optional[WeightSet],
    outcomes: np.ndarray,
    well_names: Sequence[str],
    label: str = "",
) -> ForecastReport:
    """
    Summarize a weighted forecast well by well.

    Parameters
    ----------
    forecasts : np.ndarray
        The n_wells x N_e forecasts of the members.
    weights : Optional[WeightSet]
        The member weights; uniform if missing.
    outcomes : np.ndarray
        The realized value at every well.
    well_names : Sequence[str]
        The names of the wells.
    label : str
        A name for the weighting, e.g. *raw* or *denoised*.

    Returns
    -------
    ForecastReport
        Means, standard deviations and log scores; wells with a degenerate forecast get a nan score.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    n_wells, n_e = forecasts.shape
    if outcomes.shape != (n_wells,) or len(well_names) != n_wells:
        raise DimensionMismatch(
            "{} forecast rows, {} outcomes and {} well names do not match.".format(
                n_wells, outcomes.size, len(well_names)
            )
        )
    w = _weight_vector(weights, n_e)
    ess = float(1.0 / np.sum(w ** 2))
    means = np.empty(n_wells)
    stds = np.empty(n_wells)
    scores = np.empty(n_wells)
    for k in range(n_wells):
        means[k] = float(np.sum(w * forecasts[k]))
        try:
            _, variance = weighted_moments(forecasts[k], w)
        except DegenerateEnsemble:
            variance = 0.0
        stds[k] = np.sqrt(variance)
        try:
            scores[k] = log_score(forecasts[k], w, outcomes[k])
        except DegenerateEnsemble as e:
            logger.warning("[{}] well {}: {}".format(label, well_names[k], e))
            scores[k] = np.nan
    return ForecastReport(
        label=label,
        well_names=tuple(well_names),
        mean=means,
        std=stds,
        outcome=outcomes,
        log_scores=scores,
        ess=ess,
    )


def power_sweep(
    log_weights: np.ndarray,
    exponents: Sequence[float],
    forecasts: np.ndarray,
    outcomes: np.ndarray,
    well_names: Sequence[str],
    variant: WeightVariant = WeightVariant.HYBRID,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Evaluate the effective sample size and the mean log score of power-regularized weights
    along a grid of exponents.

    Returns
    -------
    pd.DataFrame
        One row per exponent with the columns exponent, ess and log_score.
    """
    rows = []
    for exponent in tqdm(exponents, desc="Power sweep", disable=not progress, leave=False):
        ws = power_regularize(log_weights, float(exponent), variant)
        report = forecast_report(forecasts, ws, outcomes, well_names, label="power-{}".format(exponent))
        rows.append({"exponent": float(exponent), "ess": ws.ess, "log_score": report.mean_log_score})
    return pd.DataFrame(rows, columns=["exponent", "ess", "log_score"])


def best_exponent(sweep: pd.DataFrame) -> float:
    """
    The exponent with the lowest mean log score.
    """
    finite = sweep[np.isfinite(sweep["log_score"])]
    if finite.empty:
        raise DegenerateEnsemble("No exponent of the sweep has a finite log score.")
    return float(finite.loc[finite["log_score"].idxmin(), "exponent"])
