"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module denoises computed log-weights.
A computed log-weight w_obs is modelled as the true log-weight w plus Gaussian noise of standard deviation sigma_o,
and w - w_pr follows a gamma-type prior with density proportional to
((w - w_pr) / sigma_pr)^(nu / 2 - 1) exp(-(w - w_pr) / (2 sigma_pr)), i.e. w - w_pr ~ sigma_pr * chi2(nu).
Each weight is replaced by its maximum a posteriori estimate.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import ks_2samp
from tqdm import tqdm

from wrml.assimilation.weights import WeightSet, WeightVariant
from wrml.utils.exceptions import EmptyGrid, InsufficientReplicates
from wrml.utils.functions import derive_seed

logger = logging.getLogger(__name__)

TUNE_PRIOR_DRAWS = 10_000


@dataclass(frozen=True)
class NoiseModel:
    sigma_o: float
    sigma_pr: float
    nu: float
    omega_pr: float

    def __post_init__(self):
        if not (self.sigma_o > 0 and self.sigma_pr > 0):
            raise ValueError(
                "Noise scales must be positive, got sigma_o={} and sigma_pr={}.".format(self.sigma_o, self.sigma_pr)
            )
        if self.nu < 1:
            raise ValueError("The prior shape nu must be at least 1, got {}.".format(self.nu))

    def to_dict(self) -> dict:
        return {
            "sigma_o": float(self.sigma_o),
            "sigma_pr": float(self.sigma_pr),
            "nu": float(self.nu),
            "omega_pr": float(self.omega_pr),
        }


def default_omega_pr(omega: np.ndarray, sigma_pr: float, nu: float, sigma_o: float) -> float:
    """
    Place the prior support bound at max(w) - 6 sigma_pr nu, and never above min(w) - sigma_o.
    """
    omega = np.asarray(omega, dtype=float)
    return float(min(omega.max() - 6.0 * sigma_pr * nu, omega.min() - sigma_o))


def log_posterior(model: NoiseModel, omega, omega_obs):
    """
    The unnormalized log posterior of the true log-weight *omega* given the computed value *omega_obs*.

    Parameters
    ----------
    model : NoiseModel
        The noise model.
    omega : float or np.ndarray
        Candidate true log-weights.
    omega_obs : float or np.ndarray
        The computed log-weights.

    Returns
    -------
    float or np.ndarray
        The log posterior, -inf where omega <= omega_pr.
    """
    omega = np.asarray(omega, dtype=float)
    t = omega - model.omega_pr
    inside = t > 0
    safe_t = np.where(inside, t, 1.0)
    value = (
        -((omega - omega_obs) ** 2) / (2.0 * model.sigma_o ** 2)
        + (model.nu / 2.0 - 1.0) * np.log(safe_t / model.sigma_pr)
        - safe_t / (2.0 * model.sigma_pr)
    )
    value = np.where(inside, value, -np.inf)
    return float(value) if value.ndim == 0 else value


def denoise_map(model: NoiseModel, omega_obs: np.ndarray) -> np.ndarray:
    """
    MAP estimates of the true log-weights.

    With t = w - w_pr and a = w_obs - w_pr, a stationary point of the log posterior solves
    t^2 - b t - k sigma_o^2 = 0 with b = a - sigma_o^2 / (2 sigma_pr) and k = nu / 2 - 1.
    The maximizer is the larger root, evaluated in a cancellation-free form; the closed form takes the place
    of a bracketed one-dimensional search.
    For nu >= 2 the log posterior is concave and the root is the unique maximizer whenever it is positive.
    For nu = 2 and b <= 0 the log posterior decreases on the whole support and the estimate sits at the bound.
    For nu < 2 the larger root is a local maximum when the discriminant is nonnegative and the root positive;
    without it the computed value is projected into (w_pr, inf).

    Parameters
    ----------
    model : NoiseModel
        The noise model.
    omega_obs : np.ndarray
        The computed log-weights.

    Returns
    -------
    np.ndarray
        The denoised log-weights.
    """
    omega_obs = np.asarray(omega_obs, dtype=float)
    k = model.nu / 2.0 - 1.0
    s2 = model.sigma_o ** 2
    a = omega_obs - model.omega_pr
    b = a - s2 / (2.0 * model.sigma_pr)
    disc = b ** 2 + 4.0 * k * s2

    valid = disc >= 0
    sq = np.sqrt(np.where(valid, disc, 0.0))
    tiny = np.finfo(float).eps * np.maximum(1.0, np.abs(model.omega_pr))
    if k == 0:
        root = np.where(b > 0, b, tiny)
    else:
        # Larger root of t^2 - b t - k s2: (b + sq) / 2, or -2 k s2 / (b - sq) when b < 0.
        with np.errstate(divide="ignore", invalid="ignore"):
            upper = np.where(b >= 0, 0.5 * (b + sq), -2.0 * k * s2 / (b - sq))
        root = np.where(valid & (upper > 0), upper, np.nan)

    interior = np.isfinite(root)
    projected = np.maximum(omega_obs, model.omega_pr + tiny)
    estimate = np.where(interior, model.omega_pr + np.where(interior, root, 0.0), projected)
    if np.any(~interior):
        logger.debug("{} log-weights have no interior MAP and were projected.".format(int(np.sum(~interior))))
    return estimate


def fit_noise_sigma(omega_replicates: np.ndarray) -> float:
    """
    The sample standard deviation (n - 1 denominator) of replicate final log-weights of a common particle.
    """
    values = np.asarray(omega_replicates, dtype=float).ravel()
    if values.size < 3:
        raise InsufficientReplicates(
            "At least 3 replicate log-weights are needed to estimate the noise, got {}.".format(values.size)
        )
    return float(np.std(values, ddof=1))


def prior_grid(
    sigma_prs: Sequence[float], nus: Sequence[float], omega_prs: Sequence[Optional[float]] = (None,)
) -> list:
    """
    The Cartesian grid of (sigma_pr, nu, omega_pr) candidates; omega_pr None stands for the default rule.
    """
    return list(itertools.product(sigma_prs, nus, omega_prs))


def simulate_log_weights(model: NoiseModel, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    true_omega = model.omega_pr + model.sigma_pr * rng.chisquare(model.nu, size=n_draws)
    return true_omega + model.sigma_o * rng.standard_normal(n_draws)


def _ks_distance(omega_all: np.ndarray, model: NoiseModel, seed: int, n_draws: int) -> float:
    simulated = simulate_log_weights(model, n_draws, np.random.default_rng(seed))
    return float(ks_2samp(omega_all, simulated).statistic)


def tune_prior(
    omega_all: np.ndarray,
    sigma_o: float,
    candidate_grid: Iterable[Tuple[float, float, Optional[float]]],
    seed: int,
    n_draws: int = TUNE_PRIOR_DRAWS,
    n_jobs: int = 1,
    progress: bool = False,
) -> NoiseModel:
    """
    Pick the prior parameters whose simulated noisy log-weights are closest to the observed ones
    in two-sample Kolmogorov-Smirnov distance.

    Parameters
    ----------
    omega_all : np.ndarray
        The computed log-weights.
    sigma_o : float
        The estimated noise standard deviation.
    candidate_grid : Iterable[Tuple[float, float, Optional[float]]]
        The (sigma_pr, nu, omega_pr) candidates; omega_pr None applies *default_omega_pr*.
    seed : int
        The seed; grid point i simulates with the stream <grid-i>.
    n_draws : int
        The number of simulated log-weights per grid point.
    n_jobs : int
        The number of joblib workers.
    progress : bool
        Whether to show a progress bar.

    Returns
    -------
    NoiseModel
        The best candidate, the first one in grid order on ties.
    """
    omega_all = np.asarray(omega_all, dtype=float)
    models = []
    for sigma_pr, nu, omega_pr in candidate_grid:
        if omega_pr is None:
            omega_pr = default_omega_pr(omega_all, sigma_pr, nu, sigma_o)
        models.append(NoiseModel(sigma_o=sigma_o, sigma_pr=sigma_pr, nu=nu, omega_pr=omega_pr))
    if not models:
        raise EmptyGrid("The prior candidate grid is empty.")

    points = tqdm(list(enumerate(models)), desc="Prior grid", disable=not progress, leave=False)
    distances = Parallel(n_jobs=n_jobs)(
        delayed(_ks_distance)(omega_all, model, derive_seed(seed, "grid-{}".format(i)), n_draws)
        for i, model in points
    )
    best = int(np.argmin(distances))
    logger.info(
        "Best prior candidate {} of {}: {} (KS distance {:.4f}).".format(best, len(models), models[best], distances[best])
    )
    return models[best]


def power_regularize(log_weights: np.ndarray, exponent: float, variant: WeightVariant = WeightVariant.HYBRID) -> WeightSet:
    """
    Temper the weights: w proportional to exp(exponent * (omega - max omega)).
    Exponent 0 gives uniform weights and exponent 1 the raw weights.
    """
    if not 0.0 <= exponent <= 1.0:
        raise ValueError("The power exponent must lie in [0, 1], got {}.".format(exponent))
    log_weights = np.asarray(log_weights, dtype=float)
    if exponent == 0.0:
        tempered = np.zeros_like(log_weights)
    elif exponent == 1.0:
        tempered = log_weights
    else:
        tempered = exponent * (log_weights - log_weights.max())
    ws = WeightSet.from_log_weights(tempered, variant, exponent=exponent)
    ws.log_weights = log_weights
    return ws
