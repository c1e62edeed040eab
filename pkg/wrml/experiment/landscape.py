"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module evaluates the negative log posterior on two-dimensional slices of the latent space.
A slice is the plane through three points; it is parametrized by an orthonormal basis obtained
with Gram-Schmidt and sampled on a regular grid that covers the three points with a margin.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from wrml.assimilation.linalg import PrecisionPolicy, PriorPrecision
from wrml.assimilation.smoother import ObservationSet
from wrml.fields import transforms
from wrml.fields.grf import CovarianceOperator
from wrml.fields.transforms import TransformKind
from wrml.simulation.forward_models import ForwardModel
from wrml.utils.exceptions import DegenerateBasis, DimensionMismatch, EmptyGrid

logger = logging.getLogger(__name__)

GRAM_SCHMIDT_TOLERANCE = 1e-10


class NegativeLogPosterior:
    def __init__(
        self,
        op: CovarianceOperator,
        x_pr: np.ndarray,
        model: ForwardModel,
        observations: ObservationSet,
        transform: TransformKind = TransformKind.IDENTITY,
        prior_pinv: Optional[np.ndarray] = None,
    ):
        """
        The objective 1/2 (x - x_pr)^T C_x^+ (x - x_pr) + 1/2 (g(f(x)) - d_obs)^T C_d^-1 (g(f(x)) - d_obs).

        Parameters
        ----------
        op : CovarianceOperator
            The prior covariance; its dense pseudo-inverse is used unless *prior_pinv* is given.
        x_pr : np.ndarray
            The prior mean.
        model : ForwardModel
            The forward model acting on transformed fields.
        observations : ObservationSet
            The observed data.
        transform : TransformKind
            The latent-to-log-permeability transform.
        prior_pinv : Optional[np.ndarray]
            A precomputed pseudo-inverse of C_x.
        """
        if prior_pinv is None:
            prior_pinv = PriorPrecision(op, PrecisionPolicy.PRIOR).prior_pinv
        self._prior_pinv = prior_pinv
        self._x_pr = np.asarray(x_pr, dtype=float)
        self._model = model
        self._observations = observations
        self._transform = transform

    def prior_term(self, X: np.ndarray) -> np.ndarray:
        R = X - self._x_pr[:, None]
        return 0.5 * np.sum(R * (self._prior_pinv @ R), axis=0)

    def data_term(self, X: np.ndarray, n_jobs: int = 1, progress: bool = False) -> np.ndarray:
        predictions = self._model.predict_ensemble(transforms.forward(self._transform, X), n_jobs=n_jobs, progress=progress)
        residuals = predictions - self._observations.d_obs[:, None]
        return 0.5 * np.sum(residuals ** 2 / self._observations.cd[:, None], axis=0)

    def evaluate(self, X: np.ndarray, n_jobs: int = 1, progress: bool = False) -> np.ndarray:
        """
        Evaluate the objective at every column of *X*.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self._x_pr.size:
            raise DimensionMismatch("Expected points with {} rows, got shape {}.".format(self._x_pr.size, X.shape))
        return self.prior_term(X) + self.data_term(X, n_jobs=n_jobs, progress=progress)

    def __call__(self, x: np.ndarray) -> float:
        return float(self.evaluate(np.asarray(x, dtype=float)[:, None])[0])


@dataclass
class LandscapeSlice:
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    anchor_coordinates: np.ndarray
    anchor_values: np.ndarray

    def point(self, alpha: float, beta: float) -> np.ndarray:
        return self.origin + alpha * self.e1 + beta * self.e2

    def nearest_index(self, alpha: float, beta: float) -> Tuple[int, int]:
        return int(np.argmin(np.abs(self.alphas - alpha))), int(np.argmin(np.abs(self.betas - beta)))

    def to_frame(self) -> pd.DataFrame:
        """
        The surface in long format, alpha varying slowest.
        """
        A, B = np.meshgrid(self.alphas, self.betas, indexing="ij")
        return pd.DataFrame({"alpha": A.ravel(), "beta": B.ravel(), "value": self.values.ravel()})

    def anchors_frame(self, names: Tuple[str, str, str] = ("a", "b", "c")) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "point": list(names),
                "alpha": self.anchor_coordinates[:, 0],
                "beta": self.anchor_coordinates[:, 1],
                "value": self.anchor_values,
            }
        )


@dataclass
class QuadraticFit:
    coefficients: np.ndarray
    hessian: np.ndarray
    residual: float

    @property
    def is_positive_definite(self) -> bool:
        return bool(np.all(np.linalg.eigvalsh(self.hessian) > 0))


def slice_basis(x_a: np.ndarray, x_b: np.ndarray, x_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gram-Schmidt on (x_b - x_a, x_c - x_a).

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        The basis vectors e_1, e_2 and the (alpha, beta) coordinates of the three points as a 3 x 2 array.
    """
    x_a, x_b, x_c = (np.asarray(v, dtype=float) for v in (x_a, x_b, x_c))
    if not (x_a.shape == x_b.shape == x_c.shape) or x_a.ndim != 1:
        raise DimensionMismatch(
            "Slice points must be vectors of equal length, got {}, {} and {}.".format(x_a.shape, x_b.shape, x_c.shape)
        )
    u = x_b - x_a
    v = x_c - x_a
    scale = max(np.linalg.norm(u), np.linalg.norm(v), 1.0)
    norm_u = np.linalg.norm(u)
    if norm_u < GRAM_SCHMIDT_TOLERANCE * scale:
        raise DegenerateBasis("The first two slice points coincide.")
    e1 = u / norm_u
    c1 = float(e1 @ v)
    w = v - c1 * e1
    norm_w = np.linalg.norm(w)
    if norm_w < GRAM_SCHMIDT_TOLERANCE * scale:
        raise DegenerateBasis("The three slice points are collinear (Gram-Schmidt residual {:.3g}).".format(norm_w))
    e2 = w / norm_w
    coordinates = np.array([[0.0, 0.0], [norm_u, 0.0], [c1, norm_w]])
    return e1, e2, coordinates


def _axis(lo: float, hi: float, grid_res: int, spacing: Optional[float] = None) -> np.ndarray:
    if spacing is None:
        spacing = (hi - lo) / (grid_res - 2)
    start = np.floor(lo / spacing)
    return (start + np.arange(grid_res)) * spacing


def slice_axes(coordinates: np.ndarray, grid_res: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Regular axes that cover the three points with a margin of *extent* times their spread.
    The alpha spacing divides |x_b - x_a| so that the first two points fall on grid nodes,
    unless such a spacing cannot reach the third point; then the alpha axis is uniform over the margin.
    """
    if grid_res < 3:
        raise EmptyGrid("A slice needs at least 3 nodes per axis, got {}.".format(grid_res))
    points_lo = min(0.0, coordinates[2, 0])
    points_hi = max(coordinates[1, 0], coordinates[2, 0])
    alpha_margin = extent * (points_hi - points_lo)
    alpha_lo, alpha_hi = points_lo - alpha_margin, points_hi + alpha_margin
    length_b = coordinates[1, 0]
    m = max(1, int(np.floor((grid_res - 2) * length_b / (alpha_hi - alpha_lo))))
    alphas = _axis(alpha_lo, alpha_hi, grid_res, length_b / m)
    if alphas[-1] < points_hi - 1e-12 * (points_hi - points_lo):
        alphas = _axis(alpha_lo, alpha_hi, grid_res)

    beta_span = coordinates[2, 1]
    betas = _axis(-extent * beta_span, (1.0 + extent) * beta_span, grid_res)
    return alphas, betas


def landscape_slice(
    x_a: np.ndarray,
    x_b: np.ndarray,
    x_c: np.ndarray,
    objective: NegativeLogPosterior,
    grid_res: int = 21,
    extent: float = 0.5,
    n_jobs: int = 1,
    progress: bool = False,
) -> LandscapeSlice:
    """
    Evaluate the objective on the plane through three points.

    Parameters
    ----------
    x_a : np.ndarray
        The origin of the slice.
    x_b : np.ndarray
        The point that fixes the first axis.
    x_c : np.ndarray
        The third point of the plane.
    objective : NegativeLogPosterior
        The objective, evaluated in batches.
    grid_res : int
        The number of grid nodes per axis.
    extent : float
        The margin around the three points as a fraction of their spread along each axis.
    n_jobs : int
        The number of parallel objective evaluations.
    progress : bool
        Whether to show a progress bar.

    Returns
    -------
    LandscapeSlice
        The grid_res x grid_res surface, indexed [alpha, beta], with the coordinates and values of the three points.
    """
    e1, e2, coordinates = slice_basis(x_a, x_b, x_c)
    alphas, betas = slice_axes(coordinates, grid_res, extent)
    origin = np.asarray(x_a, dtype=float)

    A, B = np.meshgrid(alphas, betas, indexing="ij")
    X = origin[:, None] + np.outer(e1, A.ravel()) + np.outer(e2, B.ravel())
    logger.info("Evaluating a {} x {} landscape slice.".format(grid_res, grid_res))
    values = objective.evaluate(X, n_jobs=n_jobs, progress=progress).reshape(grid_res, grid_res)

    anchor_points = origin[:, None] + np.outer(e1, coordinates[:, 0]) + np.outer(e2, coordinates[:, 1])
    anchor_values = objective.evaluate(anchor_points)
    return LandscapeSlice(
        alphas=alphas,
        betas=betas,
        values=values,
        origin=origin,
        e1=e1,
        e2=e2,
        anchor_coordinates=coordinates,
        anchor_values=anchor_values,
    )


def fit_quadratic(landscape: LandscapeSlice) -> QuadraticFit:
    """
    Least-squares fit of c0 + c1 a + c2 b + 1/2 (h11 a^2 + 2 h12 a b + h22 b^2) to the surface.
    """
    A, B = np.meshgrid(landscape.alphas, landscape.betas, indexing="ij")
    a, b, z = A.ravel(), B.ravel(), landscape.values.ravel()
    design = np.column_stack([np.ones_like(a), a, b, 0.5 * a ** 2, a * b, 0.5 * b ** 2])
    coefficients, _, _, _ = np.linalg.lstsq(design, z, rcond=None)
    hessian = np.array([[coefficients[3], coefficients[4]], [coefficients[4], coefficients[5]]])
    residual = float(np.sqrt(np.mean((design @ coefficients - z) ** 2)))
    return QuadraticFit(coefficients=coefficients, hessian=hessian, residual=residual)


def local_minima(values: np.ndarray) -> List[Tuple[int, int]]:
    """
    The interior grid nodes whose value is strictly below all eight neighbours.
    """
    values = np.asarray(values, dtype=float)
    center = values[1:-1, 1:-1]
    is_min = np.ones_like(center, dtype=bool)
    n_i, n_j = values.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbour = values[1 + di : n_i - 1 + di, 1 + dj : n_j - 1 + dj]
            is_min &= center < neighbour
    return [(int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(is_min))]
