"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module exposes stationary Gaussian random-field functionality on regular 2D grids:
covariance evaluation, minimal circulant embedding of the level-2 block-Toeplitz covariance,
FFT-accelerated covariance products and prior sampling.
Node ordering is row-major, left to right then bottom to top, i.e. node (i, j) has flat index j * nx_plus1 + i.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft as sfft

from wrml.utils.constants import (
    DENSE_THRESHOLD,
    EMBEDDING_CLIP_TOLERANCE,
    EMBEDDING_MAX_DOUBLINGS,
)
from wrml.utils.exceptions import DimensionMismatch, NonPositiveEmbedding

logger = logging.getLogger(__name__)

# Number of complex white-noise fields generated per FFT batch while sampling.
SAMPLING_BATCH = 256


class CovarianceKind(Enum):
    OSCILLATORY_EXPONENTIAL = "oscillatory-exponential"


@dataclass(frozen=True)
class Grid2D:
    nx_plus1: int
    ny_plus1: int
    hx: float
    hy: float

    def __post_init__(self):
        if self.nx_plus1 < 2 or self.ny_plus1 < 2:
            raise ValueError(
                "A grid needs at least 2 nodes per direction, got {} x {}.".format(
                    self.nx_plus1, self.ny_plus1
                )
            )
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError(
                "Mesh sizes must be positive, got hx={} and hy={}.".format(self.hx, self.hy)
            )

    @classmethod
    def from_domain(cls, length_x: float, length_y: float, nx_plus1: int, ny_plus1: int) -> "Grid2D":
        """
        Create the grid whose nodes span [0, length_x] x [0, length_y] inclusively.
        """
        return cls(
            nx_plus1=nx_plus1,
            ny_plus1=ny_plus1,
            hx=length_x / (nx_plus1 - 1),
            hy=length_y / (ny_plus1 - 1),
        )

    @property
    def n_nodes(self) -> int:
        return self.nx_plus1 * self.ny_plus1

    @property
    def shape(self) -> Tuple[int, int]:
        """
        The (rows, columns) shape of a field reshaped from its flat vector: rows are y, columns are x.
        """
        return self.ny_plus1, self.nx_plus1

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Return the flat x and y node coordinates in grid order.
        """
        xs = np.arange(self.nx_plus1) * self.hx
        ys = np.arange(self.ny_plus1) * self.hy
        xx, yy = np.meshgrid(xs, ys)
        return xx.ravel(), yy.ravel()

    def nearest_node(self, x: float, y: float) -> int:
        i = int(np.clip(np.rint(x / self.hx), 0, self.nx_plus1 - 1))
        j = int(np.clip(np.rint(y / self.hy), 0, self.ny_plus1 - 1))
        return j * self.nx_plus1 + i


@dataclass(frozen=True)
class CovarianceSpec:
    sigma: float
    rho: float
    kind: CovarianceKind = CovarianceKind.OSCILLATORY_EXPONENTIAL

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho > 0):
            raise ValueError(
                "The covariance needs sigma > 0 and rho > 0, got sigma={} and rho={}.".format(
                    self.sigma, self.rho
                )
            )


def covariance_value(spec: CovarianceSpec, dx, dy):
    """
    Evaluate the stationary covariance at the lag (dx, dy).

    Parameters
    ----------
    spec : CovarianceSpec
        The covariance parameters.
    dx : float or np.ndarray
        Lag along x.
    dy : float or np.ndarray
        Lag along y.

    Returns
    -------
    float or np.ndarray
        sigma^2 (1 - r^2 / rho^2) exp(-r^2 / rho^2) with r^2 = dx^2 + dy^2.
    """
    u = (np.square(dx) + np.square(dy)) / spec.rho ** 2
    return spec.sigma ** 2 * (1.0 - u) * np.exp(-u)


def dense_covariance(spec: CovarianceSpec, grid: Grid2D) -> np.ndarray:
    """
    Materialize the full N_x x N_x covariance matrix by direct evaluation.
    """
    xs, ys = grid.coordinates()
    return covariance_value(spec, xs[:, None] - xs[None, :], ys[:, None] - ys[None, :])


def _embedded_first_column(spec: CovarianceSpec, grid: Grid2D, factor: int) -> np.ndarray:
    """
    Build the first column of the periodic embedding of size (2 * factor * ny_plus1, 2 * factor * nx_plus1).
    With factor 1 every block row is (r_0j, ..., r_nx j, phi_j, r_-nx j, ..., r_-1 j),
    the fill phi_j being the covariance at the wrap-around lag.
    """
    n1 = 2 * factor * grid.nx_plus1
    n2 = 2 * factor * grid.ny_plus1
    lag_x = np.arange(n1)
    lag_x = np.where(lag_x <= n1 // 2, lag_x, lag_x - n1) * grid.hx
    lag_y = np.arange(n2)
    lag_y = np.where(lag_y <= n2 // 2, lag_y, lag_y - n2) * grid.hy
    dx, dy = np.meshgrid(lag_x, lag_y)
    return covariance_value(spec, dx, dy)


def _embedding_spectrum(spec: CovarianceSpec, grid: Grid2D, factor: int) -> np.ndarray:
    # The embedding is real and symmetric, so its eigenvalues are the real part of the 2D FFT.
    return np.real(sfft.fft2(_embedded_first_column(spec, grid, factor)))


class CovarianceOperator:
    def __init__(
        self,
        spec: CovarianceSpec,
        grid: Grid2D,
        embedded_spectrum: np.ndarray,
        sampling_sqrt_spectrum: Optional[np.ndarray],
        min_eigenvalue: float,
        max_eigenvalue: float,
    ):
        """
        The stationary prior covariance C_x of a 2D grid, applied through its circulant embedding.
        Instances are created by *build_embedding* and never change afterwards.

        Parameters
        ----------
        spec : CovarianceSpec
            The covariance parameters.
        grid : Grid2D
            The grid the covariance is defined on.
        embedded_spectrum : np.ndarray
            Eigenvalues of the minimal embedding, shape (2 * ny_plus1, 2 * nx_plus1).
            Used for products, which are exact whatever the sign of the eigenvalues.
        sampling_sqrt_spectrum : Optional[np.ndarray]
            Square roots of the clipped eigenvalues of the smallest nonnegative embedding found.
            None if no nonnegative embedding was found, in which case sampling is unavailable.
        min_eigenvalue : float
            The smallest raw eigenvalue of the sampling embedding (or of the last embedding tried).
        max_eigenvalue : float
            The largest raw eigenvalue of that same embedding.
        """
        self._spec = spec
        self._grid = grid
        self._embedded_spectrum = embedded_spectrum
        self._embedded_spectrum.setflags(write=False)
        self._half_spectrum = embedded_spectrum[:, : embedded_spectrum.shape[1] // 2 + 1].copy()
        self._half_spectrum.setflags(write=False)
        self._sampling_sqrt_spectrum = sampling_sqrt_spectrum
        if sampling_sqrt_spectrum is not None:
            self._sampling_sqrt_spectrum.setflags(write=False)
        self._min_eigenvalue = min_eigenvalue
        self._max_eigenvalue = max_eigenvalue
        self._dense = None

    @property
    def spec(self) -> CovarianceSpec:
        return self._spec

    @property
    def grid(self) -> Grid2D:
        return self._grid

    @property
    def n(self) -> int:
        return self._grid.n_nodes

    @property
    def embedded_spectrum(self) -> np.ndarray:
        return self._embedded_spectrum

    @property
    def sampling_sqrt_spectrum(self) -> Optional[np.ndarray]:
        return self._sampling_sqrt_spectrum

    @property
    def sampling_shape(self) -> Optional[Tuple[int, int]]:
        if self._sampling_sqrt_spectrum is None:
            return None
        return self._sampling_sqrt_spectrum.shape

    @property
    def is_nonnegative(self) -> bool:
        return self._sampling_sqrt_spectrum is not None

    @property
    def eigenvalue_range(self) -> Tuple[float, float]:
        return self._min_eigenvalue, self._max_eigenvalue

    @property
    def dense(self) -> Optional[np.ndarray]:
        """
        The dense covariance matrix, materialized lazily for grids with at most DENSE_THRESHOLD nodes.
        None for larger grids.
        """
        if self.n > DENSE_THRESHOLD:
            return None
        if self._dense is None:
            dense = dense_covariance(self._spec, self._grid)
            dense.setflags(write=False)
            self._dense = dense
        return self._dense

    def __getstate__(self):
        d = self.__dict__
        return {k: d[k] for k in d if k != "_dense"}

    def __setstate__(self, state):
        self.__dict__ = state
        self._dense = None


def build_embedding(
    spec: CovarianceSpec,
    grid: Grid2D,
    max_doublings: int = EMBEDDING_MAX_DOUBLINGS,
    tolerance: float = EMBEDDING_CLIP_TOLERANCE,
    strict: bool = False,
) -> CovarianceOperator:
    """
    Construct the circulant-embedded covariance operator of the given grid.

    The minimal embedding (2 * nx_plus1 by 2 * ny_plus1) is always kept for covariance products.
    For sampling, the minimal embedding is tried first and then enlarged by doubling,
    at most *max_doublings* times, until its eigenvalues are nonnegative up to *tolerance* times the largest one.
    Eigenvalues within that tolerance below zero are clipped to zero.

    Parameters
    ----------
    spec : CovarianceSpec
        The covariance parameters.
    grid : Grid2D
        The grid.
    max_doublings : int
        How many times the embedding may be doubled in each direction for sampling.
    tolerance : float
        Relative clip tolerance for negative eigenvalues.
    strict : bool
        If True raise NonPositiveEmbedding when no nonnegative embedding is found.
        Otherwise the operator is returned without sampling support.

    Returns
    -------
    CovarianceOperator
        The immutable operator.
    """

    minimal_spectrum = _embedding_spectrum(spec, grid, factor=1)

    sampling_sqrt = None
    lam_min, lam_max = float(minimal_spectrum.min()), float(minimal_spectrum.max())
    for doubling in range(max_doublings + 1):
        factor = 2 ** doubling
        spectrum = minimal_spectrum if factor == 1 else _embedding_spectrum(spec, grid, factor)
        lam_min, lam_max = float(spectrum.min()), float(spectrum.max())
        if lam_min >= -tolerance * lam_max:
            sampling_sqrt = np.sqrt(np.clip(spectrum, 0.0, None))
            logger.debug(
                "Nonnegative embedding of shape {} found (min eigenvalue {:.3g}, max {:.3g}).".format(
                    spectrum.shape, lam_min, lam_max
                )
            )
            break
        if doubling < max_doublings:
            logger.warning(
                "Embedding of shape {} is indefinite (min eigenvalue {:.3g}, max {:.3g}); doubling it.".format(
                    spectrum.shape, lam_min, lam_max
                )
            )

    if sampling_sqrt is None:
        shape = (2 * 2 ** max_doublings * grid.ny_plus1, 2 * 2 ** max_doublings * grid.nx_plus1)
        if strict:
            raise NonPositiveEmbedding(lam_min, lam_max, shape)
        logger.warning(
            "No nonnegative embedding up to shape {}; the operator supports products only.".format(shape)
        )

    return CovarianceOperator(
        spec=spec,
        grid=grid,
        embedded_spectrum=minimal_spectrum,
        sampling_sqrt_spectrum=sampling_sqrt,
        min_eigenvalue=lam_min,
        max_eigenvalue=lam_max,
    )


def apply_cov(op: CovarianceOperator, v: np.ndarray) -> np.ndarray:
    """
    Compute C_x v by injecting v into the embedding, FFT, pointwise scaling by the spectrum, inverse FFT and extraction.

    Parameters
    ----------
    op : CovarianceOperator
        The covariance operator.
    v : np.ndarray
        A vector of length N_x or a matrix of shape (N_x, k) whose columns are multiplied.

    Returns
    -------
    np.ndarray
        The product, with the same shape as *v*.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != op.n or v.ndim > 2:
        raise DimensionMismatch(
            "Expected an array with {} rows but got shape {}.".format(op.n, v.shape)
        )

    ny1, nx1 = op.grid.shape
    n2, n1 = op.embedded_spectrum.shape
    columns = v.reshape(op.n, -1)
    k = columns.shape[1]

    embedded = np.zeros((n2, n1, k))
    embedded[:ny1, :nx1, :] = columns.reshape(ny1, nx1, k)
    transformed = sfft.rfft2(embedded, axes=(0, 1))
    transformed *= op._half_spectrum[:, :, None]
    product = sfft.irfft2(transformed, s=(n2, n1), axes=(0, 1))[:ny1, :nx1, :]

    return product.reshape(op.n, k).reshape(v.shape)


def sample_prior(
    op: CovarianceOperator, mean: np.ndarray, rng_seed: int, count: int
) -> List[np.ndarray]:
    """
    Draw independent samples from N(mean, C_x) with the spectral square root of the circulant embedding.
    Each complex white-noise field yields two independent real fields (its real and imaginary parts).

    Parameters
    ----------
    op : CovarianceOperator
        The covariance operator. It must hold a nonnegative embedding.
    mean : np.ndarray
        The mean vector of length N_x.
    rng_seed : int
        Seed of the random stream; equal seeds give identical samples.
    count : int
        The number of samples.

    Returns
    -------
    List[np.ndarray]
        *count* vectors of length N_x.
    """
    if op.sampling_sqrt_spectrum is None:
        lam_min, lam_max = op.eigenvalue_range
        raise NonPositiveEmbedding(lam_min, lam_max, op.embedded_spectrum.shape)
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (op.n,):
        raise DimensionMismatch(
            "Expected a mean of length {} but got shape {}.".format(op.n, mean.shape)
        )
    if count <= 0:
        return []

    rng = np.random.default_rng(rng_seed)
    sqrt_spectrum = op.sampling_sqrt_spectrum
    n2, n1 = sqrt_spectrum.shape
    ny1, nx1 = op.grid.shape
    scale = np.sqrt(n1 * n2)

    samples = []
    remaining_pairs = (count + 1) // 2
    while remaining_pairs > 0:
        batch = min(SAMPLING_BATCH, remaining_pairs)
        noise = rng.standard_normal((batch, n2, n1)) + 1j * rng.standard_normal((batch, n2, n1))
        fields = scale * sfft.ifft2(sqrt_spectrum[None, :, :] * noise, axes=(1, 2))
        fields = fields[:, :ny1, :nx1]
        for field in fields:
            samples.append(mean + field.real.ravel())
            samples.append(mean + field.imag.ravel())
        remaining_pairs -= batch

    return samples[:count]
