"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module implements an incompressible, immiscible water/oil flow model on the 2D grid.
Pressure is discretized with the two-point flux approximation (TPFA) and saturation is transported
by an explicit upwind finite-volume scheme with CFL sub-stepping (IMPES).
Cells are centred on the grid nodes and have size hx x hy; all boundaries are no-flow.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from wrml.fields.grf import Grid2D
from wrml.utils.constants import (
    DEFAULT_TOTAL_RATE,
    PRODUCER_COORDINATES,
    SATURATION_CLIP_TOLERANCE,
    WELL_NAMES,
)
from wrml.utils.exceptions import CFLViolation, DimensionMismatch, SingularSystem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WellSet:
    producer_cells: Tuple[int, ...]
    producer_rates: Tuple[float, ...]
    injector_cells: Tuple[int, ...]
    injector_rates: Tuple[float, ...]
    producer_names: Tuple[str, ...] = tuple(WELL_NAMES)

    def __post_init__(self):
        if len(self.producer_cells) != len(self.producer_rates):
            raise ValueError("Each producer needs exactly one rate.")
        if len(self.injector_cells) != len(self.injector_rates):
            raise ValueError("Each injector needs exactly one rate.")
        if len(self.producer_names) != len(self.producer_cells):
            raise ValueError(
                "Expected {} producer names but got {}.".format(
                    len(self.producer_cells), len(self.producer_names)
                )
            )

    @classmethod
    def default(cls, grid: Grid2D, total_rate: float = DEFAULT_TOTAL_RATE) -> "WellSet":
        """
        Nine producers on the 3 x 3 pattern {0.1, 1.0, 1.9}^2 and four injectors in the domain corners.
        Producers share the total rate equally, as do injectors, so that the signed rates sum to zero.
        Producers are numbered left to right, then bottom to top.

        Parameters
        ----------
        grid : Grid2D
            The simulation grid.
        total_rate : float
            The total injection (and production) rate.

        Returns
        -------
        WellSet
            The well layout.
        """
        producers = tuple(
            grid.nearest_node(x, y) for y in PRODUCER_COORDINATES for x in PRODUCER_COORDINATES
        )
        x_max = (grid.nx_plus1 - 1) * grid.hx
        y_max = (grid.ny_plus1 - 1) * grid.hy
        injectors = tuple(
            grid.nearest_node(x, y) for (x, y) in [(0.0, 0.0), (x_max, 0.0), (0.0, y_max), (x_max, y_max)]
        )
        return cls(
            producer_cells=producers,
            producer_rates=tuple([-total_rate / len(producers)] * len(producers)),
            injector_cells=injectors,
            injector_rates=tuple([total_rate / len(injectors)] * len(injectors)),
        )

    def source_vector(self, n_cells: int) -> np.ndarray:
        q = np.zeros(n_cells)
        np.add.at(q, np.asarray(self.producer_cells, dtype=int), self.producer_rates)
        np.add.at(q, np.asarray(self.injector_cells, dtype=int), self.injector_rates)
        return q

    def to_dict(self) -> dict:
        return {
            "producers": [
                {"name": n, "cell": int(c), "rate": float(r)}
                for n, c, r in zip(self.producer_names, self.producer_cells, self.producer_rates)
            ],
            "injectors": [
                {"cell": int(c), "rate": float(r)} for c, r in zip(self.injector_cells, self.injector_rates)
            ],
        }


@dataclass(frozen=True)
class FlowConfig:
    grid: Grid2D
    wells: WellSet
    porosity: float = 0.2
    mu_w: float = 1.0
    mu_o: float = 1.0
    krw_exponent: float = 2.0
    kro_exponent: float = 2.0
    dt: float = 0.1
    t_end: float = 70.0
    max_substeps: int = 1000

    def __post_init__(self):
        if not (0.0 < self.porosity <= 1.0):
            raise ValueError("Porosity must lie in (0, 1], got {}.".format(self.porosity))
        if not (self.mu_w > 0 and self.mu_o > 0):
            raise ValueError("Viscosities must be positive, got {} and {}.".format(self.mu_w, self.mu_o))
        if not self.dt > 0:
            raise ValueError("The time step must be positive, got {}.".format(self.dt))
        if self.max_substeps < 1:
            raise ValueError("At least one transport sub-step is needed.")

    @classmethod
    def default(cls, grid: Optional[Grid2D] = None, total_rate: float = DEFAULT_TOTAL_RATE, **kwargs) -> "FlowConfig":
        if grid is None:
            grid = Grid2D.from_domain(2.0, 2.0, 41, 41)
        return cls(grid=grid, wells=WellSet.default(grid, total_rate), **kwargs)

    @property
    def n_cells(self) -> int:
        return self.grid.n_nodes

    @property
    def pore_volume(self) -> float:
        return self.grid.hx * self.grid.hy * self.porosity

    @property
    def sources(self) -> np.ndarray:
        return self.wells.source_vector(self.n_cells)


@dataclass
class FaceFluxes:
    """
    Total Darcy fluxes through cell faces; positive means towards increasing x (resp. y).
    *x* has shape (ny_plus1, nx_plus1 + 1) and *y* has shape (ny_plus1 + 1, nx_plus1); boundary faces are zero.
    """

    x: np.ndarray
    y: np.ndarray

    def net_outflow(self) -> np.ndarray:
        out = self.x[:, 1:] - self.x[:, :-1] + self.y[1:, :] - self.y[:-1, :]
        return out.ravel()

    def max_abs(self) -> float:
        return float(max(np.abs(self.x).max(initial=0.0), np.abs(self.y).max(initial=0.0)))


@dataclass
class FlowState:
    pressure: np.ndarray
    saturation: np.ndarray
    time: float = 0.0
    injected_water: float = 0.0
    produced_water: float = 0.0


@dataclass
class FlowResult:
    water_cut: np.ndarray
    state: FlowState
    max_flux_imbalance: float = 0.0
    water_balance_error: float = 0.0


def mobilities(s: np.ndarray, cfg: FlowConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Water and oil mobilities with Corey relative permeabilities.
    """
    mw = s ** cfg.krw_exponent / cfg.mu_w
    mo = (1.0 - s) ** cfg.kro_exponent / cfg.mu_o
    return mw, mo


def fractional_flow(s: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    mw, mo = mobilities(np.asarray(s, dtype=float), cfg)
    return mw / (mw + mo)


@lru_cache(maxsize=32)
def _max_fractional_flow_slope(mu_w: float, mu_o: float, krw_exponent: float, kro_exponent: float) -> float:
    s = np.linspace(0.0, 1.0, 4001)
    mw = s ** krw_exponent / mu_w
    mo = (1.0 - s) ** kro_exponent / mu_o
    slope = np.abs(np.gradient(mw / (mw + mo), s))
    return float(slope.max()) * 1.05


def max_fractional_flow_slope(cfg: FlowConfig) -> float:
    return _max_fractional_flow_slope(cfg.mu_w, cfg.mu_o, cfg.krw_exponent, cfg.kro_exponent)


def _check_closure(q: np.ndarray):
    total = float(q.sum())
    scale = float(np.abs(q).sum())
    if abs(total) > 1e-12 * max(scale, 1.0):
        raise SingularSystem(
            "Well rates sum to {:.6g} instead of zero; the no-flow pressure problem has no solution.".format(total)
        )


def pressure_solve(K: np.ndarray, s: np.ndarray, cfg: FlowConfig) -> Tuple[np.ndarray, FaceFluxes]:
    """
    Solve -div(K lambda(s) grad p) = q with no-flow boundaries by TPFA.
    Transmissibilities use the harmonic mean of the cell values of K * lambda, and cell 0 is pinned to p = 0.

    Parameters
    ----------
    K : np.ndarray
        Cell permeabilities, strictly positive.
    s : np.ndarray
        Cell water saturations.
    cfg : FlowConfig
        The flow configuration.

    Returns
    -------
    Tuple[np.ndarray, FaceFluxes]
        The gauge-fixed cell pressures and the conservative face fluxes.
    """
    K = np.asarray(K, dtype=float)
    s = np.asarray(s, dtype=float)
    if K.shape != (cfg.n_cells,) or s.shape != (cfg.n_cells,):
        raise DimensionMismatch(
            "Expected permeability and saturation vectors of length {} but got {} and {}.".format(
                cfg.n_cells, K.shape, s.shape
            )
        )
    if not np.all(K > 0):
        raise ValueError("Permeability must be strictly positive.")

    q = cfg.sources
    _check_closure(q)

    grid = cfg.grid
    ny1, nx1 = grid.shape
    mw, mo = mobilities(s, cfg)
    inv_km = 1.0 / (K * (mw + mo)).reshape(ny1, nx1)

    tx = 2.0 * grid.hy / grid.hx / (inv_km[:, :-1] + inv_km[:, 1:])
    ty = 2.0 * grid.hx / grid.hy / (inv_km[:-1, :] + inv_km[1:, :])

    index = np.arange(cfg.n_cells).reshape(ny1, nx1)
    left, right = index[:, :-1].ravel(), index[:, 1:].ravel()
    lower, upper = index[:-1, :].ravel(), index[1:, :].ravel()
    first = np.concatenate([left, lower])
    second = np.concatenate([right, upper])
    t = np.concatenate([tx.ravel(), ty.ravel()])

    rows = np.concatenate([first, second, first, second])
    cols = np.concatenate([first, second, second, first])
    data = np.concatenate([t, t, -t, -t])
    A = sparse.coo_matrix((data, (rows, cols)), shape=(cfg.n_cells, cfg.n_cells)).tocsr()

    # Gauge: p[0] = 0. Row 0 then holds automatically because the rows of A and the rates both sum to zero.
    p = np.zeros(cfg.n_cells)
    if np.any(q != 0):
        p[1:] = spsolve(A[1:, 1:].tocsc(), q[1:])

    P = p.reshape(ny1, nx1)
    fluxes = FaceFluxes(x=np.zeros((ny1, nx1 + 1)), y=np.zeros((ny1 + 1, nx1)))
    fluxes.x[:, 1:-1] = tx * (P[:, :-1] - P[:, 1:])
    fluxes.y[1:-1, :] = ty * (P[:-1, :] - P[1:, :])
    return p, fluxes


def flux_imbalance(fluxes: FaceFluxes, cfg: FlowConfig) -> float:
    """
    The largest per-cell mismatch between net outflow and source, relative to the largest face flux.
    """
    scale = fluxes.max_abs()
    mismatch = float(np.abs(fluxes.net_outflow() - cfg.sources).max())
    return mismatch / scale if scale > 0 else mismatch


def cfl_substeps(fluxes: FaceFluxes, cfg: FlowConfig, dt: Optional[float] = None) -> int:
    """
    The number of upwind sub-steps needed to keep saturations in [0, 1] over a step of length *dt*.
    """
    dt = cfg.dt if dt is None else dt
    q = cfg.sources.reshape(cfg.grid.shape)
    vx, vy = fluxes.x, fluxes.y
    outflow = (
        vx[:, 1:].clip(min=0) - vx[:, :-1].clip(max=0) + vy[1:, :].clip(min=0) - vy[:-1, :].clip(max=0) - q.clip(max=0)
    )
    inflow = (
        vx[:, :-1].clip(min=0) - vx[:, 1:].clip(max=0) + vy[:-1, :].clip(min=0) - vy[1:, :].clip(max=0) + q.clip(min=0)
    )
    throughput = np.maximum(outflow, inflow).max()
    if throughput <= 0:
        return 1
    dt_cfl = cfg.pore_volume / (max_fractional_flow_slope(cfg) * throughput)
    return max(1, int(np.ceil(dt / dt_cfl)))


def saturation_step(
    state: FlowState, fluxes: FaceFluxes, cfg: FlowConfig, dt: Optional[float] = None
) -> FlowState:
    """
    Advance the water saturation over one outer step with explicit upwind transport.
    The source term is max(q, 0) + f(s) min(q, 0): injectors inject pure water, producers produce the local mixture.

    Parameters
    ----------
    state : FlowState
        The current state.
    fluxes : FaceFluxes
        Face fluxes of the latest pressure solve, frozen over the step.
    cfg : FlowConfig
        The flow configuration.
    dt : Optional[float]
        The step length, *cfg.dt* by default.

    Returns
    -------
    FlowState
        The new state, carrying the cumulative injected and produced water volumes.
    """
    dt = cfg.dt if dt is None else dt
    n_sub = cfl_substeps(fluxes, cfg, dt)
    if n_sub > cfg.max_substeps:
        raise CFLViolation(
            "Transport needs {} sub-steps at t={:.4g}, above the cap of {}.".format(n_sub, state.time, cfg.max_substeps)
        )
    logger.debug("Transport step at t={:.4g} uses {} sub-steps.".format(state.time, n_sub))

    ny1, nx1 = cfg.grid.shape
    q = cfg.sources.reshape(ny1, nx1)
    q_in, q_out = q.clip(min=0), q.clip(max=0)
    vx_inner = fluxes.x[:, 1:-1]
    vy_inner = fluxes.y[1:-1, :]
    x_from_left = vx_inner > 0
    y_from_below = vy_inner > 0
    dts = dt / n_sub
    ratio = dts / cfg.pore_volume

    S = state.saturation.reshape(ny1, nx1).copy()
    fx = np.zeros_like(fluxes.x)
    fy = np.zeros_like(fluxes.y)
    injected = state.injected_water
    produced = state.produced_water
    max_clip = 0.0
    for _ in range(n_sub):
        fw = fractional_flow(S, cfg)
        fx[:, 1:-1] = np.where(x_from_left, fw[:, :-1], fw[:, 1:]) * vx_inner
        fy[1:-1, :] = np.where(y_from_below, fw[:-1, :], fw[1:, :]) * vy_inner
        net_out = fx[:, 1:] - fx[:, :-1] + fy[1:, :] - fy[:-1, :]
        production = fw * q_out
        S = S + ratio * (q_in + production - net_out)
        max_clip = max(max_clip, float(S.max()) - 1.0, -float(S.min()))
        np.clip(S, 0.0, 1.0, out=S)
        injected += dts * float(q_in.sum())
        produced -= dts * float(production.sum())

    if max_clip > SATURATION_CLIP_TOLERANCE:
        logger.warning(
            "Saturation left [0, 1] by {:.3g} at t={:.4g} and was clipped; water balance is no longer exact.".format(
                max_clip, state.time
            )
        )
    return FlowState(
        pressure=state.pressure,
        saturation=S.ravel(),
        time=state.time + dt,
        injected_water=injected,
        produced_water=produced,
    )


def _observation_steps(obs_times: Sequence[float], cfg: FlowConfig) -> np.ndarray:
    times = np.asarray(obs_times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("At least one observation time is needed.")
    if np.any(np.diff(times) <= 0):
        raise ValueError("Observation times must be strictly increasing.")
    if times[-1] > cfg.t_end + 1e-9:
        raise ValueError("Observation time {} lies beyond t_end={}.".format(times[-1], cfg.t_end))
    steps = np.rint(times / cfg.dt).astype(int)
    if np.any(np.abs(steps * cfg.dt - times) > 1e-9) or steps[0] < 1:
        raise ValueError("Observation times must be positive multiples of dt={}.".format(cfg.dt))
    return steps


def run_flow(K: np.ndarray, cfg: FlowConfig, obs_times: Sequence[float]) -> FlowResult:
    """
    Run the IMPES loop from s = 0 to the last observation time and record diagnostics.

    Parameters
    ----------
    K : np.ndarray
        Cell permeabilities.
    cfg : FlowConfig
        The flow configuration.
    obs_times : Sequence[float]
        Strictly increasing multiples of *cfg.dt*.

    Returns
    -------
    FlowResult
        Water cut at the producers (n_times x n_producers) plus the final state,
        the largest relative flux imbalance of all pressure solves and the global water balance error.
    """
    steps = _observation_steps(obs_times, cfg)
    producers = np.asarray(cfg.wells.producer_cells, dtype=int)
    water_cut = np.zeros((len(steps), len(producers)))

    state = FlowState(pressure=np.zeros(cfg.n_cells), saturation=np.zeros(cfg.n_cells))
    max_imbalance = 0.0
    row = 0
    for step in range(1, steps[-1] + 1):
        p, fluxes = pressure_solve(K, state.saturation, cfg)
        max_imbalance = max(max_imbalance, flux_imbalance(fluxes, cfg))
        state.pressure = p
        state = saturation_step(state, fluxes, cfg)
        state.time = step * cfg.dt
        if step == steps[row]:
            water_cut[row] = fractional_flow(state.saturation[producers], cfg)
            row += 1

    stored = cfg.pore_volume * float(state.saturation.sum())
    balance_error = abs(stored - (state.injected_water - state.produced_water))
    return FlowResult(
        water_cut=water_cut,
        state=state,
        max_flux_imbalance=max_imbalance,
        water_balance_error=balance_error,
    )


def simulate(K: np.ndarray, cfg: FlowConfig, obs_times: Sequence[float]) -> np.ndarray:
    """
    Water cut f(s) at every producer cell and observation time, shape (n_times, n_producers).
    """
    return run_flow(K, cfg, obs_times).water_cut
