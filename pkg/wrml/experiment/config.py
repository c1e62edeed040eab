"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the experiment configuration.
Configurations are trees of frozen dataclasses read from and written to YAML;
every key has a default, so an empty file describes the desk-scale study.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from wrml.assimilation.linalg import PrecisionPolicy
from wrml.assimilation.smoother import LMSchedule, UpdateMode
from wrml.fields.grf import CovarianceSpec, Grid2D
from wrml.fields.transforms import TransformKind
from wrml.simulation.flowsim import FlowConfig, WellSet
from wrml.utils.constants import (
    DEFAULT_TOTAL_RATE,
    DENSE_THRESHOLD,
    EMBEDDING_CLIP_TOLERANCE,
    EMBEDDING_MAX_DOUBLINGS,
    LM_GAMMA,
    LM_MAX_ITERATIONS,
    LM_MAX_REJECTIONS,
    LM_PATIENCE,
    LM_REL_TOL,
    NOISE_MODEL_DEFAULTS,
)
from wrml.utils.exceptions import ConfigError
from wrml.utils.functions import derive_seed, ensure_parent_dir, sha256_text

STREAM_NAMES = ["truth", "observation_noise", "prior", "tune_prior", "replicate-common"]
RUNTIME_KEYS = ("n_jobs", "progress", "output_dir")


def _require(condition: bool, message: str, *args):
    if not condition:
        raise ConfigError(message.format(*args))


@dataclass(frozen=True)
class GridConfig:
    nx_plus1: int = 21
    ny_plus1: int = 21
    length_x: float = 2.0
    length_y: float = 2.0

    def __post_init__(self):
        _require(self.nx_plus1 >= 2 and self.ny_plus1 >= 2, "Grid needs at least 2 x 2 nodes.")
        _require(self.length_x > 0 and self.length_y > 0, "Domain lengths must be positive.")

    def to_grid(self) -> Grid2D:
        return Grid2D.from_domain(self.length_x, self.length_y, self.nx_plus1, self.ny_plus1)


@dataclass(frozen=True)
class CovarianceConfig:
    sigma: float = 0.8
    rho: float = 1.1
    max_doublings: int = EMBEDDING_MAX_DOUBLINGS
    clip_tolerance: float = EMBEDDING_CLIP_TOLERANCE

    def __post_init__(self):
        _require(self.sigma > 0 and self.rho > 0, "Covariance needs sigma > 0 and rho > 0.")
        _require(self.max_doublings >= 0, "max_doublings must be nonnegative.")

    def to_spec(self) -> CovarianceSpec:
        return CovarianceSpec(sigma=self.sigma, rho=self.rho)


@dataclass(frozen=True)
class FlowSettings:
    porosity: float = 0.2
    mu_w: float = 1.0
    mu_o: float = 1.0
    krw_exponent: float = 2.0
    kro_exponent: float = 2.0
    dt: float = 0.1
    total_rate: float = DEFAULT_TOTAL_RATE
    max_substeps: int = 1000

    def __post_init__(self):
        _require(0 < self.porosity <= 1, "Porosity must lie in (0, 1], got {}.", self.porosity)
        _require(self.mu_w > 0 and self.mu_o > 0, "Viscosities must be positive.")
        _require(self.dt > 0, "dt must be positive, got {}.", self.dt)
        _require(self.total_rate > 0, "total_rate must be positive, got {}.", self.total_rate)
        _require(self.max_substeps >= 1, "max_substeps must be at least 1.")

    def to_flow_config(self, grid: Grid2D, t_end: float) -> FlowConfig:
        return FlowConfig(
            grid=grid,
            wells=WellSet.default(grid, self.total_rate),
            porosity=self.porosity,
            mu_w=self.mu_w,
            mu_o=self.mu_o,
            krw_exponent=self.krw_exponent,
            kro_exponent=self.kro_exponent,
            dt=self.dt,
            t_end=t_end,
            max_substeps=self.max_substeps,
        )


@dataclass(frozen=True)
class ObservationConfig:
    noise_std: float = 0.02
    interval: float = 1.0
    history_end: float = 60.0
    forecast_time: float = 70.0

    def __post_init__(self):
        _require(self.noise_std >= 0, "noise_std must be nonnegative.")
        _require(0 < self.interval <= self.history_end, "Need 0 < interval <= history_end.")
        _require(self.forecast_time > self.history_end, "The forecast time must follow the history.")

    @property
    def history_times(self) -> Tuple[float, ...]:
        n = int(round(self.history_end / self.interval))
        return tuple(float(np.round((i + 1) * self.interval, 10)) for i in range(n))


@dataclass(frozen=True)
class SmootherConfig:
    gamma: float = LM_GAMMA
    rel_tol: float = LM_REL_TOL
    patience: int = LM_PATIENCE
    max_iterations: int = LM_MAX_ITERATIONS
    max_rejections: int = LM_MAX_REJECTIONS
    lambda_init: Optional[float] = None

    def __post_init__(self):
        _require(self.gamma > 1, "gamma must exceed 1, got {}.", self.gamma)
        _require(self.max_iterations >= 1, "max_iterations must be at least 1.")

    def to_schedule(self) -> LMSchedule:
        return LMSchedule(
            gamma=self.gamma,
            rel_tol=self.rel_tol,
            patience=self.patience,
            max_iterations=self.max_iterations,
            max_rejections=self.max_rejections,
            lambda_init=self.lambda_init,
        )


@dataclass(frozen=True)
class WeightConfig:
    precision: str = "ensemble"
    full_formula: bool = False

    def __post_init__(self):
        _require(
            self.precision in [p.value for p in PrecisionPolicy],
            "Unknown precision policy <{}>.",
            self.precision,
        )


@dataclass(frozen=True)
class NoiseModelConfig:
    """
    Unset parameters fall back to the values tuned for the configured transform;
    sigma_o is estimated by the replicate study when that is enabled.
    """

    sigma_o: Optional[float] = None
    sigma_pr: Optional[float] = None
    nu: Optional[float] = None
    omega_pr: Optional[float] = None
    tune: bool = True
    sigma_pr_factors: Tuple[float, ...] = (0.5, 1.0, 2.0)
    nu_grid: Tuple[float, ...] = (2.0, 3.0, 4.0, 6.0)

    def __post_init__(self):
        for name in ("sigma_o", "sigma_pr"):
            value = getattr(self, name)
            _require(value is None or value > 0, "{} must be positive, got {}.", name, value)
        _require(self.nu is None or self.nu >= 1, "nu must be at least 1, got {}.", self.nu)
        _require(len(self.sigma_pr_factors) > 0 and len(self.nu_grid) > 0, "The prior tuning grid is empty.")


@dataclass(frozen=True)
class SweepConfig:
    exponents: Tuple[float, ...] = tuple(float(np.round(i / 20.0, 10)) for i in range(21))

    def __post_init__(self):
        _require(len(self.exponents) > 0, "The sweep needs at least one exponent.")
        _require(all(0.0 <= e <= 1.0 for e in self.exponents), "Sweep exponents must lie in [0, 1].")


@dataclass(frozen=True)
class LandscapeConfig:
    enabled: bool = True
    grid_res: int = 21
    extent: float = 0.5

    def __post_init__(self):
        _require(self.grid_res >= 3, "grid_res must be at least 3.")
        _require(self.extent >= 0, "extent must be nonnegative.")


@dataclass(frozen=True)
class ReplicateConfig:
    enabled: bool = False
    n_ensembles: int = 8
    size: int = 50

    def __post_init__(self):
        _require(self.n_ensembles >= 3, "The replicate study needs at least 3 ensembles.")
        _require(self.size >= 3, "Replicate ensembles need at least 3 members.")


_SECTIONS = {
    "grid": GridConfig,
    "covariance": CovarianceConfig,
    "flow": FlowSettings,
    "observations": ObservationConfig,
    "smoother": SmootherConfig,
    "weights": WeightConfig,
    "noise_model": NoiseModelConfig,
    "sweep": SweepConfig,
    "landscape": LandscapeConfig,
    "replicate": ReplicateConfig,
}


def _section_from_dict(cls, values: Optional[Dict[str, Any]], name: str):
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigError("Section <{}> must be a mapping.".format(name))
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError("Unknown keys in section <{}>: {}.".format(name, unknown))
    kwargs = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError("Invalid section <{}>: {}".format(name, e))


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    covariance: CovarianceConfig = field(default_factory=CovarianceConfig)
    transform: str = "non-monotonic"
    flow: FlowSettings = field(default_factory=FlowSettings)
    observations: ObservationConfig = field(default_factory=ObservationConfig)
    ensemble_size: int = 100
    master_seed: int = 12345
    modes: Tuple[str, ...] = ("hybrid", "ies")
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)
    noise_model: NoiseModelConfig = field(default_factory=NoiseModelConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    replicate: ReplicateConfig = field(default_factory=ReplicateConfig)
    n_jobs: int = 1
    progress: bool = True
    output_dir: str = "runs/desk"

    def __post_init__(self):
        try:
            TransformKind.from_name(self.transform)
        except ValueError as e:
            raise ConfigError(str(e))
        _require(self.ensemble_size >= 2, "ensemble_size must be at least 2, got {}.", self.ensemble_size)
        _require(len(self.modes) > 0, "At least one smoother mode is needed.")
        for mode in self.modes:
            _require(mode in [m.value for m in UpdateMode], "Unknown smoother mode <{}>.", mode)
        _require(self.n_jobs != 0, "n_jobs must be nonzero.")
        _require(isinstance(self.master_seed, int) and self.master_seed >= 0, "master_seed must be a nonnegative integer.")
        n_nodes = self.grid.nx_plus1 * self.grid.ny_plus1
        _require(
            not self.landscape.enabled or n_nodes <= DENSE_THRESHOLD,
            "Landscape slices need the dense prior pseudo-inverse, available up to {} nodes; "
            "disable the landscape stage for a grid of {} nodes.",
            DENSE_THRESHOLD,
            n_nodes,
        )

    @classmethod
    def desk(cls) -> "ExperimentConfig":
        """
        The desk-scale study: 21 x 21 grid, 100 members, non-monotonic transform.
        """
        return cls()

    @classmethod
    def full_scale(cls) -> "ExperimentConfig":
        """
        The full-scale study: 41 x 41 grid, 200 members, 540 observations.
        """
        return cls(
            grid=GridConfig(nx_plus1=41, ny_plus1=41),
            ensemble_size=200,
            replicate=ReplicateConfig(enabled=True, n_ensembles=16, size=200),
            output_dir="runs/full",
        )

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        values = dict(values or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError("Unknown configuration keys: {}.".format(unknown))
        kwargs = {}
        for key, value in values.items():
            if key in _SECTIONS:
                kwargs[key] = _section_from_dict(_SECTIONS[key], value, key)
            elif isinstance(value, list):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError("Invalid configuration: {}".format(e))

    @classmethod
    def from_yaml(cls, config_path: str) -> "ExperimentConfig":
        if not os.path.isfile(config_path):
            raise ConfigError("Configuration file {} does not exist.".format(config_path))
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                values = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError("Cannot parse {}: {}".format(config_path, e))
        if values is not None and not isinstance(values, dict):
            raise ConfigError("Configuration file {} must hold a mapping.".format(config_path))
        return cls.from_dict(values)

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def to_yaml_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def to_yaml(self, config_path: str):
        ensure_parent_dir(config_path)
        with open(config_path, "w", encoding="utf-8") as f:
            f.write(self.to_yaml_text())

    def config_hash(self) -> str:
        """
        SHA-256 of the canonical YAML dump without the keys that do not affect results.
        """
        values = {k: v for k, v in self.to_dict().items() if k not in RUNTIME_KEYS}
        return sha256_text(yaml.safe_dump(values, sort_keys=True, default_flow_style=False))

    def with_overrides(self, master_seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        changes = {}
        if master_seed is not None:
            changes["master_seed"] = int(master_seed)
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return dataclasses.replace(self, **changes)

    @property
    def transform_kind(self) -> TransformKind:
        return TransformKind.from_name(self.transform)

    @property
    def update_modes(self) -> Tuple[UpdateMode, ...]:
        return tuple(UpdateMode(m) for m in self.modes)

    @property
    def precision_policy(self) -> PrecisionPolicy:
        return PrecisionPolicy(self.weights.precision)

    def seed(self, stream_name: str) -> int:
        return derive_seed(self.master_seed, stream_name)

    def seeds(self) -> Dict[str, int]:
        return {name: self.seed(name) for name in STREAM_NAMES}

    def noise_defaults(self) -> Tuple[float, float, float]:
        """
        (sigma_o, sigma_pr, nu) with unset entries taken from the values tuned for the transform.
        """
        sigma_o, sigma_pr, nu = NOISE_MODEL_DEFAULTS[self.transform_kind.value]
        nm = self.noise_model
        return (
            sigma_o if nm.sigma_o is None else nm.sigma_o,
            sigma_pr if nm.sigma_pr is None else nm.sigma_pr,
            nu if nm.nu is None else nm.nu,
        )

    def flow_config(self) -> FlowConfig:
        return self.flow.to_flow_config(self.grid.to_grid(), self.observations.forecast_time)
