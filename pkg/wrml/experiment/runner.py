"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module runs the synthetic two-phase flow study stage by stage:
truth, prior, assimilate, replicate, weigh, denoise, sweep, forecast and landscape.
Stages run sequentially and share a RunState that is pickled to <output_dir>/state.pkl after every stage,
so single stages can be run from separate command-line invocations.
Every artifact is written under the output directory together with a manifest.yaml.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from wrml.assimilation import denoise as denoising
from wrml.assimilation.linalg import PrecisionPolicy, PriorPrecision
from wrml.assimilation.smoother import (
    Ensemble,
    IterationReport,
    ObservationSet,
    UpdateMode,
    count_basins,
    ensemble_deviations,
    init_ensemble,
    run_assimilation,
)
from wrml.assimilation.weights import WeightSet, WeightVariant, hybrid_weights, ies_weights
from wrml.experiment import metrics
from wrml.experiment.config import ExperimentConfig
from wrml.experiment.landscape import LandscapeSlice, NegativeLogPosterior, landscape_slice, local_minima
from wrml.fields import transforms
from wrml.fields.grf import CovarianceOperator, build_embedding, sample_prior
from wrml.fields.transforms import TransformKind
from wrml.input_output.field_io import write_ensemble_checkpoint, write_field
from wrml.input_output.tables import iteration_frame, water_cut_frame, weights_frame, write_table
from wrml.simulation.flowsim import simulate
from wrml.simulation.forward_models import FlowForwardModel, ForwardModel
from wrml.utils.exceptions import StageError, WRMLError, ZeroVariance
from wrml.utils.functions import derive_seed, make_rng, pickle_python_object, unpickle_python_object

logger = logging.getLogger(__name__)

STAGES = ("truth", "prior", "assimilate", "replicate", "weigh", "denoise", "sweep", "forecast", "landscape")
STATE_FILE = "state.pkl"
MANIFEST_FILE = "manifest.yaml"
CONFIG_FILE = "config.yaml"


@dataclass
class RunState:
    config_hash: str
    completed: List[str] = field(default_factory=list)
    x_true: Optional[np.ndarray] = None
    truth_water_cut: Optional[np.ndarray] = None
    observations: Optional[ObservationSet] = None
    prior: Optional[Ensemble] = None
    prior_predictions: Optional[np.ndarray] = None
    ensembles: Dict[str, Ensemble] = field(default_factory=dict)
    reports: Dict[str, List[IterationReport]] = field(default_factory=dict)
    replicate_sigma: Optional[float] = None
    weights: Dict[str, WeightSet] = field(default_factory=dict)
    misfits: Dict[str, np.ndarray] = field(default_factory=dict)
    noise_models: Dict[str, denoising.NoiseModel] = field(default_factory=dict)
    denoised: Dict[str, WeightSet] = field(default_factory=dict)
    forecast_predictions: Dict[str, np.ndarray] = field(default_factory=dict)
    sweeps: Dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def truth_forecast(self) -> np.ndarray:
        return self.truth_water_cut[-1]


def build_operator(cfg: ExperimentConfig) -> CovarianceOperator:
    return build_embedding(
        cfg.covariance.to_spec(),
        cfg.grid.to_grid(),
        max_doublings=cfg.covariance.max_doublings,
        tolerance=cfg.covariance.clip_tolerance,
        strict=True,
    )


def _truth_and_water_cut(
    cfg: ExperimentConfig, op: Optional[CovarianceOperator] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    op = build_operator(cfg) if op is None else op
    x_true = sample_prior(op, np.zeros(op.n), cfg.seed("truth"), 1)[0]
    times = cfg.observations.history_times + (cfg.observations.forecast_time,)
    log_k = transforms.forward(cfg.transform_kind, x_true)
    water_cut = simulate(transforms.to_permeability(log_k), cfg.flow_config(), times)
    history = water_cut[:-1].ravel()
    rng = make_rng(cfg.master_seed, "observation_noise")
    d_obs = history + cfg.observations.noise_std * rng.standard_normal(history.size)
    return x_true, water_cut, d_obs


def generate_truth(cfg: ExperimentConfig, op: Optional[CovarianceOperator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw the true latent field from the prior and simulate its noisy water cut.
    The noisy data are not clipped to [0, 1].

    Parameters
    ----------
    cfg : ExperimentConfig
        The experiment configuration.
    op : Optional[CovarianceOperator]
        The prior covariance; built from *cfg* if missing.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        The true latent field and the observed data, time-major.
    """
    x_true, _, d_obs = _truth_and_water_cut(cfg, op)
    return x_true, d_obs


def compute_weights(
    ens: Ensemble,
    predictions: np.ndarray,
    mode: UpdateMode,
    op: CovarianceOperator,
    transform: TransformKind,
    precision: PrecisionPolicy = PrecisionPolicy.ENSEMBLE,
    full_formula: bool = False,
) -> WeightSet:
    """
    The importance weights that belong to the smoother that produced *ens*.
    """
    if UpdateMode(mode) == UpdateMode.IES:
        return ies_weights(
            ens, predictions, None, op, precision=PriorPrecision(op, precision), full_formula=full_formula
        )
    deviations = ensemble_deviations(ens.members, predictions, transforms.forward(transform, ens.members))
    return hybrid_weights(ens, predictions, deviations, transforms.sensitivity(transform, ens.members), op)


def replicate_study(
    cfg: ExperimentConfig,
    op: CovarianceOperator,
    model: ForwardModel,
    observations: ObservationSet,
    mode: UpdateMode,
) -> Tuple[np.ndarray, pd.DataFrame]:
    """
    Estimate the noise of computed log-weights. Independent ensembles of size - 1 members are each
    augmented with one common anchor and perturbed observation; after assimilation the log-weight of
    the common particle differs between ensembles only through the ensemble estimate of the sensitivities.

    Parameters
    ----------
    cfg : ExperimentConfig
        The experiment configuration; *cfg.replicate* sets the number and size of the ensembles.
    op : CovarianceOperator
        The prior covariance.
    model : ForwardModel
        The forward model acting on transformed fields.
    observations : ObservationSet
        The observed data.
    mode : UpdateMode
        The smoother whose weights are studied.

    Returns
    -------
    Tuple[np.ndarray, pd.DataFrame]
        The final log-weight of the common particle in every ensemble,
        and its trace over the accepted iterations (columns replicate, iteration, log_weight).
    """
    mode = UpdateMode(mode)
    common_anchor = sample_prior(op, np.zeros(op.n), cfg.seed("replicate-common"), 1)[0]
    rng = np.random.default_rng(derive_seed(cfg.seed("replicate-common"), "perturbations"))
    common_obs = observations.d_obs + observations.noise_std * rng.standard_normal(observations.n_data)

    finals = np.empty(cfg.replicate.n_ensembles)
    traces = []
    for k in range(cfg.replicate.n_ensembles):
        base = init_ensemble(op, np.zeros(op.n), observations, cfg.replicate.size - 1, cfg.seed("replicate-{}".format(k)))
        anchors = np.column_stack([common_anchor, base.anchors])
        ens = Ensemble(
            members=anchors.copy(),
            anchors=anchors,
            perturbed_obs=np.column_stack([common_obs, base.perturbed_obs]),
            prior_mean=base.prior_mean,
            observations=observations,
        )

        def trace(current: Ensemble, report: IterationReport, k=k):
            ws = compute_weights(
                current, current.predictions, mode, op, cfg.transform_kind, cfg.precision_policy, cfg.weights.full_formula
            )
            traces.append({"replicate": k, "iteration": report.iteration, "log_weight": float(ws.log_weights[0])})

        ens, _ = run_assimilation(
            ens,
            model,
            mode,
            cfg.smoother.to_schedule(),
            op,
            transform=cfg.transform_kind,
            n_jobs=cfg.n_jobs,
            progress=cfg.progress,
            callback=trace,
        )
        finals[k] = traces[-1]["log_weight"]
        logger.info("Replicate {}: common log-weight {:.6g}.".format(k, finals[k]))
    return finals, pd.DataFrame(traces, columns=["replicate", "iteration", "log_weight"])


class ExperimentRunner:
    def __init__(self, cfg: ExperimentConfig, resume: bool = True):
        """
        Runs the stages of one experiment into *cfg.output_dir*.

        Parameters
        ----------
        cfg : ExperimentConfig
            The experiment configuration.
        resume : bool
            Whether to continue from a state.pkl written by the same configuration.
        """
        self._cfg = cfg
        self._out = cfg.output_dir
        self._op = build_operator(cfg)
        self._transform = cfg.transform_kind
        self._flow_config = cfg.flow_config()
        self._model = FlowForwardModel(self._flow_config, cfg.observations.history_times)
        self._forecast_model = FlowForwardModel(self._flow_config, (cfg.observations.forecast_time,))
        self._state = self._load_state() if resume else None
        if self._state is None:
            self._state = RunState(config_hash=cfg.config_hash())
        self._stage_functions: Dict[str, Callable[[], None]] = {
            "truth": self.truth,
            "prior": self.prior,
            "assimilate": self.assimilate,
            "replicate": self.replicate,
            "weigh": self.weigh,
            "denoise": self.denoise,
            "sweep": self.sweep,
            "forecast": self.forecast,
            "landscape": self.landscape,
        }

    @property
    def config(self) -> ExperimentConfig:
        return self._cfg

    @property
    def state(self) -> RunState:
        return self._state

    @property
    def operator(self) -> CovarianceOperator:
        return self._op

    def _path(self, *parts: str) -> str:
        return os.path.join(self._out, *parts)

    def _load_state(self) -> Optional[RunState]:
        state_path = self._path(STATE_FILE)
        if not os.path.isfile(state_path):
            return None
        state = unpickle_python_object(state_path)
        if state.config_hash != self._cfg.config_hash():
            logger.warning("Ignoring {} written by a different configuration.".format(state_path))
            return None
        logger.info("Resuming after stages {}.".format(state.completed))
        return state

    def _require(self, *stages: str):
        missing = [s for s in stages if s not in self._state.completed]
        if missing:
            raise WRMLError("Stages {} must run first.".format(missing))

    @property
    def _modes(self) -> Tuple[UpdateMode, ...]:
        return self._cfg.update_modes

    def run_stage(self, stage: str):
        """
        Run one stage, then save the state and the manifest. Any failure is raised as a StageError.
        """
        if stage not in self._stage_functions:
            raise ValueError("Unknown stage <{}>. Expected one of {}.".format(stage, list(STAGES)))
        logger.info("Stage <{}> started.".format(stage))
        try:
            self._stage_functions[stage]()
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, e) from e
        if stage not in self._state.completed:
            self._state.completed.append(stage)
        pickle_python_object(self._state, self._path(STATE_FILE))
        self.write_manifest()
        logger.info("Stage <{}> finished.".format(stage))

    def run_all(self) -> str:
        for stage in STAGES:
            if stage == "replicate" and not self._cfg.replicate.enabled:
                continue
            if stage == "landscape" and not self._cfg.landscape.enabled:
                continue
            self.run_stage(stage)
        return self._out

    def truth(self):
        cfg = self._cfg
        x_true, water_cut, d_obs = _truth_and_water_cut(cfg, self._op)
        times = cfg.observations.history_times
        well_names = self._flow_config.wells.producer_names
        self._state.x_true = x_true
        self._state.truth_water_cut = water_cut
        self._state.observations = ObservationSet(
            d_obs=d_obs, noise_std=cfg.observations.noise_std, times=times, well_names=well_names
        )
        write_field(self._path("truth", "x_true.field"), x_true, self._op.grid, self._op.spec)
        all_times = times + (cfg.observations.forecast_time,)
        write_table(water_cut_frame(water_cut, all_times, well_names), self._path("truth", "water_cut.csv"))
        write_table(
            water_cut_frame(d_obs.reshape(len(times), -1), times, well_names), self._path("truth", "observations.csv")
        )

    def prior(self):
        self._require("truth")
        cfg = self._cfg
        ens = init_ensemble(self._op, np.zeros(self._op.n), self._state.observations, cfg.ensemble_size, cfg.seed("prior"))
        self._state.prior = ens
        self._state.prior_predictions = self._model.predict_ensemble(
            transforms.forward(self._transform, ens.members), n_jobs=cfg.n_jobs, progress=cfg.progress
        )
        write_ensemble_checkpoint(self._path("prior"), ens.anchors, self._op.grid, self._op.spec)

    def assimilate(self):
        self._require("prior")
        cfg = self._cfg
        prior = self._state.prior
        for mode in self._modes:
            ens = prior.with_members(prior.members)
            ens.predictions = self._state.prior_predictions
            ens, reports = run_assimilation(
                ens,
                self._model,
                mode,
                cfg.smoother.to_schedule(),
                self._op,
                transform=self._transform,
                n_jobs=cfg.n_jobs,
                progress=cfg.progress,
            )
            self._state.ensembles[mode.value] = ens
            self._state.reports[mode.value] = reports
            self._state.summary.setdefault(mode.value, {}).update(
                {
                    "iterations": int(ens.iteration),
                    "converged": bool(ens.converged),
                    "stop_reason": ens.stop_reason,
                    "final_lambda": float(ens.lam),
                }
            )
            write_table(iteration_frame(reports), self._path("assimilate", mode.value, "iterations.csv"))
            write_ensemble_checkpoint(
                self._path("assimilate", mode.value),
                ens.members,
                self._op.grid,
                self._op.spec,
                extra={"mode": mode.value, "iterations": ens.iteration, "converged": ens.converged},
            )

    def replicate(self):
        self._require("truth")
        mode = self._modes[0]
        finals, traces = replicate_study(self._cfg, self._op, self._model, self._state.observations, mode)
        sigma_o = denoising.fit_noise_sigma(finals)
        self._state.replicate_sigma = sigma_o
        self._state.summary["replicate"] = {"mode": mode.value, "sigma_o": float(sigma_o)}
        write_table(
            pd.DataFrame({"replicate": np.arange(finals.size), "log_weight": finals}),
            self._path("replicate", "common_log_weights.csv"),
        )
        write_table(traces, self._path("replicate", "traces.csv"))

    def weigh(self):
        self._require("assimilate")
        cfg = self._cfg
        obs = self._state.observations
        x_true = self._state.x_true
        for mode in self._modes:
            ens = self._state.ensembles[mode.value]
            ws = compute_weights(
                ens, ens.predictions, mode, self._op, self._transform, cfg.precision_policy, cfg.weights.full_formula
            )
            misfits = metrics.ensemble_misfits(ens.predictions, obs.d_obs, obs.cd)
            self._state.weights[mode.value] = ws
            self._state.misfits[mode.value] = misfits
            try:
                correlation = metrics.weight_misfit_correlation(ws, misfits)
            except ZeroVariance as e:
                logger.warning("[{}] {}".format(mode.value, e))
                correlation = float("nan")
            summary = {
                "ess": float(ws.ess),
                "weight_misfit_correlation": float(correlation),
                "unweighted_mean_misfit": metrics.weighted_mean_misfit(misfits),
                "weighted_mean_misfit": metrics.weighted_mean_misfit(misfits, ws),
                "unweighted_mean_rmse": metrics.rmse(metrics.weighted_mean_field(ens.members), x_true),
                "weighted_mean_rmse": metrics.rmse(metrics.weighted_mean_field(ens.members, ws), x_true),
                "basins": count_basins(ens.members),
            }
            self._state.summary.setdefault(mode.value, {}).update(summary)
            logger.info(
                "[{}] ess {:.2f}, weight-misfit correlation {:.3f}, mean misfit {:.1f} unweighted vs {:.1f} weighted.".format(
                    mode.value,
                    summary["ess"],
                    summary["weight_misfit_correlation"],
                    summary["unweighted_mean_misfit"],
                    summary["weighted_mean_misfit"],
                )
            )
            write_table(weights_frame(ws, misfits), self._path("weigh", "{}_weights.csv".format(mode.value)))

    def _noise_model(self, log_weights: np.ndarray) -> denoising.NoiseModel:
        cfg = self._cfg
        nm = cfg.noise_model
        sigma_o, sigma_pr, nu = cfg.noise_defaults()
        if nm.sigma_o is None and self._state.replicate_sigma is not None:
            sigma_o = self._state.replicate_sigma
        if nm.tune:
            grid = denoising.prior_grid(
                [f * sigma_pr for f in nm.sigma_pr_factors], nm.nu_grid, (nm.omega_pr,)
            )
            return denoising.tune_prior(
                log_weights, sigma_o, grid, cfg.seed("tune_prior"), n_jobs=cfg.n_jobs, progress=cfg.progress
            )
        omega_pr = nm.omega_pr
        if omega_pr is None:
            omega_pr = denoising.default_omega_pr(log_weights, sigma_pr, nu, sigma_o)
        return denoising.NoiseModel(sigma_o=sigma_o, sigma_pr=sigma_pr, nu=nu, omega_pr=omega_pr)

    def denoise(self):
        self._require("weigh")
        for mode in self._modes:
            ws = self._state.weights[mode.value]
            model = self._noise_model(ws.log_weights)
            denoised = WeightSet.from_log_weights(denoising.denoise_map(model, ws.log_weights), ws.variant)
            self._state.noise_models[mode.value] = model
            self._state.denoised[mode.value] = denoised
            ens = self._state.ensembles[mode.value]
            self._state.summary.setdefault(mode.value, {}).update(
                {
                    "noise_model": model.to_dict(),
                    "denoised_ess": float(denoised.ess),
                    "denoised_mean_rmse": metrics.rmse(
                        metrics.weighted_mean_field(ens.members, denoised), self._state.x_true
                    ),
                }
            )
            logger.info("[{}] ess {:.2f} raw, {:.2f} denoised.".format(mode.value, ws.ess, denoised.ess))
            write_table(
                weights_frame(denoised, self._state.misfits[mode.value]),
                self._path("denoise", "{}_denoised.csv".format(mode.value)),
            )

    def _forecast_predictions(self, mode: UpdateMode) -> np.ndarray:
        if mode.value not in self._state.forecast_predictions:
            ens = self._state.ensembles[mode.value]
            self._state.forecast_predictions[mode.value] = self._forecast_model.predict_ensemble(
                transforms.forward(self._transform, ens.members), n_jobs=self._cfg.n_jobs, progress=self._cfg.progress
            )
        return self._state.forecast_predictions[mode.value]

    def sweep(self):
        self._require("weigh")
        well_names = self._flow_config.wells.producer_names
        for mode in self._modes:
            ws = self._state.weights[mode.value]
            table = metrics.power_sweep(
                ws.log_weights,
                self._cfg.sweep.exponents,
                self._forecast_predictions(mode),
                self._state.truth_forecast,
                well_names,
                variant=ws.variant,
                progress=self._cfg.progress,
            )
            self._state.sweeps[mode.value] = table
            self._state.summary.setdefault(mode.value, {})["best_exponent"] = metrics.best_exponent(table)
            write_table(table, self._path("sweep", "{}_sweep.csv".format(mode.value)))

    def forecast(self):
        self._require("weigh")
        well_names = self._flow_config.wells.producer_names
        outcome = self._state.truth_forecast
        frames = []
        for mode in self._modes:
            predictions = self._forecast_predictions(mode)
            ws = self._state.weights[mode.value]
            weightings = [("unweighted", None), ("raw", ws)]
            if mode.value in self._state.denoised:
                weightings.append(("denoised", self._state.denoised[mode.value]))
            if mode.value in self._state.sweeps:
                exponent = metrics.best_exponent(self._state.sweeps[mode.value])
                weightings.append(("power", denoising.power_regularize(ws.log_weights, exponent, ws.variant)))
            scores = {}
            for name, weights in weightings:
                report = metrics.forecast_report(predictions, weights, outcome, well_names, label="{}-{}".format(mode.value, name))
                frames.append(report.to_frame())
                scores[name] = report.mean_log_score
            self._state.summary.setdefault(mode.value, {})["log_scores"] = {k: float(v) for k, v in scores.items()}

            members = pd.DataFrame(predictions.T, columns=list(well_names))
            members.insert(0, "member", np.arange(predictions.shape[1]))
            members["weight"] = ws.weights
            if mode.value in self._state.denoised:
                members["denoised_weight"] = self._state.denoised[mode.value].weights
            write_table(members, self._path("forecast", "{}_members.csv".format(mode.value)))
        write_table(pd.concat(frames, ignore_index=True), self._path("forecast", "forecast.csv"))

    def _write_slice(self, name: str, landscape: LandscapeSlice, labels: Tuple[str, str, str]) -> int:
        write_table(landscape.to_frame(), self._path("landscape", "{}_surface.csv".format(name)))
        write_table(landscape.anchors_frame(labels), self._path("landscape", "{}_anchors.csv".format(name)))
        return len(local_minima(landscape.values))

    def landscape(self):
        self._require("weigh")
        cfg = self._cfg
        mode = self._modes[0]
        ens = self._state.ensembles[mode.value]
        ws = self._state.weights[mode.value]
        x_true = self._state.x_true
        objective = NegativeLogPosterior(self._op, ens.prior_mean, self._model, self._state.observations, self._transform)
        order = np.argsort(ws.weights, kind="stable")

        slices = [
            ("truth_mirror", (x_true, -x_true, ens.members[:, order[0]]), ("truth", "mirror", "lowest_weight")),
            ("truth_top", (x_true, ens.members[:, order[-1]], ens.members[:, order[-2]]), ("truth", "top_1", "top_2")),
        ]
        minima = {}
        for name, (x_a, x_b, x_c), labels in slices:
            landscape = landscape_slice(
                x_a, x_b, x_c, objective, cfg.landscape.grid_res, cfg.landscape.extent, cfg.n_jobs, cfg.progress
            )
            minima[name] = self._write_slice(name, landscape, labels)
        self._state.summary["landscape"] = {"mode": mode.value, "local_minima": minima}

    def manifest(self) -> Dict[str, Any]:
        return {
            "config": self._cfg.to_dict(),
            "config_hash": self._state.config_hash,
            "seeds": self._cfg.seeds(),
            "stages": list(self._state.completed),
            "wells": self._flow_config.wells.to_dict(),
            "embedding": {
                "shape": list(self._op.embedded_spectrum.shape),
                "sampling_shape": list(self._op.sampling_shape),
                "eigenvalue_range": [float(v) for v in self._op.eigenvalue_range],
            },
            "summary": _plain(self._state.summary),
        }

    def write_manifest(self):
        self._cfg.to_yaml(self._path(CONFIG_FILE))
        with open(self._path(MANIFEST_FILE), "w", encoding="utf-8") as f:
            yaml.safe_dump(self.manifest(), f, sort_keys=True, default_flow_style=False)


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def run_experiment(cfg: ExperimentConfig) -> str:
    """
    Run every enabled stage and return the run directory.
    """
    return ExperimentRunner(cfg).run_all()
