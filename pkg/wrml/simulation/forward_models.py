"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the forward models g(m) used by the smoothers.
A forward model maps one log-permeability vector to one predicted data vector;
ensembles are evaluated member by member, optionally in parallel, and collected in member order.
"""

from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from wrml.fields.transforms import to_permeability
from wrml.simulation.flowsim import FlowConfig, simulate
from wrml.utils.exceptions import DimensionMismatch


class ForwardModel(ABC):
    @property
    @abstractmethod
    def n_data(self) -> int:
        """
        The length of a predicted data vector.
        """
        pass

    @abstractmethod
    def predict(self, m: np.ndarray) -> np.ndarray:
        """
        Predict the data of a single log-permeability vector.

        Parameters
        ----------
        m : np.ndarray
            The log-permeability vector.

        Returns
        -------
        np.ndarray
            The predicted data vector of length *n_data*.
        """
        pass

    def predict_ensemble(self, M: np.ndarray, n_jobs: int = 1, progress: bool = False) -> np.ndarray:
        """
        Predict the data of every column of *M*.

        Parameters
        ----------
        M : np.ndarray
            A matrix whose columns are log-permeability vectors.
        n_jobs : int
            The number of joblib workers; the result does not depend on it.
        progress : bool
            Whether to show a progress bar.

        Returns
        -------
        np.ndarray
            The N_d x N_e matrix of predictions.
        """
        columns = tqdm(range(M.shape[1]), desc="Forward runs", disable=not progress, leave=False)
        if n_jobs == 1:
            predictions = [self.predict(M[:, i]) for i in columns]
        else:
            predictions = Parallel(n_jobs=n_jobs)(delayed(self.predict)(M[:, i]) for i in columns)
        return np.column_stack(predictions)


class LinearForwardModel(ForwardModel):
    def __init__(self, G: np.ndarray, offset: Optional[np.ndarray] = None):
        """
        The affine model g(m) = G m + offset.

        Parameters
        ----------
        G : np.ndarray
            The N_d x N_m sensitivity matrix.
        offset : Optional[np.ndarray]
            A constant data offset, zero by default.
        """
        self._G = np.asarray(G, dtype=float)
        self._offset = np.zeros(self._G.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        if self._offset.shape != (self._G.shape[0],):
            raise DimensionMismatch(
                "The offset must have length {} but has shape {}.".format(self._G.shape[0], self._offset.shape)
            )

    @property
    def G(self) -> np.ndarray:
        return self._G

    @property
    def offset(self) -> np.ndarray:
        return self._offset

    @property
    def n_data(self) -> int:
        return self._G.shape[0]

    def predict(self, m: np.ndarray) -> np.ndarray:
        return self._G @ m + self._offset

    def predict_ensemble(self, M: np.ndarray, n_jobs: int = 1, progress: bool = False) -> np.ndarray:
        return self._G @ M + self._offset[:, None]


class FlowForwardModel(ForwardModel):
    def __init__(self, flow_config: FlowConfig, obs_times: Sequence[float]):
        """
        The water-cut model: permeability exp(m), flow simulation, time-major flattening of the
        (n_times x n_producers) water-cut matrix.

        Parameters
        ----------
        flow_config : FlowConfig
            The flow configuration.
        obs_times : Sequence[float]
            The observation times.
        """
        self._flow_config = flow_config
        self._obs_times = tuple(float(t) for t in obs_times)

    @property
    def flow_config(self) -> FlowConfig:
        return self._flow_config

    @property
    def obs_times(self) -> tuple:
        return self._obs_times

    @property
    def n_data(self) -> int:
        return len(self._obs_times) * len(self._flow_config.wells.producer_cells)

    def predict(self, m: np.ndarray) -> np.ndarray:
        return simulate(to_permeability(m), self._flow_config, self._obs_times).ravel()
