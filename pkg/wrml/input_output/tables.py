"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module writes the tabular outputs of a run as CSV files through pandas.
Floats are written with 17 significant digits so that reruns produce byte-identical files.
"""

from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from wrml.assimilation.smoother import IterationReport
from wrml.assimilation.weights import WeightSet
from wrml.utils.constants import CSV_FLOAT_FORMAT
from wrml.utils.functions import ensure_parent_dir


def write_table(df: pd.DataFrame, table_path: str):
    ensure_parent_dir(table_path)
    df.to_csv(table_path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def read_table(table_path: str) -> pd.DataFrame:
    return pd.read_csv(table_path, float_precision="round_trip")


def water_cut_frame(water_cut: np.ndarray, times: Sequence[float], well_names: Sequence[str]) -> pd.DataFrame:
    """
    One row per observation time, one column per producer.
    """
    df = pd.DataFrame(np.asarray(water_cut, dtype=float), columns=list(well_names))
    df.insert(0, "time", np.asarray(times, dtype=float))
    return df


def iteration_frame(reports: List[IterationReport]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "iteration": [r.iteration for r in reports],
            "lambda": [r.lam for r in reports],
            "mean_misfit": [r.mean_misfit for r in reports],
            "accepted": [bool(r.accepted) for r in reports],
        }
    )


def weights_frame(weights: WeightSet, misfits: Optional[np.ndarray] = None) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "member": np.arange(weights.size),
            "log_weight": weights.log_weights,
            "weight": weights.weights,
        }
    )
    if misfits is not None:
        df["misfit"] = np.asarray(misfits, dtype=float)
    return df
