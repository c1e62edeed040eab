"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the CSV table tests.
"""

import numpy as np
import pandas as pd

from wrml.assimilation.smoother import IterationReport
from wrml.assimilation.weights import WeightSet, WeightVariant
from wrml.input_output.tables import iteration_frame, read_table, water_cut_frame, weights_frame, write_table


def test_water_cut_frame():
    frame = water_cut_frame(np.array([[0.0, 0.1], [0.2, 0.3]]), (1.0, 2.0), ("P1", "P2"))
    assert list(frame.columns) == ["time", "P1", "P2"]
    assert frame.loc[1, "P2"] == 0.3


def test_iteration_frame():
    reports = [
        IterationReport(iteration=0, mean_misfit=10.0, lam=1.0, misfits=np.ones(3), accepted=True),
        IterationReport(iteration=1, mean_misfit=12.0, lam=5.0, misfits=np.ones(3), accepted=False),
    ]
    frame = iteration_frame(reports)
    assert list(frame.columns) == ["iteration", "lambda", "mean_misfit", "accepted"]
    assert frame["accepted"].tolist() == [True, False]


def test_weights_frame():
    ws = WeightSet.from_log_weights(np.array([0.0, np.log(3.0)]), WeightVariant.IES)
    frame = weights_frame(ws, np.array([2.0, 1.0]))
    assert list(frame.columns) == ["member", "log_weight", "weight", "misfit"]
    np.testing.assert_allclose(frame["weight"], [0.25, 0.75])
    assert "misfit" not in weights_frame(ws).columns


def test_write_table_keeps_full_precision(tmp_path):
    table_path = str(tmp_path / "nested" / "table.csv")
    df = pd.DataFrame({"label": ["a", "b"], "value": [1.0 / 3.0, np.pi]})
    write_table(df, table_path)

    with open(table_path, "rb") as f:
        content = f.read()
    assert b"\r\n" not in content
    assert content.splitlines()[0] == b"label,value"
    restored = read_table(table_path)
    assert restored["value"].tolist() == df["value"].tolist()
