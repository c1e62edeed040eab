"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module exposes field reading and writing functionality.
A field file holds a 16-byte little-endian header (magic, version, nx_plus1, ny_plus1)
followed by the float64 values in row-major grid order.
A sidecar text manifest <name>.manifest.txt records the grid and covariance parameters as key = value lines.
"""

import os
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np

from wrml.fields.grf import CovarianceSpec, Grid2D
from wrml.utils.constants import (
    FIELD_DTYPE,
    FIELD_HEADER_FORMAT,
    FIELD_MAGIC,
    FIELD_VERSION,
)
from wrml.utils.exceptions import DimensionMismatch
from wrml.utils.functions import ensure_parent_dir

MANIFEST_SUFFIX = ".manifest.txt"


def _manifest_lines(entries: Dict[str, object]) -> str:
    return "".join("{} = {}\n".format(key, value) for key, value in entries.items())


def read_manifest(manifest_path: str) -> Dict[str, str]:
    """
    Read a key = value manifest into a dictionary of strings.
    """
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError("Manifest {} does not exist locally!".format(manifest_path))
    entries = {}
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def grid_entries(grid: Grid2D, spec: Optional[CovarianceSpec] = None) -> Dict[str, object]:
    entries = {
        "nx_plus1": grid.nx_plus1,
        "ny_plus1": grid.ny_plus1,
        "hx": repr(float(grid.hx)),
        "hy": repr(float(grid.hy)),
    }
    if spec is not None:
        entries.update({"sigma": repr(float(spec.sigma)), "rho": repr(float(spec.rho)), "kind": spec.kind.value})
    return entries


def write_field(field_path: str, values: np.ndarray, grid: Grid2D, spec: Optional[CovarianceSpec] = None):
    """
    Write a field and its sidecar manifest.

    Parameters
    ----------
    field_path : str
        The path of the binary field file.
    values : np.ndarray
        The field values in grid order.
    grid : Grid2D
        The grid of the field.
    spec : Optional[CovarianceSpec]
        The covariance the field was drawn from, recorded in the manifest.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_nodes,):
        raise DimensionMismatch(
            "A field on a {} x {} grid needs {} values, got shape {}.".format(
                grid.nx_plus1, grid.ny_plus1, grid.n_nodes, values.shape
            )
        )
    ensure_parent_dir(field_path)
    with open(field_path, "wb") as f:
        f.write(struct.pack(FIELD_HEADER_FORMAT, FIELD_MAGIC, FIELD_VERSION, grid.nx_plus1, grid.ny_plus1))
        f.write(values.astype(FIELD_DTYPE).tobytes())
    with open(field_path + MANIFEST_SUFFIX, "w", encoding="utf-8") as f:
        f.write(_manifest_lines(grid_entries(grid, spec)))


def read_field(field_path: str) -> Tuple[np.ndarray, int, int]:
    """
    Read a field file.

    Parameters
    ----------
    field_path : str
        The path of the binary field file.

    Returns
    -------
    Tuple[np.ndarray, int, int]
        The values and the grid node counts (nx_plus1, ny_plus1).
    """
    if not os.path.isfile(field_path):
        raise FileNotFoundError("File {} does not exist locally!".format(field_path))
    header_size = struct.calcsize(FIELD_HEADER_FORMAT)
    with open(field_path, "rb") as f:
        header = f.read(header_size)
        payload = f.read()
    if len(header) != header_size:
        raise ValueError("File {} is too short to be a field file.".format(field_path))
    magic, version, nx_plus1, ny_plus1 = struct.unpack(FIELD_HEADER_FORMAT, header)
    if magic != FIELD_MAGIC:
        raise ValueError("File {} is not a field file (magic {!r}).".format(field_path, magic))
    if version != FIELD_VERSION:
        raise ValueError("Unsupported field file version {} in {}.".format(version, field_path))
    values = np.frombuffer(payload, dtype=FIELD_DTYPE).astype(float)
    if values.size != nx_plus1 * ny_plus1:
        raise DimensionMismatch(
            "File {} declares {} x {} nodes but holds {} values.".format(field_path, nx_plus1, ny_plus1, values.size)
        )
    return values, nx_plus1, ny_plus1


def member_file_name(index: int) -> str:
    return "member_{:04d}.field".format(index)


def write_ensemble_checkpoint(
    checkpoint_dir: str,
    members: np.ndarray,
    grid: Grid2D,
    spec: Optional[CovarianceSpec] = None,
    extra: Optional[Dict[str, object]] = None,
):
    """
    Write every column of *members* as a field file plus one manifest.txt for the checkpoint.
    """
    n_e = members.shape[1]
    for i in range(n_e):
        write_field(os.path.join(checkpoint_dir, member_file_name(i)), members[:, i], grid, spec)
    entries = dict(grid_entries(grid, spec))
    entries["members"] = n_e
    if extra:
        entries.update(extra)
    with open(os.path.join(checkpoint_dir, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write(_manifest_lines(entries))


def read_ensemble_checkpoint(checkpoint_dir: str) -> Tuple[np.ndarray, Dict[str, str]]:
    """
    Read a checkpoint back as an N_x x N_e matrix together with its manifest entries.
    """
    manifest = read_manifest(os.path.join(checkpoint_dir, "manifest.txt"))
    n_e = int(manifest["members"])
    columns: List[np.ndarray] = []
    for i in range(n_e):
        values, _, _ = read_field(os.path.join(checkpoint_dir, member_file_name(i)))
        columns.append(values)
    return np.column_stack(columns), manifest
