"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the point transforms m = f(x) from the latent Gaussian field to log-permeability.
Sensitivities are returned as the diagonal of M_x, never as a dense matrix.
"""

from enum import Enum
from typing import Union

import numpy as np


class TransformKind(Enum):
    IDENTITY = "identity"
    MONOTONIC = "monotonic"
    NON_MONOTONIC = "non-monotonic"

    @classmethod
    def from_name(cls, name: Union[str, "TransformKind"]) -> "TransformKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                "Unknown transform <{}>. Expected one of {}.".format(name, [k.value for k in cls])
            )


def forward(kind: TransformKind, x: np.ndarray) -> np.ndarray:
    """
    Apply the transform elementwise.

    Parameters
    ----------
    kind : TransformKind
        The transform.
    x : np.ndarray
        Latent values of any shape.

    Returns
    -------
    np.ndarray
        Log-permeability values of the same shape.
    """
    x = np.asarray(x, dtype=float)
    if kind == TransformKind.IDENTITY:
        return x.copy()
    if kind == TransformKind.MONOTONIC:
        return np.tanh(4.0 * x + 2.0) + np.tanh(4.0 * x - 2.0)
    if kind == TransformKind.NON_MONOTONIC:
        return 2.0 * np.tanh(4.0 * x + 2.0) + np.tanh(2.0 - 4.0 * x) - 1.0
    raise ValueError("Unsupported transform <{}>.".format(kind))


def _sech2(z: np.ndarray) -> np.ndarray:
    # 1 - tanh(z)^2 without cancellation in the tails.
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(z) ** 2


def sensitivity(kind: TransformKind, x: np.ndarray) -> np.ndarray:
    """
    Return the diagonal of M_x = dm/dx, i.e. f'(x) elementwise.

    Parameters
    ----------
    kind : TransformKind
        The transform.
    x : np.ndarray
        Latent values of any shape.

    Returns
    -------
    np.ndarray
        The derivative values, same shape as *x*.
    """
    x = np.asarray(x, dtype=float)
    if kind == TransformKind.IDENTITY:
        return np.ones_like(x)
    if kind == TransformKind.MONOTONIC:
        return 4.0 * _sech2(4.0 * x + 2.0) + 4.0 * _sech2(4.0 * x - 2.0)
    if kind == TransformKind.NON_MONOTONIC:
        return 8.0 * _sech2(4.0 * x + 2.0) - 4.0 * _sech2(2.0 - 4.0 * x)
    raise ValueError("Unsupported transform <{}>.".format(kind))


def to_permeability(m: np.ndarray) -> np.ndarray:
    # Natural-log permeability.
    return np.exp(np.asarray(m, dtype=float))
