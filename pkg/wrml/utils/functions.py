import hashlib
import logging
import os
import pickle
from typing import Any

import mmh3
import numpy as np

from wrml.utils.constants import LOG_FORMAT


def configure_logging(level: str = "INFO"):
    """
    Install the single root handler used by the command line.

    Parameters
    ----------
    level : str
        A standard logging level name.
    """
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def derive_seed(master_seed: int, stream_name: str) -> int:
    """
    Derive the seed of a named random stream from the master seed.
    The rule is a 32-bit MurmurHash3 of the stream name keyed by the master seed,
    so every stream is reproducible and independent of the order in which streams are drawn.

    Parameters
    ----------
    master_seed : int
        The experiment-wide seed.
    stream_name : str
        The name of the random stream, e.g. *prior* or *observation_noise*.

    Returns
    -------
    int
        A non-negative 32-bit seed.
    """
    return mmh3.hash(stream_name.encode("utf-8"), seed=int(master_seed) % (2 ** 32), signed=False)


def make_rng(master_seed: int, stream_name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, stream_name))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def ensure_parent_dir(path: str):
    parent_dir = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(parent_dir):
        os.makedirs(parent_dir)


def pickle_python_object(obj: Any, object_path: str):
    """
    Save the given Python object to the given path.

    Parameters
    ----------
    obj : Any
        Any *picklable* Python object.
    object_path : str
        The path where the object will be saved.
    """
    ensure_parent_dir(object_path)
    try:
        with open(object_path, "wb") as save_file:
            pickle.dump(obj, save_file)
    except Exception:
        raise pickle.PicklingError(
            "Failed to save object {} to {}!".format(type(obj).__name__, object_path)
        )


def unpickle_python_object(object_path: str) -> Any:
    """
    Load the Python object from the given path.

    Parameters
    ----------
    object_path : str
        The path where the object is saved.

    Returns
    -------
    Any
        The object existing at the provided location.
    """
    if not os.path.isfile(object_path):
        raise FileNotFoundError("File {} does not exist locally!".format(object_path))
    try:
        with open(object_path, "rb") as save_file:
            obj = pickle.load(save_file)
    except Exception:
        raise pickle.UnpicklingError("Failed to load object from {}!".format(object_path))
    return obj
