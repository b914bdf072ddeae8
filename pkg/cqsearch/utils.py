"""Utility functions and constants for cqsearch."""
import logging
import os

import numpy as np
import torch
from sklearn.utils import check_random_state

__all__ = ["set_logger", "env_default", "torch_generator", "spawn_seeds"]


# Literal labels, binarized predictor scores and fuzzy verdicts all compare
# against this value. Labels use ``>=``, final positive verdicts use ``>``.
SCORE_THRESHOLD = 0.5

# Upper bound for predictor scores on unobserved facts once the observed graph
# is folded into a predictor.
OBSERVED_CLIP = 0.9999

# Lower clip for centered policy logits.
LOGIT_FLOOR = -100.0

DEFAULT_EXHAUSTIVE_BUDGET = 10 ** 7
QAC_SMALL_STEPS = 20
LARGE_STEPS = 200
DEFAULT_TIMEOUT = 60.0

ENV_PREFIX = "CQSEARCH_"

LOG_FORMAT = "%(asctime)s %(levelname)-8s %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def set_logger(log_file=None, verbose=False):
    """Configure the root logger for command line use.

    Library modules only create module level loggers. This function is meant
    to be called once by an executable.

    Parameters
    ----------
    log_file : path-like object, default=None
        If provided, also write log records to this file.

    verbose : bool, default=False
        If True, log at DEBUG level. Otherwise log at INFO level.

    Returns
    -------
    logger : logging.Logger
        The root logger
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)
    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(formatter)
    root.addHandler(console)

    if log_file is not None:
        file_handler = logging.FileHandler(log_file, mode="w")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    return root


def env_default(name, default, dtype=str):
    """Return the value of environment variable ``CQSEARCH_<name>``.

    Parameters
    ----------
    name : str
        Variable name without the prefix, e.g. "SEED"

    default : object
        Value returned when the variable is unset or empty

    dtype : callable, default=str
        Conversion applied to the raw string

    Returns
    -------
    value : object

    Examples
    --------
    >>> env_default("SURELY_UNSET_VARIABLE", 3, int)
    3
    """
    raw = os.environ.get(ENV_PREFIX + name.upper(), "")
    if raw == "":
        return default
    try:
        return dtype(raw)
    except ValueError:
        raise ValueError(
            "Environment variable {0}{1} must be convertible to {2}; got {3!r} "
            "instead.".format(ENV_PREFIX, name.upper(), dtype.__name__, raw)
        )


def torch_generator(random_state):
    """Return a ``torch.Generator`` seeded from a numpy random state.

    Parameters
    ----------
    random_state : int, RandomState instance or None

    Returns
    -------
    generator : torch.Generator
    """
    rng = check_random_state(random_state)
    generator = torch.Generator()
    generator.manual_seed(int(rng.randint(np.iinfo(np.int32).max)))
    return generator


def spawn_seeds(seed, n):
    """Derive ``n`` independent integer seeds from one seed.

    Parameters
    ----------
    seed : int
        Parent seed

    n : int
        Number of child seeds

    Returns
    -------
    seeds : list of int

    Examples
    --------
    >>> spawn_seeds(0, 3) == spawn_seeds(0, 3)
    True
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1)[0]) for child in children]
