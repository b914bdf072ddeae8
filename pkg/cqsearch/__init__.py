"""cqsearch answers conjunctive queries over incomplete knowledge graphs."""
from . import datasets  # noqa
from . import utils  # noqa
from .benchgen import *  # noqa
from .compgraph import *  # noqa
from .datasets import *  # noqa
from .evaluate import *  # noqa
from .fuzzy import *  # noqa
from .kg import *  # noqa
from .oracle import *  # noqa
from .policy import *  # noqa
from .predictor import *  # noqa
from .query import *  # noqa
from .search import *  # noqa
from .templates import *  # noqa
from .train import *  # noqa

try:
    from ._version import version as __version__  # noqa
except ImportError:  # pragma: no cover
    __version__ = "0.0.0+unknown"
