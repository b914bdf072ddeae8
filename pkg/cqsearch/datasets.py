"""Load the small graph pairs bundled with cqsearch."""
import os.path as op

from .kg import load_graph_pair

__all__ = ["TOY_GRAPHS", "toy_graph_paths", "load_toy_graphs"]

DATA_DIR = op.join(op.dirname(__file__), "data", "toy")

# name -> (observed file, complete file)
TOY_GRAPHS = {
    "toy": ("observed.txt", "complete.txt"),
    "film": ("film_observed.txt", "film_complete.txt"),
}


def toy_graph_paths(name="toy"):
    """Return the observed and complete triple files of a bundled graph pair.

    Parameters
    ----------
    name : {"toy", "film"}, default="toy"

    Returns
    -------
    observed, complete : str
    """
    if name not in TOY_GRAPHS:
        raise ValueError(
            "name must be one of {0}; got {1} instead.".format(
                sorted(TOY_GRAPHS), name
            )
        )
    return tuple(op.join(DATA_DIR, fn) for fn in TOY_GRAPHS[name])


def load_toy_graphs(name="toy"):
    """Load a bundled observable graph and its completion.

    ``"toy"`` has people, cities, countries and organisations linked by
    ``friend``, ``lives_in``, ``city_of``, ``works_for`` and ``based_in``;
    seven of its facts are hidden from the observable graph. ``"film"`` links
    directors to films, awards and birth places and hides two facts.

    Parameters
    ----------
    name : {"toy", "film"}, default="toy"

    Returns
    -------
    g, g_tilde : KnowledgeGraph
        The observable graph and the complete graph, with shared ids.

    Examples
    --------
    >>> g, g_tilde = load_toy_graphs("film")
    >>> g.n_facts, g_tilde.n_facts
    (15, 17)
    """
    observed, complete = toy_graph_paths(name)
    return load_graph_pair(observed, complete)
