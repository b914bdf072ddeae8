import os.path as op

import pytest

from cqsearch.datasets import TOY_GRAPHS, load_toy_graphs, toy_graph_paths
from cqsearch.kg import contains_fact, subset_check


@pytest.mark.parametrize("name, n_hidden", [("toy", 7), ("film", 2)])
def test_load_toy_graphs(name, n_hidden):
    for fn in toy_graph_paths(name):
        assert op.exists(fn)  # nosec
    g, g_tilde = load_toy_graphs(name)
    assert g.entities == g_tilde.entities  # nosec
    assert g.relations == g_tilde.relations  # nosec
    assert g_tilde.n_facts - g.n_facts == n_hidden  # nosec
    assert subset_check(g, g_tilde)  # nosec


def test_hidden_facts():
    g, g_tilde = load_toy_graphs("film")
    assert contains_fact(g_tilde, "won", "titanic", "oscar")  # nosec
    assert not contains_fact(g, "won", "titanic", "oscar")  # nosec


def test_unknown_graph():
    assert sorted(TOY_GRAPHS) == ["film", "toy"]  # nosec
    with pytest.raises(ValueError):
        toy_graph_paths("imdb")
