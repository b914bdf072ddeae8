import io
import os.path as op
import tempfile

import numpy as np
import pytest

from cqsearch.datasets import load_toy_graphs
from cqsearch.kg import TripleFormatError, load_triples
from cqsearch.predictor import (
    BinarizedPredictor,
    LinkPredictor,
    PerfectPredictor,
    TabularPredictor,
    augment_with_observed,
    load_tabular,
    make_predictor,
    noisy_perfect,
    write_tabular,
)

GRAPH = b"a\tr\tb\nb\tr\tc\na\ts\tc\n"


@pytest.fixture
def graph():
    return load_triples(GRAPH)


def test_perfect_predictor(graph):
    pi = PerfectPredictor(graph)
    r = graph.relation_id("r")
    assert pi.score(r, [0, 1, 2], [1, 2, 0]).tolist() == [1.0, 1.0, 0.0]  # nosec
    assert pi.score_tails(r, 0).tolist() == [0.0, 1.0, 0.0]  # nosec
    assert pi.score_heads(r, 2).tolist() == [0.0, 1.0, 0.0]  # nosec
    assert pi.exists_tail(r).tolist() == [True, True, False]  # nosec
    assert pi.exists_head(r, 0) is False  # nosec
    # every head misses some tail, so every negated row has a witness
    assert pi.exists_tail(r, negated=True).all()  # nosec


class ConstantPredictor(LinkPredictor):
    def __init__(self, n_entities, value):
        super().__init__(n_entities)
        self.value = value

    def score(self, r, heads, tails):
        heads, tails = np.broadcast_arrays(heads, tails)
        return np.full(heads.shape, self.value, dtype=float)


@pytest.mark.parametrize("value, expected", [(0.5, True), (0.49, False)])
def test_generic_existence_scan(value, expected):
    pi = ConstantPredictor(3, value)
    assert pi.exists_tail(0).tolist() == [expected] * 3  # nosec
    assert pi.exists_head(0, 1, negated=True) is (1 - value >= 0.5)  # nosec


def test_tabular_predictor(graph):
    r = graph.relation_id("r")
    pi = TabularPredictor([r, r, r], [0, 1, 0], [1, 2, 2], [0.9, 0.2, 0.6], 3)
    assert pi.n_stored == 3  # nosec
    assert pi.score(r, 0, 2) == pytest.approx(0.6)  # nosec
    assert pi.score(r, 2, 2) == 0.0  # nosec
    assert pi.score_tails(r, 0).tolist() == pytest.approx([0.0, 0.9, 0.6])  # nosec
    assert pi.score_heads(r, 2).tolist() == pytest.approx([0.6, 0.2, 0.0])  # nosec
    assert pi.exists_tail(r).tolist() == [True, False, False]  # nosec
    assert pi.exists_head(r).tolist() == [False, True, True]  # nosec
    assert pi.exists_tail(r, negated=True).all()  # nosec
    with pytest.raises(ValueError):
        TabularPredictor([r], [0], [1], [1.5], 3)


def test_tabular_existence_with_high_default():
    # head 0 has every tail stored below 0.5; head 1 falls back to the default
    pi = TabularPredictor([0, 0], [0, 0], [0, 1], [0.1, 0.2], 2, default=0.6)
    assert pi.exists_tail(0).tolist() == [False, True]  # nosec
    assert pi.exists_head(0).tolist() == [True, True]  # nosec
    assert pi.exists_tail(0, negated=True).tolist() == [True, False]  # nosec


def test_tabular_io_round_trip(graph):
    r = graph.relation_id("r")
    pi = TabularPredictor([r, r], [0, 1], [1, 2], [0.75, 0.25], 3)
    buffer = io.StringIO()
    write_tabular(pi, buffer, graph)
    reloaded = load_tabular(buffer.getvalue().encode(), graph)
    assert np.allclose(reloaded.triples()[3], pi.triples()[3])  # nosec

    with pytest.raises(TripleFormatError):
        load_tabular(b"r\ta\tzzz\t0.5\n", graph)
    with pytest.raises(TripleFormatError):
        load_tabular(b"r\ta\tb\t1.5\n", graph)
    with pytest.raises(TripleFormatError):
        load_tabular(b"r\ta\tb\tmaybe\n", graph)


def test_augmented_predictor(graph):
    r = graph.relation_id("r")
    base = TabularPredictor([r], [0], [2], [1.0], 3)
    observed = load_triples(b"a\tr\tb\n", like=graph)
    pi = augment_with_observed(base, observed)
    assert pi.score(r, 0, 1) == 1.0  # nosec
    assert pi.score(r, 0, 2) == pytest.approx(0.9999)  # nosec
    assert pi.score_tails(r, 0).tolist() == pytest.approx([0.0, 1.0, 0.9999])  # nosec
    assert pi.exists_tail(r).tolist() == [True, False, False]  # nosec


def test_binarized_predictor(graph):
    r = graph.relation_id("r")
    base = TabularPredictor([r, r], [0, 1], [1, 2], [0.7, 0.4], 3)
    pi = BinarizedPredictor(base, 0.5)
    assert pi.score(r, [0, 1], [1, 2]).tolist() == [1.0, 0.0]  # nosec
    with pytest.raises(ValueError):
        BinarizedPredictor(base, 2.0)


def test_noisy_perfect_flips_exactly():
    _, g_tilde = load_toy_graphs("toy")
    pi = noisy_perfect(g_tilde, 0.1, random_state=0)
    rel, head, tail, probs = pi.triples()
    n_sampled = len(probs)
    assert pi.n_flipped == int(round(0.1 * n_sampled))  # nosec
    assert pi.flipped.sum() == pi.n_flipped  # nosec
    is_fact = g_tilde.contains(rel, head, tail)
    verdict = probs >= 0.5
    assert np.array_equal(verdict != is_fact, pi.flipped)  # nosec

    again = noisy_perfect(g_tilde, 0.1, random_state=0)
    assert np.array_equal(again.triples()[3], probs)  # nosec
    with pytest.raises(ValueError):
        noisy_perfect(g_tilde, 0.5)


def test_make_predictor(graph):
    observed = load_triples(b"a\tr\tb\n", like=graph)
    pi = make_predictor("perfect", g_tilde=graph)
    assert isinstance(pi, PerfectPredictor)  # nosec
    pi = make_predictor("observed", g_obs=observed)
    assert pi.graph is observed  # nosec
    assert isinstance(  # nosec
        make_predictor("noisy:0.2", g_tilde=graph, random_state=0), TabularPredictor
    )
    kwargs = {"n_entities": 3, "value": 1}
    pi = make_predictor(ConstantPredictor, predictor_kwargs=kwargs)
    assert isinstance(pi, ConstantPredictor)  # nosec

    tempdir = tempfile.mkdtemp()
    fn = op.join(tempdir, "scores.tsv")
    with open(fn, "w") as fp:
        fp.write("r\ta\tb\t0.7\n")
    assert isinstance(  # nosec
        make_predictor("tabular:" + fn, g_obs=graph), TabularPredictor
    )
    pi = make_predictor("binarized:{0}:0.8".format(fn), g_obs=graph)
    assert pi.score(graph.relation_id("r"), 0, 1) == 0.0  # nosec

    pi = make_predictor("perfect", g_obs=observed, g_tilde=graph, augment=True)
    assert pi.score(graph.relation_id("r"), 0, 1) == 1.0  # nosec


@pytest.mark.parametrize("spec", ["oracle", "noisy:high", "perfect", "observed", dict])
def test_make_predictor_errors(spec):
    with pytest.raises(ValueError):
        make_predictor(spec)
