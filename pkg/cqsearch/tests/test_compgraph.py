import itertools

import numpy as np
import pytest

from cqsearch.compgraph import (
    ComputationalGraph,
    build,
    edge_bound,
    le_labels,
    pe_labels_cwa,
    pe_labels_exact,
    vertex_count,
)
from cqsearch.datasets import load_toy_graphs
from cqsearch.fuzzy import literal_scores
from cqsearch.kg import load_graph_pair, load_triples
from cqsearch.predictor import PerfectPredictor, noisy_perfect
from cqsearch.query import bind_query, parse_query

GRAPH = b"a\tr1\tb\nb\tr2\tc\nc\tr1\ta\n"
TWO_HOP = "Q() := EXISTS y1 . r1(c:a,y1) & r2(y1,c:c)"

TOY_QUERIES = [
    "Q() := EXISTS y1,y2 . friend(y1,y2) & lives_in(y2,c:c1)",
    "Q() := EXISTS y1,y2 . works_for(y1,y2) & based_in(y2,c:c3) & !lives_in(y1,c:c3)",
    "Q() := EXISTS y1 . OR{ lives_in(y1,c:c4) ; friend(y1,y1) } & works_for(y1,c:o2)",
    "Q() := EXISTS y1,y2,y3 . OR{ friend(y1,y2) ; based_in(y3,y3) } & city_of(y3,c:k1)",
    "Q() := EXISTS y1 . lives_in(c:p1,c:c1) & !friend(c:p1,y1)",
]


@pytest.fixture
def graph():
    return load_triples(GRAPH)


def test_layout(graph):
    cg = build(parse_query(TWO_HOP), graph, PerfectPredictor(graph))
    V = graph.n_entities
    assert (cg.n_vars, cg.n_consts, cg.n_literals) == (1, 2, 2)  # nosec
    assert cg.n_values == V + 2  # nosec
    assert cg.n_vertices == vertex_count(V, 1, 2, 2)  # nosec
    assert cg.n_tv_edges == cg.n_values  # nosec
    # y1 appears in both literals, each constant in one
    assert cg.n_edges == 2 * V + 2  # nosec
    assert cg.n_edges <= edge_bound(V, 1, 2, 2)  # nosec
    assert cg.domain(0).tolist() == list(range(V))  # nosec
    assert cg.domain(1).tolist() == [graph.entity_id("a")]  # nosec
    assert cg.value_term.tolist() == [0] * V + [1, 2]  # nosec
    assert cg.literal_vars == [frozenset([0]), frozenset([0])]  # nosec
    for block in cg.blocks:
        assert block.stop - block.start == cg.term_size[block.term]  # nosec
        edges = cg.edge_literal[block.start : block.stop]
        assert (edges == block.literal).all()  # nosec


def test_exact_labels(graph):
    cg = build(parse_query(TWO_HOP), graph, PerfectPredictor(graph))
    assert cg.pe_mode == "exact"  # nosec
    # blocks: (lit0, a), (lit0, y1), (lit1, y1), (lit1, c)
    assert cg.pe_label.tolist() == [1, 0, 1, 0, 0, 1, 0, 1]  # nosec


def test_negated_labels(graph):
    text = "Q() := EXISTS y1 . r1(c:a,y1) & !r2(y1,c:c)"
    cg = build(parse_query(text), graph, PerfectPredictor(graph))
    assert cg.pe_label.tolist() == [1, 0, 1, 0, 1, 0, 1, 1]  # nosec
    cwa = build(parse_query(text), graph, None, pe_mode="cwa")
    assert cwa.pe_label[4:].tolist() == [1, 1, 1, 1]  # nosec
    ones = build(parse_query(text), graph, None, pe_mode="all-one")
    assert ones.pe_label.all() and ones.pe_mode == "all-one"  # nosec


def test_build_rejects(graph):
    with pytest.raises(ValueError):
        build(parse_query(TWO_HOP), graph, None, pe_mode="sometimes")
    with pytest.raises(ValueError):
        build(parse_query("Q(x) := r1(x,c:a)"), graph, PerfectPredictor(graph))
    bound = bind_query(parse_query("Q(x) := r1(x,c:a)"), graph, allow_free=True)
    with pytest.raises(ValueError):
        ComputationalGraph(bound, graph.n_entities)


def brute_force_pe(cg, predictor):
    """Label 1 iff some binding of the other literal terms scores >= 0.5."""
    labels = []
    for block in cg.blocks:
        lit = cg.query.literals[block.literal]
        others = [t for t in lit.terms if t != block.term and t < cg.n_vars]
        base = cg.query.term_values(np.zeros(cg.n_vars, dtype=np.int64))
        for a in cg.domain(block.term):
            ok = False
            for combo in itertools.product(range(cg.n_entities), repeat=len(others)):
                values = base.copy()
                values[block.term] = a
                values[others] = combo
                ok = ok or literal_scores(predictor, lit, values[None, :])[0] >= 0.5
            labels.append(ok)
    return np.array(labels, dtype=np.uint8)


@pytest.mark.parametrize("text", TOY_QUERIES)
@pytest.mark.parametrize("noisy", [False, True])
def test_exact_labels_match_brute_force(text, noisy):
    g, g_tilde = load_toy_graphs("toy")
    if noisy:
        pi = noisy_perfect(g_tilde, 0.2, random_state=3)
    else:
        pi = PerfectPredictor(g_tilde)
    cg = build(parse_query(text), g, pi)
    assert np.array_equal(cg.pe_label, brute_force_pe(cg, pi))  # nosec


# every hidden fact joins an observed r-head to an observed r-tail
CLOSED_OBSERVED = b"a\tr\td\ne\tr\tc\nd\ts\ta\ne\ts\te\n"
CLOSED_COMPLETE = CLOSED_OBSERVED + b"a\tr\tc\nd\ts\te\n"


@pytest.mark.parametrize(
    "text",
    [
        "Q() := EXISTS y1 . r(y1,c:c)",
        "Q() := EXISTS y1 . r(c:a,y1) & s(y1,c:e)",
        "Q() := EXISTS y1,y2 . r(y1,y2) & s(y2,y1)",
        "Q() := EXISTS y1 . s(y1,y1) & r(c:a,c:c)",
        "Q() := EXISTS y1,y2 . OR{ r(y1,c:c) ; s(y2,y2) } & s(c:d,y1)",
    ],
)
def test_cwa_covers_exact_labels(text):
    g, g_tilde = load_graph_pair(CLOSED_OBSERVED, CLOSED_COMPLETE)
    cg = build(parse_query(text), g, None, pe_mode="cwa")
    exact = pe_labels_exact(cg, PerfectPredictor(g_tilde))
    assert exact.any()  # nosec
    assert (cg.pe_label >= exact).all()  # nosec
    assert np.array_equal(pe_labels_cwa(cg, g), cg.pe_label)  # nosec


def test_cwa_hidden_answer():
    g, g_tilde = load_graph_pair(CLOSED_OBSERVED, CLOSED_COMPLETE)
    cg = build(parse_query("Q() := EXISTS y1 . r(y1,c:c)"), g, None, pe_mode="cwa")
    # blocks: (lit0, y1), (lit0, c)
    block = cg.blocks[0]
    labels = cg.pe_label[block.start : block.stop]
    assert labels[g.entity_id("a")] == 1  # nosec
    assert labels[g.entity_id("e")] == 1  # nosec
    assert labels[g.entity_id("d")] == 0  # nosec

    # a constant that never tails an observed r-fact rules the literal out
    cg = build(parse_query("Q() := EXISTS y1 . r(y1,c:a)"), g, None, pe_mode="cwa")
    assert not cg.pe_label.any()  # nosec


def test_light_edges(graph):
    pi = PerfectPredictor(graph)
    cg = build(parse_query(TWO_HOP), graph, pi)
    a, b = graph.entity_id("a"), graph.entity_id("b")
    at_b = le_labels(cg, pi, [b])
    assert at_b.tolist() == [1, 0, 1, 0, 0, 1, 0, 1]  # nosec
    at_a = le_labels(cg, pi, [a])
    assert at_a.tolist() == [0, 0, 1, 0, 0, 1, 0, 0]  # nosec
    incremental = le_labels(cg, pi, [b], previous=at_a, previous_assignment=[a])
    assert np.array_equal(incremental, at_b)  # nosec


@pytest.mark.parametrize("text", TOY_QUERIES)
def test_incremental_light_edges(text):
    g, g_tilde = load_toy_graphs("toy")
    pi = PerfectPredictor(g_tilde)
    cg = build(parse_query(text), g, pi)
    rng = np.random.RandomState(0)
    current = rng.randint(g.n_entities, size=cg.n_vars)
    labels = le_labels(cg, pi, current)
    for _ in range(5):
        proposal = current.copy()
        if cg.n_vars:
            proposal[rng.randint(cg.n_vars)] = rng.randint(g.n_entities)
        labels = le_labels(
            cg, pi, proposal, previous=labels, previous_assignment=current
        )
        assert np.array_equal(labels, le_labels(cg, pi, proposal))  # nosec
        current = proposal
