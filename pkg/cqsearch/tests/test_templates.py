import pytest

from cqsearch.datasets import load_toy_graphs
from cqsearch.oracle import oracle_solve
from cqsearch.query import parse_query
from cqsearch.templates import (
    QAC_SMALL_TYPES,
    TEMPLATES,
    TRAINING_TYPES,
    GenerationError,
    instantiate_template,
    template_text,
)


def test_template_tags():
    assert len(TRAINING_TYPES) == 11  # nosec
    assert set(QAC_SMALL_TYPES) <= set(TEMPLATES)  # nosec
    negated = {tag for tag, lits in TEMPLATES.items() if any(n for _, _, n in lits)}
    assert negated == {"2in", "3in", "inp", "pin"}  # nosec


@pytest.mark.parametrize("tag", sorted(TEMPLATES))
def test_template_text_parses(tag):
    query = parse_query(template_text(tag))
    cq = query.disjuncts[0]
    assert cq.free_vars == ("x1",)  # nosec
    assert len(cq.literals) == len(TEMPLATES[tag])  # nosec


@pytest.mark.parametrize("tag", ["1p", "2p", "3p", "2i", "pi", "ip", "2in", "pin"])
def test_instantiated_answer_holds(tag):
    _, g_tilde = load_toy_graphs("toy")
    query, answer = instantiate_template(g_tilde, tag, random_state=0, max_tries=500)
    assert query.free_vars == ("x1",)  # nosec
    assert len(query.literals) == len(TEMPLATES[tag])  # nosec
    assert [lit.negated for lit in query.literals] == [  # nosec
        n for _, _, n in TEMPLATES[tag]
    ]
    assert (answer,) in oracle_solve(query, g_tilde).answers  # nosec


def test_instantiate_is_seeded():
    _, g_tilde = load_toy_graphs("toy")
    first = instantiate_template(g_tilde, "2p", random_state=4, max_tries=500)
    second = instantiate_template(g_tilde, "2p", random_state=4, max_tries=500)
    assert first == second  # nosec


def test_instantiate_rejects():
    _, g_tilde = load_toy_graphs("toy")
    with pytest.raises(ValueError):
        template_text("4p")
    with pytest.raises(ValueError):
        instantiate_template(g_tilde, "4p")
    with pytest.raises(GenerationError):
        instantiate_template(g_tilde, "2p", random_state=0, max_tries=0)
