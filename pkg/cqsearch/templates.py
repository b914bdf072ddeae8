"""Simple query templates and their instantiation by walks on a graph."""
import logging

import numpy as np
from sklearn.utils import check_random_state

from .query import ConjunctiveQuery, Literal, Term

__all__ = [
    "GenerationError",
    "TEMPLATES",
    "TRAINING_TYPES",
    "QAC_SMALL_TYPES",
    "template_text",
    "instantiate_template",
]

logger = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    """Raised when a generator runs out of retries."""


# Literal ``i`` uses relation ``r{i+1}``; each entry is (head, tail, negated).
# Literals are ordered so that one side is always reached before the other.
TEMPLATES = {
    "1p": (("x1", "c1", False),),
    "2p": (("x1", "y1", False), ("y1", "c1", False)),
    "3p": (("x1", "y1", False), ("y1", "y2", False), ("y2", "c1", False)),
    "2i": (("x1", "c1", False), ("x1", "c2", False)),
    "3i": (("x1", "c1", False), ("x1", "c2", False), ("x1", "c3", False)),
    "pi": (("x1", "y1", False), ("y1", "c1", False), ("x1", "c2", False)),
    "ip": (("x1", "y1", False), ("y1", "c1", False), ("y1", "c2", False)),
    "2in": (("x1", "c1", False), ("x1", "c2", True)),
    "3in": (("x1", "c1", False), ("x1", "c2", False), ("x1", "c3", True)),
    "inp": (("x1", "y1", False), ("y1", "c1", False), ("y1", "c2", True)),
    "pin": (("x1", "y1", False), ("y1", "c1", False), ("x1", "c2", True)),
}

TRAINING_TYPES = tuple(TEMPLATES)
QAC_SMALL_TYPES = ("2p", "3p", "ip", "pi", "inp", "pin")


def _check_tag(tag):
    if tag not in TEMPLATES:
        raise ValueError(
            "type_tag must be one of {0}; got {1} instead.".format(
                sorted(TEMPLATES), tag
            )
        )


def _exist_vars(template):
    names = []
    for head, tail, _ in template:
        for name in (head, tail):
            if name.startswith("y") and name not in names:
                names.append(name)
    return tuple(names)


def template_text(tag):
    """Abstract formula of a template in query grammar.

    Examples
    --------
    >>> template_text("2in")
    'Q(x1) := r1(x1,c:c1) & !r2(x1,c:c2)'
    >>> template_text("ip")
    'Q(x1) := EXISTS y1 . r1(x1,y1) & r2(y1,c:c1) & r3(y1,c:c2)'
    """
    _check_tag(tag)
    template = TEMPLATES[tag]

    def term(name):
        return "c:" + name if name.startswith("c") else name

    body = " & ".join(
        "{0}r{1}({2},{3})".format("!" if neg else "", i + 1, term(h), term(t))
        for i, (h, t, neg) in enumerate(template)
    )
    exists = _exist_vars(template)
    prefix = "EXISTS {0} . ".format(",".join(exists)) if exists else ""
    return "Q(x1) := " + prefix + body


def _pick(rng, n):
    return int(rng.randint(n))


def _negated_fact(graph, rng, value, tries=50):
    """Sample ``(r, c)`` with some ``r(b, c)``, ``b != value``, no ``r(value, c)``."""
    facts = graph.facts
    if len(facts) == 0:
        return None
    for _ in range(tries):
        r, b, c = facts[_pick(rng, len(facts))]
        if b != value and not graph.contains(r, value, c):
            return int(r), int(c)
    return None


def _walk(graph, template, rng):
    binding = {"x1": _pick(rng, graph.n_entities)}
    relations = []
    for head, tail, negated in template:
        source = binding[head]
        if negated:
            picked = _negated_fact(graph, rng, source)
            if picked is None:
                return None
            r, c = picked
        else:
            rels, tails = graph.out_edges(source)
            if len(rels) == 0:
                return None
            k = _pick(rng, len(rels))
            r, c = int(rels[k]), int(tails[k])
        if tail in binding and binding[tail] != c:
            return None
        binding[tail] = c
        relations.append(r)
    return binding, relations


def instantiate_template(graph, type_tag, random_state=None, max_tries=100):
    """Instantiate a simple template from a random walk on ``graph``.

    The free variable is mapped to a random entity and the walk follows the
    template's literals outwards, so the sampled entity is an answer of the
    resulting query on ``graph``. A negated literal ``!r(z, c)`` is taken
    from a fact ``r(b, c)`` whose head differs from the value of ``z`` while
    ``r(z, c)`` is absent, so it excludes at least one entity.

    Parameters
    ----------
    graph : KnowledgeGraph

    type_tag : str
        One of :data:`TEMPLATES`.

    random_state : int, RandomState instance or None, default=None

    max_tries : int, default=100

    Returns
    -------
    query : ConjunctiveQuery
        One free variable ``x1``.

    answer : str
        The entity the walk started from.

    Raises
    ------
    GenerationError
        If no instance is found within ``max_tries`` walks.
    """
    _check_tag(type_tag)
    if graph.n_facts == 0:
        raise GenerationError("cannot instantiate templates on an empty graph")
    rng = check_random_state(random_state)
    template = TEMPLATES[type_tag]
    exists = _exist_vars(template)

    def term(name, binding):
        if name == "x1":
            return Term.free(name)
        if name in exists:
            return Term.exist(name)
        return Term.const(graph.entities[binding[name]])

    for _ in range(max_tries):
        walked = _walk(graph, template, rng)
        if walked is None:
            continue
        binding, relations = walked
        literals = tuple(
            Literal(
                graph.relations[r],
                (term(h, binding), term(t, binding)),
                negated,
            )
            for r, (h, t, negated) in zip(relations, template)
        )
        if len(set(literals)) < len(literals):
            continue
        query = ConjunctiveQuery(("x1",), exists, literals)
        return query, graph.entities[binding["x1"]]
    raise GenerationError(
        "no {0} instance found after {1} walks".format(type_tag, max_tries)
    )
