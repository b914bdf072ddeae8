"""The term/value/literal computational graph searched by the policy."""
import logging
from dataclasses import dataclass

import numpy as np

from .fuzzy import literal_scores
from .query import bind_query
from .utils import SCORE_THRESHOLD

__all__ = [
    "ComputationalGraph",
    "build",
    "pe_labels_exact",
    "pe_labels_cwa",
    "pe_labels_all_one",
    "le_labels",
    "vertex_count",
    "edge_bound",
]

logger = logging.getLogger(__name__)

PE_MODES = ("exact", "cwa", "all-one")


@dataclass(frozen=True)
class Block(object):
    """Value-literal edges between one literal and the value vertices of one term."""

    literal: int
    term: int
    start: int
    stop: int


class ComputationalGraph(object):
    """Tripartite graph of a Boolean conjunctive query over a fixed graph.

    Term vertices are indexed like the terms of the bound query (variables,
    then constants). Value vertices are laid out block by block: variable
    ``i`` owns ``[i * n_entities, (i + 1) * n_entities)`` and constant ``j``
    owns the single vertex ``n_vars * n_entities + j``. Literal vertices
    follow query order. Each value vertex has one term-value edge to its
    term; each literal has one value-literal edge to every value vertex of
    every distinct term it mentions.

    Parameters
    ----------
    query : BoundQuery
        Query without free variables.

    n_entities : int

    Attributes
    ----------
    value_term, value_entity : numpy.ndarray
        Term index and entity id of every value vertex.

    edge_literal, edge_value, edge_term, edge_entity : numpy.ndarray
        Endpoints of every value-literal edge.

    blocks : list of Block
        Contiguous edge ranges, one per (literal, term) pair.

    pe_label : numpy.ndarray of uint8
        Potential-edge label of every value-literal edge.
    """

    def __init__(self, query, n_entities):
        if query.n_free:
            raise ValueError("computational graphs are built for Boolean queries")
        self.query = query
        self.n_entities = int(n_entities)
        self.n_vars = query.n_vars
        self.n_consts = query.n_consts
        self.n_terms = query.n_terms
        self.n_literals = len(query.literals)

        V = self.n_entities
        sizes = np.array([V] * self.n_vars + [1] * self.n_consts, dtype=np.int64)
        self.term_offset = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.term_size = sizes
        self.value_term = np.repeat(np.arange(self.n_terms), sizes)
        self.value_entity = np.concatenate(
            [np.tile(np.arange(V), self.n_vars), query.const_ids]
        ).astype(np.int64)

        blocks = []
        literal, value, term = [], [], []
        start = 0
        for i, lit in enumerate(query.literals):
            for e in lit.terms:
                size = int(sizes[e])
                blocks.append(Block(i, e, start, start + size))
                literal.append(np.full(size, i))
                value.append(np.arange(size) + self.term_offset[e])
                term.append(np.full(size, e))
                start += size
        self.blocks = blocks
        empty = [np.empty(0, dtype=np.int64)]
        self.edge_literal = np.concatenate(literal + empty).astype(np.int64)
        self.edge_value = np.concatenate(value + empty).astype(np.int64)
        self.edge_term = np.concatenate(term + empty).astype(np.int64)
        self.edge_entity = self.value_entity[self.edge_value]
        self.literal_vars = [
            frozenset(t for t in lit.terms if t < self.n_vars) for lit in query.literals
        ]
        self.pe_label = np.ones(len(self.edge_value), dtype=np.uint8)
        self.pe_mode = "all-one"

    @property
    def n_values(self):
        return len(self.value_term)

    @property
    def n_vertices(self):
        return self.n_values + self.n_terms + self.n_literals

    @property
    def n_edges(self):
        """Number of value-literal edges."""
        return len(self.edge_value)

    @property
    def n_tv_edges(self):
        return self.n_values

    def domain(self, term):
        """Entity ids of the value vertices of ``term``."""
        lo = self.term_offset[term]
        return self.value_entity[lo : lo + self.term_size[term]]

    def __repr__(self):
        return (
            "ComputationalGraph(n_vars={0}, n_consts={1}, n_literals={2}, "
            "n_vertices={3}, n_edges={4}, pe_mode={5!r})".format(
                self.n_vars,
                self.n_consts,
                self.n_literals,
                self.n_vertices,
                self.n_edges,
                self.pe_mode,
            )
        )


def vertex_count(n_entities, n_vars, n_consts, n_literals):
    """Closed-form vertex count of a computational graph.

    Examples
    --------
    >>> vertex_count(5, 2, 1, 2)
    16
    """
    return (n_entities + 1) * n_vars + 2 * n_consts + n_literals


def edge_bound(n_entities, n_vars, n_consts, n_literals, max_arity=2):
    """Upper bound on the number of value-literal edges."""
    return n_entities * (n_vars + max_arity * n_literals) + (
        max_arity * n_consts * n_literals
    )


def _satisfied(scores, negated):
    scores = np.asarray(scores, dtype=float)
    if negated:
        scores = 1.0 - scores
    return scores >= SCORE_THRESHOLD


def _exact_atom(predictor, query, atom, term, dom):
    """Exact PE labels of an atom for ``term -> a`` over ``a`` in ``dom``."""
    r, neg = atom.relation, atom.negated
    head, tail = atom.args
    n_vars = query.n_vars
    V = predictor.n_entities

    def const(t):
        return query.const_ids[t - n_vars]

    if term not in atom.args:
        # The term is not constrained by this atom; it only needs a model.
        if head == tail:
            if head < n_vars:
                ok = _satisfied(predictor.score(r, np.arange(V), np.arange(V)), neg)
            else:
                ok = _satisfied(predictor.score(r, const(head), const(head)), neg)
        elif head < n_vars and tail < n_vars:
            ok = predictor.exists_tail(r, negated=neg)
        elif head < n_vars:
            ok = _satisfied(predictor.score_heads(r, const(tail)), neg)
        elif tail < n_vars:
            ok = _satisfied(predictor.score_tails(r, const(head)), neg)
        else:
            ok = _satisfied(predictor.score(r, const(head), const(tail)), neg)
        return np.full(len(dom), bool(np.any(ok)))

    if head == tail:
        return _satisfied(predictor.score(r, dom, dom), neg)
    if head == term:
        if tail < n_vars:
            return predictor.exists_tail(r, negated=neg)[dom]
        return _satisfied(predictor.score_heads(r, const(tail))[dom], neg)
    if head < n_vars:
        return predictor.exists_head(r, negated=neg)[dom]
    return _satisfied(predictor.score_tails(r, const(head))[dom], neg)


def _cwa_atom(graph, query, atom, term, dom):
    """Closed-world PE labels of an atom from observed head/tail occurrences."""
    if atom.negated:
        return np.ones(len(dom), dtype=bool)
    r = atom.relation
    head, tail = atom.args
    n_vars = query.n_vars
    is_head = graph.head_mask(r)
    is_tail = graph.tail_mask(r)

    def const(t):
        return query.const_ids[t - n_vars]

    # A fact r(a, b) is only possible when a heads and b tails some
    # observed r-fact; the pairing itself need not be observed.
    if term not in atom.args:
        if head == tail and head < n_vars:
            ok = bool((is_head & is_tail).any())
        elif head < n_vars and tail < n_vars:
            ok = bool(is_head.any())
        elif head < n_vars:
            ok = bool(is_tail[const(tail)])
        elif tail < n_vars:
            ok = bool(is_head[const(head)])
        else:
            ok = bool(is_head[const(head)] and is_tail[const(tail)])
        return np.full(len(dom), ok)

    if head == tail:
        return (is_head & is_tail)[dom]
    if head == term:
        if tail < n_vars:
            return is_head[dom]
        return is_head[dom] & is_tail[const(tail)]
    if head < n_vars:
        return is_tail[dom]
    return is_tail[dom] & is_head[const(head)]


def _block_labels(cg, label_atom):
    labels = np.zeros(cg.n_edges, dtype=np.uint8)
    for block in cg.blocks:
        lit = cg.query.literals[block.literal]
        dom = cg.domain(block.term)
        ok = np.zeros(len(dom), dtype=bool)
        for atom in lit.atoms():
            ok |= label_atom(atom, block.term, dom)
        labels[block.start : block.stop] = ok
    return labels


def pe_labels_exact(cg, predictor):
    """Potential-edge labels from the predictor.

    The label of edge ``(psi, e -> a)`` is 1 iff some assignment with
    ``e -> a`` gives ``psi`` a score of at least 0.5. Other terms of the
    literal are quantified jointly.

    Parameters
    ----------
    cg : ComputationalGraph

    predictor : LinkPredictor

    Returns
    -------
    labels : numpy.ndarray of uint8, one per value-literal edge
    """
    return _block_labels(
        cg, lambda atom, term, dom: _exact_atom(predictor, cg.query, atom, term, dom)
    )


def pe_labels_cwa(cg, g_obs):
    """Potential-edge labels under the closed-world assumption.

    A positive atom ``r(z1, z2)`` is considered satisfiable with ``z1 -> a``
    iff ``a`` is a head of ``r`` in the observed graph, and symmetrically
    for ``z2``. A constant side only has to occur on its own side of some
    observed ``r``-fact. Negated atoms always get label 1.

    When every fact ``r(a, b)`` of the completion has ``a`` heading and
    ``b`` tailing observed ``r``-facts, a positive literal with exact
    label 1 under the perfect predictor also has CWA label 1.

    Parameters
    ----------
    cg : ComputationalGraph

    g_obs : KnowledgeGraph

    Returns
    -------
    labels : numpy.ndarray of uint8
    """
    return _block_labels(
        cg, lambda atom, term, dom: _cwa_atom(g_obs, cg.query, atom, term, dom)
    )


def pe_labels_all_one(cg):
    """Constant 1 potential-edge labels."""
    return np.ones(cg.n_edges, dtype=np.uint8)


def build(query, graph, predictor, pe_mode="exact"):
    """Build the computational graph of a Boolean query.

    Parameters
    ----------
    query : ConjunctiveQuery or BoundQuery
        Query without free variables.

    graph : KnowledgeGraph
        The observable graph. Provides the vocabulary and, for
        ``pe_mode="cwa"``, the observed facts.

    predictor : LinkPredictor
        Used for ``pe_mode="exact"``.

    pe_mode : {"exact", "cwa", "all-one"}, default="exact"

    Returns
    -------
    cg : ComputationalGraph
    """
    if pe_mode not in PE_MODES:
        raise ValueError(
            "pe_mode must be one of {0}; got {1} instead.".format(PE_MODES, pe_mode)
        )
    bound = bind_query(query, graph)
    cg = ComputationalGraph(bound, graph.n_entities)
    if pe_mode == "exact":
        cg.pe_label = pe_labels_exact(cg, predictor)
    elif pe_mode == "cwa":
        cg.pe_label = pe_labels_cwa(cg, graph)
    else:
        cg.pe_label = pe_labels_all_one(cg)
    cg.pe_mode = pe_mode
    logger.debug("Built %r", cg)
    return cg


def le_labels(cg, predictor, assignment, previous=None, previous_assignment=None):
    """Light-edge labels for the current assignment.

    The label of edge ``(psi, e -> a)`` is 1 iff ``psi`` scores at least 0.5
    when ``e`` alone is moved to ``a``. Repeated occurrences of ``e`` move
    together.

    Parameters
    ----------
    cg : ComputationalGraph

    predictor : LinkPredictor

    assignment : array-like of int
        Current value of every variable.

    previous, previous_assignment : numpy.ndarray, default=None
        Labels computed for ``previous_assignment``. When both are given,
        only blocks of literals mentioning a changed variable are recomputed.

    Returns
    -------
    labels : numpy.ndarray of uint8
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    values = cg.query.term_values(assignment)
    incremental = previous is not None and previous_assignment is not None
    if incremental:
        changed = set(np.flatnonzero(assignment != previous_assignment).tolist())
        labels = previous.copy()
    else:
        labels = np.zeros(cg.n_edges, dtype=np.uint8)

    for block in cg.blocks:
        if incremental and not (cg.literal_vars[block.literal] & changed):
            continue
        lit = cg.query.literals[block.literal]
        dom = cg.domain(block.term)
        rows = np.tile(values, (len(dom), 1))
        rows[:, block.term] = dom
        scores = literal_scores(predictor, lit, rows)
        labels[block.start : block.stop] = scores >= SCORE_THRESHOLD
    return labels
