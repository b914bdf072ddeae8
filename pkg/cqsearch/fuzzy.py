"""Gödel fuzzy-logic scores of grounded queries under a link predictor."""
from collections import namedtuple
from collections.abc import Mapping

import numpy as np

from .utils import DEFAULT_EXHAUSTIVE_BUDGET

__all__ = [
    "BudgetExceededError",
    "literal_score",
    "literal_scores",
    "assignment_score",
    "assignment_scores",
    "boolean_score_exhaustive",
]

ExhaustiveResult = namedtuple("ExhaustiveResult", ["score", "assignment", "disjunct"])


class BudgetExceededError(RuntimeError):
    """Raised when an exact computation would exceed its work budget."""


def literal_scores(predictor, literal, values):
    """Score one literal under many term bindings at once.

    Parameters
    ----------
    predictor : LinkPredictor

    literal : BoundLiteral

    values : numpy.ndarray of shape (n_bindings, n_terms)
        Entity id of every term, row by row.

    Returns
    -------
    scores : numpy.ndarray of shape (n_bindings,)
        ``pi(r,a,b)`` for positive atoms, ``1 - pi(r,a,b)`` for negated atoms
        and the maximum over the body for clause literals.
    """
    values = np.atleast_2d(values)
    if literal.is_clause:
        return np.max(
            np.stack([literal_scores(predictor, a, values) for a in literal.body]),
            axis=0,
        )
    a, b = literal.args
    scores = np.asarray(
        predictor.score(literal.relation, values[:, a], values[:, b]), dtype=float
    )
    return 1.0 - scores if literal.negated else scores


def literal_score(predictor, literal, binding):
    """Score a single literal under a term binding.

    Parameters
    ----------
    predictor : LinkPredictor

    literal : BoundLiteral

    binding : mapping or array-like
        Term index to entity id. Every term of ``literal`` must be bound.

    Returns
    -------
    score : float in [0, 1]
    """
    terms = literal.terms
    if isinstance(binding, Mapping):
        missing = [t for t in terms if t not in binding]
        if missing:
            raise ValueError("terms {0} are unbound".format(missing))
        values = np.full(max(terms) + 1, -1, dtype=np.int64)
        for t in terms:
            values[t] = binding[t]
    else:
        values = np.asarray(binding, dtype=np.int64)
        if len(values) <= max(terms) or (values[list(terms)] < 0).any():
            raise ValueError("binding does not cover terms {0}".format(terms))
    return float(literal_scores(predictor, literal, values[None, :])[0])


def assignment_scores(predictor, query, assignments):
    """Gödel conjunction (minimum) of all literal scores for many assignments.

    Parameters
    ----------
    predictor : LinkPredictor

    query : BoundQuery

    assignments : numpy.ndarray of shape (n_assignments, n_vars)

    Returns
    -------
    scores : numpy.ndarray of shape (n_assignments,)
    """
    assignments = np.asarray(assignments, dtype=np.int64).reshape(-1, query.n_vars)
    consts = np.broadcast_to(query.const_ids, (assignments.shape[0], query.n_consts))
    values = np.concatenate([assignments, consts], axis=1)
    scores = np.ones(assignments.shape[0])
    for lit in query.literals:
        np.minimum(scores, literal_scores(predictor, lit, values), out=scores)
    return scores


def assignment_score(predictor, query, assignment):
    """Score a total assignment of the variables of ``query``.

    Parameters
    ----------
    predictor : LinkPredictor

    query : BoundQuery

    assignment : array-like of int
        One entity id per variable of ``query``.

    Returns
    -------
    score : float in [0, 1]

    Raises
    ------
    ValueError
        If the assignment is partial or out of range.
    """
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if assignment.shape[0] != query.n_vars:
        raise ValueError(
            "assignment must cover {0} variables; got {1} values".format(
                query.n_vars, assignment.shape[0]
            )
        )
    if assignment.size and (
        assignment.min() < 0 or assignment.max() >= query.n_entities
    ):
        raise ValueError("assignment contains ids outside the entity range")
    return float(assignment_scores(predictor, query, assignment[None, :])[0])


def boolean_score_exhaustive(
    predictor, query, budget=DEFAULT_EXHAUSTIVE_BUDGET, chunk_size=65536
):
    """Exact score of an existentially closed query by enumeration.

    Every assignment of the variables is scored and the maximum is returned.
    A DNF query is given as a sequence of bound disjuncts; its score is the
    maximum over disjuncts.

    Parameters
    ----------
    predictor : LinkPredictor

    query : BoundQuery or sequence of BoundQuery

    budget : int, default=10**7
        Maximum number of assignments to enumerate per disjunct.

    chunk_size : int, default=65536
        Number of assignments scored per vectorized batch.

    Returns
    -------
    score : float
        The maximum score.

    assignment : numpy.ndarray
        The first assignment (in lexicographic order) achieving it.

    disjunct : int
        Index of the disjunct achieving it.

    Raises
    ------
    BudgetExceededError
        If ``n_entities ** n_vars`` exceeds ``budget`` for some disjunct.
    """
    disjuncts = list(query) if isinstance(query, (list, tuple)) else [query]
    best = ExhaustiveResult(-1.0, None, -1)
    for d, bound in enumerate(disjuncts):
        n, k = bound.n_entities, bound.n_vars
        total = n ** k
        if total > budget:
            raise BudgetExceededError(
                "{0} assignments exceed the exhaustive budget of {1}".format(
                    total, budget
                )
            )
        if k == 0:
            score = assignment_score(predictor, bound, [])
            if score > best.score:
                best = ExhaustiveResult(score, np.empty(0, dtype=np.int64), d)
            continue
        for start in range(0, total, chunk_size):
            idx = np.arange(start, min(start + chunk_size, total))
            assignments = np.stack(np.unravel_index(idx, (n,) * k), axis=1)
            scores = assignment_scores(predictor, bound, assignments)
            i = int(np.argmax(scores))
            if scores[i] > best.score:
                best = ExhaustiveResult(float(scores[i]), assignments[i], d)
    return best
