"""Exact backtracking evaluation of conjunctive queries on a complete graph."""
import logging
import time
from collections import namedtuple

import numpy as np

from .fuzzy import BudgetExceededError
from .query import as_dnf, bind_query

__all__ = ["OracleResult", "oracle_solve", "split_answers", "oracle_score"]

logger = logging.getLogger(__name__)

OracleResult = namedtuple(
    "OracleResult", ["answers", "exhausted", "wall_time", "timed_out"]
)

MODES = ("all", "first", "boolean")
CHECK_EVERY = 10000


class _Timeout(Exception):
    pass


class _Found(Exception):
    pass


class _Solver(object):
    """Backtracking over one bound disjunct.

    At every node the unassigned variable with the fewest candidates is
    expanded (lowest index on ties). Candidates come from positive atoms
    whose other side is already fixed; a variable constrained by no positive
    atom ranges over every entity. A literal is checked as soon as all of
    its terms are fixed.
    """

    def __init__(self, bound, graph, mode, deadline, node_budget):
        self.q = bound
        self.g = graph
        self.mode = mode
        self.deadline = deadline
        self.node_budget = node_budget
        self.nodes = 0
        self.answers = set()
        self.n_free = bound.n_free
        self.n_vars = bound.n_vars
        self.values = np.full(bound.n_terms, -1, dtype=np.int64)
        self.values[bound.n_vars :] = bound.const_ids
        self.positive = [
            lit for lit in bound.literals if not lit.is_clause and not lit.negated
        ]
        self.literal_terms = [set(lit.terms) for lit in bound.literals]
        self.all_entities = np.arange(graph.n_entities)

    def tick(self):
        self.nodes += 1
        if self.node_budget is not None and self.nodes > self.node_budget:
            raise BudgetExceededError(
                "oracle exceeded its budget of {0} nodes".format(self.node_budget)
            )
        if self.deadline is not None and self.nodes % CHECK_EVERY == 0:
            if time.perf_counter() > self.deadline:
                raise _Timeout()

    def candidates(self, var):
        cand = None
        for lit in self.positive:
            head, tail = lit.args
            if var not in lit.args:
                continue
            r = lit.relation
            if head == tail:
                options = self.all_entities[
                    self.g.contains(r, self.all_entities, self.all_entities)
                ]
            elif head == var:
                if self.values[tail] >= 0:
                    options = self.g.heads(r, self.values[tail])
                else:
                    options = np.flatnonzero(self.g.head_mask(r))
            else:
                if self.values[head] >= 0:
                    options = self.g.tails(r, self.values[head])
                else:
                    options = np.flatnonzero(self.g.tail_mask(r))
            cand = options if cand is None else np.intersect1d(cand, options)
            if len(cand) == 0:
                break
        return self.all_entities if cand is None else cand

    def atom_holds(self, atom):
        a, b = atom.args
        found = bool(self.g.contains(atom.relation, self.values[a], self.values[b]))
        return found != atom.negated

    def literal_holds(self, lit):
        return any(self.atom_holds(atom) for atom in lit.atoms())

    def consistent(self, var):
        for lit, terms in zip(self.q.literals, self.literal_terms):
            if var in terms and all(self.values[t] >= 0 for t in terms):
                if not self.literal_holds(lit):
                    return False
        return True

    def free_tuple(self):
        return tuple(int(v) for v in self.values[: self.n_free])

    def search(self):
        self.tick()
        unassigned = [v for v in range(self.n_vars) if self.values[v] < 0]
        if not unassigned:
            self.answers.add(self.free_tuple())
            if self.mode != "all":
                raise _Found()
            return
        if self.mode == "all" and all(self.values[v] >= 0 for v in range(self.n_free)):
            if self.free_tuple() in self.answers:
                return
        best, best_cand = None, None
        for v in unassigned:
            cand = self.candidates(v)
            if best is None or len(cand) < len(best_cand):
                best, best_cand = v, cand
            if len(cand) == 0:
                return
        for value in best_cand:
            self.values[best] = value
            if self.consistent(best):
                self.search()
            self.values[best] = -1

    def fixed_literals_hold(self):
        for lit, terms in zip(self.q.literals, self.literal_terms):
            if all(self.values[t] >= 0 for t in terms) and not self.literal_holds(lit):
                return False
        return True

    def run(self, prefix=()):
        for i, value in enumerate(prefix):
            self.values[i] = value
        try:
            # Constant-only literals and the seeded prefix are checked up front.
            if self.fixed_literals_hold():
                self.search()
        finally:
            self.values[: len(prefix)] = -1


def _check_safe(bound):
    """Every variable of a negated atom must occur in a positive atom."""
    positive = set()
    for lit in bound.literals:
        if not lit.is_clause and not lit.negated:
            positive.update(lit.terms)
    for lit in bound.literals:
        if lit.negated:
            unsafe = [
                bound.variables[t]
                for t in lit.terms
                if t < bound.n_vars and t not in positive
            ]
            if unsafe:
                raise ValueError(
                    "unsafe negation: variables {0} occur only in negated "
                    "literals".format(unsafe)
                )


def oracle_solve(
    query, graph, mode="all", timeout=None, seed_answers=None, node_budget=None
):
    """Evaluate a query classically on ``graph``.

    Parameters
    ----------
    query : ConjunctiveQuery or DNFQuery

    graph : KnowledgeGraph
        Usually the complete graph.

    mode : {"all", "first", "boolean"}, default="all"
        ``"all"`` enumerates every answer tuple, ``"first"`` stops at the
        first one and ``"boolean"`` only decides satisfiability (the answer
        set is ``{()}`` or empty).

    timeout : float, default=None
        Wall-clock limit in seconds, checked every 10000 search nodes.

    seed_answers : iterable of tuple of str, default=None
        Restrict the leading free variables to these tuples. Used when a
        query is lifted from a lower-arity one whose answers are known.

    node_budget : int, default=None
        Maximum number of search nodes.

    Returns
    -------
    result : OracleResult
        ``answers`` is a set of tuples of entity names. ``exhausted`` is True
        iff ``answers`` is complete: the search space was fully explored
        without a timeout, and ``mode`` is "all" or no answer was found.

    Raises
    ------
    BudgetExceededError
        If ``node_budget`` is exceeded.

    ValueError
        If a variable occurs in negated literals only.
    """
    if mode not in MODES:
        raise ValueError(
            "mode must be one of {0}; got {1} instead.".format(MODES, mode)
        )
    tic = time.perf_counter()
    deadline = tic + timeout if timeout is not None else None
    answers = set()
    timed_out = False

    prefixes = [()]
    if seed_answers is not None:
        prefixes = []
        for seed in seed_answers:
            ids = tuple(graph.entity_id(name) for name in seed)
            if None not in ids:
                prefixes.append(ids)

    for cq in as_dnf(query).disjuncts:
        bound = bind_query(cq, graph, allow_free=True)
        _check_safe(bound)
        for prefix in prefixes:
            if len(prefix) > bound.n_free:
                raise ValueError(
                    "seed answers have {0} values but the query has {1} free "
                    "variables".format(len(prefix), bound.n_free)
                )
            solver = _Solver(bound, graph, mode, deadline, node_budget)
            try:
                solver.run(prefix)
            except _Found:
                pass
            except _Timeout:
                timed_out = True
            answers.update(solver.answers)
            if timed_out or (mode != "all" and answers):
                break
        if timed_out or (mode != "all" and answers):
            break

    if mode == "boolean":
        names = {()} if answers else set()
    else:
        names = {tuple(graph.entities[i] for i in ans) for ans in answers}
    wall_time = time.perf_counter() - tic
    if timed_out:
        logger.warning("Oracle timed out after %.1fs", wall_time)
    # an early stop leaves other answers unexplored
    exhausted = not timed_out and (mode == "all" or not answers)
    return OracleResult(names, exhausted, wall_time, timed_out)


def oracle_score(query, graph):
    """1.0 if ``graph`` satisfies the Boolean query, else 0.0."""
    return 1.0 if oracle_solve(query, graph, mode="boolean").answers else 0.0


def split_answers(query, g, g_tilde, timeout=None):
    """Split the answers of ``query`` on the complete graph into easy and hard.

    Easy answers hold on the observable graph ``g`` as well; hard answers
    only hold on ``g_tilde``.

    Returns
    -------
    easy, hard : set of tuple of str
    timed_out : bool
    """
    full = oracle_solve(query, g_tilde, timeout=timeout)
    observed = oracle_solve(query, g, timeout=timeout)
    easy = full.answers & observed.answers
    return easy, full.answers - easy, full.timed_out or observed.timed_out
