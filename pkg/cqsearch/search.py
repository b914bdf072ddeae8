"""Policy-guided search for high-scoring assignments and the QAC/QAR solvers."""
import logging
import time
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.utils import check_random_state

from .compgraph import build, le_labels
from .fuzzy import assignment_score
from .policy import (
    SearchState,
    forward_step,
    init_state,
    prepare_graph,
    sample_assignment,
)
from .query import as_dnf, existentially_close, ground
from .utils import LARGE_STEPS, SCORE_THRESHOLD, torch_generator

__all__ = [
    "SearchConfig",
    "SearchResult",
    "run_search",
    "search_graph",
    "solve_qac",
    "solve_qar",
]

logger = logging.getLogger(__name__)

Rollout = namedtuple(
    "Rollout", ["scores", "assignments", "le_labels", "step_times", "timed_out"]
)


@dataclass
class SearchConfig(object):
    """Search settings shared by the solvers and the evaluation harness.

    Attributes
    ----------
    steps : int
        Number of sampled assignments after the initial one.

    pe_mode : {"exact", "cwa", "all-one"}

    timeout : float or None
        Wall-clock limit in seconds per search.
    """

    steps: int = LARGE_STEPS
    pe_mode: str = "exact"
    timeout: float = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative; got {0}".format(self.steps))


@dataclass
class SearchResult(object):
    """Outcome of one search.

    ``score`` is the maximum of ``per_step_scores`` (step 0 included) and
    ``best_assignment`` is the first visited assignment achieving it.
    """

    score: float
    best_assignment: np.ndarray
    variables: tuple
    per_step_scores: list = field(default_factory=list)
    steps_run: int = 0
    wall_time: float = 0.0
    step_time: float = 0.0
    timed_out: bool = False

    @property
    def best_so_far(self):
        return np.maximum.accumulate(self.per_step_scores)

    @property
    def positive(self):
        return self.score > SCORE_THRESHOLD


def rollout(policy, cg, predictor, steps, random_state=None, timeout=None):
    """Run the policy on a computational graph without recording gradients.

    Each sampled assignment is scored as soon as it is drawn and its
    light-edge labels feed the next step.

    Returns
    -------
    rollout : Rollout
        ``assignments`` and ``scores`` have ``steps_run + 1`` entries;
        ``le_labels[t]`` are the labels used by step ``t + 1``.
    """
    rng = check_random_state(random_state)
    generator = torch_generator(rng)
    graph = prepare_graph(cg)
    state = init_state(graph, policy, rng)
    query = cg.query

    assignments = [state.assignment]
    scores = [assignment_score(predictor, query, state.assignment)]
    labels = []
    step_times = []
    timed_out = False
    if cg.n_vars == 0:
        return Rollout(scores, assignments, labels, step_times, timed_out)

    le = le_labels(cg, predictor, state.assignment)
    start = time.perf_counter()
    with torch.no_grad():
        for _ in range(steps):
            if timeout is not None and time.perf_counter() - start > timeout:
                timed_out = True
                break
            tic = time.perf_counter()
            labels.append(le)
            hidden, log_probs = forward_step(
                policy, graph, state.hidden, state.assignment, le
            )
            assignment, _ = sample_assignment(log_probs, generator)
            scores.append(assignment_score(predictor, query, assignment))
            le = le_labels(
                cg,
                predictor,
                assignment,
                previous=le,
                previous_assignment=state.assignment,
            )
            state = SearchState(hidden, assignment, state.step + 1)
            assignments.append(assignment)
            step_times.append(time.perf_counter() - tic)
    if timed_out:
        logger.warning(
            "Search stopped after %d of %d steps (timeout %.1fs)",
            len(step_times),
            steps,
            timeout,
        )
    return Rollout(scores, assignments, labels, step_times, timed_out)


def run_search(
    policy,
    query,
    graph,
    predictor,
    steps=LARGE_STEPS,
    random_state=None,
    pe_mode="exact",
    timeout=None,
):
    """Search for the best assignment of a Boolean query.

    Parameters
    ----------
    policy : PolicyNetwork

    query : ConjunctiveQuery or BoundQuery
        Query without free variables.

    graph : KnowledgeGraph
        Observable graph.

    predictor : LinkPredictor

    steps : int, default=200
        Number of sampled assignments after the initial one.

    random_state : int, RandomState instance or None, default=None

    pe_mode : {"exact", "cwa", "all-one"}, default="exact"

    timeout : float, default=None
        Wall-clock limit in seconds. The search stops early and the result
        is flagged with ``timed_out``.

    Returns
    -------
    result : SearchResult
    """
    tic = time.perf_counter()
    cg = build(query, graph, predictor, pe_mode=pe_mode)
    return search_graph(policy, cg, predictor, steps, random_state, timeout, tic)


def search_graph(
    policy, cg, predictor, steps=LARGE_STEPS, random_state=None, timeout=None, tic=None
):
    """Run :func:`run_search` on an already built computational graph.

    ``tic`` is the ``time.perf_counter`` reading that ``wall_time`` is measured
    from; it defaults to the call time.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative; got {0}".format(steps))
    tic = time.perf_counter() if tic is None else tic
    out = rollout(policy, cg, predictor, steps, random_state, timeout)
    best = int(np.argmax(out.scores))
    return SearchResult(
        score=float(out.scores[best]),
        best_assignment=out.assignments[best],
        variables=cg.query.variables,
        per_step_scores=[float(s) for s in out.scores],
        steps_run=len(out.scores) - 1,
        wall_time=time.perf_counter() - tic,
        step_time=float(np.mean(out.step_times)) if out.step_times else 0.0,
        timed_out=out.timed_out,
    )


def solve_qac(
    policy,
    query,
    answer,
    graph,
    predictor,
    steps=LARGE_STEPS,
    random_state=None,
    pe_mode="exact",
    timeout=None,
    return_score=False,
):
    """Decide whether ``answer`` is an answer to ``query``.

    Every disjunct is grounded with ``answer`` and searched in turn; the
    verdict is positive as soon as one search scores strictly above 0.5.

    Parameters
    ----------
    policy : PolicyNetwork

    query : ConjunctiveQuery or DNFQuery

    answer : sequence of str
        Entity names, one per free variable.

    graph : KnowledgeGraph

    predictor : LinkPredictor

    steps : int, default=200

    random_state : int, RandomState instance or None, default=None

    pe_mode : {"exact", "cwa", "all-one"}, default="exact"

    timeout : float, default=None
        Wall-clock limit per disjunct.

    return_score : bool, default=False
        If True, also return the best score seen.

    Returns
    -------
    verdict : bool

    score : float
        Only if ``return_score`` is True.
    """
    rng = check_random_state(random_state)
    query = as_dnf(query)
    grounded = ground(query, answer)
    best = 0.0
    verdict = False
    for cq in grounded.disjuncts:
        result = run_search(
            policy,
            cq,
            graph,
            predictor,
            steps=steps,
            random_state=rng,
            pe_mode=pe_mode,
            timeout=timeout,
        )
        best = max(best, result.score)
        if result.positive:
            verdict = True
            break
    logger.debug("QAC %s -> %s (%.4f)", tuple(answer), verdict, best)
    if return_score:
        return verdict, best
    return verdict


def solve_qar(
    policy,
    query,
    graph,
    predictor,
    steps=LARGE_STEPS,
    random_state=None,
    pe_mode="exact",
    timeout=None,
    return_score=False,
):
    """Retrieve one answer to ``query`` or None.

    Each disjunct is existentially closed and searched. The answer is read
    from the best assignment of the highest-scoring disjunct (ties go to the
    earlier disjunct), at the positions of the former free variables.

    Parameters
    ----------
    policy : PolicyNetwork

    query : ConjunctiveQuery or DNFQuery

    graph : KnowledgeGraph

    predictor : LinkPredictor

    steps : int, default=200

    random_state : int, RandomState instance or None, default=None

    pe_mode : {"exact", "cwa", "all-one"}, default="exact"

    timeout : float, default=None

    return_score : bool, default=False

    Returns
    -------
    answer : tuple of str or None
        None iff every disjunct scores at most 0.5.

    score : float
        Only if ``return_score`` is True.
    """
    rng = check_random_state(random_state)
    query = as_dnf(query)
    best, best_result, best_cq = -1.0, None, None
    for cq in query.disjuncts:
        result = run_search(
            policy,
            existentially_close(cq),
            graph,
            predictor,
            steps=steps,
            random_state=rng,
            pe_mode=pe_mode,
            timeout=timeout,
        )
        if result.score > best:
            best, best_result, best_cq = result.score, result, cq

    answer = None
    if best_result is not None and best_result.positive:
        positions = [best_result.variables.index(v) for v in best_cq.free_vars]
        answer = tuple(
            graph.entities[int(best_result.best_assignment[p])] for p in positions
        )
    logger.debug("QAR -> %s (%.4f)", answer, best)
    if return_score:
        return answer, max(best, 0.0)
    return answer
