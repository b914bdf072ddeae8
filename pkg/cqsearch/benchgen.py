"""Generate QAC and QAR benchmark instances from an observable/complete graph pair."""
import json
import logging
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np
from joblib import Parallel, delayed
from sklearn.utils import check_random_state
from tqdm.auto import tqdm

from .oracle import oracle_solve, split_answers
from .query import (
    ConjunctiveQuery,
    Literal,
    Term,
    as_dnf,
    format_query,
    ground,
    parse_query,
    promote_variable,
)
from .templates import GenerationError, QAC_SMALL_TYPES, instantiate_template
from .utils import spawn_seeds

__all__ = [
    "GenParams",
    "PRESETS",
    "QACInstance",
    "QARInstance",
    "sample_base_query",
    "make_qac_instance",
    "make_qar_instance",
    "lift_arity",
    "verify_qac_instance",
    "make_template_qac_dataset",
    "generate_dataset",
    "write_instances",
    "read_instances",
]

logger = logging.getLogger(__name__)

# (n_hub, p_const, p_out)
PRESETS = {
    "3hub": (2, 0.6, 0.95),
    "4hub": (3, 0.8, 0.97),
    "5hub": (4, 1.0, 0.99),
}

MIN_ANSWERS = 5
MAX_ANSWERS = 10


@dataclass
class GenParams(object):
    """Hub sampling hyperparameters.

    Attributes
    ----------
    n_hub : int
        Number of hub vertices sampled within distance 2 of the answer.

    n_min : int
        Number of additional vertices kept around the hubs.

    p_const : float
        Scale of the probability of turning a vertex into a constant.

    p_out : float
        Probability of dropping a leaf of the hub neighbourhood.

    seed : int or None
    """

    n_hub: int = 2
    n_min: int = 15
    p_const: float = 0.6
    p_out: float = 0.95
    seed: int = None

    def __post_init__(self):
        if self.n_hub < 1:
            raise ValueError("n_hub must be at least 1; got {0}".format(self.n_hub))
        if self.n_min < 0:
            raise ValueError("n_min must be non-negative; got {0}".format(self.n_min))
        for name in ("p_const", "p_out"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(
                    "{0} must be in [0, 1]; got {1} instead.".format(name, value)
                )

    @classmethod
    def from_preset(cls, name, n_min=15, seed=None):
        """Parameters of a named split: "3hub", "4hub" or "5hub".

        Examples
        --------
        >>> GenParams.from_preset("4-hub").n_hub
        3
        """
        key = name.replace("-", "").lower()
        if key not in PRESETS:
            raise ValueError(
                "preset must be one of {0}; got {1} instead.".format(
                    sorted(PRESETS), name
                )
            )
        n_hub, p_const, p_out = PRESETS[key]
        return cls(n_hub=n_hub, n_min=n_min, p_const=p_const, p_out=p_out, seed=seed)


@dataclass
class QACInstance(object):
    """A query with equally many correct and wrong candidate answers.

    ``hard`` lists the correct answers that do not hold on the observable
    graph.
    """

    query: object
    correct: list
    wrong: list
    hard: list = field(default_factory=list)

    @property
    def easy(self):
        hard = set(self.hard)
        return [c for c in self.correct if c not in hard]

    def to_dict(self):
        return {
            "query": format_query(self.query),
            "correct": list(self.correct),
            "wrong": list(self.wrong),
            "hard": list(self.hard),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            query=parse_query(data["query"]),
            correct=list(data["correct"]),
            wrong=list(data["wrong"]),
            hard=list(data.get("hard", [])),
        )


@dataclass
class QARInstance(object):
    """A query with its answer tuples on the complete graph."""

    query: object
    answers: list
    has_trivial: bool = False

    @property
    def arity(self):
        return as_dnf(self.query).arity

    def to_dict(self):
        return {
            "query": format_query(self.query),
            "answers": [list(a) for a in self.answers],
            "has_trivial": bool(self.has_trivial),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            query=parse_query(data["query"]),
            answers=[tuple(a) for a in data["answers"]],
            has_trivial=bool(data["has_trivial"]),
        )


def _neighbours(adj, nodes):
    nodes = np.atleast_1d(nodes)
    return np.unique(adj[nodes].indices)


def _restriction(g_tilde, nodes):
    """Facts of ``g_tilde`` with both endpoints in ``nodes``."""
    facts = g_tilde.facts
    keep = np.isin(facts[:, 1], nodes) & np.isin(facts[:, 2], nodes)
    return facts[keep]


def _undirected(facts, nodes):
    graph = nx.Graph()
    graph.add_nodes_from(int(n) for n in nodes)
    graph.add_edges_from((int(a), int(b)) for _, a, b in facts if a != b)
    return graph


def _grow(rng, undirected, core, pool, n_min):
    """Connect ``core`` through ``pool`` vertices, then grow to ``n_min`` extras.

    Hubs are first joined to the answer vertex by shortest paths inside the
    neighbourhood; the remaining slots are filled one uniformly random
    adjacent pool vertex at a time.
    """
    v, hubs = core[0], core[1:]
    chosen = []
    component = {v}
    for hub in hubs:
        if hub in component:
            continue
        try:
            path = nx.shortest_path(undirected, v, hub)
        except nx.NetworkXNoPath:
            return None
        for node in path:
            if node not in component:
                component.add(node)
                if node not in core:
                    chosen.append(node)
    if len(chosen) > n_min:
        return None
    while len(chosen) < n_min:
        frontier = sorted(
            {
                u
                for w in component
                for u in undirected.neighbors(w)
                if u not in component and u in pool
            }
        )
        if not frontier:
            return None
        node = frontier[int(rng.randint(len(frontier)))]
        component.add(node)
        chosen.append(node)
    return chosen


def sample_base_query(
    g, g_tilde, params, random_state=None, max_retries=1000, max_hub_retries=100
):
    """Sample a large connected query around a random answer vertex.

    Parameters
    ----------
    g : KnowledgeGraph
        Observable graph.

    g_tilde : KnowledgeGraph
        Complete graph with the same vocabulary.

    params : GenParams

    random_state : int, RandomState instance or None, default=None
        Defaults to ``params.seed``.

    max_retries : int, default=1000
        Restarts allowed for any rejection.

    max_hub_retries : int, default=100
        Restarts allowed for answer vertices with too few vertices in their
        2-hop neighbourhood.

    Returns
    -------
    query : ConjunctiveQuery
        One free variable ``x1``, positive literals only, connected, with at
        least one literal that is not an observed fact.

    Raises
    ------
    GenerationError
        When a retry budget is exhausted.
    """
    rng = check_random_state(params.seed if random_state is None else random_state)
    if g_tilde.n_facts == 0:
        raise GenerationError("cannot sample queries from an empty graph")
    adj = g_tilde.adjacency()
    stats = {"few_hubs": 0, "disconnected": 0, "observed": 0}

    for _ in range(max_retries):
        v = int(rng.randint(g.n_entities))
        n1 = _neighbours(adj, v)
        n2 = np.union1d(n1, _neighbours(adj, n1)) if len(n1) else n1
        n2 = n2[n2 != v]
        if len(n2) < params.n_hub:
            stats["few_hubs"] += 1
            if stats["few_hubs"] > max_hub_retries:
                break
            continue
        hubs = [int(h) for h in rng.choice(n2, params.n_hub, replace=False)]
        core = [v] + hubs

        pool = np.union1d(_neighbours(adj, core), core)
        local = _undirected(_restriction(g_tilde, pool), pool)
        for node in sorted(local.nodes):
            if node in core or local.degree(node) != 1:
                continue
            if rng.rand() < params.p_out:
                local.remove_node(node)

        extras = _grow(rng, local, core, set(local.nodes) - set(core), params.n_min)
        if extras is None:
            stats["disconnected"] += 1
            continue
        nodes = np.array(sorted(set(core) | set(extras)))
        facts = _restriction(g_tilde, nodes)
        if not nx.is_connected(_undirected(facts, nodes)):
            stats["disconnected"] += 1
            continue
        if g.contains(facts[:, 0], facts[:, 1], facts[:, 2]).all():
            stats["observed"] += 1
            continue

        degree = _undirected(facts, nodes).degree
        terms = {v: Term.free("x1")}
        for w in sorted(extras):
            d = max(degree[w], 1)
            if rng.rand() < params.p_const / d ** 2:
                terms[w] = Term.const(g_tilde.entities[w])
        exist_vars = []
        for w in nodes:
            w = int(w)
            if w not in terms:
                name = "y{0}".format(len(exist_vars) + 1)
                exist_vars.append(name)
                terms[w] = Term.exist(name)
        literals = tuple(
            Literal(g_tilde.relations[r], (terms[int(a)], terms[int(b)]))
            for r, a, b in facts
        )
        logger.debug(
            "Sampled base query with %d literals over %d vertices",
            len(literals),
            len(nodes),
        )
        return ConjunctiveQuery(("x1",), tuple(exist_vars), literals)

    raise GenerationError(
        "base query sampling gave up after {0} restarts: {1}".format(max_retries, stats)
    )


def _weighted_sample(rng, items, weights, size):
    weights = np.asarray(weights, dtype=float)
    idx = rng.choice(len(items), size=size, replace=False, p=weights / weights.sum())
    return [items[i] for i in idx]


def make_qac_instance(query, g, g_tilde, random_state=None, timeout=None):
    """Build a QAC instance from a one-variable query.

    Both candidate sets have ``clip(n_answers, 5, 10)`` elements, reduced when
    fewer answers or non-answers exist. Correct candidates are drawn without
    replacement, hard answers weighted twice as much as easy ones; wrong
    candidates are drawn uniformly from the non-answers on ``g_tilde``.

    Parameters
    ----------
    query : ConjunctiveQuery or DNFQuery

    g, g_tilde : KnowledgeGraph

    random_state : int, RandomState instance or None, default=None

    timeout : float, default=None
        Oracle time limit.

    Returns
    -------
    instance : QACInstance

    Raises
    ------
    GenerationError
        If the query has no hard answer or the oracle times out.
    """
    if as_dnf(query).arity != 1:
        raise ValueError("QAC instances need exactly one free variable")
    rng = check_random_state(random_state)
    easy, hard, timed_out = split_answers(query, g, g_tilde, timeout=timeout)
    if timed_out:
        raise GenerationError("oracle timed out while classifying answers")
    if not hard:
        raise GenerationError("query has no hard answers")

    easy = sorted(a[0] for a in easy)
    hard = sorted(a[0] for a in hard)
    answers = easy + hard
    answer_set = set(answers)
    negatives = [e for e in g_tilde.entities if e not in answer_set]
    size = min(
        int(np.clip(len(answers), MIN_ANSWERS, MAX_ANSWERS)),
        len(answers),
        len(negatives),
    )
    if size == 0:
        raise GenerationError("no wrong candidates available")
    if size < MIN_ANSWERS:
        logger.warning("Candidate sets shrunk to %d elements", size)

    weights = [1.0] * len(easy) + [2.0] * len(hard)
    correct = _weighted_sample(rng, answers, weights, size)
    wrong = _weighted_sample(rng, negatives, [1.0] * len(negatives), size)
    hard_set = set(hard)
    return QACInstance(
        query=query,
        correct=correct,
        wrong=wrong,
        hard=[c for c in correct if c in hard_set],
    )


def make_qar_instance(query, g, g_tilde, timeout=None, seed_answers=None):
    """Build a QAR instance by solving ``query`` on both graphs.

    Raises
    ------
    GenerationError
        If the query has no answer on ``g_tilde`` or the oracle times out.
    """
    full = oracle_solve(query, g_tilde, timeout=timeout, seed_answers=seed_answers)
    if full.timed_out:
        raise GenerationError("oracle timed out while enumerating answers")
    if not full.answers:
        raise GenerationError("query has no answers on the complete graph")
    trivial = oracle_solve(query, g, mode="first", timeout=timeout)
    return QARInstance(
        query=query,
        answers=sorted(full.answers),
        has_trivial=bool(trivial.answers),
    )


def lift_arity(instance, g, g_tilde, random_state=None, timeout=None):
    """Promote one existential variable of a QAR instance to a free variable.

    Answers of the lifted query are enumerated starting from the answers of
    the original one.

    Parameters
    ----------
    instance : QARInstance

    g, g_tilde : KnowledgeGraph

    random_state : int, RandomState instance or None, default=None

    timeout : float, default=None

    Returns
    -------
    lifted : QARInstance
        Arity increased by one.
    """
    rng = check_random_state(random_state)
    dnf = as_dnf(instance.query)
    if len(dnf.disjuncts) != 1:
        raise ValueError("only single-disjunct queries can be lifted")
    cq = dnf.disjuncts[0]
    if not cq.exist_vars:
        raise ValueError("query has no existential variable left to promote")
    name = cq.exist_vars[int(rng.randint(len(cq.exist_vars)))]
    lifted = promote_variable(cq, name)
    return make_qar_instance(
        lifted, g, g_tilde, timeout=timeout, seed_answers=instance.answers
    )


def verify_qac_instance(instance, g, g_tilde):
    """Check the labels of a QAC instance against the oracle.

    Returns
    -------
    ok : bool
        True iff every correct candidate holds on ``g_tilde``, every wrong
        candidate fails on it, and ``hard`` lists exactly the correct
        candidates that fail on ``g``.
    """

    def holds(entity, graph):
        grounded = ground(as_dnf(instance.query), (entity,))
        return bool(oracle_solve(grounded, graph, mode="boolean").answers)

    if len(instance.correct) != len(instance.wrong):
        return False
    hard = set(instance.hard)
    for c in instance.correct:
        if not holds(c, g_tilde) or (c in hard) == holds(c, g):
            return False
    return not any(holds(w, g_tilde) for w in instance.wrong)


def make_template_qac_dataset(
    g, g_tilde, type_tag, count, random_state=None, timeout=None, max_tries=None
):
    """QAC instances built from a simple query template.

    Templates are instantiated on ``g_tilde``; queries without a hard answer
    are skipped.

    Parameters
    ----------
    g, g_tilde : KnowledgeGraph

    type_tag : str
        One of the simple template tags, usually from ``QAC_SMALL_TYPES``.

    count : int

    random_state : int, RandomState instance or None, default=None

    timeout : float, default=None

    max_tries : int, default=None
        Defaults to ``50 * count``.

    Returns
    -------
    instances : list of QACInstance
    """
    if type_tag not in QAC_SMALL_TYPES:
        logger.info("Building QAC instances for non-standard type %s", type_tag)
    rng = check_random_state(random_state)
    max_tries = 50 * count if max_tries is None else max_tries
    instances = []
    for _ in range(max_tries):
        if len(instances) >= count:
            break
        try:
            query, _ = instantiate_template(g_tilde, type_tag, rng)
            instances.append(make_qac_instance(query, g, g_tilde, rng, timeout))
        except GenerationError:
            continue
    if len(instances) < count:
        logger.warning(
            "Only %d of %d %s instances generated", len(instances), count, type_tag
        )
    return instances


def _generate_one(g, g_tilde, params, kind, arity, seed, timeout, max_attempts):
    rng = check_random_state(seed)
    for _ in range(max_attempts):
        try:
            query = sample_base_query(g, g_tilde, params, rng)
            if kind == "qac":
                return make_qac_instance(query, g, g_tilde, rng, timeout)
            instance = make_qar_instance(query, g, g_tilde, timeout)
            for _ in range(arity - 1):
                instance = lift_arity(instance, g, g_tilde, rng, timeout)
            return instance
        except (GenerationError, ValueError) as err:
            logger.debug("Rejected candidate instance: %s", err)
    return None


def generate_dataset(
    g,
    g_tilde,
    params,
    n_instances,
    kind="qac",
    arity=1,
    timeout=None,
    n_jobs=1,
    serialize=False,
    max_attempts=20,
    progress=False,
):
    """Generate a benchmark split from hub-sampled queries.

    Every instance gets its own seed spawned from ``params.seed``, so the
    output does not depend on ``n_jobs``.

    Parameters
    ----------
    g, g_tilde : KnowledgeGraph

    params : GenParams

    n_instances : int

    kind : {"qac", "qar"}, default="qac"

    arity : int, default=1
        Number of free variables of QAR instances.

    timeout : float, default=None
        Oracle time limit per query.

    n_jobs : int, default=1

    serialize : bool, default=False
        If True, do not use joblib.Parallel.

    max_attempts : int, default=20
        Base queries tried per seed.

    progress : bool, default=False
        Show a progress bar.

    Returns
    -------
    instances : list of QACInstance or QARInstance
        In seed order; seeds that failed every attempt are skipped.
    """
    if kind not in ("qac", "qar"):
        raise ValueError("kind must be 'qac' or 'qar'; got {0} instead.".format(kind))
    if kind == "qac" and arity != 1:
        raise ValueError("QAC instances have arity 1")
    if not 1 <= arity <= 3:
        raise ValueError("arity must be 1, 2 or 3; got {0}".format(arity))
    seeds = spawn_seeds(params.seed, n_instances)
    seeds = tqdm(seeds, desc="generate") if progress else seeds
    if serialize:
        results = [
            _generate_one(g, g_tilde, params, kind, arity, s, timeout, max_attempts)
            for s in seeds
        ]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_generate_one)(
                g, g_tilde, params, kind, arity, s, timeout, max_attempts
            )
            for s in seeds
        )
    instances = [r for r in results if r is not None]
    logger.info(
        "Generated %d of %d %s instances (%s)",
        len(instances),
        n_instances,
        kind,
        asdict(params),
    )
    return instances


def write_instances(instances, path):
    """Write instances as line-delimited JSON."""
    with open(path, "w") as fp:
        for instance in instances:
            fp.write(json.dumps(instance.to_dict(), ensure_ascii=False) + "\n")


def read_instances(path, kind=None):
    """Read instances written by :func:`write_instances`.

    Parameters
    ----------
    path : str

    kind : {"qac", "qar"} or None, default=None
        Inferred from the first record when None.

    Returns
    -------
    instances : list
    """
    instances = []
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(
                    "{0}:{1}: invalid JSON record ({2})".format(path, lineno, err)
                )
            record_kind = kind or ("qac" if "correct" in data else "qar")
            cls = QACInstance if record_kind == "qac" else QARInstance
            instances.append(cls.from_dict(data))
    return instances
