"""Link predictors: a uniform scoring interface and its implementations."""
import inspect
import logging
import os
from string import Template

import numpy as np
from sklearn.utils import check_random_state

from .kg import TripleFormatError, read_tsv_records
from .utils import OBSERVED_CLIP, SCORE_THRESHOLD

__all__ = [
    "LinkPredictor",
    "PerfectPredictor",
    "TabularPredictor",
    "ObservedAugmentedPredictor",
    "BinarizedPredictor",
    "augment_with_observed",
    "noisy_perfect",
    "load_tabular",
    "write_tabular",
    "make_predictor",
]

logger = logging.getLogger(__name__)


class LinkPredictor(object):
    """Base class for link predictors ``pi : R x V x V -> [0, 1]``.

    Subclasses implement :meth:`score`. The row/column and existence queries
    have generic implementations that subclasses override when they can
    answer them without scanning all entity pairs.

    Parameters
    ----------
    n_entities : int
        Size of the entity vocabulary shared with the graphs.
    """

    def __init__(self, n_entities):
        self.n_entities = int(n_entities)
        self._exists_cache = {}

    def score(self, r, heads, tails):
        """Vectorized scores for ``r(heads, tails)``, broadcasting the inputs."""
        raise NotImplementedError

    def score_tails(self, r, a):
        """Scores ``pi(r, a, b)`` for every entity ``b``."""
        return self.score(r, np.full(self.n_entities, a), np.arange(self.n_entities))

    def score_heads(self, r, b):
        """Scores ``pi(r, a, b)`` for every entity ``a``."""
        return self.score(r, np.arange(self.n_entities), np.full(self.n_entities, b))

    def _scan_exists(self, r, side, negated):
        mask = np.zeros(self.n_entities, dtype=bool)
        row = self.score_tails if side == "tail" else self.score_heads
        for e in range(self.n_entities):
            s = row(r, e)
            mask[e] = (s <= 1 - SCORE_THRESHOLD).any() if negated else (
                s >= SCORE_THRESHOLD
            ).any()
        return mask

    def _exists_mask(self, r, side, negated):
        raise NotImplementedError

    def _cached_exists(self, r, side, negated):
        key = (int(r), side, bool(negated))
        if key not in self._exists_cache:
            try:
                mask = self._exists_mask(r, side, negated)
            except NotImplementedError:
                mask = self._scan_exists(r, side, negated)
            mask = np.asarray(mask, dtype=bool)
            mask.setflags(write=False)
            self._exists_cache[key] = mask
        return self._exists_cache[key]

    def exists_tail(self, r, a=None, negated=False):
        """Whether some ``b`` makes ``r(a, b)`` (or its negation) score >= 0.5.

        Parameters
        ----------
        r : int
            Relation id

        a : int, default=None
            Head entity id. If None, return a mask over all heads.

        negated : bool, default=False
            If True, test ``1 - pi(r, a, b) >= 0.5`` instead.

        Returns
        -------
        bool or numpy.ndarray of bool
        """
        mask = self._cached_exists(r, "tail", negated)
        return mask if a is None else bool(mask[a])

    def exists_head(self, r, b=None, negated=False):
        """Whether some ``a`` makes ``r(a, b)`` (or its negation) score >= 0.5.

        See :meth:`exists_tail` for the parameters.
        """
        mask = self._cached_exists(r, "head", negated)
        return mask if b is None else bool(mask[b])


class PerfectPredictor(LinkPredictor):
    """Indicator of membership in a completion graph.

    Parameters
    ----------
    g_tilde : KnowledgeGraph
        The completion. Scores are 1 for its facts and 0 otherwise.
    """

    def __init__(self, g_tilde):
        super().__init__(g_tilde.n_entities)
        self.graph = g_tilde

    def score(self, r, heads, tails):
        return np.asarray(self.graph.contains(r, heads, tails), dtype=float)

    def score_tails(self, r, a):
        out = np.zeros(self.n_entities)
        out[self.graph.tails(r, a)] = 1.0
        return out

    def score_heads(self, r, b):
        out = np.zeros(self.n_entities)
        out[self.graph.heads(r, b)] = 1.0
        return out

    def _exists_mask(self, r, side, negated):
        if not negated:
            if side == "tail":
                return self.graph.head_mask(r)
            return self.graph.tail_mask(r)
        degree = self.graph.out_degree(r) if side == "tail" else self.graph.in_degree(r)
        return degree < self.n_entities


class TabularPredictor(LinkPredictor):
    """Predictor backed by a sparse table of ``(r, a, b) -> probability``.

    Parameters
    ----------
    relations, heads, tails : array-like of int
        Integer ids of the stored triples.

    probs : array-like of float
        Stored probabilities, each in [0, 1].

    n_entities : int

    default : float, default=0.0
        Score of triples absent from the table.
    """

    def __init__(self, relations, heads, tails, probs, n_entities, default=0.0):
        super().__init__(n_entities)
        probs = np.asarray(probs, dtype=float)
        if probs.size and (probs.min() < 0 or probs.max() > 1):
            raise ValueError("stored probabilities must lie in [0, 1]")
        if not 0 <= default <= 1:
            raise ValueError("default must lie in [0, 1]; got {0}".format(default))
        self.default = float(default)

        rel = np.asarray(relations, dtype=np.int64)
        head = np.asarray(heads, dtype=np.int64)
        tail = np.asarray(tails, dtype=np.int64)
        n = max(self.n_entities, 1)
        keys = (rel * n + head) * n + tail
        keys, first = np.unique(keys, return_index=True)
        self._keys = keys
        self._probs = probs[first]
        self._rel, rem = np.divmod(keys, n * n)
        self._head, self._tail = np.divmod(rem, n)

        # Second ordering by (relation, tail, head) for column lookups.
        ckeys = (self._rel * n + self._tail) * n + self._head
        self._col_order = np.argsort(ckeys, kind="stable")
        self._col_keys = ckeys[self._col_order]

    @property
    def n_stored(self):
        return len(self._keys)

    def triples(self):
        """Return ``(relations, heads, tails, probs)`` arrays."""
        return self._rel, self._head, self._tail, self._probs

    def score(self, r, heads, tails):
        r, heads, tails = np.broadcast_arrays(
            np.asarray(r, dtype=np.int64),
            np.asarray(heads, dtype=np.int64),
            np.asarray(tails, dtype=np.int64),
        )
        n = max(self.n_entities, 1)
        out = np.full(r.shape, self.default, dtype=float)
        if self.n_stored:
            keys = (r * n + heads) * n + tails
            pos = np.minimum(np.searchsorted(self._keys, keys), self.n_stored - 1)
            hit = self._keys[pos] == keys
            out[hit] = self._probs[pos[hit]]
        return out

    def _block(self, keys, lo, hi):
        return np.searchsorted(keys, lo), np.searchsorted(keys, hi)

    def score_tails(self, r, a):
        n = max(self.n_entities, 1)
        out = np.full(self.n_entities, self.default)
        base = (int(r) * n + int(a)) * n
        i, j = self._block(self._keys, base, base + n)
        out[self._tail[i:j]] = self._probs[i:j]
        return out

    def score_heads(self, r, b):
        n = max(self.n_entities, 1)
        out = np.full(self.n_entities, self.default)
        base = (int(r) * n + int(b)) * n
        i, j = self._block(self._col_keys, base, base + n)
        sel = self._col_order[i:j]
        out[self._head[sel]] = self._probs[sel]
        return out

    def _exists_mask(self, r, side, negated):
        sel = self._rel == int(r)
        ends = self._head[sel] if side == "tail" else self._tail[sel]
        probs = self._probs[sel]
        mask = np.zeros(self.n_entities, dtype=bool)
        if negated:
            mask[ends[probs <= 1 - SCORE_THRESHOLD]] = True
            default_ok = self.default <= 1 - SCORE_THRESHOLD
        else:
            mask[ends[probs >= SCORE_THRESHOLD]] = True
            default_ok = self.default >= SCORE_THRESHOLD
        if default_ok:
            # Some partner is absent from the table unless the row is full.
            counts = np.bincount(ends, minlength=self.n_entities)
            mask |= counts < self.n_entities
        return mask


class ObservedAugmentedPredictor(LinkPredictor):
    """Fold the observable graph into a base predictor.

    The score is 1 on observed facts and ``min(base, clip)`` elsewhere.

    Parameters
    ----------
    base : LinkPredictor

    g_obs : KnowledgeGraph
        Observable graph with ids shared with ``base``.

    clip : float, default=0.9999
    """

    def __init__(self, base, g_obs, clip=OBSERVED_CLIP):
        super().__init__(base.n_entities)
        self.base = base
        self.graph = g_obs
        self.clip = float(clip)

    def score(self, r, heads, tails):
        base = np.minimum(self.base.score(r, heads, tails), self.clip)
        return np.where(self.graph.contains(r, heads, tails), 1.0, base)

    def score_tails(self, r, a):
        out = np.minimum(self.base.score_tails(r, a), self.clip)
        out[self.graph.tails(r, a)] = 1.0
        return out

    def score_heads(self, r, b):
        out = np.minimum(self.base.score_heads(r, b), self.clip)
        out[self.graph.heads(r, b)] = 1.0
        return out

    def _exists_mask(self, r, side, negated):
        if negated:
            raise NotImplementedError
        # Clipping at 0.9999 never moves a score across 0.5.
        if side == "tail":
            return self.base.exists_tail(r) | self.graph.head_mask(r)
        return self.base.exists_head(r) | self.graph.tail_mask(r)


class BinarizedPredictor(LinkPredictor):
    """Threshold a base predictor to hard 0/1 scores.

    Parameters
    ----------
    base : LinkPredictor

    threshold : float, default=0.5
        Base scores ``>= threshold`` become 1, all others 0.
    """

    def __init__(self, base, threshold=SCORE_THRESHOLD):
        super().__init__(base.n_entities)
        if not 0 <= threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]; got {0}".format(threshold))
        self.base = base
        self.threshold = float(threshold)

    def score(self, r, heads, tails):
        return (self.base.score(r, heads, tails) >= self.threshold).astype(float)

    def score_tails(self, r, a):
        return (self.base.score_tails(r, a) >= self.threshold).astype(float)

    def score_heads(self, r, b):
        return (self.base.score_heads(r, b) >= self.threshold).astype(float)


def augment_with_observed(rho, g_obs, clip=OBSERVED_CLIP):
    """Return ``pi(r,a,b) = 1`` if ``r(a,b)`` is observed, else ``min(rho, clip)``.

    Parameters
    ----------
    rho : LinkPredictor

    g_obs : KnowledgeGraph

    clip : float, default=0.9999

    Returns
    -------
    predictor : ObservedAugmentedPredictor
    """
    return ObservedAugmentedPredictor(rho, g_obs, clip=clip)


def noisy_perfect(g_tilde, flip_rate, random_state=None, n_negatives=None):
    """Build a controlled imperfect predictor from a completion graph.

    Every fact of ``g_tilde`` is stored with a score in (0.5, 1] and
    ``n_negatives`` corrupted non-facts with a score in [0, 0.5). Then exactly
    ``round(flip_rate * n_sampled)`` of the stored triples are mirrored
    across 0.5 (``s -> 1 - s``). Unstored triples score 0.

    Parameters
    ----------
    g_tilde : KnowledgeGraph

    flip_rate : float
        Fraction of stored triples whose verdict is flipped, ``0 <= flip_rate < 0.5``.

    random_state : int, RandomState instance or None, default=None

    n_negatives : int, default=None
        Number of sampled negatives. Defaults to the number of facts.

    Returns
    -------
    predictor : TabularPredictor
        With an extra attribute ``flipped``, a boolean mask over the stored
        triples in storage order.
    """
    if not 0 <= flip_rate < 0.5:
        raise ValueError("flip_rate must lie in [0, 0.5); got {0}".format(flip_rate))
    rng = check_random_state(random_state)
    facts = g_tilde.facts
    n_facts = len(facts)
    if n_negatives is None:
        n_negatives = n_facts
    n = g_tilde.n_entities

    negatives = []
    seen = set()
    attempts = 0
    while len(negatives) < n_negatives and attempts < 100 * max(n_negatives, 1):
        attempts += 1
        r = facts[rng.randint(n_facts), 0] if n_facts else 0
        a, b = rng.randint(n), rng.randint(n)
        if (r, a, b) in seen or g_tilde.contains(r, a, b):
            continue
        seen.add((r, a, b))
        negatives.append((r, a, b))
    if len(negatives) < n_negatives:
        logger.warning(
            "Only %d of %d negatives could be sampled", len(negatives), n_negatives
        )
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 3)

    triples = np.concatenate([facts, negatives])
    scores = np.concatenate(
        [
            1.0 - 0.5 * rng.random_sample(n_facts),
            0.5 * rng.random_sample(len(negatives)),
        ]
    )
    n_flip = int(round(flip_rate * len(triples)))
    flip_idx = rng.choice(len(triples), size=n_flip, replace=False)
    scores[flip_idx] = 1.0 - scores[flip_idx]

    predictor = TabularPredictor(
        triples[:, 0], triples[:, 1], triples[:, 2], scores, n, default=0.0
    )
    # Map flips into storage order.
    flipped = np.zeros(len(triples), dtype=bool)
    flipped[flip_idx] = True
    nn = max(n, 1)
    keys = (triples[:, 0] * nn + triples[:, 1]) * nn + triples[:, 2]
    order = np.argsort(keys)
    predictor.flipped = flipped[order]
    predictor.n_flipped = n_flip
    return predictor


def load_tabular(source, graph, default=0.0):
    """Load a tabular predictor from ``relation<TAB>head<TAB>tail<TAB>prob`` lines.

    Parameters
    ----------
    source : path-like, bytes or file object

    graph : KnowledgeGraph
        Provides the vocabulary for relation and entity names.

    default : float, default=0.0
        Score of absent triples.

    Returns
    -------
    predictor : TabularPredictor

    Raises
    ------
    TripleFormatError
        On malformed lines, unknown names or probabilities outside [0, 1].
    """
    rels, heads, tails, probs = [], [], [], []
    for lineno, (r, a, b, p) in read_tsv_records(source, 4):
        ids = graph.relation_id(r), graph.entity_id(a), graph.entity_id(b)
        if any(i is None for i in ids):
            raise TripleFormatError(
                "unknown relation or entity in {0!r}".format((r, a, b)), lineno=lineno
            )
        try:
            prob = float(p)
        except ValueError:
            raise TripleFormatError(
                "probability {0!r} is not a number".format(p), lineno=lineno
            )
        if not 0 <= prob <= 1:
            raise TripleFormatError(
                "probability {0} outside [0, 1]".format(prob), lineno=lineno
            )
        rels.append(ids[0])
        heads.append(ids[1])
        tails.append(ids[2])
        probs.append(prob)
    return TabularPredictor(rels, heads, tails, probs, graph.n_entities, default)


def write_tabular(predictor, target, graph):
    """Write a tabular predictor as ``relation<TAB>head<TAB>tail<TAB>prob`` lines."""
    rel, head, tail, probs = predictor.triples()
    lines = "".join(
        "{0}\t{1}\t{2}\t{3!r}\n".format(
            graph.relations[r], graph.entities[a], graph.entities[b], float(p)
        )
        for r, a, b, p in zip(rel, head, tail, probs)
    )
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8") as fp:
            fp.write(lines)
    else:
        target.write(lines)


def make_predictor(
    predictor="perfect",
    g_obs=None,
    g_tilde=None,
    augment=False,
    predictor_kwargs=None,
    random_state=None,
):
    """Return a link predictor from a short description.

    Parameters
    ----------
    predictor : str or LinkPredictor subclass, default="perfect"
        One of

        - "perfect": indicator of ``g_tilde``;
        - "observed": indicator of ``g_obs``;
        - "tabular:<path>": table loaded with :func:`load_tabular`;
        - "noisy:<rate>": :func:`noisy_perfect` over ``g_tilde``;
        - "binarized:<path>:<threshold>": a thresholded table.

        A class inheriting from :class:`LinkPredictor` is instantiated with
        ``predictor_kwargs``.

    g_obs : KnowledgeGraph, default=None
        Observable graph. Required for "observed", the tabular forms and
        ``augment=True``.

    g_tilde : KnowledgeGraph, default=None
        Completion graph. Required for "perfect" and "noisy".

    augment : bool, default=False
        If True, wrap the result with :func:`augment_with_observed`.

    predictor_kwargs : dict, default=None
        Keyword arguments for a predictor class.

    random_state : int, RandomState instance or None, default=None
        Used by "noisy".

    Returns
    -------
    predictor : LinkPredictor
    """
    allowed = ["perfect", "observed", "tabular:<path>", "noisy:<rate>"]
    allowed.append("binarized:<path>:<threshold>")
    err_msg = Template(
        "predictor must be one of ${allowed} or a class that inherits from "
        "cqsearch.LinkPredictor; got ${input} instead."
    )

    def require(graph, name, kind):
        if graph is None:
            raise ValueError(
                "predictor {0!r} requires the {1} graph".format(kind, name)
            )
        return graph

    if isinstance(predictor, str):
        kind, _, arg = predictor.partition(":")
        kind = kind.lower()
        if kind == "perfect" and not arg:
            pred = PerfectPredictor(require(g_tilde, "complete", kind))
        elif kind == "observed" and not arg:
            pred = PerfectPredictor(require(g_obs, "observed", kind))
        elif kind == "tabular" and arg:
            pred = load_tabular(arg, require(g_obs, "observed", kind))
        elif kind == "noisy" and arg:
            try:
                rate = float(arg)
            except ValueError:
                raise ValueError(err_msg.substitute(allowed=allowed, input=predictor))
            pred = noisy_perfect(
                require(g_tilde, "complete", kind), rate, random_state=random_state
            )
        elif kind == "binarized" and arg:
            path, _, threshold = arg.rpartition(":")
            try:
                threshold = float(threshold)
            except ValueError:
                raise ValueError(err_msg.substitute(allowed=allowed, input=predictor))
            base = load_tabular(path, require(g_obs, "observed", kind))
            pred = BinarizedPredictor(base, threshold)
        else:
            raise ValueError(err_msg.substitute(allowed=allowed, input=predictor))
    elif inspect.isclass(predictor) and issubclass(predictor, LinkPredictor):
        pred = predictor(**(predictor_kwargs or {}))
    else:
        raise ValueError(err_msg.substitute(allowed=allowed, input=predictor))

    if augment:
        pred = augment_with_observed(pred, require(g_obs, "observed", "augment"))
    return pred
