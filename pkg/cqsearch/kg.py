"""Load, index and query immutable knowledge graphs."""
import io
import logging
import os

import numpy as np
import pandas as pd
from scipy import sparse

__all__ = [
    "KnowledgeGraph",
    "TripleFormatError",
    "load_triples",
    "load_graph_pair",
    "write_triples",
    "contains_fact",
    "subset_check",
]

logger = logging.getLogger(__name__)


class TripleFormatError(ValueError):
    """Raised when a tab-separated line has the wrong shape or content."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = "line {0}: {1}".format(lineno, message)
        super().__init__(message)


def _open_text(source):
    """Return a text stream for a path, a byte stream or a text stream."""
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8"), False


def read_tsv_records(source, n_fields):
    """Yield ``(lineno, fields)`` for every non-empty line of a TSV source.

    Parameters
    ----------
    source : path-like, bytes, or file object
        Tab-separated input without header or quoting.

    n_fields : int
        Required number of fields on every non-empty line.

    Yields
    ------
    lineno : int
        One-based line number

    fields : list of str
    """
    stream, owned = _open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise TripleFormatError(
                    "expected {0} tab-separated fields, got {1}".format(
                        n_fields, len(fields)
                    ),
                    lineno=lineno,
                )
            if any(f == "" for f in fields):
                raise TripleFormatError("empty field", lineno=lineno)
            yield lineno, fields
    finally:
        if owned:
            stream.close()


def _intern(values, vocabulary):
    """Map strings to dense ids, extending ``vocabulary`` in first-appearance order."""
    values = np.asarray(values, dtype=object)
    prefix = np.asarray(vocabulary, dtype=object)
    codes, uniques = pd.factorize(np.concatenate([prefix, values]), sort=False)
    return codes[len(prefix) :].astype(np.int64), list(uniques)


class KnowledgeGraph(object):
    """An immutable set of binary facts ``r(a, b)`` over dense integer ids.

    Entities and relations are interned in first-appearance order. Facts are
    stored as sorted unique integer keys ``(r * n + a) * n + b`` where ``n``
    is the number of entities, so membership tests vectorize via
    :func:`numpy.searchsorted`.

    Parameters
    ----------
    entities : list of str
        Entity vocabulary. Position is the entity id.

    relations : list of str
        Relation vocabulary. Position is the relation id.

    facts : numpy.ndarray of shape (n_facts, 3)
        Integer ``(relation, head, tail)`` triples. Duplicates are dropped.

    Attributes
    ----------
    by_relation_head : dict
        ``relation -> head -> sorted tails``

    by_relation_tail : dict
        ``relation -> tail -> sorted heads``
    """

    def __init__(self, entities, relations, facts):
        self._entities = tuple(entities)
        self._relations = tuple(relations)
        self.entity_index = {e: i for i, e in enumerate(self._entities)}
        self.relation_index = {r: i for i, r in enumerate(self._relations)}

        facts = np.asarray(facts, dtype=np.int64).reshape(-1, 3)
        n = max(len(self._entities), 1)
        if facts.size:
            if (
                facts[:, 0].min() < 0
                or facts[:, 0].max() >= len(self._relations)
                or facts[:, 1:].min() < 0
                or facts[:, 1:].max() >= len(self._entities)
            ):
                raise ValueError("facts reference out-of-vocabulary ids")

        keys = np.unique((facts[:, 0] * n + facts[:, 1]) * n + facts[:, 2])
        self._keys = keys
        rel, rem = np.divmod(keys, n * n)
        head, tail = np.divmod(rem, n)
        self._rel, self._head, self._tail = rel, head, tail

        self.by_relation_head = self._group(rel, head, tail)
        self.by_relation_tail = self._group(rel, tail, head)

        # Entity-centric CSR views for random walks.
        self._out_order = np.lexsort((tail, rel, head))
        self._out_ptr = np.searchsorted(head[self._out_order], np.arange(n + 1))
        self._in_order = np.lexsort((head, rel, tail))
        self._in_ptr = np.searchsorted(tail[self._in_order], np.arange(n + 1))

        self._masks = {}

    @staticmethod
    def _group(rel, key, value):
        index = {}
        if len(rel) == 0:
            return index
        frame = pd.DataFrame({"r": rel, "k": key, "v": value})
        for (r, k), grp in frame.groupby(["r", "k"], sort=True)["v"]:
            index.setdefault(int(r), {})[int(k)] = np.sort(grp.to_numpy())
        return index

    @classmethod
    def from_triples(cls, triples, like=None):
        """Build a graph from ``(head, relation, tail)`` string triples.

        Parameters
        ----------
        triples : iterable of (str, str, str)

        like : KnowledgeGraph, default=None
            If provided, reuse and extend its vocabularies so that ids agree
            between the two graphs.

        Returns
        -------
        graph : KnowledgeGraph
        """
        triples = list(triples)
        entities = list(like.entities) if like is not None else []
        relations = list(like.relations) if like is not None else []
        if triples:
            heads, rels, tails = zip(*triples)
        else:
            heads, rels, tails = (), (), ()

        # Interleave heads and tails to get first-appearance order per line.
        interleaved = np.empty(2 * len(heads), dtype=object)
        interleaved[0::2] = heads
        interleaved[1::2] = tails
        ent_codes, entities = _intern(interleaved, entities)
        rel_codes, relations = _intern(rels, relations)

        facts = np.column_stack([rel_codes, ent_codes[0::2], ent_codes[1::2]])
        return cls(entities, relations, facts)

    @property
    def entities(self):
        return self._entities

    @property
    def relations(self):
        return self._relations

    @property
    def n_entities(self):
        return len(self._entities)

    @property
    def n_relations(self):
        return len(self._relations)

    @property
    def n_facts(self):
        return len(self._keys)

    def __len__(self):
        return self.n_facts

    def __repr__(self):
        return "KnowledgeGraph(n_entities={0}, n_relations={1}, n_facts={2})".format(
            self.n_entities, self.n_relations, self.n_facts
        )

    @property
    def facts(self):
        """Return an ``(n_facts, 3)`` array of ``(relation, head, tail)`` ids."""
        return np.column_stack([self._rel, self._head, self._tail])

    def fact_names(self):
        """Return the sorted list of ``(head, relation, tail)`` name triples."""
        return sorted(
            (self._entities[h], self._relations[r], self._entities[t])
            for r, h, t in zip(self._rel, self._head, self._tail)
        )

    def _encode(self, r, heads, tails):
        n = self.n_entities
        return (np.asarray(r, dtype=np.int64) * n + heads) * n + tails

    def contains(self, r, heads, tails):
        """Vectorized membership test over integer ids.

        Parameters
        ----------
        r : int or array-like of int
            Relation id(s). Ids outside the vocabulary have empty extension.

        heads, tails : int or array-like of int
            Entity ids, broadcast against ``r``.

        Returns
        -------
        mask : numpy.ndarray of bool or bool
        """
        r, heads, tails = np.broadcast_arrays(
            np.asarray(r, dtype=np.int64),
            np.asarray(heads, dtype=np.int64),
            np.asarray(tails, dtype=np.int64),
        )
        n = self.n_entities
        valid = (
            (r >= 0)
            & (r < self.n_relations)
            & (heads >= 0)
            & (heads < n)
            & (tails >= 0)
            & (tails < n)
        )
        out = np.zeros(r.shape, dtype=bool)
        if self.n_facts and valid.any():
            keys = self._encode(r[valid], heads[valid], tails[valid])
            pos = np.searchsorted(self._keys, keys)
            pos = np.minimum(pos, len(self._keys) - 1)
            out[valid] = self._keys[pos] == keys
        if out.ndim == 0:
            return bool(out)
        return out

    def tails(self, r, a):
        """Return the sorted tails ``b`` with ``r(a, b)`` in the graph."""
        return self.by_relation_head.get(int(r), {}).get(
            int(a), np.empty(0, dtype=np.int64)
        )

    def heads(self, r, b):
        """Return the sorted heads ``a`` with ``r(a, b)`` in the graph."""
        return self.by_relation_tail.get(int(r), {}).get(
            int(b), np.empty(0, dtype=np.int64)
        )

    def heads_of(self, r):
        """Return the set of entity ids appearing as head of relation ``r``."""
        return set(self.by_relation_head.get(int(r), {}).keys())

    def tails_of(self, r):
        """Return the set of entity ids appearing as tail of relation ``r``."""
        return set(self.by_relation_tail.get(int(r), {}).keys())

    def head_mask(self, r):
        """Boolean array over entities marking heads of relation ``r``."""
        return self._mask("head", r)

    def tail_mask(self, r):
        """Boolean array over entities marking tails of relation ``r``."""
        return self._mask("tail", r)

    def _mask(self, side, r):
        key = (side, int(r))
        if key not in self._masks:
            index = self.by_relation_head if side == "head" else self.by_relation_tail
            mask = np.zeros(self.n_entities, dtype=bool)
            members = list(index.get(int(r), {}).keys())
            mask[members] = True
            mask.setflags(write=False)
            self._masks[key] = mask
        return self._masks[key]

    def out_degree(self, r):
        """Number of tails per head for relation ``r`` as an entity-length array."""
        deg = np.zeros(self.n_entities, dtype=np.int64)
        for a, tails in self.by_relation_head.get(int(r), {}).items():
            deg[a] = len(tails)
        return deg

    def in_degree(self, r):
        """Number of heads per tail for relation ``r`` as an entity-length array."""
        deg = np.zeros(self.n_entities, dtype=np.int64)
        for b, heads in self.by_relation_tail.get(int(r), {}).items():
            deg[b] = len(heads)
        return deg

    def out_edges(self, a):
        """Return ``(relations, tails)`` of facts with head ``a``."""
        sel = self._out_order[self._out_ptr[a] : self._out_ptr[a + 1]]
        return self._rel[sel], self._tail[sel]

    def in_edges(self, b):
        """Return ``(relations, heads)`` of facts with tail ``b``."""
        sel = self._in_order[self._in_ptr[b] : self._in_ptr[b + 1]]
        return self._rel[sel], self._head[sel]

    def relation_facts(self, r):
        """Return ``(heads, tails)`` arrays of all facts of relation ``r``."""
        sel = self._rel == int(r)
        return self._head[sel], self._tail[sel]

    def adjacency(self):
        """Return the symmetric entity adjacency as a CSR matrix.

        Relation labels and direction are dropped; self-loops are kept.
        """
        n = self.n_entities
        data = np.ones(2 * self.n_facts, dtype=np.int8)
        rows = np.concatenate([self._head, self._tail])
        cols = np.concatenate([self._tail, self._head])
        adj = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        adj.data[:] = 1
        return adj

    def entity_id(self, name):
        """Return the id of entity ``name`` or None."""
        return self.entity_index.get(name)

    def relation_id(self, name):
        """Return the id of relation ``name`` or None."""
        return self.relation_index.get(name)


def load_triples(source, like=None):
    """Load a knowledge graph from ``head<TAB>relation<TAB>tail`` lines.

    Parameters
    ----------
    source : path-like, bytes, or file object
        UTF-8 triples, one per line, no header and no quoting. Empty lines
        are skipped.

    like : KnowledgeGraph, default=None
        Reuse (and extend) the vocabularies of another graph so that entity
        and relation ids agree.

    Returns
    -------
    graph : KnowledgeGraph

    Raises
    ------
    TripleFormatError
        If a line does not have exactly three non-empty fields.

    Examples
    --------
    >>> g = load_triples(b"a\\tr\\tb\\n")
    >>> g.n_entities, g.n_relations, g.n_facts
    (2, 1, 1)
    """
    triples = [tuple(fields) for _, fields in read_tsv_records(source, 3)]
    graph = KnowledgeGraph.from_triples(triples, like=like)
    logger.debug("Loaded %r", graph)
    return graph


def load_graph_pair(observed, complete):
    """Load an observable graph and its completion with shared ids.

    The completion is loaded first and the observable graph reuses its
    vocabulary, so entity ``i`` means the same thing in both graphs.

    Parameters
    ----------
    observed : path-like, bytes or file object
        Triples of the observable graph ``G``

    complete : path-like, bytes or file object
        Triples of the completion ``G~``

    Returns
    -------
    g : KnowledgeGraph
    g_tilde : KnowledgeGraph
    """
    g_tilde = load_triples(complete)
    g = load_triples(observed, like=g_tilde)
    if g.n_entities != g_tilde.n_entities or g.n_relations != g_tilde.n_relations:
        g_tilde = KnowledgeGraph(g.entities, g.relations, g_tilde.facts)
    return g, g_tilde


def write_triples(graph, target):
    """Write a graph as sorted ``head<TAB>relation<TAB>tail`` lines.

    Parameters
    ----------
    graph : KnowledgeGraph

    target : path-like or text file object
    """
    lines = "".join("{0}\t{1}\t{2}\n".format(*t) for t in graph.fact_names())
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8") as fp:
            fp.write(lines)
    else:
        target.write(lines)


def contains_fact(g, r, a, b):
    """Return True iff ``r(a, b)`` is a fact of ``g``.

    Parameters
    ----------
    g : KnowledgeGraph

    r, a, b : str or int
        Relation and entities given by name or by id. Unknown names or ids
        yield False.

    Returns
    -------
    bool

    Examples
    --------
    >>> g = load_triples(b"a\\tr\\tb\\n")
    >>> contains_fact(g, "r", "a", "b"), contains_fact(g, "r", "b", "a")
    (True, False)
    """
    r = g.relation_id(r) if isinstance(r, str) else r
    a = g.entity_id(a) if isinstance(a, str) else a
    b = g.entity_id(b) if isinstance(b, str) else b
    if r is None or a is None or b is None:
        return False
    return bool(g.contains(r, a, b))


def subset_check(g, g_tilde):
    """Check that ``g`` is an observable part of ``g_tilde``.

    Parameters
    ----------
    g : KnowledgeGraph
        Observable graph

    g_tilde : KnowledgeGraph
        Candidate completion

    Returns
    -------
    bool
        True iff every fact of ``g`` is a fact of ``g_tilde`` and both graphs
        have the same entity and relation vocabularies as sets.
    """
    if set(g.entities) != set(g_tilde.entities):
        return False
    if set(g.relations) != set(g_tilde.relations):
        return False
    if g.n_facts == 0:
        return True
    if g.entities == g_tilde.entities and g.relations == g_tilde.relations:
        facts = g.facts
        return bool(g_tilde.contains(facts[:, 0], facts[:, 1], facts[:, 2]).all())
    return all(contains_fact(g_tilde, r, h, t) for h, r, t in g.fact_names())
