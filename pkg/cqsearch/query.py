"""Conjunctive queries, their text grammar and their query graphs."""
import logging
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from arpeggio import EOF, NoMatch, NonTerminal, Optional, ParserPython, ZeroOrMore
from arpeggio import RegExMatch as _

__all__ = [
    "Term",
    "Literal",
    "ConjunctiveQuery",
    "DNFQuery",
    "BoundLiteral",
    "BoundQuery",
    "QueryParseError",
    "QueryBindError",
    "parse_query",
    "format_query",
    "ground",
    "existentially_close",
    "promote_variable",
    "query_graph",
    "is_tree_like",
    "query_to_dict",
    "query_from_dict",
    "bind_query",
]

logger = logging.getLogger(__name__)

CONSTANT = "const"
FREE = "free"
EXISTENTIAL = "exist"


class QueryParseError(ValueError):
    """Raised for malformed query text.

    The message ends with the offending line and a caret under ``position``.
    """

    def __init__(self, message, text=None, position=None):
        self.position = position
        self.text = text
        if text is not None and position is not None:
            line_start = text.rfind("\n", 0, position) + 1
            line_end = text.find("\n", position)
            if line_end == -1:
                line_end = len(text)
            column = position - line_start
            message = "{0} at column {1}\n{2}\n{3}^".format(
                message, column + 1, text[line_start:line_end], " " * column
            )
        super().__init__(message)


class QueryBindError(KeyError):
    """Raised when a query mentions a constant outside the graph vocabulary."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Term(object):
    """A constant, free variable or existential variable."""

    kind: str
    name: str

    def __post_init__(self):
        if self.kind not in (CONSTANT, FREE, EXISTENTIAL):
            raise ValueError(
                "kind must be one of {0}; got {1} instead.".format(
                    [CONSTANT, FREE, EXISTENTIAL], self.kind
                )
            )

    @classmethod
    def const(cls, name):
        return cls(CONSTANT, name)

    @classmethod
    def free(cls, name):
        return cls(FREE, name)

    @classmethod
    def exist(cls, name):
        return cls(EXISTENTIAL, name)

    @property
    def is_constant(self):
        return self.kind == CONSTANT

    @property
    def is_variable(self):
        return self.kind != CONSTANT

    def __str__(self):
        return "c:" + self.name if self.is_constant else self.name


@dataclass(frozen=True)
class Literal(object):
    """An atom ``r(t1, t2)``, its negation, or a disjunctive clause.

    A clause literal has ``relation=None``, a non-empty ``body`` of atomic
    literals, and ``args`` equal to the terms of its body in first-appearance
    order. Clause literals are never negated.
    """

    relation: object
    args: tuple
    negated: bool = False
    body: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "body", tuple(self.body))
        if self.body:
            if self.negated:
                raise ValueError("clause literals cannot be negated")
            if any(lit.is_clause for lit in self.body):
                raise ValueError("clause bodies must contain atomic literals only")
            if self.args != _union_terms(self.body):
                raise ValueError("clause args must equal the terms of its body")
        elif len(self.args) != 2:
            raise ValueError(
                "atomic literal {0} must have exactly 2 arguments; got {1}".format(
                    self.relation, len(self.args)
                )
            )

    @classmethod
    def clause(cls, body):
        body = tuple(body)
        return cls(None, _union_terms(body), False, body)

    @property
    def is_clause(self):
        return bool(self.body)

    def atoms(self):
        """Return the atomic literals this literal is made of."""
        return self.body if self.is_clause else (self,)

    def map_terms(self, fn):
        """Return a copy with every term replaced by ``fn(term)``."""
        if self.is_clause:
            return Literal.clause(lit.map_terms(fn) for lit in self.body)
        return Literal(self.relation, tuple(fn(t) for t in self.args), self.negated)

    def __str__(self):
        if self.is_clause:
            return "OR{ " + " ; ".join(str(lit) for lit in self.body) + " }"
        return "{0}{1}({2})".format(
            "!" if self.negated else "",
            self.relation,
            ",".join(str(t) for t in self.args),
        )


def _union_terms(literals):
    seen = []
    for lit in literals:
        for t in lit.args:
            if t not in seen:
                seen.append(t)
    return tuple(seen)


@dataclass(frozen=True)
class ConjunctiveQuery(object):
    """``Q(x) = EXISTS y . l1 & ... & ln`` over free variables ``x``.

    Parameters
    ----------
    free_vars : tuple of str
        Ordered free variable names.

    exist_vars : tuple of str
        Ordered existential variable names.

    literals : tuple of Literal
        At least one literal. Every variable occurring in a literal is
        declared, and every declared variable occurs in some literal.
    """

    free_vars: tuple
    exist_vars: tuple
    literals: tuple

    def __post_init__(self):
        object.__setattr__(self, "free_vars", tuple(self.free_vars))
        object.__setattr__(self, "exist_vars", tuple(self.exist_vars))
        object.__setattr__(self, "literals", tuple(self.literals))
        if not self.literals:
            raise ValueError("a conjunctive query needs at least one literal")
        names = self.free_vars + self.exist_vars
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique; got {0}".format(names))
        used = set()
        for lit in self.literals:
            for t in lit.args:
                if t.is_constant:
                    continue
                expected = FREE if t.name in self.free_vars else EXISTENTIAL
                if t.name not in names:
                    raise ValueError("variable {0} is not declared".format(t.name))
                if t.kind != expected:
                    raise ValueError(
                        "variable {0} is used as {1} but declared {2}".format(
                            t.name, t.kind, expected
                        )
                    )
                used.add(t.name)
        unused = [v for v in names if v not in used]
        if unused:
            raise ValueError("declared variables {0} are never used".format(unused))

    @property
    def constants(self):
        """Constant names in first-mention order."""
        return tuple(
            t.name for t in _union_terms(self.literals) if t.is_constant
        )

    @property
    def arity(self):
        return len(self.free_vars)

    @property
    def is_boolean(self):
        return not self.free_vars

    @property
    def terms(self):
        """All terms: free, then existential variables, then constants."""
        return (
            tuple(Term.free(v) for v in self.free_vars)
            + tuple(Term.exist(v) for v in self.exist_vars)
            + tuple(Term.const(c) for c in self.constants)
        )

    def __str__(self):
        return format_query(self)


@dataclass(frozen=True)
class DNFQuery(object):
    """A union of conjunctive queries sharing the same free variables."""

    disjuncts: tuple

    def __post_init__(self):
        object.__setattr__(self, "disjuncts", tuple(self.disjuncts))
        if not self.disjuncts:
            raise ValueError("a DNF query needs at least one disjunct")
        free = self.disjuncts[0].free_vars
        for cq in self.disjuncts[1:]:
            if cq.free_vars != free:
                raise ValueError(
                    "all disjuncts must share free variables {0}; got {1}".format(
                        free, cq.free_vars
                    )
                )

    @property
    def free_vars(self):
        return self.disjuncts[0].free_vars

    @property
    def arity(self):
        return len(self.free_vars)

    def __str__(self):
        return format_query(self)


def as_dnf(query):
    """Wrap a ConjunctiveQuery into a single-disjunct DNFQuery."""
    if isinstance(query, DNFQuery):
        return query
    return DNFQuery((query,))


# Query text grammar
# ------------------
# Q(x1,...,xk) := [EXISTS y1,...,ym .] lit & lit ... | ...
# lit := [!]rel(t1,t2) | OR{ atom ; atom ; ... }
def _var():
    return _(r"[A-Za-z_][A-Za-z0-9_]*")


def _const():
    return _(r"c:[^\s,();{}|&]+")


def _rel():
    return _(r"[^\s(){};,|&!]+")


def _term():
    return [_const, _var]


def _atom():
    return Optional("!"), _rel, "(", _term, ZeroOrMore(",", _term), ")"


def _clause():
    return "OR", "{", _atom, ZeroOrMore(";", _atom), "}"


def _literal():
    return [_clause, _atom]


def _varlist():
    return _var, ZeroOrMore(",", _var)


def _exists():
    return "EXISTS", _varlist, "."


def _disjunct():
    return Optional(_exists), _literal, ZeroOrMore("&", _literal)


def _header():
    return "Q", "(", Optional(_varlist), ")", ":="


def _query():
    return _header, _disjunct, ZeroOrMore("|", _disjunct), EOF


_PARSER = None


def _parser():
    global _PARSER
    if _PARSER is None:
        _PARSER = ParserPython(_query, skipws=True)
    return _PARSER


def _find(node, name):
    """Return descendants of ``node`` with rule ``name``, not inside matches."""
    found = []
    if not isinstance(node, NonTerminal):
        return found
    for child in node:
        if child.rule_name == name:
            found.append(child)
        else:
            found.extend(_find(child, name))
    return found


def _terminal_values(node):
    if not isinstance(node, NonTerminal):
        return [node.value]
    values = []
    for child in node:
        values.extend(_terminal_values(child))
    return values


def _parse_atom(node, text, kinds):
    negated = _terminal_values(node)[0] == "!"
    relation = _find(node, "_rel")[0].value
    args = []
    for term_node in _find(node, "_term"):
        value = _terminal_values(term_node)[0]
        if value.startswith("c:"):
            args.append(Term.const(value[2:]))
        elif value in kinds:
            args.append(Term(kinds[value], value))
        else:
            raise QueryParseError(
                "unbound variable {0!r}".format(value), text, term_node.position
            )
    if len(args) != 2:
        raise QueryParseError(
            "atom {0} must have exactly 2 arguments; got {1}".format(
                relation, len(args)
            ),
            text,
            node.position,
        )
    return Literal(relation, tuple(args), negated)


def _declare(nodes, kind, kinds, text):
    names = []
    for node in nodes:
        name = node.value
        if name in kinds:
            raise QueryParseError(
                "variable {0!r} is declared twice".format(name), text, node.position
            )
        kinds[name] = kind
        names.append(name)
    return names


def parse_query(text):
    """Parse query text into a :class:`DNFQuery`.

    The grammar is::

        Q(x1,...,xk) := D | D | ...
        D   := [EXISTS y1,...,ym .] lit & lit & ...
        lit := [!]rel(t1,t2) | OR{ lit ; lit ; ... }

    Constants are written ``c:<id>``; variables are bare identifiers bound
    by the header or by the ``EXISTS`` list of their disjunct. Relation names
    are not checked against any vocabulary here.

    Parameters
    ----------
    text : str

    Returns
    -------
    query : DNFQuery

    Raises
    ------
    QueryParseError
        On syntax errors, unbound or redeclared variables, atoms whose arity
        is not 2, and declared variables that are never used.

    Examples
    --------
    >>> q = parse_query("Q(x1) := EXISTS y1 . r1(x1,y1) & r2(y1,c:c1)")
    >>> len(q.disjuncts), q.free_vars, q.disjuncts[0].exist_vars
    (1, ('x1',), ('y1',))
    """
    try:
        tree = _parser().parse(text)
    except NoMatch as err:
        raise QueryParseError("syntax error", text, err.position) from None

    header = _find(tree, "_header")[0]
    free_kinds = {}
    free_vars = _declare(_find(header, "_var"), FREE, free_kinds, text)

    disjuncts = []
    for node in _find(tree, "_disjunct"):
        kinds = dict(free_kinds)
        exist_vars = []
        for ex in _find(node, "_exists"):
            exist_vars = _declare(_find(ex, "_var"), EXISTENTIAL, kinds, text)
        literals = []
        for lit_node in _find(node, "_literal"):
            clause = _find(lit_node, "_clause")
            if clause:
                body = [_parse_atom(a, text, kinds) for a in _find(clause[0], "_atom")]
                literals.append(Literal.clause(body))
            else:
                atom = _find(lit_node, "_atom")[0]
                literals.append(_parse_atom(atom, text, kinds))
        try:
            disjuncts.append(ConjunctiveQuery(free_vars, exist_vars, literals))
        except ValueError as err:
            raise QueryParseError(str(err), text, node.position) from None
    return DNFQuery(disjuncts)


def format_query(query):
    """Render a query in the text grammar accepted by :func:`parse_query`.

    Examples
    --------
    >>> text = "Q(x1) := r1(x1,c:c1) & !r2(x1,c:c2)"
    >>> format_query(parse_query(text)) == text
    True
    """
    dnf = as_dnf(query)
    parts = []
    for cq in dnf.disjuncts:
        body = " & ".join(str(lit) for lit in cq.literals)
        if cq.exist_vars:
            body = "EXISTS {0} . {1}".format(",".join(cq.exist_vars), body)
        parts.append(body)
    return "Q({0}) := {1}".format(",".join(dnf.free_vars), " | ".join(parts))


def ground(query, answer):
    """Substitute constants for the free variables of a query.

    Parameters
    ----------
    query : ConjunctiveQuery or DNFQuery

    answer : sequence of str
        Entity names, one per free variable, in order.

    Returns
    -------
    grounded : same type as ``query``
        A query without free variables. Existential structure is untouched.

    Examples
    --------
    >>> q = parse_query("Q(x1) := EXISTS y1 . r1(x1,y1) & r2(y1,c:c1)")
    >>> format_query(ground(q, ("a",)))
    'Q() := EXISTS y1 . r1(c:a,y1) & r2(y1,c:c1)'
    """
    if isinstance(query, DNFQuery):
        return DNFQuery(tuple(ground(cq, answer) for cq in query.disjuncts))
    answer = tuple(answer)
    if len(answer) != len(query.free_vars):
        raise ValueError(
            "expected {0} values for free variables {1}; got {2}".format(
                len(query.free_vars), query.free_vars, len(answer)
            )
        )
    mapping = {
        Term.free(v): Term.const(a) for v, a in zip(query.free_vars, answer)
    }
    literals = tuple(
        lit.map_terms(lambda t: mapping.get(t, t)) for lit in query.literals
    )
    return ConjunctiveQuery((), query.exist_vars, literals)


def existentially_close(query):
    """Turn every free variable into an existential one.

    Former free variables are appended to the existential list in order, so
    a QAR answer can be read back positionally from the last positions.

    Examples
    --------
    >>> q = parse_query("Q(x1) := EXISTS y1 . r1(x1,y1) & r2(y1,c:c1)")
    >>> existentially_close(q).disjuncts[0].exist_vars
    ('y1', 'x1')
    """
    if isinstance(query, DNFQuery):
        return DNFQuery(tuple(existentially_close(cq) for cq in query.disjuncts))
    if not query.free_vars:
        return query
    literals = tuple(
        lit.map_terms(lambda t: Term.exist(t.name) if t.kind == FREE else t)
        for lit in query.literals
    )
    return ConjunctiveQuery((), query.exist_vars + query.free_vars, literals)


def promote_variable(query, name):
    """Make existential variable ``name`` the last free variable of ``query``."""
    if name not in query.exist_vars:
        raise ValueError("{0} is not an existential variable".format(name))
    literals = tuple(
        lit.map_terms(lambda t: Term.free(name) if t == Term.exist(name) else t)
        for lit in query.literals
    )
    exist_vars = tuple(v for v in query.exist_vars if v != name)
    return ConjunctiveQuery(query.free_vars + (name,), exist_vars, literals)


def query_graph(query):
    """Return the query graph of a conjunctive query.

    Vertices are the terms of the query; each atomic literal contributes one
    undirected edge keyed by its literal index and labelled with its
    relation and polarity. Clause literals add no edges; their term sets are
    only used for the ``connected`` flag.

    Parameters
    ----------
    query : ConjunctiveQuery

    Returns
    -------
    graph : networkx.MultiGraph
        ``graph.graph`` holds the flags ``tree_like`` and ``connected``.

    Examples
    --------
    >>> q = parse_query("Q(x) := EXISTS y,z . r(x,y) & s(y,z) & t(z,x)")
    >>> query_graph(q.disjuncts[0]).graph["tree_like"]
    False
    """
    graph = nx.MultiGraph()
    graph.add_nodes_from(query.terms)
    hyper = nx.Graph()
    hyper.add_nodes_from(query.terms)
    for i, lit in enumerate(query.literals):
        if lit.is_clause:
            terms = list(lit.args)
            hyper.add_edges_from(zip(terms[:-1], terms[1:]))
            continue
        u, v = lit.args
        graph.add_edge(u, v, key=i, relation=lit.relation, negated=lit.negated)
        hyper.add_edge(u, v)
    n_components = nx.number_connected_components(graph)
    graph.graph["tree_like"] = (
        graph.number_of_edges() == graph.number_of_nodes() - n_components
    )
    graph.graph["connected"] = nx.is_connected(hyper)
    return graph


def is_tree_like(query):
    """Return True iff the query graph of ``query`` has no cycles."""
    return query_graph(query).graph["tree_like"]


def _term_to_dict(term):
    if term.is_constant:
        return {"const": term.name}
    return {"var": term.name}


def _literal_to_dict(lit):
    out = {
        "rel": lit.relation,
        "args": [_term_to_dict(t) for t in lit.args],
        "neg": bool(lit.negated),
    }
    if lit.is_clause:
        out["clause"] = [_literal_to_dict(a) for a in lit.body]
    return out


def query_to_dict(query):
    """Return a JSON-serializable dict for a conjunctive or DNF query.

    A conjunctive query becomes ``{free, exists, literals}``; a DNF query
    with more than one disjunct becomes ``{free, disjuncts: [...]}``.
    """
    if isinstance(query, DNFQuery):
        if len(query.disjuncts) == 1:
            return query_to_dict(query.disjuncts[0])
        return {
            "free": list(query.free_vars),
            "disjuncts": [query_to_dict(cq) for cq in query.disjuncts],
        }
    return {
        "free": list(query.free_vars),
        "exists": list(query.exist_vars),
        "literals": [_literal_to_dict(lit) for lit in query.literals],
    }


def query_from_dict(data):
    """Inverse of :func:`query_to_dict`, always returning a DNFQuery."""
    if "disjuncts" in data:
        return DNFQuery(
            tuple(query_from_dict(d).disjuncts[0] for d in data["disjuncts"])
        )
    free = tuple(data.get("free", ()))
    exists = tuple(data.get("exists", ()))

    def term(d):
        if "const" in d:
            return Term.const(d["const"])
        name = d["var"]
        return Term.free(name) if name in free else Term.exist(name)

    def literal(d):
        if d.get("clause"):
            return Literal.clause(literal(a) for a in d["clause"])
        return Literal(d["rel"], tuple(term(t) for t in d["args"]), bool(d["neg"]))

    literals = tuple(literal(d) for d in data["literals"])
    return DNFQuery((ConjunctiveQuery(free, exists, literals),))


@dataclass(frozen=True)
class BoundLiteral(object):
    """A literal over integer ids.

    ``args`` are term indices into :attr:`BoundQuery.term_names`;
    ``relation`` is -1 for clause literals.
    """

    relation: int
    args: tuple
    negated: bool = False
    body: tuple = ()

    @property
    def is_clause(self):
        return bool(self.body)

    def atoms(self):
        return self.body if self.is_clause else (self,)

    @property
    def terms(self):
        return tuple(dict.fromkeys(self.args))


@dataclass
class BoundQuery(object):
    """A conjunctive query resolved against a graph vocabulary.

    Terms are indexed as variables first (free, then existential) followed
    by constants.

    Attributes
    ----------
    variables : tuple of str
    n_free : int
    const_names : tuple of str
    const_ids : numpy.ndarray of int
    literals : tuple of BoundLiteral
    n_entities : int
    unknown_relations : dict
        Relation names missing from the graph mapped to fresh ids.
    """

    variables: tuple
    n_free: int
    const_names: tuple
    const_ids: np.ndarray
    literals: tuple
    n_entities: int
    unknown_relations: dict = field(default_factory=dict)
    source: object = None

    @property
    def n_vars(self):
        return len(self.variables)

    @property
    def n_consts(self):
        return len(self.const_names)

    @property
    def n_terms(self):
        return self.n_vars + self.n_consts

    @property
    def term_names(self):
        return self.variables + tuple("c:" + c for c in self.const_names)

    def is_variable(self, term):
        return term < self.n_vars

    def term_values(self, assignment):
        """Concatenate a variable assignment with the constant ids."""
        assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
        if assignment.shape[0] != self.n_vars:
            raise ValueError(
                "assignment must have {0} values; got {1}".format(
                    self.n_vars, assignment.shape[0]
                )
            )
        return np.concatenate([assignment, self.const_ids])


def bind_query(query, graph, allow_free=False):
    """Resolve a conjunctive query against the vocabulary of ``graph``.

    Parameters
    ----------
    query : ConjunctiveQuery
        A single-disjunct DNFQuery is accepted too.

    graph : KnowledgeGraph

    allow_free : bool, default=False
        If False, refuse queries with free variables.

    Returns
    -------
    bound : BoundQuery

    Raises
    ------
    QueryBindError
        If a constant is not an entity of ``graph``.
    """
    if isinstance(query, BoundQuery):
        return query
    if isinstance(query, DNFQuery):
        if len(query.disjuncts) != 1:
            raise ValueError("bind_query expects a single conjunctive query")
        query = query.disjuncts[0]
    if query.free_vars and not allow_free:
        raise ValueError(
            "query has free variables {0}; ground or close it first".format(
                query.free_vars
            )
        )

    variables = query.free_vars + query.exist_vars
    constants = query.constants
    index = {Term.free(v): i for i, v in enumerate(query.free_vars)}
    index.update(
        {
            Term.exist(v): i + len(query.free_vars)
            for i, v in enumerate(query.exist_vars)
        }
    )
    const_ids = []
    for j, c in enumerate(constants):
        eid = graph.entity_id(c)
        if eid is None:
            raise QueryBindError("unknown entity constant {0!r}".format(c))
        const_ids.append(eid)
        index[Term.const(c)] = len(variables) + j

    unknown = {}

    def relation_id(name):
        rid = graph.relation_id(name)
        if rid is None:
            if name not in unknown:
                unknown[name] = graph.n_relations + len(unknown)
                logger.debug("relation %r unknown to the graph; treated as empty", name)
            rid = unknown[name]
        return rid

    def bind(lit):
        if lit.is_clause:
            body = tuple(bind(a) for a in lit.body)
            return BoundLiteral(-1, tuple(index[t] for t in lit.args), False, body)
        return BoundLiteral(
            relation_id(lit.relation), tuple(index[t] for t in lit.args), lit.negated
        )

    return BoundQuery(
        variables=variables,
        n_free=len(query.free_vars),
        const_names=constants,
        const_ids=np.asarray(const_ids, dtype=np.int64),
        literals=tuple(bind(lit) for lit in query.literals),
        n_entities=graph.n_entities,
        unknown_relations=unknown,
        source=query,
    )
