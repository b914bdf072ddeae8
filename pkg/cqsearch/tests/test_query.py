import json

import pytest

from cqsearch.kg import load_triples
from cqsearch.query import (
    ConjunctiveQuery,
    DNFQuery,
    Literal,
    QueryBindError,
    QueryParseError,
    Term,
    bind_query,
    existentially_close,
    format_query,
    ground,
    is_tree_like,
    parse_query,
    promote_variable,
    query_from_dict,
    query_graph,
    query_to_dict,
)

GRAPH = b"a\tr1\tb\nb\tr2\tc\nc\tr1\ta\n"


@pytest.mark.parametrize(
    "text",
    [
        "Q(x1) := EXISTS y1 . r1(x1,y1) & r2(y1,c:c)",
        "Q() := r1(c:a,c:b)",
        "Q(x1,x2) := r1(x1,x2) & !r2(x2,c:c)",
        "Q(x1) := OR{ r1(x1,c:b) ; r2(x1,c:c) } & r1(c:c,x1)",
        "Q(x1) := r1(x1,c:b) | EXISTS y1 . r2(x1,y1) & r1(y1,c:a)",
    ],
)
def test_format_parses_back(text):
    query = parse_query(text)
    assert format_query(query) == text  # nosec
    assert parse_query(format_query(query)) == query  # nosec


def test_parse_structure():
    q = parse_query("Q(x1) := EXISTS y1,y2 . r1(x1,y1) & !r2(y1,y2) & r1(y2,c:a)")
    assert isinstance(q, DNFQuery)  # nosec
    cq = q.disjuncts[0]
    assert cq.free_vars == ("x1",)  # nosec
    assert cq.exist_vars == ("y1", "y2")  # nosec
    assert [lit.negated for lit in cq.literals] == [False, True, False]  # nosec
    assert cq.constants == ("a",)  # nosec
    assert cq.terms[-1] == Term.const("a")  # nosec
    assert q.arity == 1  # nosec


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("Q(x1) := r1(x1,y1)", "unbound variable"),
        ("Q(x1) := EXISTS x1 . r1(x1,c:a)", "declared twice"),
        ("Q(x1) := r1(x1,c:a,c:b)", "exactly 2 arguments"),
        ("Q(x1) := EXISTS y1 . r1(x1,c:a)", "never used"),
        ("Q(x1) := r1(x1", "syntax error"),
        ("Q(x1) r1(x1,c:a)", "syntax error"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(QueryParseError) as err:
        parse_query(text)
    assert fragment in str(err.value)  # nosec


def test_parse_error_points_at_column():
    text = "Q(x1) := r1(x1,y9)"
    with pytest.raises(QueryParseError) as err:
        parse_query(text)
    lines = str(err.value).splitlines()
    assert lines[1] == text  # nosec
    assert lines[2].index("^") == text.index("y9")  # nosec


def test_ground_and_close():
    q = parse_query("Q(x1,x2) := EXISTS y1 . r1(x1,y1) & r2(y1,x2)")
    grounded = ground(q, ("a", "c"))
    assert grounded.arity == 0  # nosec
    assert format_query(grounded) == (  # nosec
        "Q() := EXISTS y1 . r1(c:a,y1) & r2(y1,c:c)"
    )
    closed = existentially_close(q.disjuncts[0])
    assert closed.exist_vars == ("y1", "x1", "x2")  # nosec
    assert closed.is_boolean  # nosec
    with pytest.raises(ValueError):
        ground(q, ("a",))


def test_promote_variable():
    cq = parse_query("Q(x1) := EXISTS y1 . r1(x1,y1)").disjuncts[0]
    lifted = promote_variable(cq, "y1")
    assert lifted.free_vars == ("x1", "y1")  # nosec
    assert lifted.exist_vars == ()  # nosec
    assert lifted.literals[0].args[1] == Term.free("y1")  # nosec
    with pytest.raises(ValueError):
        promote_variable(cq, "x1")


def test_query_graph_flags():
    path = parse_query("Q(x) := EXISTS y,z . r(x,y) & s(y,z)").disjuncts[0]
    cycle = parse_query("Q(x) := EXISTS y . r(x,y) & s(y,x)").disjuncts[0]
    assert is_tree_like(path)  # nosec
    assert not is_tree_like(cycle)  # nosec
    g = query_graph(cycle)
    assert g.number_of_edges() == 2  # nosec
    assert g.graph["connected"]  # nosec

    split = parse_query("Q(x) := EXISTS y . r(x,c:a) & s(y,c:b)").disjuncts[0]
    assert not query_graph(split).graph["connected"]  # nosec


def test_dict_format_is_json():
    text = "Q(x1) := OR{ r1(x1,c:b) ; !r2(x1,c:c) } & r1(c:c,x1) | r2(x1,c:a)"
    query = parse_query(text)
    data = json.loads(json.dumps(query_to_dict(query)))
    assert query_from_dict(data) == query  # nosec


def test_query_validation():
    x = Term.free("x")
    with pytest.raises(ValueError):
        ConjunctiveQuery(("x",), (), ())
    with pytest.raises(ValueError):
        ConjunctiveQuery(("x",), ("x",), (Literal("r", (x, Term.const("a"))),))
    with pytest.raises(ValueError):
        Literal("r", (x,))
    with pytest.raises(ValueError):
        DNFQuery(
            (
                ConjunctiveQuery(("x",), (), (Literal("r", (x, x)),)),
                ConjunctiveQuery((), (), (Literal("r", (Term.const("a"),) * 2),)),
            )
        )


def test_bind_query():
    g = load_triples(GRAPH)
    q = parse_query("Q() := EXISTS y1,y2 . r1(y1,y2) & !r9(y2,c:c)")
    bound = bind_query(q, g)
    assert bound.variables == ("y1", "y2")  # nosec
    assert bound.n_vars == 2 and bound.n_consts == 1  # nosec
    assert bound.const_ids.tolist() == [g.entity_id("c")]  # nosec
    assert bound.literals[0].relation == g.relation_id("r1")  # nosec
    # unknown relations get fresh ids past the vocabulary
    assert bound.literals[1].relation == g.n_relations  # nosec
    assert bound.literals[1].negated  # nosec
    assert bound.term_values([0, 1]).tolist() == [0, 1, g.entity_id("c")]  # nosec
    assert bind_query(bound, g) is bound  # nosec

    with pytest.raises(QueryBindError):
        bind_query(parse_query("Q() := r1(c:a,c:zzz)"), g)
    with pytest.raises(ValueError):
        bind_query(parse_query("Q(x) := r1(x,c:a)"), g)
    bound = bind_query(parse_query("Q(x) := r1(x,c:a)"), g, allow_free=True)
    assert bound.n_free == 1  # nosec


def test_bind_clause():
    g = load_triples(GRAPH)
    q = parse_query("Q() := EXISTS y1 . OR{ r1(y1,c:b) ; r2(y1,c:c) }")
    lit = bind_query(q, g).literals[0]
    assert lit.is_clause and lit.relation == -1  # nosec
    assert len(lit.atoms()) == 2  # nosec
    assert lit.terms == (0, 1)  # nosec
