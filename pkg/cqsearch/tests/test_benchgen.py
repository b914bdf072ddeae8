import os.path as op
import tempfile

import pytest

from cqsearch.benchgen import (
    GenParams,
    QACInstance,
    QARInstance,
    generate_dataset,
    lift_arity,
    make_qac_instance,
    make_qar_instance,
    make_template_qac_dataset,
    read_instances,
    sample_base_query,
    verify_qac_instance,
    write_instances,
)
from cqsearch.datasets import load_toy_graphs
from cqsearch.kg import contains_fact
from cqsearch.oracle import oracle_solve
from cqsearch.query import format_query, parse_query, query_graph
from cqsearch.templates import GenerationError


@pytest.fixture
def toy():
    return load_toy_graphs("toy")


@pytest.mark.parametrize(
    "name, expected",
    [("3hub", (2, 0.6, 0.95)), ("4-hub", (3, 0.8, 0.97)), ("5HUB", (4, 1.0, 0.99))],
)
def test_presets(name, expected):
    params = GenParams.from_preset(name, n_min=4, seed=1)
    assert (params.n_hub, params.p_const, params.p_out) == expected  # nosec
    assert (params.n_min, params.seed) == (4, 1)  # nosec


@pytest.mark.parametrize(
    "kwargs", [{"n_hub": 0}, {"n_min": -1}, {"p_const": 1.5}, {"p_out": -0.1}]
)
def test_gen_params_validation(kwargs):
    with pytest.raises(ValueError):
        GenParams(**kwargs)
    with pytest.raises(ValueError):
        GenParams.from_preset("6hub")


def test_sample_base_query(toy):
    g, g_tilde = toy
    params = GenParams(n_hub=2, n_min=2, seed=0)
    query = sample_base_query(g, g_tilde, params)
    assert query.free_vars == ("x1",)  # nosec
    assert not any(lit.negated or lit.is_clause for lit in query.literals)  # nosec
    assert query_graph(query).graph["connected"]  # nosec
    assert oracle_solve(query, g_tilde, mode="first").answers  # nosec
    # every literal with two constants is a fact of the complete graph
    for lit in query.literals:
        head, tail = lit.args
        if head.is_constant and tail.is_constant:
            assert contains_fact(g_tilde, lit.relation, head.name, tail.name)  # nosec
    again = sample_base_query(g, g_tilde, params)
    assert format_query(again) == format_query(query)  # nosec


def test_make_qac_instance(toy):
    g, g_tilde = toy
    # p6 lives in c3 only on the complete graph
    query = parse_query("Q(x) := lives_in(x,c:c3)")
    instance = make_qac_instance(query, g, g_tilde, random_state=0)
    assert sorted(instance.correct) == ["p5", "p6"]  # nosec
    assert instance.hard == ["p6"] and instance.easy == ["p5"]  # nosec
    assert len(instance.wrong) == 2  # nosec
    assert not set(instance.wrong) & {"p5", "p6"}  # nosec
    assert verify_qac_instance(instance, g, g_tilde)  # nosec

    broken = QACInstance(query, ["p5", "p6"], ["p1", "p2"], hard=[])
    assert not verify_qac_instance(broken, g, g_tilde)  # nosec
    swapped = QACInstance(query, ["p5", "p1"], ["p6", "p2"], hard=[])
    assert not verify_qac_instance(swapped, g, g_tilde)  # nosec


def test_make_qac_instance_rejects(toy):
    g, g_tilde = toy
    with pytest.raises(GenerationError):
        make_qac_instance(parse_query("Q(x) := lives_in(x,c:c1)"), g, g_tilde)
    with pytest.raises(ValueError):
        make_qac_instance(parse_query("Q(x,y) := lives_in(x,y)"), g, g_tilde)


def test_make_qar_instance(toy):
    g, g_tilde = toy
    instance = make_qar_instance(parse_query("Q(x) := lives_in(x,c:c2)"), g, g_tilde)
    assert instance.answers == [("p3",), ("p4",)]  # nosec
    assert instance.has_trivial and instance.arity == 1  # nosec

    hidden = make_qar_instance(parse_query("Q(x) := based_in(x,c:c2)"), g, g_tilde)
    assert hidden.answers == [("o3",)] and not hidden.has_trivial  # nosec

    with pytest.raises(GenerationError):
        make_qar_instance(parse_query("Q(x) := city_of(x,c:p1)"), g, g_tilde)


def test_lift_arity(toy):
    g, g_tilde = toy
    query = parse_query("Q(x) := EXISTS y . lives_in(x,y) & city_of(y,c:k2)")
    instance = make_qar_instance(query, g, g_tilde)
    assert instance.answers == [("p5",), ("p6",), ("p7",), ("p8",)]  # nosec
    lifted = lift_arity(instance, g, g_tilde, random_state=0)
    assert lifted.arity == 2  # nosec
    assert lifted.answers == [  # nosec
        ("p5", "c3"),
        ("p6", "c3"),
        ("p7", "c4"),
        ("p8", "c4"),
    ]
    with pytest.raises(ValueError):
        lift_arity(lifted, g, g_tilde)


def test_template_qac_dataset(toy):
    g, g_tilde = toy
    instances = make_template_qac_dataset(
        g, g_tilde, "2p", count=3, random_state=0, max_tries=500
    )
    assert 0 < len(instances) <= 3  # nosec
    for instance in instances:
        assert instance.hard  # nosec
        assert verify_qac_instance(instance, g, g_tilde)  # nosec


def test_generate_dataset_is_deterministic(toy):
    g, g_tilde = toy
    params = GenParams(n_hub=2, n_min=2, seed=7)
    serial = generate_dataset(g, g_tilde, params, 3, serialize=True)
    parallel = generate_dataset(g, g_tilde, params, 3, n_jobs=2)
    assert [i.to_dict() for i in serial] == [i.to_dict() for i in parallel]  # nosec
    for instance in serial:
        assert verify_qac_instance(instance, g, g_tilde)  # nosec


def test_generate_dataset_rejects(toy):
    g, g_tilde = toy
    params = GenParams(seed=0)
    with pytest.raises(ValueError):
        generate_dataset(g, g_tilde, params, 1, kind="qa")
    with pytest.raises(ValueError):
        generate_dataset(g, g_tilde, params, 1, kind="qac", arity=2)
    with pytest.raises(ValueError):
        generate_dataset(g, g_tilde, params, 1, kind="qar", arity=4)


def test_write_read_instances(toy):
    g, g_tilde = toy
    qac = make_qac_instance(
        parse_query("Q(x) := lives_in(x,c:c3)"), g, g_tilde, random_state=0
    )
    qar = QARInstance(parse_query("Q(x,y) := friend(x,y)"), [("p1", "p2")], True)
    tempdir = tempfile.mkdtemp()

    fn = op.join(tempdir, "qac.jsonl")
    write_instances([qac], fn)
    loaded = read_instances(fn)[0]
    assert isinstance(loaded, QACInstance)  # nosec
    assert loaded.to_dict() == qac.to_dict()  # nosec

    fn = op.join(tempdir, "qar.jsonl")
    write_instances([qar], fn)
    loaded = read_instances(fn, kind="qar")[0]
    assert loaded.answers == [("p1", "p2")] and loaded.has_trivial  # nosec

    fn = op.join(tempdir, "broken.jsonl")
    with open(fn, "w") as fp:
        fp.write("{not json\n")
    with pytest.raises(ValueError):
        read_instances(fn)
