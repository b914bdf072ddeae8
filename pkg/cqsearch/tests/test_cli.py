import os.path as op
import tempfile

import pytest
import torch

import cqsearch.cli as cli
from cqsearch.benchgen import (
    QACInstance,
    read_instances,
    verify_qac_instance,
    write_instances,
)
from cqsearch.datasets import load_toy_graphs, toy_graph_paths
from cqsearch.fuzzy import BudgetExceededError
from cqsearch.policy import PolicyNetwork, save_policy
from cqsearch.query import parse_query


@pytest.fixture
def film_args():
    observed, complete = toy_graph_paths("film")
    return ["--graph", observed, "--graph-complete", complete]


@pytest.fixture
def uniform_policy_file():
    policy = PolicyNetwork(hidden_dim=8, mlp_hidden=8)
    with torch.no_grad():
        for p in policy.parameters():
            p.zero_()
    fn = op.join(tempfile.mkdtemp(), "uniform.cqsp")
    save_policy(policy, fn)
    return fn


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_solve_boolean(film_args, capsys):
    argv = ["solve", "--query", "Q() := directed(c:nolan,c:inception)"]
    assert cli.main(argv + film_args) == 0  # nosec
    assert last_line(capsys) == "true 1.0"  # nosec


@pytest.mark.parametrize(
    "candidate, expected", [("titanic", "true 1.0"), ("alien", "false 0.0")]
)
def test_solve_candidate(film_args, capsys, candidate, expected):
    argv = ["solve", "--query", "Q(x) := won(x,c:oscar)", "--candidate", candidate]
    assert cli.main(argv + film_args) == 0  # nosec
    assert last_line(capsys) == expected  # nosec


def test_solve_retrieval(film_args, uniform_policy_file, capsys):
    argv = [
        "solve",
        "--query",
        "Q(x) := born_in(x,c:london)",
        "--policy",
        uniform_policy_file,
        "--steps",
        "300",
    ]
    assert cli.main(argv + film_args) == 0  # nosec
    assert last_line(capsys) == "nolan 1.0"  # nosec

    argv = ["solve", "--query", "Q(x) := won(x,c:usa)", "--steps", "5"]
    assert cli.main(argv + film_args) == 0  # nosec
    assert last_line(capsys) == "None 0.0"  # nosec


def test_solve_retrieval_reports_best_score(film_args, uniform_policy_file, capsys):
    table = op.join(tempfile.mkdtemp(), "scores.tsv")
    with open(table, "w") as fp:
        fp.write("won\talien\tusa\t0.3\n")
    argv = [
        "solve",
        "--query",
        "Q(x) := won(x,c:usa)",
        "--predictor",
        "tabular:" + table,
        "--policy",
        uniform_policy_file,
        "--steps",
        "300",
    ]
    assert cli.main(argv + film_args) == 0  # nosec
    answer, score = last_line(capsys).split()
    assert answer == "None" and float(score) == pytest.approx(0.3)  # nosec


def test_malformed_environment_exits(film_args, monkeypatch):
    monkeypatch.setenv("CQSEARCH_SEED", "seven")
    argv = ["solve", "--query", "Q() := directed(c:nolan,c:inception)"]
    assert cli.main(argv + film_args) == 1  # nosec


def test_exit_codes(film_args, monkeypatch):
    observed, _ = toy_graph_paths("film")
    query = ["--query", "Q() := directed(c:nolan,c:inception)"]
    # perfect predictions need the complete graph
    argv = ["solve", "--graph", observed, "--predictor", "perfect"] + query
    assert cli.main(argv) == 1  # nosec
    assert cli.main(["solve", "--query", "Q(x := won(x)"] + film_args) == 2  # nosec
    argv = ["solve", "--graph", "does/not/exist.txt"] + query
    assert cli.main(argv) == 2  # nosec

    def exhausted(*args, **kwargs):
        raise BudgetExceededError("budget")

    monkeypatch.setattr(cli, "solve_qac", exhausted)
    argv = ["solve", "--candidate", "titanic", "--query", "Q(x) := won(x,c:oscar)"]
    assert cli.main(argv + film_args) == 3  # nosec

    with pytest.raises(SystemExit) as excinfo:
        cli.main([])
    assert excinfo.value.code == 1  # nosec


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("CQSEARCH_STEPS", "7")
    monkeypatch.setenv("CQSEARCH_SEED", "11")
    args = cli.build_parser().parse_args(["solve", "--graph", "g", "--query", "q"])
    assert (args.steps, args.seed) == (7, 11)  # nosec
    monkeypatch.setenv("CQSEARCH_STEPS", "many")
    with pytest.raises(ValueError):
        cli.build_parser()


def test_generate_template_split():
    observed, complete = toy_graph_paths("toy")
    out = op.join(tempfile.mkdtemp(), "qac.jsonl")
    argv = [
        "generate",
        "--graph",
        observed,
        "--graph-complete",
        complete,
        "--template",
        "2p",
        "--count",
        "2",
        "--out",
        out,
    ]
    assert cli.main(argv) == 0  # nosec
    g, g_tilde = load_toy_graphs("toy")
    instances = read_instances(out)
    assert len(instances) == 2  # nosec
    assert all(verify_qac_instance(inst, g, g_tilde) for inst in instances)  # nosec

    assert cli.main(argv + ["--kind", "qar"]) == 1  # nosec


def test_eval_qac(film_args, uniform_policy_file, capsys):
    tempdir = tempfile.mkdtemp()
    instances = op.join(tempdir, "qac.jsonl")
    write_instances(
        [
            QACInstance(
                parse_query("Q(x) := won(x,c:oscar)"),
                ["hurt_locker", "titanic"],
                ["alien", "inception"],
                hard=["titanic"],
            )
        ],
        instances,
    )
    prefix = op.join(tempdir, "baseline")
    argv = ["eval-qac", "--instances", instances, "--baseline", "--report", prefix]
    assert cli.main(argv + film_args) == 0  # nosec
    assert op.exists(prefix + ".json") and op.exists(prefix + ".txt")  # nosec
    assert "timeouts: 0" in capsys.readouterr().out  # nosec

    argv = ["eval-qac", "--instances", instances, "--policy", uniform_policy_file]
    assert cli.main(argv + film_args) == 0  # nosec
    assert "k=1" in capsys.readouterr().out  # nosec


def test_train_and_profile(capsys):
    observed, complete = toy_graph_paths("toy")
    tempdir = tempfile.mkdtemp()
    argv = [
        "train",
        "--graph",
        complete,
        "--batches",
        "1",
        "--batch-size",
        "1",
        "--T-train",
        "2",
        "--hidden-dim",
        "4",
        "--types",
        "1p,2p",
        "--out",
        tempdir,
    ]
    assert cli.main(argv) == 0  # nosec
    policy = op.join(tempdir, "policy.cqsp")
    assert op.exists(policy)  # nosec
    assert cli.main(argv[:-2] + ["--types", "9p", "--out", tempdir]) == 2  # nosec

    queries = op.join(tempdir, "queries.txt")
    with open(queries, "w") as fp:
        fp.write("# two simple queries\n")
        fp.write("Q(x) := lives_in(x,c:c1)\n")
        fp.write("Q() := EXISTS y,z . friend(y,z) & works_for(z,c:o2)\n")
    csv = op.join(tempdir, "profile.csv")
    argv = [
        "profile",
        "--graph",
        observed,
        "--graph-complete",
        complete,
        "--queries",
        queries,
        "--policy",
        policy,
        "--steps",
        "3",
        "--out",
        csv,
    ]
    assert cli.main(argv) == 0  # nosec
    assert op.exists(csv)  # nosec
    assert "linear fit" in capsys.readouterr().out  # nosec
