"""Command line interface: ``cqsearch <command> [options]``."""
import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np
import torch

from .benchgen import (
    GenParams,
    generate_dataset,
    make_template_qac_dataset,
    read_instances,
    verify_qac_instance,
    write_instances,
)
from .evaluate import (
    dataset_statistics,
    evaluate_qac,
    evaluate_qar,
    f1_qac,
    f1_qar,
    fit_step_time_scaling,
    oracle_predictions_qac,
    oracle_predictions_qar,
    timing_profile,
)
from .fuzzy import BudgetExceededError
from .kg import TripleFormatError, load_graph_pair, load_triples
from .policy import CheckpointError, PolicyNetwork, load_policy
from .predictor import make_predictor
from .query import QueryBindError, QueryParseError, as_dnf, parse_query
from .search import run_search, solve_qac, solve_qar
from .templates import GenerationError, TRAINING_TYPES
from .train import NonFiniteGradientError, TrainConfig, train
from .utils import (
    DEFAULT_TIMEOUT,
    LARGE_STEPS,
    QAC_SMALL_STEPS,
    env_default,
    set_logger,
    spawn_seeds,
)

__all__ = ["build_parser", "main"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DATA_ERRORS = (
    TripleFormatError,
    QueryParseError,
    QueryBindError,
    CheckpointError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)
RUNTIME_ERRORS = (
    GenerationError,
    BudgetExceededError,
    NonFiniteGradientError,
    RuntimeError,
)

# Queries with at most this many literals count as small QAC queries.
SMALL_QUERY_LITERALS = 3


class UsageError(Exception):
    """Raised for flag combinations argparse cannot express."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "{0}: error: {1}\n".format(self.prog, message))


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=env_default("SEED", 0, int))
    parser.add_argument(
        "--verbose", action="store_true", help="Log at DEBUG level."
    )
    parser.add_argument("--log-file", default=None, help="Also log to this file.")


def _add_graphs(parser, complete_required=False):
    parser.add_argument(
        "--graph", required=True, help="Observable graph, tab-separated triples."
    )
    parser.add_argument(
        "--graph-complete",
        required=complete_required,
        default=None,
        help="Complete graph, tab-separated triples.",
    )


def _add_search(parser, steps_default=None):
    parser.add_argument(
        "--policy", default=None, help="Serialized policy (random weights if omitted)."
    )
    parser.add_argument(
        "--predictor",
        default=None,
        help="perfect | observed | tabular:<path> | noisy:<rate> | "
        "binarized:<path>:<threshold>. Defaults to perfect when "
        "--graph-complete is given, observed otherwise.",
    )
    parser.add_argument(
        "--augment",
        action="store_true",
        help="Fold the observable graph into the predictor.",
    )
    parser.add_argument(
        "--steps",
        type=int,
        default=env_default("STEPS", steps_default, int),
        help="Search steps per query.",
    )
    parser.add_argument(
        "--timeout",
        type=float,
        default=env_default("TIMEOUT", DEFAULT_TIMEOUT, float),
        help="Seconds per instance.",
    )
    parser.add_argument(
        "--pe-mode",
        choices=["exact", "cwa", "all-one"],
        default=env_default("PE_MODE", "exact"),
    )
    parser.add_argument(
        "--hidden-dim",
        type=int,
        default=32,
        help="Width of a randomly initialized policy.",
    )


def build_parser():
    """Return the argument parser of the ``cqsearch`` command."""
    parser = _Parser(
        prog="cqsearch",
        description="Answer conjunctive queries over incomplete knowledge graphs.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="Train a search policy with REINFORCE.")
    p.add_argument("--graph", required=True, help="Training graph.")
    p.add_argument("--batches", "--epochs", type=int, default=1000, dest="batches")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--T-train", type=int, default=15, dest="t_train")
    p.add_argument("--gamma", type=float, default=0.75)
    p.add_argument("--lr", type=float, default=5e-6)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--types", default=",".join(TRAINING_TYPES))
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--out", required=True, help="Output directory.")
    p.add_argument("--resume", action="store_true")
    _add_common(p)

    for kind in ("qac", "qar"):
        p = sub.add_parser(
            "eval-" + kind, help="Evaluate on {0} instances.".format(kind.upper())
        )
        _add_graphs(p, complete_required=(kind == "qar"))
        p.add_argument("--instances", required=True, help="Instance JSONL file.")
        _add_search(p)
        p.add_argument(
            "--baseline",
            action="store_true",
            help="Evaluate the exact solver on the observable graph instead.",
        )
        p.add_argument("--jobs", type=int, default=env_default("JOBS", 1, int))
        p.add_argument("--workdir", default=None, help="Per-instance result cache.")
        p.add_argument(
            "--report", default=None, help="Report path prefix (.json and .txt)."
        )
        _add_common(p)

    p = sub.add_parser("generate", help="Generate benchmark instances.")
    _add_graphs(p, complete_required=True)
    p.add_argument("--kind", choices=["qac", "qar"], default="qac")
    p.add_argument("--preset", default="3hub", help="3hub | 4hub | 5hub")
    p.add_argument(
        "--template", default=None, help="Simple query type for small QAC splits."
    )
    p.add_argument("--n-min", type=int, default=15)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--arity-max", type=int, default=1)
    p.add_argument("--jobs", type=int, default=env_default("JOBS", 1, int))
    p.add_argument(
        "--gen-timeout", type=float, default=None, help="Oracle seconds per query."
    )
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("solve", help="Solve a single query.")
    _add_graphs(p)
    p.add_argument("--query", required=True)
    p.add_argument(
        "--candidate", default=None, help="Comma-separated answer tuple to classify."
    )
    _add_search(p, steps_default=LARGE_STEPS)
    _add_common(p)

    p = sub.add_parser("profile", help="Measure search step times.")
    _add_graphs(p)
    p.add_argument("--queries", required=True, help="One query per line.")
    _add_search(p, steps_default=QAC_SMALL_STEPS)
    p.add_argument("--out", default=None, help="CSV output path.")
    p.add_argument("--plot", default=None, help="Figure output path.")
    _add_common(p)
    return parser


def _load_graphs(args):
    if args.graph_complete:
        return load_graph_pair(args.graph, args.graph_complete)
    return load_triples(args.graph), None


def _predictor(args, g, g_tilde):
    choice = args.predictor
    if choice is None:
        choice = "perfect" if g_tilde is not None else "observed"
    if choice.lower().startswith(("perfect", "noisy")) and g_tilde is None:
        raise UsageError("--predictor {0} requires --graph-complete".format(choice))
    return make_predictor(
        choice, g_obs=g, g_tilde=g_tilde, augment=args.augment, random_state=args.seed
    )


def _policy(args):
    if args.policy:
        return load_policy(args.policy)
    logger.warning("No --policy given; using random weights")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(args.seed)
        return PolicyNetwork(hidden_dim=args.hidden_dim)


def cmd_train(args):
    g = load_triples(args.graph)
    config = TrainConfig(
        steps=args.t_train,
        gamma=args.gamma,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        n_batches=args.batches,
        hidden_dim=args.hidden_dim,
        query_types=tuple(t.strip() for t in args.types.split(",") if t.strip()),
        checkpoint_every=args.checkpoint_every,
        seed=args.seed,
    )
    _, metrics = train(g, config, out_dir=args.out, resume=args.resume)
    if metrics:
        logger.info("Final mean best score %.4f", metrics[-1]["mean_best_score"])
    return EXIT_OK


def _steps_for(args, instances):
    if args.steps is not None:
        return args.steps
    small = all(
        max(len(cq.literals) for cq in as_dnf(inst.query).disjuncts)
        <= SMALL_QUERY_LITERALS
        for inst in instances
    )
    return QAC_SMALL_STEPS if small else LARGE_STEPS


def _write_report(report, prefix):
    text = report.to_text()
    print(text)
    if prefix:
        report.to_json(prefix + ".json")
        with open(prefix + ".txt", "w") as fp:
            fp.write(text + "\n")


def cmd_eval(args, kind):
    g, g_tilde = _load_graphs(args)
    instances = read_instances(args.instances, kind)
    logger.info(
        "Loaded %d instances: %s", len(instances), dataset_statistics(instances)
    )
    if args.baseline:
        if kind == "qac":
            predictions, n_exc = oracle_predictions_qac(instances, g, args.timeout)
            report = f1_qac(predictions, instances, n_exc=n_exc)
        else:
            predictions, n_exc = oracle_predictions_qar(instances, g, args.timeout)
            report = f1_qar(predictions, instances, g_tilde, n_exc=n_exc)
        _write_report(report, args.report)
        return EXIT_OK

    predictor = _predictor(args, g, g_tilde)
    policy = _policy(args)
    options = dict(
        steps=_steps_for(args, instances),
        pe_mode=args.pe_mode,
        timeout=args.timeout,
        random_state=args.seed,
        n_jobs=args.jobs,
        serialize=args.jobs == 1,
        workdir=args.workdir,
    )
    if kind == "qac":
        report, _ = evaluate_qac(policy, instances, g, predictor, **options)
    else:
        report, _ = evaluate_qar(policy, instances, g, g_tilde, predictor, **options)
    _write_report(report, args.report)
    return EXIT_OK


def _generate_hub(args, g, g_tilde, params, arity):
    instances = []
    for round_seed in [params.seed] + spawn_seeds(params.seed, 4):
        missing = args.count - len(instances)
        if missing <= 0:
            break
        batch = generate_dataset(
            g,
            g_tilde,
            replace(params, seed=round_seed),
            missing,
            kind=args.kind,
            arity=arity,
            timeout=args.gen_timeout,
            n_jobs=args.jobs,
            serialize=args.jobs == 1,
        )
        if args.kind == "qac":
            batch = [inst for inst in batch if verify_qac_instance(inst, g, g_tilde)]
        instances.extend(batch)
    if len(instances) < args.count:
        raise GenerationError(
            "generated only {0} of {1} instances".format(len(instances), args.count)
        )
    return instances[: args.count]


def cmd_generate(args):
    g, g_tilde = load_graph_pair(args.graph, args.graph_complete)
    if args.template:
        if args.kind != "qac":
            raise UsageError("--template builds QAC instances only")
        instances = make_template_qac_dataset(
            g, g_tilde, args.template, args.count, args.seed, args.gen_timeout
        )
        if len(instances) < args.count:
            raise GenerationError(
                "generated only {0} of {1} {2} instances".format(
                    len(instances), args.count, args.template
                )
            )
    else:
        params = GenParams.from_preset(args.preset, n_min=args.n_min, seed=args.seed)
        if args.kind == "qac" and args.arity_max != 1:
            raise UsageError("--arity-max applies to --kind qar only")
        instances = []
        for arity in range(1, args.arity_max + 1):
            instances.extend(_generate_hub(args, g, g_tilde, params, arity))
    write_instances(instances, args.out)
    logger.info("Wrote %d instances to %s", len(instances), args.out)
    return EXIT_OK


def cmd_solve(args):
    g, g_tilde = _load_graphs(args)
    predictor = _predictor(args, g, g_tilde)
    policy = _policy(args)
    query = parse_query(args.query)
    options = dict(
        steps=args.steps,
        random_state=args.seed,
        pe_mode=args.pe_mode,
        timeout=args.timeout,
    )
    if args.candidate is not None:
        answer = tuple(c.strip() for c in args.candidate.split(","))
        verdict, score = solve_qac(
            policy, query, answer, g, predictor, return_score=True, **options
        )
        print("{0} {1}".format("true" if verdict else "false", score))
    elif query.arity == 0:
        score = max(
            run_search(policy, cq, g, predictor, **options).score
            for cq in query.disjuncts
        )
        print("{0} {1}".format("true" if score > 0.5 else "false", score))
    else:
        answer, score = solve_qar(
            policy, query, g, predictor, return_score=True, **options
        )
        if answer is None:
            print("None {0}".format(score))
        else:
            print("{0} {1}".format(",".join(answer), score))
    return EXIT_OK


def _read_queries(path):
    with open(path) as fp:
        lines = [line.strip() for line in fp]
    return [parse_query(line) for line in lines if line and not line.startswith("#")]


def cmd_profile(args):
    g, g_tilde = _load_graphs(args)
    predictor = _predictor(args, g, g_tilde)
    policy = _policy(args)
    queries = _read_queries(args.queries)
    profile = timing_profile(
        policy,
        queries,
        g,
        predictor,
        steps=args.steps,
        pe_mode=args.pe_mode,
        random_state=args.seed,
    )
    summary = profile.groupby("n_vars")[["step_time", "normalized"]].mean()
    print(summary.to_string())
    if len(profile) > 1:
        size = profile["n_entities"] * (profile["n_vars"] + 2 * profile["n_literals"])
        fit = fit_step_time_scaling(size, profile["step_time"])
        print("linear fit: R2 {0:.3f}, slope {1:.3e}".format(fit["r2"], fit["slope"]))
    if args.out:
        profile.to_csv(args.out, index=False)
    if args.plot:
        from .plot import plot_step_times

        fig = plot_step_times(profile)
        fig.savefig(args.plot)
    return EXIT_OK


def main(argv=None):
    """Run the command line interface.

    Returns
    -------
    code : int
        0 on success, 1 on usage errors, 2 on data errors and 3 on runtime
        errors.
    """
    try:
        parser = build_parser()
    except ValueError as err:
        # malformed CQSEARCH_* defaults
        print("cqsearch: error: {0}".format(err), file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    set_logger(log_file=getattr(args, "log_file", None), verbose=args.verbose)
    np.random.seed(args.seed % (2 ** 32))

    commands = {
        "train": cmd_train,
        "eval-qac": lambda a: cmd_eval(a, "qac"),
        "eval-qar": lambda a: cmd_eval(a, "qar"),
        "generate": cmd_generate,
        "solve": cmd_solve,
        "profile": cmd_profile,
    }
    try:
        return commands[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print("cqsearch: error: {0}".format(err), file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as err:
        logger.error("%s", err)
        return EXIT_RUNTIME
    except DATA_ERRORS as err:
        logger.error("%s", err)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
