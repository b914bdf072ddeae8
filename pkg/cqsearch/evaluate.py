"""QAC/QAR metrics, checkpointed evaluation runs and step-time profiling."""
import hashlib
import json
import logging
import os
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import spearmanr
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from tqdm.auto import tqdm

from .compgraph import build
from .oracle import oracle_solve
from .query import as_dnf, bind_query, existentially_close, format_query, ground
from .search import search_graph, solve_qac, solve_qar
from .utils import spawn_seeds

__all__ = [
    "MetricsReport",
    "f1_qac",
    "f1_qar",
    "evaluate_qac",
    "evaluate_qar",
    "oracle_predictions_qac",
    "oracle_predictions_qar",
    "dataset_statistics",
    "timing_profile",
    "fit_step_time_scaling",
]

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport(object):
    """Aggregate classification quality.

    Attributes
    ----------
    f1, precision, recall : float

    easy_recall, hard_recall : float or None
        Recall restricted to easy and hard positives; None when there are
        none.

    per_arity : dict
        ``k -> {"f1", "precision", "recall", "n"}`` for QAR reports.

    counts : dict
        Raw counts behind the ratios.

    n_instances : int

    n_exc : int
        Instances whose evaluation ran out of time.
    """

    f1: float
    precision: float
    recall: float
    easy_recall: float = None
    hard_recall: float = None
    per_arity: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    n_instances: int = 0
    n_exc: int = 0

    def to_dict(self):
        data = asdict(self)
        data["per_arity"] = {str(k): v for k, v in self.per_arity.items()}
        return data

    def to_json(self, path):
        with open(path, "w") as fp:
            json.dump(self.to_dict(), fp, indent=2, sort_keys=True)

    def to_text(self):
        """Aligned table with one column per arity and a total column."""
        columns = ["k={0}".format(k) for k in sorted(self.per_arity)] + ["total"]
        rows = ["f1", "precision", "recall"]
        table = pd.DataFrame(index=rows, columns=columns, dtype=float)
        for k in sorted(self.per_arity):
            for row in rows:
                table.loc[row, "k={0}".format(k)] = self.per_arity[k][row]
        for row in rows:
            table.loc[row, "total"] = getattr(self, row)
        for name in ("easy_recall", "hard_recall"):
            value = getattr(self, name)
            table.loc[name, "total"] = np.nan if value is None else value
        text = table.to_string(float_format=lambda v: "{0:.4f}".format(v), na_rep="-")
        footer = "instances: {0}  timeouts: {1}".format(self.n_instances, self.n_exc)
        return text + "\n" + footer


def _ratio(num, den):
    return float(num) / den if den else 0.0


def _harmonic(precision, recall):
    if precision <= 0 or recall <= 0:
        return 0.0
    return 2.0 / (1.0 / precision + 1.0 / recall)


def _positive_set(prediction, instance):
    candidates = set(instance.correct) | set(instance.wrong)
    if isinstance(prediction, Mapping):
        missing = candidates - set(prediction)
        if missing:
            raise ValueError(
                "predictions do not cover candidates {0}".format(sorted(missing))
            )
        return {c for c in candidates if prediction[c]}
    return set(prediction) & candidates


def f1_qac(predictions, instances, n_exc=0):
    """Macro-averaged F1 of QAC predictions.

    Per instance, with ``A`` the candidates predicted positive,
    ``F1 = 2|A & C| / (2|A & C| + |A & W| + |C - A|)``.

    Parameters
    ----------
    predictions : list of mapping or set
        Per instance, a mapping from every candidate to a bool, or the set of
        candidates predicted positive.

    instances : list of QACInstance

    n_exc : int, default=0
        Number of timed-out instances, reported as is.

    Returns
    -------
    report : MetricsReport

    Examples
    --------
    >>> from cqsearch.benchgen import QACInstance
    >>> inst = QACInstance("q", list("abcde"), list("vwxyz"))
    >>> round(f1_qac([set("abcdv")], [inst]).f1, 12)
    0.8
    """
    if len(predictions) != len(instances):
        raise ValueError(
            "got {0} predictions for {1} instances".format(
                len(predictions), len(instances)
            )
        )
    f1s, precisions, recalls = [], [], []
    counts = dict.fromkeys(["tp", "fp", "fn", "easy", "easy_tp", "hard", "hard_tp"], 0)
    for prediction, inst in zip(predictions, instances):
        positive = _positive_set(prediction, inst)
        correct = set(inst.correct)
        tp = len(positive & correct)
        fp = len(positive & set(inst.wrong))
        fn = len(correct - positive)
        f1s.append(_ratio(2 * tp, 2 * tp + fp + fn) if correct or positive else 1.0)
        precisions.append(_ratio(tp, tp + fp))
        recalls.append(_ratio(tp, tp + fn))
        hard = set(inst.hard)
        counts["tp"] += tp
        counts["fp"] += fp
        counts["fn"] += fn
        counts["hard"] += len(correct & hard)
        counts["hard_tp"] += len(positive & correct & hard)
        counts["easy"] += len(correct - hard)
        counts["easy_tp"] += len((positive & correct) - hard)
    n = len(instances)
    summary = {
        "f1": float(np.mean(f1s)) if n else 0.0,
        "precision": float(np.mean(precisions)) if n else 0.0,
        "recall": float(np.mean(recalls)) if n else 0.0,
    }
    return MetricsReport(
        **summary,
        easy_recall=(
            _ratio(counts["easy_tp"], counts["easy"]) if counts["easy"] else None
        ),
        hard_recall=(
            _ratio(counts["hard_tp"], counts["hard"]) if counts["hard"] else None
        ),
        per_arity={1: dict(summary, n=n)},
        counts=counts,
        n_instances=n,
        n_exc=n_exc,
    )


def _answer_holds(query, answer, g_tilde):
    grounded = ground(as_dnf(query), tuple(answer))
    return bool(oracle_solve(grounded, g_tilde, mode="boolean").answers)


def _qar_tally(predictions, instances, g_tilde):
    tally = {"positive": 0, "predicted": 0, "correct": 0}
    for prediction, inst in zip(predictions, instances):
        tally["positive"] += bool(inst.answers)
        if prediction is None:
            continue
        tally["predicted"] += 1
        tally["correct"] += _answer_holds(inst.query, prediction, g_tilde)
    precision = _ratio(tally["correct"], tally["predicted"])
    recall = _ratio(tally["correct"], tally["positive"])
    return precision, recall, tally


def f1_qar(predictions, instances, g_tilde, n_exc=0):
    """F1 of QAR predictions.

    A returned tuple counts as correct iff the grounded query holds on
    ``g_tilde``. Precision divides correct answers by returned answers,
    recall by instances that have an answer. Easy and hard recall split the
    instances by whether they have an answer on the observable graph.

    Parameters
    ----------
    predictions : list of tuple or None

    instances : list of QARInstance

    g_tilde : KnowledgeGraph

    n_exc : int, default=0

    Returns
    -------
    report : MetricsReport
    """
    if len(predictions) != len(instances):
        raise ValueError(
            "got {0} predictions for {1} instances".format(
                len(predictions), len(instances)
            )
        )
    precision, recall, counts = _qar_tally(predictions, instances, g_tilde)

    per_arity = {}
    arities = [inst.arity for inst in instances]
    for k in sorted(set(arities)):
        idx = [i for i, a in enumerate(arities) if a == k]
        p, r, _ = _qar_tally(
            [predictions[i] for i in idx], [instances[i] for i in idx], g_tilde
        )
        per_arity[k] = {
            "f1": _harmonic(p, r),
            "precision": p,
            "recall": r,
            "n": len(idx),
        }

    def split_recall(flag):
        idx = [i for i, inst in enumerate(instances) if inst.has_trivial == flag]
        if not idx:
            return None
        _, r, _ = _qar_tally(
            [predictions[i] for i in idx], [instances[i] for i in idx], g_tilde
        )
        return r

    return MetricsReport(
        f1=_harmonic(precision, recall),
        precision=precision,
        recall=recall,
        easy_recall=split_recall(True),
        hard_recall=split_recall(False),
        per_arity=per_arity,
        counts=counts,
        n_instances=len(instances),
        n_exc=n_exc,
    )


def _instance_hash(kind, instance, settings):
    payload = {"kind": kind, "instance": instance.to_dict(), "settings": settings}
    return hashlib.md5(
        json.dumps(payload, sort_keys=True, ensure_ascii=True, default=str).encode()
    ).hexdigest()


def _checkpointed(workdir, force_refresh, key, compute):
    """Load a cached per-instance result or compute and store it."""
    if workdir is None:
        return compute()
    path = os.path.join(workdir, key + ".json")
    if not force_refresh and os.path.exists(path):
        with open(path) as fp:
            return json.load(fp)
    result = compute()
    os.makedirs(workdir, exist_ok=True)
    with open(path, "w") as fp:
        json.dump(result, fp)
    return result


def _qac_one(policy, inst, graph, predictor, settings, seed, timeout):
    deadline = None if timeout is None else time.perf_counter() + timeout
    rng = np.random.RandomState(seed)
    prediction = {}
    timed_out = False
    for cand in list(inst.correct) + list(inst.wrong):
        remaining = None if deadline is None else deadline - time.perf_counter()
        if remaining is not None and remaining <= 0:
            timed_out = True
            prediction[cand] = False
            continue
        prediction[cand] = bool(
            solve_qac(
                policy,
                inst.query,
                (cand,),
                graph,
                predictor,
                steps=settings["steps"],
                random_state=rng,
                pe_mode=settings["pe_mode"],
                timeout=remaining,
            )
        )
    if deadline is not None and time.perf_counter() > deadline:
        timed_out = True
    return {"prediction": prediction, "timed_out": timed_out}


def _qar_one(policy, inst, graph, predictor, settings, seed, timeout):
    tic = time.perf_counter()
    answer = solve_qar(
        policy,
        inst.query,
        graph,
        predictor,
        steps=settings["steps"],
        random_state=np.random.RandomState(seed),
        pe_mode=settings["pe_mode"],
        timeout=timeout,
    )
    timed_out = timeout is not None and time.perf_counter() - tic > timeout
    if timed_out:
        answer = None
    return {
        "prediction": None if answer is None else list(answer),
        "timed_out": timed_out,
    }


def _job(kind, worker, inst, seed, context, settings, workdir, force_refresh):
    policy, graph, predictor = context
    key = _instance_hash(kind, inst, dict(settings, seed=seed))
    return _checkpointed(
        workdir,
        force_refresh,
        key,
        lambda: worker(
            policy, inst, graph, predictor, settings, seed, settings["timeout"]
        ),
    )


def _run(kind, worker, instances, context, settings, random_state, **run_kwargs):
    seeds = spawn_seeds(random_state, len(instances))
    workdir = run_kwargs.get("workdir")
    force_refresh = run_kwargs.get("force_refresh", False)
    pairs = list(zip(instances, seeds))
    if run_kwargs.get("progress"):
        pairs = tqdm(pairs, desc="evaluate-" + kind)
    if run_kwargs.get("serialize", True):
        results = [
            _job(kind, worker, inst, seed, context, settings, workdir, force_refresh)
            for inst, seed in pairs
        ]
    else:
        parallel = Parallel(n_jobs=run_kwargs.get("n_jobs", 1))
        results = parallel(
            delayed(_job)(
                kind, worker, inst, seed, context, settings, workdir, force_refresh
            )
            for inst, seed in pairs
        )
    n_exc = sum(r["timed_out"] for r in results)
    if n_exc:
        logger.warning("%d of %d instances timed out", n_exc, len(instances))
    return results, n_exc


def evaluate_qac(
    policy,
    instances,
    graph,
    predictor,
    steps=20,
    pe_mode="exact",
    timeout=None,
    random_state=0,
    n_jobs=1,
    serialize=True,
    workdir=None,
    force_refresh=False,
    progress=False,
):
    """Classify every candidate of every QAC instance and score the result.

    Parameters
    ----------
    policy : PolicyNetwork

    instances : list of QACInstance

    graph : KnowledgeGraph
        Observable graph.

    predictor : LinkPredictor

    steps : int, default=20

    pe_mode : {"exact", "cwa", "all-one"}, default="exact"

    timeout : float, default=None
        Wall-clock limit per instance. Candidates left when it runs out are
        predicted negative and the instance is counted in ``n_exc``.

    random_state : int, default=0
        Parent seed; every instance gets its own derived seed.

    n_jobs : int, default=1

    serialize : bool, default=True
        If True, do not use joblib.Parallel.

    workdir : str, default=None
        Directory for per-instance result files keyed by an md5 hash of the
        instance and the search settings.

    force_refresh : bool, default=False
        Recompute results that already exist in ``workdir``.

    progress : bool, default=False

    Returns
    -------
    report : MetricsReport

    predictions : list of dict
    """
    results, n_exc = _run(
        "qac",
        _qac_one,
        instances,
        (policy, graph, predictor),
        {"steps": steps, "pe_mode": pe_mode, "timeout": timeout},
        random_state,
        n_jobs=n_jobs,
        serialize=serialize,
        workdir=workdir,
        force_refresh=force_refresh,
        progress=progress,
    )
    predictions = [r["prediction"] for r in results]
    report = f1_qac(predictions, instances, n_exc=n_exc)
    logger.info("QAC F1 %.4f over %d instances", report.f1, len(instances))
    return report, predictions


def evaluate_qar(
    policy,
    instances,
    graph,
    g_tilde,
    predictor,
    steps=200,
    pe_mode="exact",
    timeout=None,
    random_state=0,
    n_jobs=1,
    serialize=True,
    workdir=None,
    force_refresh=False,
    progress=False,
):
    """Retrieve an answer for every QAR instance and score the result.

    Parameters are as in :func:`evaluate_qac`; ``g_tilde`` is used to verify
    returned answers. A search that exceeds ``timeout`` counts as returning
    None.

    Returns
    -------
    report : MetricsReport

    predictions : list of tuple or None
    """
    results, n_exc = _run(
        "qar",
        _qar_one,
        instances,
        (policy, graph, predictor),
        {"steps": steps, "pe_mode": pe_mode, "timeout": timeout},
        random_state,
        n_jobs=n_jobs,
        serialize=serialize,
        workdir=workdir,
        force_refresh=force_refresh,
        progress=progress,
    )
    predictions = [
        None if r["prediction"] is None else tuple(r["prediction"]) for r in results
    ]
    report = f1_qar(predictions, instances, g_tilde, n_exc=n_exc)
    logger.info("QAR F1 %.4f over %d instances", report.f1, len(instances))
    return report, predictions


def oracle_predictions_qac(instances, graph, timeout=None):
    """Classical evaluation of QAC candidates on the observable graph.

    Returns
    -------
    predictions : list of dict

    n_exc : int
    """
    predictions, n_exc = [], 0
    for inst in instances:
        prediction, exc = {}, False
        for cand in list(inst.correct) + list(inst.wrong):
            grounded = ground(as_dnf(inst.query), (cand,))
            result = oracle_solve(grounded, graph, mode="boolean", timeout=timeout)
            exc |= result.timed_out
            prediction[cand] = bool(result.answers)
        predictions.append(prediction)
        n_exc += exc
    return predictions, n_exc


def oracle_predictions_qar(instances, graph, timeout=None):
    """Classical retrieval of one answer per QAR instance on the observable graph.

    Returns
    -------
    predictions : list of tuple or None

    n_exc : int
    """
    predictions, n_exc = [], 0
    for inst in instances:
        result = oracle_solve(inst.query, graph, mode="first", timeout=timeout)
        n_exc += result.timed_out
        predictions.append(min(result.answers) if result.answers else None)
    return predictions, n_exc


def dataset_statistics(instances):
    """Answer composition of a benchmark split.

    Returns
    -------
    stats : dict
        For QAC splits the proportions ``easy``, ``hard`` and ``neg`` of all
        candidates; for QAR splits the counts of instances with and without
        an answer on the observable graph and the mean arity.
    """
    if not instances:
        return {"n_instances": 0}
    if hasattr(instances[0], "correct"):
        n_hard = sum(len(inst.hard) for inst in instances)
        n_correct = sum(len(inst.correct) for inst in instances)
        n_wrong = sum(len(inst.wrong) for inst in instances)
        total = n_correct + n_wrong
        return {
            "n_instances": len(instances),
            "easy": _ratio(n_correct - n_hard, total),
            "hard": _ratio(n_hard, total),
            "neg": _ratio(n_wrong, total),
        }
    trivial = sum(bool(inst.has_trivial) for inst in instances)
    return {
        "n_instances": len(instances),
        "trivial": trivial,
        "non_trivial": len(instances) - trivial,
        "mean_arity": float(np.mean([inst.arity for inst in instances])),
    }


def timing_profile(
    policy, queries, graph, predictor, steps=20, pe_mode="exact", random_state=0
):
    """Average search step time per query.

    Parameters
    ----------
    policy : PolicyNetwork

    queries : list of ConjunctiveQuery or DNFQuery
        Free variables are existentially closed.

    graph : KnowledgeGraph

    predictor : LinkPredictor

    steps : int, default=20

    pe_mode : str, default="exact"

    random_state : int, default=0

    Returns
    -------
    profile : pandas.DataFrame
        One row per query with ``n_vars``, ``n_literals``, ``n_consts``,
        ``n_entities``, ``n_edges``, ``step_time`` and ``normalized`` (step
        time divided by ``n_vars + 2 * n_literals``).
    """
    rows = []
    for i, query in enumerate(queries):
        for cq in as_dnf(query).disjuncts:
            closed = existentially_close(cq)
            bound = bind_query(closed, graph)
            cg = build(bound, graph, predictor, pe_mode=pe_mode)
            result = search_graph(
                policy, cg, predictor, steps=steps, random_state=random_state
            )
            factor = bound.n_vars + 2 * len(bound.literals)
            rows.append(
                {
                    "query": i,
                    "text": format_query(closed),
                    "n_vars": bound.n_vars,
                    "n_literals": len(bound.literals),
                    "n_consts": bound.n_consts,
                    "n_entities": graph.n_entities,
                    "n_edges": cg.n_edges,
                    "step_time": result.step_time,
                    "normalized": result.step_time / factor if factor else np.nan,
                }
            )
    return pd.DataFrame(rows)


def fit_step_time_scaling(x, y):
    """Linear fit of step time against a size measure.

    Returns
    -------
    fit : dict
        ``slope``, ``intercept``, ``r2`` and the Spearman ``rho`` of the
        relationship.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    model = LinearRegression().fit(x, y)
    rho = spearmanr(x.ravel(), y).correlation if len(y) > 2 else np.nan
    return {
        "slope": float(model.coef_[0]),
        "intercept": float(model.intercept_),
        "r2": float(r2_score(y, model.predict(x))),
        "rho": float(rho),
    }
