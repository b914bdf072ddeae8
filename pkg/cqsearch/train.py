"""REINFORCE training of the search policy on simple query types."""
import json
import logging
import os
import os.path as op
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from sklearn.utils import check_random_state
from tqdm.auto import tqdm

from .compgraph import build
from .policy import PolicyNetwork, forward_step, prepare_graph, save_policy
from .predictor import PerfectPredictor
from .query import existentially_close
from .search import rollout
from .templates import GenerationError, TRAINING_TYPES, instantiate_template

__all__ = [
    "NonFiniteGradientError",
    "TrainConfig",
    "Episode",
    "compute_rewards",
    "discounted_returns",
    "sample_training_query",
    "run_episode",
    "reinforce_loss",
    "reinforce_update",
    "train",
]

logger = logging.getLogger(__name__)

STATE_FILE = "trainer_state.pt"
METRICS_FILE = "metrics.jsonl"
POLICY_FILE = "policy.cqsp"


class NonFiniteGradientError(FloatingPointError):
    """Raised when a policy gradient contains NaN or Inf."""


@dataclass
class TrainConfig(object):
    """Training hyperparameters.

    Attributes
    ----------
    steps : int
        Search steps per episode.

    gamma : float
        Discount factor in (0, 1].

    learning_rate : float

    batch_size : int
        Episodes per update; their losses are averaged.

    n_batches : int

    hidden_dim, mlp_hidden : int
        Policy widths used when a new policy is created.

    query_types : tuple of str
        Simple query types sampled uniformly.

    pe_mode : {"exact", "cwa", "all-one"}

    checkpoint_every : int
        Batches between checkpoints when an output directory is given.

    seed : int or None
    """

    steps: int = 15
    gamma: float = 0.75
    learning_rate: float = 5e-6
    batch_size: int = 4
    n_batches: int = 1000
    hidden_dim: int = 32
    mlp_hidden: int = 128
    query_types: tuple = field(default_factory=lambda: TRAINING_TYPES)
    pe_mode: str = "exact"
    checkpoint_every: int = 100
    seed: int = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]; got {0}".format(self.gamma))
        if self.steps < 1:
            raise ValueError("steps must be at least 1; got {0}".format(self.steps))
        if self.batch_size < 1:
            raise ValueError(
                "batch_size must be at least 1; got {0}".format(self.batch_size)
            )
        self.query_types = tuple(self.query_types)
        unknown = [t for t in self.query_types if t not in TRAINING_TYPES]
        if unknown or not self.query_types:
            raise ValueError(
                "query_types must be a non-empty subset of {0}; "
                "got {1} instead.".format(TRAINING_TYPES, self.query_types)
            )


@dataclass
class Episode(object):
    """One recorded search on a training query.

    ``scores[t]`` is the score of ``assignments[t]``; ``rewards[0]`` is 0 and
    ``rewards[t]`` is the improvement of ``scores[t]`` over every earlier
    score. ``le_labels[t]`` feeds step ``t + 1``.
    """

    query: object
    cg: object
    assignments: list
    scores: np.ndarray
    rewards: np.ndarray
    le_labels: list

    @property
    def best_score(self):
        return float(np.max(self.scores))

    @property
    def n_steps(self):
        return len(self.scores) - 1


def compute_rewards(scores):
    """Improvement of each step over the best earlier score.

    Examples
    --------
    >>> compute_rewards([0.2, 0.1, 0.6, 0.4, 1.0]).tolist()
    [0.0, 0.0, 0.4, 0.0, 0.4]
    """
    scores = np.asarray(scores, dtype=float)
    rewards = np.zeros_like(scores)
    if len(scores) > 1:
        best = np.maximum.accumulate(scores)[:-1]
        rewards[1:] = np.maximum(0.0, scores[1:] - best)
    return rewards


def discounted_returns(rewards, gamma):
    """Reward-to-go ``G[i] = sum_{t > i} gamma**(t - i - 1) * rewards[t]``.

    Parameters
    ----------
    rewards : array-like of shape (T + 1,)
        ``rewards[0]`` is ignored.

    gamma : float

    Returns
    -------
    returns : numpy.ndarray of shape (T,)
    """
    rewards = np.asarray(rewards, dtype=float)
    returns = np.zeros(max(len(rewards) - 1, 0))
    g = 0.0
    for t in range(len(rewards) - 1, 0, -1):
        g = rewards[t] + gamma * g
        returns[t - 1] = g
    return returns


def sample_training_query(g_train, type_tag, random_state=None, max_tries=100):
    """Instantiate a simple query type with at least one answer on ``g_train``."""
    query, _ = instantiate_template(g_train, type_tag, random_state, max_tries)
    return query


def run_episode(policy, query, graph, predictor, config, random_state=None):
    """Search the existential closure of ``query`` and record the episode.

    Parameters
    ----------
    policy : PolicyNetwork

    query : ConjunctiveQuery

    graph : KnowledgeGraph

    predictor : LinkPredictor
        Usually the perfect predictor of the training graph.

    config : TrainConfig

    random_state : int, RandomState instance or None, default=None

    Returns
    -------
    episode : Episode
    """
    cg = build(existentially_close(query), graph, predictor, pe_mode=config.pe_mode)
    out = rollout(policy, cg, predictor, config.steps, random_state)
    scores = np.asarray(out.scores, dtype=float)
    rewards = compute_rewards(scores)
    return Episode(
        query=query,
        cg=cg,
        assignments=out.assignments,
        scores=scores,
        rewards=rewards,
        le_labels=out.le_labels,
    )


def reinforce_loss(policy, episode, gamma):
    """Policy-gradient objective of one episode.

    The recorded transitions are replayed with gradients enabled.
    ``log P[i]`` is the log-probability of ``assignments[i + 1]`` and the loss
    is ``-sum_i gamma**i * log P[i] * G[i]`` with ``G`` the discounted reward
    to go. Rewards are constants.

    Returns
    -------
    loss : torch.Tensor
        Scalar; does not require grad when the episode has no transitions.
    """
    n = episode.n_steps
    if n == 0:
        return torch.zeros(())
    graph = prepare_graph(episode.cg)
    hidden = policy.h_init.unsqueeze(0).expand(graph.n_values, policy.hidden_dim)
    returns = discounted_returns(episode.rewards, gamma)
    terms = []
    for i in range(n):
        hidden, log_probs = forward_step(
            policy, graph, hidden, episode.assignments[i], episode.le_labels[i]
        )
        action = torch.as_tensor(episode.assignments[i + 1], dtype=torch.long)
        log_p = log_probs.gather(1, action.unsqueeze(1)).sum()
        terms.append((gamma ** i) * float(returns[i]) * log_p)
    return -torch.stack(terms).sum()


def _check_gradients(policy):
    bad = [
        name
        for name, p in policy.named_parameters()
        if p.grad is not None and not torch.isfinite(p.grad).all()
    ]
    if bad:
        raise NonFiniteGradientError(
            "non-finite gradient in parameters {0}".format(", ".join(bad))
        )


def reinforce_update(policy, optimizer, episodes, gamma):
    """Average the episode losses and take one optimizer step.

    Parameters
    ----------
    policy : PolicyNetwork

    optimizer : torch.optim.Optimizer

    episodes : list of Episode

    gamma : float

    Returns
    -------
    loss : float

    Raises
    ------
    NonFiniteGradientError
        If any gradient entry is NaN or Inf. The parameters are left
        untouched.
    """
    optimizer.zero_grad()
    loss = torch.stack([reinforce_loss(policy, ep, gamma) for ep in episodes]).mean()
    if loss.requires_grad:
        loss.backward()
        _check_gradients(policy)
        optimizer.step()
    return float(loss.detach())


def _draw_episode(policy, g_train, predictor, config, rng, max_types=10):
    for _ in range(max_types):
        tag = config.query_types[int(rng.randint(len(config.query_types)))]
        try:
            query = sample_training_query(g_train, tag, rng)
        except GenerationError:
            logger.debug("Could not instantiate %s on the training graph", tag)
            continue
        return run_episode(policy, query, g_train, predictor, config, rng)
    raise GenerationError(
        "no training query could be instantiated from {0}".format(config.query_types)
    )


def _save_state(path, policy, optimizer, rng, batch, config):
    torch.save(
        {
            "policy": policy.state_dict(),
            "hidden_dim": policy.hidden_dim,
            "mlp_hidden": policy.mlp_hidden,
            "optimizer": optimizer.state_dict(),
            "rng": rng.get_state(),
            "batch": batch,
            "config": asdict(config),
        },
        path,
    )


def train(
    g_train,
    config=None,
    predictor=None,
    policy=None,
    out_dir=None,
    resume=False,
    progress=False,
):
    """Train a search policy with REINFORCE.

    Each batch draws ``config.batch_size`` training queries of uniformly
    chosen simple types, runs one episode per query and applies one Adam
    update.

    Parameters
    ----------
    g_train : KnowledgeGraph

    config : TrainConfig, default=None

    predictor : LinkPredictor, default=None
        Defaults to the perfect predictor of ``g_train``.

    policy : PolicyNetwork, default=None
        Starting point. A fresh policy is created from the configured widths
        and seed when None.

    out_dir : str, default=None
        If given, append per-batch metrics to ``metrics.jsonl`` and write
        ``policy.cqsp`` plus a resumable ``trainer_state.pt`` every
        ``config.checkpoint_every`` batches and at the end.

    resume : bool, default=False
        Continue from ``out_dir/trainer_state.pt`` if it exists.

    progress : bool, default=False
        Show a progress bar.

    Returns
    -------
    policy : PolicyNetwork

    metrics : list of dict
        One record per batch: ``batch``, ``loss``, ``mean_best_score``,
        ``wall_time``.
    """
    config = TrainConfig() if config is None else config
    rng = check_random_state(config.seed)
    predictor = PerfectPredictor(g_train) if predictor is None else predictor

    state_path = op.join(out_dir, STATE_FILE) if out_dir else None
    state = None
    if resume and state_path and op.exists(state_path):
        state = torch.load(state_path, weights_only=False)
        logger.info("Resuming from %s at batch %d", state_path, state["batch"])

    if policy is None:
        if state is not None:
            policy = PolicyNetwork(state["hidden_dim"], state["mlp_hidden"])
        else:
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(int(rng.randint(np.iinfo(np.int32).max)))
                policy = PolicyNetwork(config.hidden_dim, config.mlp_hidden)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)

    start = 0
    if state is not None:
        policy.load_state_dict(state["policy"])
        optimizer.load_state_dict(state["optimizer"])
        rng.set_state(state["rng"])
        start = state["batch"]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    metrics = []
    tic = time.perf_counter()
    batches = range(start, config.n_batches)
    for batch in tqdm(batches, desc="train") if progress else batches:
        episodes = [
            _draw_episode(policy, g_train, predictor, config, rng)
            for _ in range(config.batch_size)
        ]
        loss = reinforce_update(policy, optimizer, episodes, config.gamma)
        record = {
            "batch": batch,
            "loss": loss,
            "mean_best_score": float(np.mean([ep.best_score for ep in episodes])),
            "wall_time": time.perf_counter() - tic,
        }
        metrics.append(record)
        logger.info(
            "batch %d: loss %.6f, mean best score %.4f",
            batch,
            record["loss"],
            record["mean_best_score"],
        )
        if out_dir:
            with open(op.join(out_dir, METRICS_FILE), "a") as fp:
                fp.write(json.dumps(record) + "\n")
            done = batch + 1
            if done % config.checkpoint_every == 0 or done == config.n_batches:
                save_policy(policy, op.join(out_dir, POLICY_FILE))
                _save_state(state_path, policy, optimizer, rng, done, config)

    return policy, metrics
