"""Recurrent message-passing search policy over computational graphs."""
import io
import logging
import struct
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.utils import check_random_state
from torch import nn

from .utils import LOGIT_FLOOR

__all__ = [
    "CheckpointError",
    "PolicyNetwork",
    "SearchState",
    "prepare_graph",
    "init_state",
    "forward_step",
    "sample_assignment",
    "sampling_probs",
    "serialize",
    "deserialize",
    "save_policy",
    "load_policy",
]

logger = logging.getLogger(__name__)

MAGIC = b"CQSP"
FORMAT_VERSION = 1

GraphTensors = namedtuple(
    "GraphTensors",
    [
        "n_vars",
        "n_entities",
        "n_values",
        "n_terms",
        "n_literals",
        "value_term",
        "edge_value",
        "edge_literal",
        "pe_label",
        "const_values",
    ],
)


class CheckpointError(ValueError):
    """Raised when a serialized policy cannot be decoded."""


class MLP(nn.Module):
    """Two fully connected layers with a ReLU in between."""

    def __init__(self, in_dim, out_dim, hidden_dim=128):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, out_dim)
        for layer in (self.fc1, self.fc2):
            bound = 1.0 / np.sqrt(layer.in_features)
            nn.init.uniform_(layer.weight, -bound, bound)
            nn.init.uniform_(layer.bias, -bound, bound)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class PolicyNetwork(nn.Module):
    """GRU-based message-passing policy.

    Each value vertex keeps a hidden state. One step encodes the states
    together with a flag marking the currently selected values, passes
    messages to the literals and back (both indexed by the potential-edge and
    light-edge labels of every value-literal edge), pools per term and feeds
    the result through a GRU cell. A readout over the value vertices of each
    variable gives the next categorical distribution.

    Parameters
    ----------
    hidden_dim : int, default=128
        Width ``d`` of the hidden states.

    mlp_hidden : int, default=128
        Hidden width of every two-layer MLP.
    """

    def __init__(self, hidden_dim=128, mlp_hidden=128):
        super().__init__()
        d = int(hidden_dim)
        if d < 1 or mlp_hidden < 1:
            raise ValueError("hidden_dim and mlp_hidden must be positive")
        self.hidden_dim = d
        self.mlp_hidden = int(mlp_hidden)
        self.h_init = nn.Parameter(torch.zeros(d))
        self.gru = nn.GRUCell(d, d)
        self.encode = MLP(d + 1, d, mlp_hidden)
        self.value_message = MLP(d, 4 * d, mlp_hidden)
        self.literal_message = MLP(d, 4 * d, mlp_hidden)
        self.value_update = MLP(d, d, mlp_hidden)
        self.term_update = MLP(d, d, mlp_hidden)
        self.readout = MLP(d, 1, mlp_hidden)

    @property
    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())

    def forward(self, graph, hidden, assignment, le_label):
        return forward_step(self, graph, hidden, assignment, le_label)


def prepare_graph(cg):
    """Convert the index arrays of a computational graph to tensors."""
    n_var_values = cg.n_vars * cg.n_entities
    return GraphTensors(
        n_vars=cg.n_vars,
        n_entities=cg.n_entities,
        n_values=cg.n_values,
        n_terms=cg.n_terms,
        n_literals=cg.n_literals,
        value_term=torch.as_tensor(cg.value_term, dtype=torch.long),
        edge_value=torch.as_tensor(cg.edge_value, dtype=torch.long),
        edge_literal=torch.as_tensor(cg.edge_literal, dtype=torch.long),
        pe_label=torch.as_tensor(cg.pe_label.astype(np.int64)),
        const_values=torch.arange(n_var_values, cg.n_values, dtype=torch.long),
    )


@dataclass
class SearchState(object):
    """Per-episode search state.

    Attributes
    ----------
    hidden : torch.Tensor of shape (n_values, d)

    assignment : numpy.ndarray of int
        Current value of every variable.

    step : int
    """

    hidden: torch.Tensor
    assignment: np.ndarray
    step: int = 0


def init_state(graph, policy, random_state=None):
    """Initial search state: every hidden row is ``h_init`` and values are uniform.

    Parameters
    ----------
    graph : GraphTensors or ComputationalGraph

    policy : PolicyNetwork

    random_state : int, RandomState instance or None, default=None

    Returns
    -------
    state : SearchState
    """
    rng = check_random_state(random_state)
    hidden = policy.h_init.unsqueeze(0).expand(graph.n_values, policy.hidden_dim)
    assignment = rng.randint(graph.n_entities, size=graph.n_vars).astype(np.int64)
    return SearchState(hidden=hidden, assignment=assignment, step=0)


def _scatter_max(src, index, n_rows):
    out = src.new_zeros((n_rows, src.shape[1]))
    return out.scatter_reduce(
        0, index.unsqueeze(1).expand_as(src), src, reduce="amax", include_self=False
    )


def forward_step(policy, graph, hidden, assignment, le_label):
    """Run one message-passing step.

    Parameters
    ----------
    policy : PolicyNetwork

    graph : GraphTensors

    hidden : torch.Tensor of shape (n_values, d)

    assignment : array-like of int
        Current value of every variable.

    le_label : array-like of {0, 1}
        Light-edge label of every value-literal edge for ``assignment``.

    Returns
    -------
    hidden : torch.Tensor of shape (n_values, d)
        Updated hidden states.

    log_probs : torch.Tensor of shape (n_vars, n_entities)
        Log-probabilities of the next value of every variable. Each row is a
        softmax of logits clipped to ``[-100, 0]``, so every probability is at
        least ``exp(-100) / n_entities``.
    """
    d = policy.hidden_dim
    V = graph.n_entities
    dtype = hidden.dtype

    selected = torch.zeros(graph.n_values, dtype=dtype)
    if graph.n_vars:
        rows = torch.arange(graph.n_vars) * V
        selected[rows + torch.as_tensor(np.asarray(assignment), dtype=torch.long)] = 1.0
    selected[graph.const_values] = 1.0
    x = policy.encode(torch.cat([hidden, selected.unsqueeze(1)], dim=1))

    label = 2 * graph.pe_label + torch.as_tensor(
        np.asarray(le_label, dtype=np.int64), dtype=torch.long
    )
    out_messages = policy.value_message(x).view(graph.n_values, 4, d)
    sent = out_messages[graph.edge_value, label]
    literal = _scatter_max(sent, graph.edge_literal, graph.n_literals)

    back_messages = policy.literal_message(literal).view(graph.n_literals, 4, d)
    received = back_messages[graph.edge_literal, label]
    y = _scatter_max(received, graph.edge_value, graph.n_values)

    z_value = policy.value_update(x + y) + x
    pooled = _scatter_max(z_value, graph.value_term, graph.n_terms)
    z_term = policy.term_update(pooled)

    hidden = policy.gru(z_value + z_term[graph.value_term], hidden)

    n_var_values = graph.n_vars * V
    logits = policy.readout(hidden[:n_var_values]).view(graph.n_vars, V)
    logits = logits - logits.max(dim=1, keepdim=True).values
    logits = logits.clamp(LOGIT_FLOOR, 0.0)
    return hidden, torch.log_softmax(logits, dim=1)


def sampling_probs(log_probs):
    """Detached float64 probabilities of ``log_probs``.

    Floored values such as ``exp(-100) / n`` underflow to zero in float32 for
    a few dozen entities; in float64 they stay positive.
    """
    return log_probs.detach().to(torch.float64).exp()


def sample_assignment(log_probs, generator=None):
    """Draw one value per variable, independently.

    Parameters
    ----------
    log_probs : torch.Tensor of shape (n_vars, n_entities)

    generator : torch.Generator, default=None

    Returns
    -------
    assignment : numpy.ndarray of int

    log_prob : torch.Tensor
        Sum of the log-probabilities of the drawn values.
    """
    if log_probs.shape[0] == 0:
        return np.empty(0, dtype=np.int64), log_probs.new_zeros(())
    draws = torch.multinomial(sampling_probs(log_probs), 1, generator=generator)
    log_prob = log_probs.gather(1, draws).sum()
    return draws.squeeze(1).numpy().astype(np.int64), log_prob


def serialize(policy):
    """Encode the weights of a policy as bytes.

    The layout is a header (magic ``CQSP``, format version, ``hidden_dim``,
    ``mlp_hidden``, tensor count) followed by one record per parameter: name,
    shape and little-endian float32 data in row-major order.

    Parameters
    ----------
    policy : PolicyNetwork

    Returns
    -------
    blob : bytes
    """
    state = policy.state_dict()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(
        struct.pack(
            "<IIII", FORMAT_VERSION, policy.hidden_dim, policy.mlp_hidden, len(state)
        )
    )
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().cpu().numpy().astype("<f4")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", array.ndim))
        buf.write(struct.pack("<{0}I".format(array.ndim), *array.shape))
        buf.write(np.ascontiguousarray(array).tobytes())
    return buf.getvalue()


class _Reader(object):
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                "policy checkpoint is truncated at byte {0}".format(len(self.blob))
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(blob):
    """Decode bytes produced by :func:`serialize`.

    Parameters
    ----------
    blob : bytes

    Returns
    -------
    policy : PolicyNetwork

    Raises
    ------
    CheckpointError
        On a bad magic number, an unsupported version, truncated data or
        tensors that do not fit the declared dimensions.
    """
    reader = _Reader(bytes(blob))
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a policy checkpoint (bad magic number)")
    version, hidden_dim, mlp_hidden, n_tensors = reader.unpack("<IIII")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            "unsupported checkpoint version {0}; expected {1}".format(
                version, FORMAT_VERSION
            )
        )
    policy = PolicyNetwork(hidden_dim=hidden_dim, mlp_hidden=mlp_hidden)
    expected = policy.state_dict()
    state = {}
    for _ in range(n_tensors):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack("<{0}I".format(ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        if name not in expected or tuple(expected[name].shape) != tuple(shape):
            raise CheckpointError(
                "tensor {0!r} with shape {1} does not fit the declared "
                "dimensions".format(name, shape)
            )
        state[name] = torch.from_numpy(data.astype(np.float32))
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError("checkpoint lacks tensors {0}".format(sorted(missing)))
    if reader.pos != len(reader.blob):
        raise CheckpointError("trailing bytes after the last tensor")
    policy.load_state_dict(state)
    return policy


def save_policy(policy, path):
    """Write a serialized policy to ``path``."""
    with open(path, "wb") as fp:
        fp.write(serialize(policy))
    logger.info("Saved policy to %s", path)


def load_policy(path):
    """Read a policy written by :func:`save_policy`."""
    with open(path, "rb") as fp:
        return deserialize(fp.read())
