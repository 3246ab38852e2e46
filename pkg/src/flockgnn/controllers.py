"""Decentralized neural controllers over time-varying graphs.

Both controllers consume a per-agent feature row and the communication
graph, and both respect the one-exchange-per-step budget: information from
k hops away is always k steps old.  The building block is the delayed
shift product

    P_k(t) = S(t) S(t-1) ... S(t-k+1) X(t-k),      P_0(t) = X(t),

maintained incrementally as P_k(t) = S(t) @ P_{k-1}(t-1), with zero
matrices standing in for anything before the start of the trajectory.

The delayed-aggregation network stacks the products of the feature history
into one row per agent and applies a shared feedforward network.  The
recurrent network keeps a hidden graph signal z(t) updated through
time-delayed graph convolutions of the feature history and of the hidden
history, with a third convolution reading the control action out of the
hidden state:

    z(t) = tanh( sum_k P_k(t; X) A_k + sum_k Q_k(t) B_k + bias )
    u(t) = sum_k R_k(t) C_k + bias_out

where Q_k(t) carries z(t-1-k) and R_k(t) carries z(t-k), each shifted by
the same k-factor GSO product as P_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm_graph import GraphSnapshot, graph_shift


def _nonlinearity(name):
    if name == "tanh":
        return np.tanh, lambda out: 1.0 - out**2
    if name == "relu":
        return lambda x: np.maximum(x, 0.0), lambda out: (out > 0).astype(np.float64)
    raise ValueError(f"unknown nonlinearity: {name!r}")


# ---------------------------------------------------------------------------
# delayed aggregation


class HistoryBuffer:
    """Running delayed shift products of the last ``n_taps`` steps.

    push() consumes the newest feature matrix and graph snapshot; block k
    then equals the k-times-shifted feature matrix from k steps ago.  The
    raw (features, snapshot) pairs are kept alongside for inspection and
    for the dense-product oracle in tests.
    """

    def __init__(self, n_taps: int, n_agents: int, n_features: int):
        if n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        self.n_taps = n_taps
        self.n_agents = n_agents
        self.n_features = n_features
        self.blocks = [np.zeros((n_agents, n_features)) for _ in range(n_taps)]
        self.pairs = []  # newest first, at most n_taps entries

    def push(self, features, snapshot: GraphSnapshot):
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.n_agents, self.n_features):
            raise ValueError(
                f"features must have shape ({self.n_agents}, {self.n_features})"
            )
        shifted = [graph_shift(snapshot, block) for block in self.blocks[:-1]]
        self.blocks = [x] + shifted
        self.pairs = [(x, snapshot)] + self.pairs[: self.n_taps - 1]


@dataclass(frozen=True)
class AggregationSequence:
    """Per-agent stack of the delayed shift products, one (N, K*F) matrix."""

    values: np.ndarray
    n_taps: int
    n_features: int


def dagnn_aggregate(buffer: HistoryBuffer) -> AggregationSequence:
    values = np.concatenate(buffer.blocks, axis=1)
    return AggregationSequence(values, buffer.n_taps, buffer.n_features)


# ---------------------------------------------------------------------------
# per-node feedforward network


@dataclass
class DAGNNParams:
    """Shared per-node network: weights[l] maps layer l-1 to layer l.

    Hidden layers use ``hidden_nonlinearity``; the output layer is linear.
    """

    weights: list
    biases: list
    hidden_nonlinearity: str = "relu"

    def names(self):
        return [f"w{l}" for l in range(len(self.weights))] + [
            f"b{l}" for l in range(len(self.biases))
        ]

    def arrays(self):
        out = {f"w{l}": w for l, w in enumerate(self.weights)}
        out.update({f"b{l}": b for l, b in enumerate(self.biases)})
        return out

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]


def dagnn_init(rng, layer_dims, hidden_nonlinearity="relu") -> DAGNNParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for each layer."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-lim, lim, (fan_out, fan_in)))
        biases.append(rng.uniform(-lim, lim, fan_out))
    return DAGNNParams(weights, biases, hidden_nonlinearity)


def dagnn_forward(z, params: DAGNNParams, cache=False):
    """Apply the shared network to one aggregation row or any batch of rows.

    ``z`` has shape (..., K*F); the result has shape (..., out_dim).
    Saturation is the caller's job.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.in_dim:
        raise ValueError(f"expected trailing dim {params.in_dim}, got {z.shape[-1]}")
    act, _ = _nonlinearity(params.hidden_nonlinearity)
    outputs = [z]
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ w.T + b
        if layer < len(params.weights) - 1:
            z = act(z)
        outputs.append(z)
    if not cache:
        return z
    return z, outputs


def dagnn_backward(gout, params: DAGNNParams, outputs):
    """Gradients of sum(gout * dagnn_forward(z)) w.r.t. weights, biases and z."""
    _, act_grad = _nonlinearity(params.hidden_nonlinearity)
    n_layers = len(params.weights)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    g = np.asarray(gout, dtype=np.float64)
    for layer in reversed(range(n_layers)):
        layer_in = outputs[layer]
        g_w[layer] = np.einsum("...o,...i->oi", g, layer_in)
        g_b[layer] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ params.weights[layer]
        if layer > 0:
            g = g * act_grad(outputs[layer])
    grads = {f"w{l}": g_w[l] for l in range(n_layers)}
    grads.update({f"b{l}": g_b[l] for l in range(n_layers)})
    return grads, g


# ---------------------------------------------------------------------------
# time-delayed graph filters


def graph_filter(signal_history, gso_history, taps):
    """Time-delayed graph convolution.

    ``signal_history[k]`` is the signal from k steps ago (index 0 = now) and
    ``gso_history[k]`` the snapshot from k steps ago; histories shorter than
    the tap count are implicitly zero-padded.  Tap k weights the signal from
    k steps ago shifted through the k most recent graphs, applied as nested
    one-hop exchanges rather than a dense operator product.
    """
    taps = np.asarray(taps, dtype=np.float64)
    n_taps = taps.shape[0]
    out = None
    for k in range(min(n_taps, len(signal_history))):
        term = np.asarray(signal_history[k], dtype=np.float64)
        for j in range(k - 1, -1, -1):  # oldest exchange first
            term = graph_shift(gso_history[j], term)
        contrib = term @ taps[k]
        out = contrib if out is None else out + contrib
    if out is None:
        raise ValueError("empty signal history")
    return out


# ---------------------------------------------------------------------------
# graph recurrent controller


@dataclass
class GRNNParams:
    """Filter tap sets of the recurrent controller.

    taps_in:     (K, F, H)  feature history -> hidden
    taps_hidden: (K, H, H)  hidden history  -> hidden
    taps_out:    (K, H, G)  hidden history  -> control
    """

    taps_in: np.ndarray
    taps_hidden: np.ndarray
    taps_out: np.ndarray
    bias_hidden: np.ndarray
    bias_out: np.ndarray
    nonlinearity: str = "tanh"

    def names(self):
        return ("taps_in", "taps_hidden", "taps_out", "bias_hidden", "bias_out")

    def arrays(self):
        return {name: getattr(self, name) for name in self.names()}

    @property
    def n_taps(self):
        return self.taps_in.shape[0]

    @property
    def hidden_dim(self):
        return self.taps_in.shape[2]


def grnn_init(rng, n_taps, n_features, hidden_dim, out_dim=2) -> GRNNParams:
    lim_in = 1.0 / np.sqrt(n_features)
    lim_h = 1.0 / np.sqrt(hidden_dim)
    return GRNNParams(
        taps_in=rng.uniform(-lim_in, lim_in, (n_taps, n_features, hidden_dim)),
        taps_hidden=rng.uniform(-lim_h, lim_h, (n_taps, hidden_dim, hidden_dim)),
        taps_out=rng.uniform(-lim_h, lim_h, (n_taps, hidden_dim, out_dim)),
        bias_hidden=rng.uniform(-lim_in, lim_in, hidden_dim),
        bias_out=rng.uniform(-lim_h, lim_h, out_dim),
    )


@dataclass
class HiddenState:
    """Hidden graph signal plus the running shift products the delayed
    filters need: feature products (k steps ago, k shifts), hidden products
    over z(t-1-k), and readout products over z(t-k)."""

    values: np.ndarray            # (N, H), z(t); zeros before the first step
    feature_products: list       # P_k(t; X)
    hidden_products: list        # Q_k(t), signals z(t-1-k)
    readout_products: list       # R_k(t), signals z(t-k)


def grnn_initial_state(n_taps, n_agents, n_features, hidden_dim) -> HiddenState:
    zeros_f = [np.zeros((n_agents, n_features)) for _ in range(n_taps)]
    zeros_h = [np.zeros((n_agents, hidden_dim)) for _ in range(n_taps)]
    return HiddenState(
        values=np.zeros((n_agents, hidden_dim)),
        feature_products=zeros_f,
        hidden_products=[z.copy() for z in zeros_h],
        readout_products=[z.copy() for z in zeros_h],
    )


def grnn_step(features, hidden: HiddenState, snapshot: GraphSnapshot,
              params: GRNNParams) -> HiddenState:
    """Advance the hidden state one step using the newest snapshot.

    All product buffers are shifted through the new graph (one exchange),
    the newest signals are inserted at tap 0, and the hidden state updates
    through the two delayed filters and the pointwise nonlinearity.
    """
    x = np.asarray(features, dtype=np.float64)
    k = params.n_taps
    act, _ = _nonlinearity(params.nonlinearity)
    feat = [x] + [graph_shift(snapshot, p) for p in hidden.feature_products[: k - 1]]
    hid = [hidden.values] + [graph_shift(snapshot, p) for p in hidden.hidden_products[: k - 1]]
    pre = params.bias_hidden + sum(feat[i] @ params.taps_in[i] for i in range(k))
    pre = pre + sum(hid[i] @ params.taps_hidden[i] for i in range(k))
    z = act(pre)
    readout = [z] + [graph_shift(snapshot, p) for p in hidden.readout_products[: k - 1]]
    return HiddenState(z, feat, hid, readout)


def grnn_output(hidden: HiddenState, params: GRNNParams):
    """Control action read out of the hidden history; linear, saturation is
    the caller's job."""
    k = params.n_taps
    out = params.bias_out + sum(
        hidden.readout_products[i] @ params.taps_out[i] for i in range(k)
    )
    return out
