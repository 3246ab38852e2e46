"""Imitation learning of the decentralized controllers.

Training follows the expert-relabeling recipe: roll out trajectories,
record the centralized expert action at every step, and regress the
controller output onto those labels with an L1 loss.  Parameter gradients
come from backpropagation through a window of consecutive steps: the
window's feature history is aggregated (and, in synthetic-perception mode,
the encoder is unrolled once per window step), the per-node network runs
once at the window's final step, and the loss is taken there.  Windows are
non-overlapping segments of the trajectory.  For the recurrent controller
the hidden state entering a window is computed in a forward sweep with the
current parameters and then frozen, so gradients truncate cleanly at
window boundaries.

Dataset growth uses DAGGer: an initial phase of pure expert rollouts,
then extra rollouts executing a per-step mixture of expert and learner
actions (expert with probability beta), labeled by the expert throughout.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import controllers, perception
from .controllers import GRNNParams, HiddenState
from .dynamics import SimConfig
from .expert import ExpertConfig
from .perception import EncoderConfig, EncoderParams, ViewConfig
from .rollout import (DagnnPolicy, EncoderPerception, ExactPerception,
                      ExpertPolicy, GrnnPolicy, run_rollout)


class TrainingDivergence(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, message, grad_norms=None, window_id=None):
        super().__init__(message)
        self.grad_norms = grad_norms or {}
        self.window_id = window_id


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 500
    batch_windows: int = 32
    dagger_beta: float = 0.33
    initial_trajectories: int = 15
    dagger_trajectories: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 <= self.dagger_beta <= 1.0:
            raise ValueError("dagger_beta must be in [0, 1]")
        if self.epochs < 1 or self.batch_windows < 1:
            raise ValueError("epochs and batch_windows must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and perception configuration of one trainable controller."""

    family: str = "dagnn"              # "dagnn" | "grnn"
    n_taps: int = 4                    # history length K (K-1 exchanges)
    feature_dim: int = 6
    hidden_layers: tuple = (64, 64)    # dagnn per-node network
    hidden_nonlinearity: str = "relu"
    hidden_dim: int = 32               # grnn hidden state width
    perception: str = "exact"          # "exact" | "synthetic"
    view: ViewConfig = field(default_factory=ViewConfig)
    encoder: EncoderConfig = None

    def __post_init__(self):
        if self.family not in ("dagnn", "grnn"):
            raise ValueError(f"unknown controller family: {self.family!r}")
        if self.perception not in ("exact", "synthetic"):
            raise ValueError(f"unknown perception mode: {self.perception!r}")
        if self.n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        if self.perception == "synthetic" and self.encoder is None:
            object.__setattr__(
                self, "encoder",
                EncoderConfig(bins=self.view.bins, out_dim=self.feature_dim),
            )


@dataclass
class Model:
    spec: ModelSpec
    controller: object                 # DAGNNParams | GRNNParams
    encoder: EncoderParams = None

    def parameter_arrays(self):
        out = {f"ctrl.{k}": v for k, v in self.controller.arrays().items()}
        if self.encoder is not None:
            out.update({f"enc.{k}": v for k, v in self.encoder.arrays().items()})
        return out


@dataclass
class Dataset:
    trajectories: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    def __len__(self):
        return len(self.trajectories)

    def extend(self, other):
        self.trajectories.extend(other.trajectories)
        self.excluded.extend(other.excluded)


def init_model(spec: ModelSpec, rng) -> Model:
    if spec.family == "dagnn":
        dims = (spec.n_taps * spec.feature_dim,) + tuple(spec.hidden_layers) + (2,)
        ctrl = controllers.dagnn_init(rng, dims, spec.hidden_nonlinearity)
    else:
        ctrl = controllers.grnn_init(rng, spec.n_taps, spec.feature_dim, spec.hidden_dim)
    enc = None
    if spec.perception == "synthetic":
        enc = perception.encoder_init(rng, spec.encoder)
    return Model(spec, ctrl, enc)


def make_pipeline(model: Model, degrade_mode=None):
    if model.spec.perception == "exact":
        return ExactPerception()
    return EncoderPerception(model.encoder, model.spec.view, degrade_mode)


def make_policy(model: Model, u_max):
    if model.spec.family == "dagnn":
        return DagnnPolicy(model.controller, model.spec.n_taps,
                           model.spec.feature_dim, u_max)
    return GrnnPolicy(model.controller, model.spec.feature_dim, u_max)


# ---------------------------------------------------------------------------
# loss


def imitation_loss(predicted, expert):
    """Mean over agents of the L1 norm of the action error."""
    predicted = np.asarray(predicted, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if predicted.shape != expert.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {expert.shape}")
    return float(np.abs(predicted - expert).sum() / predicted.shape[0])


def _loss_and_grad(predicted, expert):
    # L1 subgradient, defined as 0 at exact zeros
    residual = predicted - expert
    n = predicted.shape[0]
    return float(np.abs(residual).sum() / n), np.sign(residual) / n


# ---------------------------------------------------------------------------
# training windows


@dataclass
class Window:
    """K consecutive steps of one trajectory, ending at a supervised step."""

    features: np.ndarray        # (K, N, F) recorded features
    observations: np.ndarray    # (K, N, W) or None
    gsos: list                  # K dense (N, N) shift operators
    expert_final: np.ndarray    # (N, 2) label at the window's last step
    trajectory_id: int = 0
    start: int = 0
    carry: HiddenState = None   # grnn entry state, frozen per epoch


def segment_windows(dataset: Dataset, n_taps):
    """Cut every trajectory into non-overlapping windows of n_taps steps.

    A trailing partial segment is dropped; trajectories shorter than one
    window contribute nothing.
    """
    windows = []
    for tid, traj in enumerate(dataset.trajectories):
        records = traj.records
        for start in range(0, len(records) - n_taps + 1, n_taps):
            seg = records[start:start + n_taps]
            obs = None
            if seg[0].observations is not None:
                obs = np.stack([r.observations for r in seg])
            windows.append(Window(
                features=np.stack([r.features for r in seg]),
                observations=obs,
                gsos=[r.snapshot.gso for r in seg],
                expert_final=seg[-1].expert_action,
                trajectory_id=tid,
                start=start,
            ))
    return windows


# ---------------------------------------------------------------------------
# gradients through a window


def _dagnn_window(model: Model, window: Window, want_grads=True):
    k = model.spec.n_taps
    if window.features.shape[0] != k:
        raise ValueError(f"window must hold exactly {k} steps")
    if model.encoder is not None:
        if window.observations is None:
            raise ValueError("synthetic-perception training needs recorded observations")
        feats, enc_cache = perception.encode(window.observations, model.encoder, cache=True)
    else:
        feats = window.features
    gsos = window.gsos
    # block k at the final step: feature matrix from k steps back, shifted
    # once through each newer graph (oldest exchange first)
    blocks = []
    for tap in range(k):
        term = feats[k - 1 - tap]
        for w in range(k - tap, k):
            term = gsos[w] @ term
        blocks.append(term)
    agg = np.concatenate(blocks, axis=1)
    pred, mlp_cache = controllers.dagnn_forward(agg, model.controller, cache=True)
    loss, g_pred = _loss_and_grad(pred, window.expert_final)
    if not want_grads:
        return loss, None
    ctrl_grads, g_agg = controllers.dagnn_backward(g_pred, model.controller, mlp_cache)
    grads = {f"ctrl.{k_}": v for k_, v in ctrl_grads.items()}
    if model.encoder is not None:
        f = model.spec.feature_dim
        g_feats = np.zeros_like(feats)
        for tap in range(k):
            g_term = g_agg[:, tap * f:(tap + 1) * f]
            for w in range(k - 1, k - tap - 1, -1):
                g_term = gsos[w].T @ g_term
            g_feats[k - 1 - tap] = g_term
        enc_grads = perception.encoder_backward(g_feats, model.encoder, enc_cache)
        grads.update({f"enc.{k_}": v for k_, v in enc_grads.items()})
    return loss, grads


def _grnn_window(model: Model, window: Window, want_grads=True):
    params: GRNNParams = model.controller
    k = params.n_taps
    if window.features.shape[0] != k:
        raise ValueError(f"window must hold exactly {k} steps")
    if model.encoder is not None:
        if window.observations is None:
            raise ValueError("synthetic-perception training needs recorded observations")
        feats, enc_cache = perception.encode(window.observations, model.encoder, cache=True)
    else:
        feats = window.features
    n = feats.shape[1]
    carry = window.carry
    if carry is None:
        carry = controllers.grnn_initial_state(k, n, feats.shape[2], params.hidden_dim)
    act, act_grad = controllers._nonlinearity(params.nonlinearity)
    gsos = window.gsos

    # forward, caching every product buffer
    feat_bufs, hid_bufs, read_bufs, zs = [], [], [], []
    prev_feat, prev_hid, prev_read = (carry.feature_products,
                                      carry.hidden_products,
                                      carry.readout_products)
    prev_z = carry.values
    for t in range(k):
        s = gsos[t]
        feat_t = [feats[t]] + [s @ p for p in prev_feat[: k - 1]]
        hid_t = [prev_z] + [s @ p for p in prev_hid[: k - 1]]
        pre = params.bias_hidden + sum(feat_t[i] @ params.taps_in[i] for i in range(k))
        pre = pre + sum(hid_t[i] @ params.taps_hidden[i] for i in range(k))
        z = act(pre)
        read_t = [z] + [s @ p for p in prev_read[: k - 1]]
        feat_bufs.append(feat_t)
        hid_bufs.append(hid_t)
        read_bufs.append(read_t)
        zs.append(z)
        prev_feat, prev_hid, prev_read, prev_z = feat_t, hid_t, read_t, z
    pred = params.bias_out + sum(read_bufs[-1][i] @ params.taps_out[i] for i in range(k))
    loss, g_pred = _loss_and_grad(pred, window.expert_final)
    if not want_grads:
        return loss, None

    g = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    g_feats = np.zeros_like(feats) if model.encoder is not None else None
    g_read = [[np.zeros((n, params.hidden_dim)) for _ in range(k)] for _ in range(k)]
    g_hid = [[np.zeros((n, params.hidden_dim)) for _ in range(k)] for _ in range(k)]
    g_feat = [[np.zeros_like(feats[0]) for _ in range(k)] for _ in range(k)]
    g_z = [np.zeros((n, params.hidden_dim)) for _ in range(k)]

    g["bias_out"] += g_pred.sum(axis=0)
    for i in range(k):
        g["taps_out"][i] += read_bufs[-1][i].T @ g_pred
        g_read[k - 1][i] += g_pred @ params.taps_out[i].T
    for t in range(k - 1, -1, -1):
        s = gsos[t]
        # readout buffer recurrence: read_t[0] = z_t, read_t[i] = S_t read_{t-1}[i-1]
        g_z[t] += g_read[t][0]
        for i in range(1, k):
            if t - 1 >= 0:
                g_read[t - 1][i - 1] += s.T @ g_read[t][i]
        g_pre = g_z[t] * act_grad(zs[t])
        g["bias_hidden"] += g_pre.sum(axis=0)
        for i in range(k):
            g["taps_in"][i] += feat_bufs[t][i].T @ g_pre
            g["taps_hidden"][i] += hid_bufs[t][i].T @ g_pre
            g_feat[t][i] += g_pre @ params.taps_in[i].T
            g_hid[t][i] += g_pre @ params.taps_hidden[i].T
        # hidden buffer recurrence: hid_t[0] = z_{t-1}, hid_t[i] = S_t hid_{t-1}[i-1]
        if t - 1 >= 0:
            g_z[t - 1] += g_hid[t][0]
            for i in range(1, k):
                g_hid[t - 1][i - 1] += s.T @ g_hid[t][i]
        # feature buffer recurrence: feat_t[0] = x_t, feat_t[i] = S_t feat_{t-1}[i-1]
        if g_feats is not None:
            g_feats[t] += g_feat[t][0]
        if t - 1 >= 0:
            for i in range(1, k):
                g_feat[t - 1][i - 1] += s.T @ g_feat[t][i]

    grads = {f"ctrl.{name}": arr for name, arr in g.items()}
    if model.encoder is not None:
        enc_grads = perception.encoder_backward(g_feats, model.encoder, enc_cache)
        grads.update({f"enc.{name}": arr for name, arr in enc_grads.items()})
    return loss, grads


def bptt_gradients(model: Model, window: Window):
    """Loss at the window's final step and its exact analytic gradients
    w.r.t. all controller (and, in synthetic mode, encoder) parameters.
    Shift operators are constants: no gradient flows into the graph."""
    if model.spec.family == "dagnn":
        return _dagnn_window(model, window)
    return _grnn_window(model, window)


def window_loss(model: Model, window: Window):
    if model.spec.family == "dagnn":
        return _dagnn_window(model, window, want_grads=False)[0]
    return _grnn_window(model, window, want_grads=False)[0]


# ---------------------------------------------------------------------------
# grnn carries


def compute_grnn_carries(model: Model, dataset: Dataset, windows):
    """Entry hidden states for every window, frozen at the current params.

    Runs one forward sweep per trajectory and snapshots the recurrent state
    just before each window start.  Detaching here is what truncates BPTT
    at window boundaries.
    """
    params: GRNNParams = model.controller
    k = params.n_taps
    by_traj = {}
    for w in windows:
        by_traj.setdefault(w.trajectory_id, []).append(w)
    for tid, traj_windows in by_traj.items():
        traj = dataset.trajectories[tid]
        if model.encoder is not None:
            obs = np.stack([r.observations for r in traj.records])
            feats = perception.encode(obs, model.encoder)
        else:
            feats = np.stack([r.features for r in traj.records])
        n = feats.shape[1]
        state = controllers.grnn_initial_state(k, n, feats.shape[2], params.hidden_dim)
        starts = {w.start: w for w in traj_windows}
        for t in range(len(traj.records)):
            if t in starts:
                starts[t].carry = copy.deepcopy(state)
            state = controllers.grnn_step(feats[t], state, traj.records[t].snapshot, params)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params_dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params_dict
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params_dict.items()}
        self.v = {k: np.zeros_like(v) for k, v in params_dict.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, param in self.params.items():
            g = grads[key]
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            m_hat = self.m[key] / (1 - b1**self.t)
            v_hat = self.v[key] / (1 - b2**self.t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# data collection


def _traj_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def collect_expert(sim_cfg, comm_model, expert_cfg, count, seed,
                   pipeline=None, record_observations=False) -> Dataset:
    """Phase-0 data: pure expert rollouts with expert labels."""
    dataset = Dataset()
    policy = ExpertPolicy(expert_cfg)
    for i in range(count):
        traj = run_rollout(sim_cfg, comm_model, policy, _traj_seed(seed, i),
                           expert_cfg, pipeline, record_observations=record_observations)
        traj.phase = 0
        if traj.diverged:
            dataset.excluded.append(f"expert rollout {i} diverged")
        else:
            dataset.trajectories.append(traj)
    return dataset


def dagger_collect(sim_cfg, comm_model, expert_cfg, learner_policy, beta,
                   count, seed, pipeline=None, record_observations=False,
                   phase=1) -> Dataset:
    """Mixture rollouts: at each step the executed action is the expert's
    with probability beta, the learner's otherwise; expert labels recorded
    at every step regardless.  Divergent rollouts are excluded and reported.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    dataset = Dataset()
    for i in range(count):
        mix_rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(i), 0xD4]))
        try:
            traj = run_rollout(
                sim_cfg, comm_model, learner_policy, _traj_seed(seed, i), expert_cfg,
                pipeline, mixture_beta=beta, mixture_rng=mix_rng,
                record_observations=record_observations,
            )
        except ValueError as exc:  # singular geometry inside the rollout
            dataset.excluded.append(f"mixture rollout {i} failed: {exc}")
            continue
        traj.phase = phase
        if traj.diverged:
            dataset.excluded.append(f"mixture rollout {i} diverged")
        else:
            dataset.trajectories.append(traj)
    return dataset


# ---------------------------------------------------------------------------
# fitting loop


def fit(model: Model, dataset: Dataset, train_cfg: TrainConfig, rng, log=None):
    """Adam over shuffled windows; returns the per-epoch mean window loss.

    When ``log`` is a list, one record per epoch (loss, gradient norm, wall
    time) is appended to it.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    windows = segment_windows(dataset, model.spec.n_taps)
    if not windows:
        raise ValueError("dataset has no complete training window")
    params = model.parameter_arrays()
    adam = Adam(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2)
    curve = []
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        if model.spec.family == "grnn":
            compute_grnn_carries(model, dataset, windows)
        order = rng.permutation(len(windows))
        total = 0.0
        grad_sq = 0.0
        for lo in range(0, len(order), train_cfg.batch_windows):
            batch = order[lo:lo + train_cfg.batch_windows]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for widx in batch:
                loss, grads = bptt_gradients(model, windows[widx])
                if not np.isfinite(loss):
                    norms = {k: float(np.linalg.norm(v)) for k, v in grads.items()} if grads else {}
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {epoch}, window {widx}",
                        grad_norms=norms, window_id=int(widx),
                    )
                total += loss
                for k in acc:
                    acc[k] += grads[k]
            mean_grads = {k: v / len(batch) for k, v in acc.items()}
            grad_sq += sum(float((g * g).sum()) for g in mean_grads.values())
            adam.step(mean_grads)
        curve.append(total / len(windows))
        if log is not None:
            log.append({"epoch": epoch, "loss": curve[-1],
                        "grad_norm": float(np.sqrt(grad_sq)),
                        "wall_time": time.perf_counter() - started})
    return curve


@dataclass
class TrainResult:
    model: Model
    loss_curve: list
    phase_curves: list
    dataset_sizes: list
    excluded: list


def train(spec: ModelSpec, train_cfg: TrainConfig, sim_cfg: SimConfig,
          comm_model, expert_cfg: ExpertConfig = None, log=None) -> TrainResult:
    """Full imitation-learning pipeline: expert phase, then one DAGGer
    round collected with the phase-0 policy and retrained on the union."""
    expert_cfg = expert_cfg or ExpertConfig(u_max=sim_cfg.u_max)
    record_obs = spec.perception == "synthetic"
    seed_root = np.random.SeedSequence(train_cfg.seed)
    init_seed, fit0_seed, dagger_seed, fit1_seed, reinit_seed = (
        int(s.generate_state(1)[0]) for s in seed_root.spawn(5)
    )

    model = init_model(spec, np.random.default_rng(init_seed))
    pipeline = make_pipeline(model)
    dataset = collect_expert(
        sim_cfg, comm_model, expert_cfg, train_cfg.initial_trajectories,
        train_cfg.seed, pipeline, record_observations=record_obs,
    )
    final_phase_log = log if train_cfg.dagger_trajectories == 0 else None
    curve0 = fit(model, dataset, train_cfg, np.random.default_rng(fit0_seed),
                 log=final_phase_log)
    sizes = [len(dataset)]
    phase_curves = [curve0]

    if train_cfg.dagger_trajectories > 0:
        policy = make_policy(model, sim_cfg.u_max)
        extra = dagger_collect(
            sim_cfg, comm_model, expert_cfg, policy, train_cfg.dagger_beta,
            train_cfg.dagger_trajectories, dagger_seed, make_pipeline(model),
            record_observations=record_obs,
        )
        dataset.extend(extra)
        sizes.append(len(dataset))
        # final policy is trained from scratch on the aggregated set
        model = init_model(spec, np.random.default_rng(reinit_seed))
        curve1 = fit(model, dataset, train_cfg, np.random.default_rng(fit1_seed), log=log)
        phase_curves.append(curve1)
    return TrainResult(model, phase_curves[-1], phase_curves, sizes, dataset.excluded)
