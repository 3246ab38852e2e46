"""Closed-loop rollouts: perception, control, dynamics, recording.

Policies expose reset()/act().  The expert and the position-based baseline
are centralized (they read the raw global state); the learned controllers
are decentralized and touch other agents only through graph_shift and
one-hop sensing.  A LocalityAudit counts raw cross-agent state reads so
tests can assert the decentralized execution contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import controllers, perception
from .comm_graph import build_gso
from .dynamics import SimConfig, SwarmState, initialize_swarm, saturate, step
from .expert import ExpertConfig, centralized_control, position_based_control


@dataclass
class LocalityAudit:
    """Counts of state accesses during a rollout.

    cross_agent_reads: raw global-state reads by the executing policy
    (zero for decentralized controllers).
    expert_label_reads: global reads made only to record expert labels.
    graph_shift_calls -- not tracked here; one-hop exchanges are allowed.
    """

    cross_agent_reads: int = 0
    expert_label_reads: int = 0


@dataclass
class StepRecord:
    state: SwarmState
    snapshot: object
    features: np.ndarray
    expert_action: np.ndarray
    executed_action: np.ndarray
    observations: np.ndarray = None  # (N, W) in synthetic-perception mode


@dataclass
class Trajectory:
    records: list
    final_state: SwarmState
    final_snapshot: object
    seed: int
    controller: str
    phase: int = 0
    diverged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def states(self):
        return [r.state for r in self.records]


# ---------------------------------------------------------------------------
# perception pipelines


class ExactPerception:
    """Noise-free neighborhood sums; feature dimension 6."""

    mode = "exact"

    def __init__(self):
        self.feature_dim = perception.EXACT_FEATURE_DIM

    def observe(self, state, snapshot, rng=None):
        return None, perception.exact_feature_matrix(state, snapshot)


class EncoderPerception:
    """Synthetic panoramas decoded by the shared trainable encoder."""

    mode = "synthetic"

    def __init__(self, encoder_params, view=None, degrade_mode=None):
        self.params = encoder_params
        self.view = view or perception.ViewConfig()
        self.degrade_mode = degrade_mode
        self.feature_dim = encoder_params.out_dim

    def observe(self, state, snapshot, rng=None):
        obs = perception.render_all_observations(state, self.view)
        if self.degrade_mode is not None:
            obs = perception.degrade(obs, self.degrade_mode, rng)
        return obs, perception.encode(obs, self.params)


# ---------------------------------------------------------------------------
# policies


class ExpertPolicy:
    name = "expert"
    centralized = True

    def __init__(self, config: ExpertConfig):
        self.config = config

    def reset(self, n_agents):
        pass

    def act(self, state, snapshot, features):
        return centralized_control(state, self.config)


class PositionBasedPolicy:
    name = "position-based"
    centralized = True

    def __init__(self, config: ExpertConfig):
        self.config = config

    def reset(self, n_agents):
        pass

    def act(self, state, snapshot, features):
        return position_based_control(state, snapshot, self.config)


class ZeroPolicy:
    name = "zero"
    centralized = False

    def reset(self, n_agents):
        pass

    def act(self, state, snapshot, features):
        return np.zeros((state.n_agents, 2))


class DagnnPolicy:
    name = "dagnn"
    centralized = False

    def __init__(self, params: controllers.DAGNNParams, n_taps, feature_dim, u_max):
        self.params = params
        self.n_taps = n_taps
        self.feature_dim = feature_dim
        self.u_max = u_max
        self.buffer = None

    def reset(self, n_agents):
        self.buffer = controllers.HistoryBuffer(self.n_taps, n_agents, self.feature_dim)

    def act(self, state, snapshot, features):
        self.buffer.push(features, snapshot)
        agg = controllers.dagnn_aggregate(self.buffer)
        return saturate(controllers.dagnn_forward(agg.values, self.params), self.u_max)


class GrnnPolicy:
    name = "grnn"
    centralized = False

    def __init__(self, params: controllers.GRNNParams, feature_dim, u_max):
        self.params = params
        self.feature_dim = feature_dim
        self.u_max = u_max
        self.hidden = None

    def reset(self, n_agents):
        self.hidden = controllers.grnn_initial_state(
            self.params.n_taps, n_agents, self.feature_dim, self.params.hidden_dim
        )

    def act(self, state, snapshot, features):
        self.hidden = controllers.grnn_step(features, self.hidden, snapshot, self.params)
        return saturate(controllers.grnn_output(self.hidden, self.params), self.u_max)


# ---------------------------------------------------------------------------
# rollout driver


def run_rollout(sim_config: SimConfig, comm_model, policy, seed,
                expert_config: ExpertConfig = None, pipeline=None,
                mixture_beta=None, mixture_rng=None, record_observations=False,
                audit: LocalityAudit = None) -> Trajectory:
    """Roll the swarm forward for the configured horizon.

    Expert labels are always recorded (they are the imitation targets).
    With ``mixture_beta`` set, each step executes the expert action with
    that probability and the policy action otherwise, drawing one coin per
    step from ``mixture_rng``.
    """
    expert_config = expert_config or ExpertConfig(u_max=sim_config.u_max)
    pipeline = pipeline or ExactPerception()
    state = initialize_swarm(sim_config, comm_model, seed)
    policy.reset(state.n_agents)
    obs_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0B5]))
    records = []
    diverged = False
    for _ in range(sim_config.horizon):
        snapshot = build_gso(state.positions, comm_model, state.time_index)
        obs, features = pipeline.observe(state, snapshot, obs_rng)
        expert_action = centralized_control(state, expert_config)
        if audit is not None:
            audit.expert_label_reads += 1
        policy_action = policy.act(state, snapshot, features)
        if audit is not None and policy.centralized:
            audit.cross_agent_reads += 1
        if mixture_beta is not None and mixture_rng.uniform() < mixture_beta:
            executed = expert_action
        else:
            executed = policy_action
        if not np.all(np.isfinite(executed)):
            diverged = True
            break
        records.append(StepRecord(
            state, snapshot, features, expert_action, executed,
            obs if record_observations else None,
        ))
        state = step(state, executed, sim_config)
    final_snapshot = build_gso(state.positions, comm_model, state.time_index)
    return Trajectory(records, state, final_snapshot, seed, policy.name, diverged=diverged)
