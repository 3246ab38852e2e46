"""Discrete-time point-mass swarm dynamics.

Agents are 2-D point masses driven by piecewise-constant accelerations:
over each sampling interval of length ``ts`` the acceleration is held
fixed, which gives the exact update

    r(t+1) = u * ts^2 / 2 + v * ts + r
    v(t+1) = u * ts + v
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Disk radius used for the minimum-neighbor-count rejection predicate when
# the communication model itself is not a disk model.
DEFAULT_REJECTION_RADIUS = 1.5


class InitializationError(RuntimeError):
    """Raised when rejection sampling hits its attempt limit."""

    def __init__(self, attempts):
        super().__init__(
            f"swarm initialization failed after {attempts} attempts "
            "(min-degree or spacing predicate never satisfied)"
        )
        self.attempts = attempts


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


@dataclass(frozen=True)
class SwarmState:
    """Snapshot of the whole swarm at one time index.

    Arrays are (N, 2) float64 and frozen after construction so states can be
    shared between concurrent rollouts.
    """

    time_index: int
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.positions.shape[0]
        if n < 2:
            raise ValueError(f"swarm needs at least 2 agents, got {n}")
        if self.accelerations is None:
            object.__setattr__(self, "accelerations", np.zeros((n, 2)))
        for name in ("positions", "velocities", "accelerations"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n, 2):
                raise ValueError(f"{name} must have shape ({n}, 2), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_agents(self):
        return self.positions.shape[0]

    def agent(self, i) -> AgentState:
        return AgentState(self.positions[i], self.velocities[i], self.accelerations[i])

    @property
    def agents(self):
        return [self.agent(i) for i in range(self.n_agents)]


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 50
    ts: float = 0.01
    horizon: int = 100
    u_max: float = 30.0
    v_init: float = 3.0
    min_spacing: float = 0.2
    max_init_attempts: int = 1000

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")
        if self.min_spacing <= 0:
            raise ValueError("min_spacing must be positive")


def saturate(u, u_max):
    """Clamp each acceleration component to [-u_max, +u_max]."""
    if u_max <= 0:
        raise ValueError("u_max must be positive")
    return np.clip(u, -u_max, u_max)


def step(state: SwarmState, accelerations, config: SimConfig) -> SwarmState:
    """Advance the swarm one sampling interval under constant accelerations.

    ``accelerations`` must already be saturated; this function only checks
    shape and finiteness.
    """
    u = np.asarray(accelerations, dtype=np.float64)
    if u.shape != (state.n_agents, 2):
        raise ValueError(
            f"accelerations must have shape ({state.n_agents}, 2), got {u.shape}"
        )
    if not np.all(np.isfinite(u)):
        raise ValueError("accelerations contain non-finite values")
    ts = config.ts
    pos = u * ts**2 / 2 + state.velocities * ts + state.positions
    vel = u * ts + state.velocities
    return SwarmState(state.time_index + 1, pos, vel, u)


def _draw_positions(rng, n, disc_radius):
    rad = disc_radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _rejection_radius(comm_model):
    radius = getattr(comm_model, "radius", None)
    return radius if radius is not None else DEFAULT_REJECTION_RADIUS


def initialize_swarm(config: SimConfig, comm_model, rng_seed) -> SwarmState:
    """Draw a random initial swarm state satisfying the rejection predicates.

    Positions are uniform in a disc of radius sqrt(N).  A draw is acceptable
    when (a) every agent has at least two neighbors within the disk radius
    and (b) no pair is closer than ``min_spacing``.  Joint acceptance of a
    fresh uniform draw is vanishingly rare already at N=20, so instead of
    redrawing everything we redraw only the offending agents each round;
    every round counts against ``max_init_attempts``.

    Velocities are uniform per component in [-v_init, +v_init] plus a single
    flock-wide bias uniform in [-0.3 v_init, +0.3 v_init] per component.
    """
    rng = np.random.default_rng(rng_seed)
    n = config.n_agents
    disc_radius = np.sqrt(n)
    radius = _rejection_radius(comm_model)

    positions = _draw_positions(rng, n, disc_radius)
    for _ in range(config.max_init_attempts):
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        degree = (dist <= radius).sum(axis=1)
        bad = (degree < 2) | (dist <= config.min_spacing).any(axis=1)
        if not bad.any():
            break
        positions[bad] = _draw_positions(rng, int(bad.sum()), disc_radius)
    else:
        raise InitializationError(config.max_init_attempts)

    velocities = rng.uniform(-config.v_init, config.v_init, (n, 2))
    velocities += rng.uniform(-0.3 * config.v_init, 0.3 * config.v_init, 2)
    return SwarmState(0, positions, velocities)
