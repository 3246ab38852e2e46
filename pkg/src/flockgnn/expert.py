"""Centralized expert controller and the one-hop position-based baseline.

The expert drives every agent toward the swarm mean velocity while a
short-range potential repels agents closer than the activation radius rho:

    U(d) = 1/d^2 - log(d^2)   for d <= rho, constant beyond

whose gradient with respect to r_i is (-2/d^4 - 2/d^2) * (r_i - r_j) inside
the activation radius and zero outside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comm_graph import GraphSnapshot
from .dynamics import SwarmState, saturate


@dataclass(frozen=True)
class ExpertConfig:
    rho: float = 1.0
    u_max: float = 30.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def potential_gradient(r_i, r_j, rho):
    """Gradient of the collision-avoidance potential with respect to r_i."""
    r_ij = np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64)
    d = np.linalg.norm(r_ij)
    if d == 0.0:
        raise ValueError("coincident agent positions: potential is singular")
    if d > rho:
        return np.zeros(2)
    return (-2.0 / d**4 - 2.0 / d**2) * r_ij


def _pairwise(state: SwarmState):
    diff = state.positions[:, None, :] - state.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    if (dist == 0.0).any():
        raise ValueError("coincident agent positions: potential is singular")
    return diff, dist


def _control(state, mask_velocity, mask_potential, diff, dist, config):
    vel = state.velocities
    u = -(mask_velocity.sum(axis=1)[:, None] * vel - mask_velocity @ vel)
    grad = (-2.0 / dist**4 - 2.0 / dist**2)[:, :, None] * diff
    u -= np.where(mask_potential[:, :, None], grad, 0.0).sum(axis=1)
    return saturate(u, config.u_max)


def centralized_control(state: SwarmState, config: ExpertConfig):
    """Expert accelerations from global state: velocity consensus over the
    whole swarm plus the potential gradient over pairs within rho."""
    diff, dist = _pairwise(state)
    n = state.n_agents
    mask_velocity = np.ones((n, n)) - np.eye(n)
    mask_potential = dist <= config.rho
    return _control(state, mask_velocity, mask_potential, diff, dist, config)


def position_based_control(state: SwarmState, snapshot: GraphSnapshot, config: ExpertConfig):
    """One-hop truncation of the expert: both sums restricted to the
    current communication neighborhood."""
    diff, dist = _pairwise(state)
    n = state.n_agents
    mask = np.zeros((n, n), dtype=bool)
    for i, neigh in enumerate(snapshot.neighbor_lists):
        mask[i, list(neigh)] = True
    return _control(state, mask.astype(np.float64), mask & (dist <= config.rho), diff, dist, config)
