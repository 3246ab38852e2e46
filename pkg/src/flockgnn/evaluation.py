"""Velocity-variance cost, expert-normalized reports, and sweeps.

The trajectory cost is the per-step velocity variance summed over the
recorded steps:

    cost = sum_t (1/N) sum_i || v_i(t) - mean_j v_j(t) ||^2

Controllers are scored by the ratio of their cost to the centralized
expert's cost from the identical initialization seed; ratios below 3.0
count as successful flocking.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SimConfig
from .expert import ExpertConfig
from .rollout import ExpertPolicy, Trajectory, run_rollout

SUCCESS_THRESHOLD = 3.0


def velocity_variance_series(trajectory: Trajectory):
    """Per-step velocity variance over the recorded steps."""
    series = []
    for record in trajectory.records:
        v = record.state.velocities
        series.append(float(np.mean(np.sum((v - v.mean(axis=0)) ** 2, axis=1))))
    return series


def velocity_variance_cost(trajectory: Trajectory) -> float:
    if len(trajectory.records) == 0:
        raise ValueError("empty trajectory")
    return float(sum(velocity_variance_series(trajectory)))


def normalized_cost(controller_cost, expert_cost) -> float:
    if expert_cost <= 0.0:
        raise ValueError("degenerate initialization: expert cost is not positive")
    return controller_cost / expert_cost


def flocking_success(norm_cost) -> bool:
    return norm_cost < SUCCESS_THRESHOLD


@dataclass
class CostReport:
    raw_cost: float
    expert_cost: float
    normalized: float
    variance_series: list
    success: bool
    seed: int
    controller: str
    config_hash: str = ""
    diverged: bool = False


def evaluate_policy(policy, sim_cfg: SimConfig, comm_model, seed,
                    expert_cfg: ExpertConfig = None, pipeline=None,
                    config_hash="") -> CostReport:
    """Roll out a policy and the expert from the same seed and compare."""
    expert_cfg = expert_cfg or ExpertConfig(u_max=sim_cfg.u_max)
    traj = run_rollout(sim_cfg, comm_model, policy, seed, expert_cfg, pipeline)
    expert_traj = run_rollout(sim_cfg, comm_model, ExpertPolicy(expert_cfg), seed, expert_cfg)
    raw = velocity_variance_cost(traj) if traj.records else float("inf")
    expert_raw = velocity_variance_cost(expert_traj)
    norm = normalized_cost(raw, expert_raw) if np.isfinite(raw) else float("inf")
    return CostReport(
        raw_cost=raw,
        expert_cost=expert_raw,
        normalized=norm,
        variance_series=velocity_variance_series(traj),
        success=flocking_success(norm),
        seed=seed,
        controller=policy.name,
        config_hash=config_hash,
        diverged=traj.diverged,
    )


@dataclass
class SweepCell:
    axis_value: object
    reports: list
    median: float
    iqr: tuple
    success: bool


@dataclass
class SweepTable:
    axis: str
    cells: list = field(default_factory=list)


def summarize_reports(axis_value, reports) -> SweepCell:
    costs = sorted(r.normalized for r in reports)
    median = float(statistics.median(costs))
    q1 = float(np.percentile(costs, 25))
    q3 = float(np.percentile(costs, 75))
    return SweepCell(axis_value, reports, median, (q1, q3), flocking_success(median))


def run_sweep(axis, cells, seeds, evaluate_cell) -> SweepTable:
    """Evaluate one CostReport per (cell value, seed) and aggregate medians.

    ``evaluate_cell(value, seed)`` must return a CostReport; sweep axes that
    need different checkpoints or configs per cell close over them there.
    """
    table = SweepTable(axis)
    for value in cells:
        reports = [evaluate_cell(value, seed) for seed in seeds]
        table.cells.append(summarize_reports(value, reports))
    return table
