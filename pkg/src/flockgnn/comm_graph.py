"""Time-varying communication graphs and the graph shift operation.

Supports a disk model (symmetric, edges within radius R) and a K-nearest
neighbor model (directed: the K closest agents are in-neighbors).  The
graph shift operator (GSO) is the row-normalized adjacency: entry (i, j)
equals 1/|N_i| when j is an in-neighbor of i, and 0 otherwise.  The diagonal
is zero; an agent's own signal enters downstream through the zero-hop tap
of the filters, not through the shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiskModel:
    radius: float = 1.5

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")


@dataclass(frozen=True)
class KnnModel:
    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class GraphSnapshot:
    """GSO matrix plus per-agent in-neighbor lists at one time index."""

    time_index: int
    gso: np.ndarray
    neighbor_lists: tuple

    def __post_init__(self):
        gso = np.ascontiguousarray(self.gso, dtype=np.float64)
        n = gso.shape[0]
        if gso.shape != (n, n):
            raise ValueError("gso must be square")
        if not np.all(np.isfinite(gso)) or (gso < 0).any():
            raise ValueError("gso entries must be finite and nonnegative")
        if np.diagonal(gso).any():
            raise ValueError("gso diagonal must be zero")
        for i, neigh in enumerate(self.neighbor_lists):
            support = set(np.flatnonzero(gso[i]))
            if support != set(neigh):
                raise ValueError(f"gso row {i} sparsity does not match neighbor list")
        gso.flags.writeable = False
        object.__setattr__(self, "gso", gso)
        # flat edge arrays (destination, source, weight) for the shift
        rows, cols = np.nonzero(gso)
        object.__setattr__(self, "_edge_rows", rows)
        object.__setattr__(self, "_edge_cols", cols)
        object.__setattr__(self, "_edge_weights", gso[rows, cols])

    @property
    def n_agents(self):
        return self.gso.shape[0]


def _pairwise_distances(positions):
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    return dist


def build_gso(positions, model, time_index=0) -> GraphSnapshot:
    """Construct the graph snapshot for the given agent positions.

    Disk model: edge (i, j) iff 0 < ||r_i - r_j|| <= R (symmetric).
    KNN model: j is an in-neighbor of i iff j is among the k nearest agents
    to i (directed); distance ties break toward the lower agent index.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < 2:
        raise ValueError("need at least 2 agents")
    dist = _pairwise_distances(positions)

    if isinstance(model, DiskModel):
        adjacency = (dist > 0) & (dist <= model.radius)
    elif isinstance(model, KnnModel):
        if model.k >= n:
            raise ValueError(f"k={model.k} must be smaller than n_agents={n}")
        adjacency = np.zeros((n, n), dtype=bool)
        order = np.argsort(dist, axis=1, kind="stable")  # ties by lower index
        for i in range(n):
            adjacency[i, order[i, : model.k]] = True
    else:
        raise TypeError(f"unknown communication model: {model!r}")

    neighbor_lists = tuple(tuple(np.flatnonzero(adjacency[i])) for i in range(n))
    degree = adjacency.sum(axis=1, keepdims=True)
    gso = np.where(adjacency, 1.0 / np.maximum(degree, 1), 0.0)
    return GraphSnapshot(time_index, gso, neighbor_lists)


def graph_shift(snapshot: GraphSnapshot, signals):
    """One round of neighbor exchanges: row i of the result is the weighted
    sum of the rows of ``signals`` belonging to i's in-neighbors.

    Equals the dense matrix product gso @ signals (up to summation order).
    """
    x = np.asarray(signals, dtype=np.float64)
    n = snapshot.n_agents
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"signals must have shape ({n}, F), got {x.shape}")
    out = np.zeros_like(x)
    # accumulate one message per edge: destination i receives s_ij * x_j
    np.add.at(out, snapshot._edge_rows,
              snapshot._edge_weights[:, None] * x[snapshot._edge_cols])
    return out


def min_degree(snapshot: GraphSnapshot) -> int:
    return min(len(neigh) for neigh in snapshot.neighbor_lists)
