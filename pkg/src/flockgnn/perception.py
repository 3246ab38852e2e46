"""State estimators producing per-agent feature rows.

Three interchangeable sources feed the controllers:

  * exact features: the 6 neighbor sums matching the expert's functional
    terms (velocity disagreement, 1/d^4 and 1/d^2 direction sums);
  * a synthetic panoramic observation per agent (azimuth intensity array,
    apparent size encodes distance) decoded by a small trainable encoder:
    two circular 1-D convolutions, average pooling, one linear readout;
  * bounding-box detection summaries aggregated into a 9-vector.

All feature rows depend only on the observing agent's own state and what it
can sense of its one-hop surroundings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm_graph import GraphSnapshot
from .dynamics import SwarmState

EXACT_FEATURE_DIM = 6


# ---------------------------------------------------------------------------
# exact features


def exact_features(state: SwarmState, snapshot: GraphSnapshot, agent: int):
    """Feature 6-vector for one agent from its neighborhood sums."""
    neigh = snapshot.neighbor_lists[agent]
    if not neigh:
        return np.zeros(EXACT_FEATURE_DIM)
    cols = np.asarray(neigh)
    rel_pos = state.positions[agent] - state.positions[cols]
    rel_vel = state.velocities[agent] - state.velocities[cols]
    d2 = np.sum(rel_pos**2, axis=1)
    if (d2 == 0.0).any():
        raise ValueError(f"agent {agent} has a coincident neighbor")
    f_vel = rel_vel.sum(axis=0)
    f_close = (rel_pos / d2[:, None] ** 2).sum(axis=0)
    f_far = (rel_pos / d2[:, None]).sum(axis=0)
    return np.concatenate([f_vel, f_close, f_far])


def exact_feature_matrix(state: SwarmState, snapshot: GraphSnapshot):
    """All agents' exact features, rows aligned with agent indices."""
    return np.stack([exact_features(state, snapshot, i) for i in range(state.n_agents)])


# ---------------------------------------------------------------------------
# synthetic panoramic observations


@dataclass(frozen=True)
class ViewConfig:
    bins: int = 64
    vis_radius: float = 0.5   # apparent-size scale of an agent
    max_range: float = 5.0

    def __post_init__(self):
        if self.bins < 4:
            raise ValueError("need at least 4 azimuth bins")
        if self.vis_radius <= 0 or self.max_range <= 0:
            raise ValueError("vis_radius and max_range must be positive")


def render_observation(state: SwarmState, agent: int, view: ViewConfig):
    """World-frame azimuth panorama seen by one agent.

    Every other agent within max_range paints intensity min(1, vis_radius/d)
    over the bins whose centers fall within +-atan(vis_radius/d) of its
    bearing (the bin containing the bearing is always painted).  Overlaps
    combine by per-bin maximum.
    """
    w = view.bins
    pano = np.zeros(w)
    bin_width = 2.0 * np.pi / w
    centers = (np.arange(w) + 0.5) * bin_width
    rel = state.positions - state.positions[agent]
    for j in range(state.n_agents):
        if j == agent:
            continue
        d = np.hypot(rel[j, 0], rel[j, 1])
        if d == 0.0 or d > view.max_range:
            continue
        bearing = np.arctan2(rel[j, 1], rel[j, 0]) % (2.0 * np.pi)
        half_width = np.arctan(view.vis_radius / d)
        intensity = min(1.0, view.vis_radius / d)
        ang = np.abs(centers - bearing)
        covered = np.minimum(ang, 2.0 * np.pi - ang) <= half_width
        covered[int(bearing / bin_width) % w] = True
        pano[covered] = np.maximum(pano[covered], intensity)
    return pano


def render_all_observations(state: SwarmState, view: ViewConfig):
    return np.stack([render_observation(state, i, view) for i in range(state.n_agents)])


# ---------------------------------------------------------------------------
# observation degradation


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float


@dataclass(frozen=True)
class Blur:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("blur width must be >= 1")


def degrade(obs, mode, rng=None):
    """Apply a degradation to a panorama (or batch of panoramas).

    GaussianNoise adds seeded white noise and clips back to [0, 1]; Blur is
    a circular moving average over the azimuth axis.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if isinstance(mode, GaussianNoise):
        if mode.sigma == 0.0:
            return obs.copy()
        if rng is None:
            raise ValueError("GaussianNoise degradation needs an rng")
        return np.clip(obs + rng.normal(0.0, mode.sigma, obs.shape), 0.0, 1.0)
    if isinstance(mode, Blur):
        if mode.width == 1:
            return obs.copy()
        w = obs.shape[-1]
        offsets = np.arange(mode.width) - (mode.width - 1) // 2
        idx = (np.arange(w)[:, None] + offsets[None, :]) % w
        return obs[..., idx].mean(axis=-1)
    raise TypeError(f"unknown degradation mode: {mode!r}")


# ---------------------------------------------------------------------------
# trainable observation encoder


@dataclass
class EncoderConfig:
    bins: int = 64
    channels: int = 8
    kernel: int = 5
    pool: int = 4
    out_dim: int = 6

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")
        if self.bins % self.pool != 0:
            raise ValueError("pool must divide bins")


@dataclass
class EncoderParams:
    """Weights of the panorama encoder, shared by every agent.

    conv1: (C, 1, k) circular over azimuth, tanh
    conv2: (C, C, k) circular, tanh
    average pooling by ``pool``, then linear (out_dim, C * bins/pool).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def names(self):
        return ("w1", "b1", "w2", "b2", "w_out", "b_out")

    def arrays(self):
        return {name: getattr(self, name) for name in self.names()}

    @property
    def out_dim(self):
        return self.w_out.shape[0]


def encoder_init(rng, config: EncoderConfig) -> EncoderParams:
    c, k = config.channels, config.kernel
    flat = c * (config.bins // config.pool)

    def uniform(fan_in, shape):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, shape)

    return EncoderParams(
        w1=uniform(k, (c, 1, k)),
        b1=uniform(k, c),
        w2=uniform(c * k, (c, c, k)),
        b2=uniform(c * k, c),
        w_out=uniform(flat, (config.out_dim, flat)),
        b_out=uniform(flat, config.out_dim),
    )


def _circular_gather(x, kernel):
    # x: (..., C, W) -> (..., C, W, k) with wrap-around windows
    w = x.shape[-1]
    offsets = np.arange(kernel) - kernel // 2
    idx = (np.arange(w)[:, None] + offsets[None, :]) % w
    return x[..., idx]


def _circular_conv(x, weights, bias):
    # x: (..., Cin, W), weights: (Cout, Cin, k) -> (..., Cout, W)
    windows = _circular_gather(x, weights.shape[-1])
    out = np.einsum("...cwk,dck->...dw", windows, weights)
    return out + bias[..., :, None]


def _circular_conv_backward(x, weights, gout):
    # gradients of sum(gout * conv(x)) w.r.t. weights, bias and x
    windows = _circular_gather(x, weights.shape[-1])
    gw = np.einsum("...cwk,...dw->dck", windows, gout)
    gb = gout.reshape(-1, gout.shape[-2], gout.shape[-1]).sum(axis=(0, 2))
    # input gradient: correlate gout with the kernel flipped across taps
    gwin = _circular_gather(gout, weights.shape[-1])  # (..., Cout, W, k)
    gx = np.einsum("...dwk,dck->...cw", gwin[..., ::-1], weights)
    return gw, gb, gx


def encode(obs, params: EncoderParams, cache=False):
    """Forward pass of the encoder over one panorama or any batch of them.

    ``obs`` has shape (..., W); returns (..., out_dim).  With ``cache=True``
    also returns the intermediates needed by :func:`encoder_backward`.
    """
    x = np.asarray(obs, dtype=np.float64)[..., None, :]  # add channel axis
    pre1 = _circular_conv(x, params.w1, params.b1)
    act1 = np.tanh(pre1)
    pre2 = _circular_conv(act1, params.w2, params.b2)
    act2 = np.tanh(pre2)
    c, w = act2.shape[-2], act2.shape[-1]
    flat_dim = params.w_out.shape[1]
    pool = c * w // flat_dim
    pooled = act2.reshape(act2.shape[:-1] + (w // pool, pool)).mean(axis=-1)
    flat = pooled.reshape(pooled.shape[:-2] + (flat_dim,))
    out = flat @ params.w_out.T + params.b_out
    if not cache:
        return out
    return out, (x, act1, act2, flat, pool)


def encoder_backward(gout, params: EncoderParams, cached):
    """Analytic gradients of sum(gout * encode(obs)) w.r.t. all weights."""
    x, act1, act2, flat, pool = cached
    g_wout = np.einsum("...f,...i->fi", gout, flat)
    g_bout = gout.reshape(-1, gout.shape[-1]).sum(axis=0)
    gflat = gout @ params.w_out
    c, w = act2.shape[-2], act2.shape[-1]
    gpooled = gflat.reshape(act2.shape[:-1] + (w // pool,))
    gact2 = np.repeat(gpooled[..., None], pool, axis=-1).reshape(act2.shape) / pool
    gpre2 = gact2 * (1.0 - act2**2)
    g_w2, g_b2, gact1 = _circular_conv_backward(act1, params.w2, gpre2)
    gpre1 = gact1 * (1.0 - act1**2)
    g_w1, g_b1, _ = _circular_conv_backward(x, params.w1, gpre1)
    return {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2,
            "w_out": g_wout, "b_out": g_bout}


# ---------------------------------------------------------------------------
# bounding-box detections


@dataclass(frozen=True)
class DetectionSet:
    """Normalized (x, y, w, h, confidence) boxes from one agent's view."""

    boxes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for box in self.boxes:
            x, y, w, h, c = box
            if w < 0 or h < 0 or c < 0:
                raise ValueError("box width, height and confidence must be >= 0")

    def __len__(self):
        return len(self.boxes)


def synthesize_detections(state: SwarmState, agent: int, view: ViewConfig) -> DetectionSet:
    """Deterministic detections standing in for an object detector.

    Each visible agent yields a square box: center x is the bearing mapped
    to [0, 1), center y is 0.5 (common plane), and width = height =
    atan(vis_radius / d) / pi, so nearer agents get strictly larger boxes.
    """
    rel = state.positions - state.positions[agent]
    boxes = []
    for j in range(state.n_agents):
        if j == agent:
            continue
        d = np.hypot(rel[j, 0], rel[j, 1])
        if d == 0.0 or d > view.max_range:
            continue
        bearing = np.arctan2(rel[j, 1], rel[j, 0]) % (2.0 * np.pi)
        size = np.arctan(view.vis_radius / d) / np.pi
        boxes.append((bearing / (2.0 * np.pi), 0.5, size, size, 1.0))
    return DetectionSet(tuple(boxes))


def _weighted_summary(entries):
    # entries: (m, 3) columns x, y, area; returns weighted means + mean area
    areas = entries[:, 2]
    total = areas.sum()
    if total == 0.0:
        return np.zeros(3)
    x = (entries[:, 0] * areas).sum() / total
    y = (entries[:, 1] * areas).sum() / total
    return np.array([x, y, areas.mean()])


def detection_features(dets: DetectionSet):
    """9-vector summary: the largest-area box, the area-weighted mean of the
    top three, and the area-weighted mean of all detections.

    Boxes are ranked by confident area w*h*c.  With fewer than three boxes
    the middle block averages what is available; the empty set maps to the
    zero vector.
    """
    if len(dets) == 0:
        return np.zeros(9)
    boxes = np.asarray(dets.boxes, dtype=np.float64)
    area = boxes[:, 2] * boxes[:, 3] * boxes[:, 4]
    order = np.argsort(-area, kind="stable")
    entries = np.column_stack([boxes[order, 0], boxes[order, 1], area[order]])
    top = entries[0]
    out = np.empty(9)
    out[0:3] = top
    out[3:6] = _weighted_summary(entries[: min(3, len(entries))])
    out[6:9] = _weighted_summary(entries)
    return out
