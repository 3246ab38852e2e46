"""Experiment configuration: defaults, strict YAML loading, hashing.

The defaults encode the baseline experimental protocol: 50 agents sampled
in a disc of radius sqrt(N), 0.01 s steps for 100 steps, accelerations
saturated at +-30 m/s^2, disk communication radius 1.5 m (KNN alternative
with 10 neighbors), initial speeds up to 3 m/s, Adam at learning rate
0.001 with forgetting factors 0.9/0.999, L1 imitation loss, and DAGGer
with beta = 0.33 over 15 initial plus 5 mixture trajectories.

Unknown keys are rejected.  Environment variables can override exactly two
things: FLOCKGNN_SEED and FLOCKGNN_OUT (output directory).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .comm_graph import DiskModel, KnnModel
from .dynamics import SimConfig
from .expert import ExpertConfig
from .perception import EncoderConfig, ViewConfig
from .training import ModelSpec, TrainConfig

ENV_SEED = "FLOCKGNN_SEED"
ENV_OUT = "FLOCKGNN_OUT"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class CommSection:
    model: str = "disk"      # "disk" | "knn"
    radius: float = 1.5
    knn: int = 10


@dataclass
class ControllerSection:
    family: str = "dagnn"            # "dagnn" | "grnn" | expert baselines via CLI
    exchanges: int = 3               # communication exchanges K-1
    feature_dim: int = 6
    hidden_layers: list = field(default_factory=lambda: [64, 64])
    hidden_nonlinearity: str = "relu"
    grnn_hidden: int = 32


@dataclass
class PerceptionSection:
    mode: str = "exact"              # "exact" | "synthetic"
    bins: int = 64
    vis_radius: float = 0.5
    max_range: float = 5.0
    encoder_channels: int = 8
    encoder_kernel: int = 5
    encoder_pool: int = 4
    degrade: str = "none"            # "none" | "gaussian" | "blur"
    noise_sigma: float = 0.0
    blur_width: int = 1


@dataclass
class TrainingSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 500
    batch_windows: int = 32
    dagger_beta: float = 0.33
    initial_trajectories: int = 15
    dagger_trajectories: int = 5
    seed: int = 0


@dataclass
class EvalSection:
    seeds: int = 5
    seed_base: int = 10_000


@dataclass
class SimSection:
    n_agents: int = 50
    ts: float = 0.01
    horizon: int = 100
    u_max: float = 30.0
    v_init: float = 3.0
    min_spacing: float = 0.2
    max_init_attempts: int = 1000


@dataclass
class ExpertSection:
    rho: float = 1.0


@dataclass
class ExperimentConfig:
    sim: SimSection = field(default_factory=SimSection)
    comm: CommSection = field(default_factory=CommSection)
    expert: ExpertSection = field(default_factory=ExpertSection)
    perception: PerceptionSection = field(default_factory=PerceptionSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- builders for the runtime objects ------------------------------

    def sim_config(self) -> SimConfig:
        s = self.sim
        return SimConfig(s.n_agents, s.ts, s.horizon, s.u_max, s.v_init,
                         s.min_spacing, s.max_init_attempts)

    def comm_model(self):
        if self.comm.model == "disk":
            return DiskModel(self.comm.radius)
        if self.comm.model == "knn":
            return KnnModel(self.comm.knn)
        raise ConfigError(f"comm.model must be 'disk' or 'knn', got {self.comm.model!r}")

    def expert_config(self) -> ExpertConfig:
        return ExpertConfig(rho=self.expert.rho, u_max=self.sim.u_max)

    def view_config(self) -> ViewConfig:
        p = self.perception
        return ViewConfig(p.bins, p.vis_radius, p.max_range)

    def encoder_config(self) -> EncoderConfig:
        p = self.perception
        return EncoderConfig(p.bins, p.encoder_channels, p.encoder_kernel,
                             p.encoder_pool, self.controller.feature_dim)

    def model_spec(self) -> ModelSpec:
        c = self.controller
        return ModelSpec(
            family=c.family,
            n_taps=c.exchanges + 1,
            feature_dim=c.feature_dim,
            hidden_layers=tuple(c.hidden_layers),
            hidden_nonlinearity=c.hidden_nonlinearity,
            hidden_dim=c.grnn_hidden,
            perception=self.perception.mode,
            view=self.view_config(),
            encoder=self.encoder_config() if self.perception.mode == "synthetic" else None,
        )

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(t.lr, t.beta1, t.beta2, t.epochs, t.batch_windows,
                           t.dagger_beta, t.initial_trajectories,
                           t.dagger_trajectories, t.seed)

    def degrade_mode(self):
        from .perception import Blur, GaussianNoise
        p = self.perception
        if p.degrade == "none":
            return None
        if p.degrade == "gaussian":
            return GaussianNoise(p.noise_sigma)
        if p.degrade == "blur":
            return Blur(p.blur_width)
        raise ConfigError(f"unknown degrade mode {p.degrade!r}")

    def to_dict(self):
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _apply_section(section_obj, name, data):
    valid = {f.name for f in fields(section_obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown key '{name}.{key}'")
        setattr(section_obj, key, value)


def config_from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping of sections")
    cfg = ExperimentConfig()
    for name, section_data in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section '{name}'")
        if not isinstance(section_data, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        _apply_section(getattr(cfg, name), name, section_data)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    """Range checks across sections; raises ConfigError naming the field."""
    checks = [
        (cfg.sim.n_agents >= 2, "sim.n_agents must be >= 2"),
        (cfg.sim.ts > 0, "sim.ts must be positive"),
        (cfg.sim.horizon >= 1, "sim.horizon must be >= 1"),
        (cfg.sim.u_max > 0, "sim.u_max must be positive"),
        (cfg.sim.min_spacing > 0, "sim.min_spacing must be positive"),
        (cfg.comm.model in ("disk", "knn"), "comm.model must be 'disk' or 'knn'"),
        (cfg.comm.radius > 0, "comm.radius must be positive"),
        (1 <= cfg.comm.knn < cfg.sim.n_agents, "comm.knn must be in [1, n_agents)"),
        (cfg.expert.rho > 0, "expert.rho must be positive"),
        (cfg.controller.family in ("dagnn", "grnn"), "controller.family must be dagnn or grnn"),
        (cfg.controller.exchanges >= 0, "controller.exchanges must be >= 0"),
        (cfg.controller.feature_dim >= 1, "controller.feature_dim must be >= 1"),
        (cfg.perception.mode in ("exact", "synthetic"), "perception.mode must be exact or synthetic"),
        (cfg.perception.mode != "exact" or cfg.controller.feature_dim == 6,
         "perception.mode 'exact' requires controller.feature_dim == 6"),
        (cfg.perception.degrade in ("none", "gaussian", "blur"), "perception.degrade invalid"),
        (cfg.perception.noise_sigma >= 0, "perception.noise_sigma must be >= 0"),
        (cfg.perception.blur_width >= 1, "perception.blur_width must be >= 1"),
        (cfg.training.lr >= 0, "training.lr must be >= 0"),
        (0 <= cfg.training.dagger_beta <= 1, "training.dagger_beta must be in [0, 1]"),
        (cfg.training.epochs >= 1, "training.epochs must be >= 1"),
        (cfg.eval.seeds >= 1, "eval.seeds must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def load_config(path, apply_env=True) -> ExperimentConfig:
    """Load a YAML config file, validate it, apply environment overrides."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    cfg = config_from_dict(data)
    if apply_env and ENV_SEED in os.environ:
        try:
            cfg.training.seed = int(os.environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer")
    return cfg


def output_dir(default="."):
    return os.environ.get(ENV_OUT, default)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the resolved configuration."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
