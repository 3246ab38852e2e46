"""File formats: trajectories, checkpoints, sweep tables, training logs.

Every artifact embeds a format version and the config hash it was produced
under; loaders reject version mismatches outright and surface hash
mismatches as warnings.  All writes go through a temp-file rename so
readers never observe partial files.

Trajectory files are columnar text (one row per time step per agent) so
they stay diff-friendly; floats are written with shortest round-trip
precision and parse back bit-identically.  Checkpoints are a small binary
container: a JSON header describing array names/shapes/offsets followed by
raw little-endian float64 data, which makes saves byte-reproducible.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .perception import EncoderConfig, EncoderParams, ViewConfig

TRAJECTORY_MAGIC = "# flockgnn trajectory"
TABLE_MAGIC = "# flockgnn sweep"
CHECKPOINT_MAGIC = b"FGNN"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Unreadable or incompatible artifact file."""


def atomic_write_bytes(path, payload: bytes):
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryFile:
    """In-memory image of a trajectory file.

    positions/velocities cover steps 0..T inclusive (the last entry is the
    terminal state); executed/expert actions cover steps 0..T-1.
    """

    config_hash: str
    controller: str
    seed: int
    ts: float
    positions: np.ndarray       # (T+1, N, 2)
    velocities: np.ndarray      # (T+1, N, 2)
    executed: np.ndarray        # (T, N, 2)
    expert: np.ndarray          # (T, N, 2)
    degrees: np.ndarray         # (T+1, N) int
    observations: np.ndarray = None   # (T, N, W) when recorded
    hash_mismatch: bool = False

    @property
    def n_steps(self):
        return self.executed.shape[0]

    @property
    def n_agents(self):
        return self.positions.shape[1]

    def variance_series(self):
        v = self.velocities[:-1]
        return np.mean(np.sum((v - v.mean(axis=1, keepdims=True)) ** 2, axis=2), axis=1)


def write_trajectory(path, trajectory, config_hash, ts):
    """Serialize a rollout trajectory as columnar text.

    Action and observation columns are zero on the terminal row; the degree
    column is valid on every row.
    """
    records = trajectory.records
    n_steps = len(records)
    lines = [
        f"{TRAJECTORY_MAGIC} v{FORMAT_VERSION}",
        f"# config_hash={config_hash}",
        f"# controller={trajectory.controller} seed={trajectory.seed} "
        f"ts={_fmt(ts)} steps={n_steps} agents={records[0].state.n_agents} "
        f"diverged={int(trajectory.diverged)}",
    ]
    has_obs = records[0].observations is not None
    obs_bins = records[0].observations.shape[1] if has_obs else 0
    columns = "t agent rx ry vx vy ux uy usx usy degree"
    if has_obs:
        lines.append(f"# obs_bins={obs_bins}")
        columns += " " + " ".join(f"o{i}" for i in range(obs_bins))
    lines.append(f"# columns: {columns}")

    def emit(t, state, snapshot, executed, expert, obs):
        for i in range(state.n_agents):
            row = [str(t), str(i),
                   _fmt(state.positions[i, 0]), _fmt(state.positions[i, 1]),
                   _fmt(state.velocities[i, 0]), _fmt(state.velocities[i, 1]),
                   _fmt(executed[i, 0]), _fmt(executed[i, 1]),
                   _fmt(expert[i, 0]), _fmt(expert[i, 1]),
                   str(len(snapshot.neighbor_lists[i]))]
            if has_obs:
                row.extend(_fmt(v) for v in (obs[i] if obs is not None else np.zeros(obs_bins)))
            lines.append(" ".join(row))

    zero = np.zeros((records[0].state.n_agents, 2))
    for t, rec in enumerate(records):
        emit(t, rec.state, rec.snapshot, rec.executed_action, rec.expert_action,
             rec.observations)
    emit(n_steps, trajectory.final_state, trajectory.final_snapshot, zero, zero, None)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory(path, expect_hash=None) -> TrajectoryFile:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(TRAJECTORY_MAGIC):
            raise FormatError(f"{path}: not a trajectory file")
        version = int(first.rsplit("v", 1)[1])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported trajectory version {version}")
        header = {}
        obs_bins = 0
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# columns:"):
                break
            if line.startswith("# obs_bins="):
                obs_bins = int(line.split("=", 1)[1])
            elif line.startswith("# config_hash="):
                header["config_hash"] = line.split("=", 1)[1]
            elif line.startswith("# "):
                for item in line[2:].split():
                    if "=" in item:
                        key, value = item.split("=", 1)
                        header[key] = value
        rows = [line.split() for line in fh if line.strip()]

    steps = int(header["steps"])
    agents = int(header["agents"])
    data = np.array([[float(v) for v in row] for row in rows])
    if data.shape[0] != (steps + 1) * agents:
        raise FormatError(f"{path}: expected {(steps + 1) * agents} rows, got {data.shape[0]}")
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order].reshape(steps + 1, agents, -1)
    obs = data[:steps, :, 11:11 + obs_bins] if obs_bins else None
    config_hash = header.get("config_hash", "")
    return TrajectoryFile(
        config_hash=config_hash,
        controller=header["controller"],
        seed=int(header["seed"]),
        ts=float(header["ts"]),
        positions=data[:, :, 2:4],
        velocities=data[:, :, 4:6],
        executed=data[:steps, :, 6:8],
        expert=data[:steps, :, 8:10],
        degrees=data[:, :, 10].astype(int),
        observations=obs,
        hash_mismatch=(expect_hash is not None and config_hash != expect_hash),
    )


# ---------------------------------------------------------------------------
# checkpoints


def _model_spec_dict(spec):
    out = {
        "family": spec.family,
        "n_taps": spec.n_taps,
        "feature_dim": spec.feature_dim,
        "hidden_layers": list(spec.hidden_layers),
        "hidden_nonlinearity": spec.hidden_nonlinearity,
        "hidden_dim": spec.hidden_dim,
        "perception": spec.perception,
        "view": {"bins": spec.view.bins, "vis_radius": spec.view.vis_radius,
                 "max_range": spec.view.max_range},
    }
    if spec.encoder is not None:
        e = spec.encoder
        out["encoder"] = {"bins": e.bins, "channels": e.channels,
                          "kernel": e.kernel, "pool": e.pool, "out_dim": e.out_dim}
    return out


def _model_spec_from_dict(data):
    from .training import ModelSpec
    encoder = None
    if "encoder" in data:
        encoder = EncoderConfig(**data["encoder"])
    return ModelSpec(
        family=data["family"],
        n_taps=data["n_taps"],
        feature_dim=data["feature_dim"],
        hidden_layers=tuple(data["hidden_layers"]),
        hidden_nonlinearity=data["hidden_nonlinearity"],
        hidden_dim=data["hidden_dim"],
        perception=data["perception"],
        view=ViewConfig(**data["view"]),
        encoder=encoder,
    )


def save_checkpoint(path, model, config_hash, meta=None):
    """Write a model checkpoint; byte-identical for identical inputs."""
    arrays = model.parameter_arrays()
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "spec": _model_spec_dict(model.spec),
        "arrays": entries,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = (CHECKPOINT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(header_bytes))
               + header_bytes + b"".join(blobs))
    atomic_write_bytes(path, payload)


def load_checkpoint(path, expect_hash=None):
    """Read a checkpoint; returns (model, header).  A config-hash mismatch
    sets header['hash_mismatch'] rather than failing."""
    from .training import Model
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + header_len])
    data = blob[12 + header_len:]
    arrays = {}
    for entry in header["arrays"]:
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    spec = _model_spec_from_dict(header["spec"])
    ctrl_arrays = {k[5:]: v for k, v in arrays.items() if k.startswith("ctrl.")}
    enc_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("enc.")}
    if spec.family == "dagnn":
        from .controllers import DAGNNParams
        n_layers = sum(1 for k in ctrl_arrays if k.startswith("w"))
        controller = DAGNNParams(
            weights=[ctrl_arrays[f"w{i}"] for i in range(n_layers)],
            biases=[ctrl_arrays[f"b{i}"] for i in range(n_layers)],
            hidden_nonlinearity=spec.hidden_nonlinearity,
        )
    else:
        from .controllers import GRNNParams
        controller = GRNNParams(**ctrl_arrays)
    encoder = EncoderParams(**enc_arrays) if enc_arrays else None
    header["hash_mismatch"] = (expect_hash is not None
                               and header.get("config_hash") != expect_hash)
    return Model(spec, controller, encoder), header


# ---------------------------------------------------------------------------
# sweep tables and reports


def write_table(path, table, config_hash):
    lines = [
        f"{TABLE_MAGIC} v{FORMAT_VERSION}",
        f"# config_hash={config_hash}",
        f"# axis={table.axis}",
        "value\tmedian\tq1\tq3\tsuccess\tn_seeds",
    ]
    for cell in table.cells:
        lines.append("\t".join([
            str(cell.axis_value), _fmt(cell.median), _fmt(cell.iqr[0]),
            _fmt(cell.iqr[1]), str(int(cell.success)), str(len(cell.reports)),
        ]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_table(path):
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(TABLE_MAGIC):
            raise FormatError(f"{path}: not a sweep table")
        version = int(first.rsplit("v", 1)[1])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported table version {version}")
        meta = {}
        rows = []
        header_row = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, value = line[2:].split("=", 1)
                meta[key] = value
            elif header_row is None:
                header_row = line.split("\t")
            elif line:
                rows.append(dict(zip(header_row, line.split("\t"))))
    return meta, rows


def write_reports_jsonl(path, reports):
    lines = []
    for r in reports:
        lines.append(json.dumps({
            "controller": r.controller, "seed": r.seed,
            "raw_cost": r.raw_cost, "expert_cost": r.expert_cost,
            "normalized": r.normalized, "success": r.success,
            "diverged": r.diverged, "config_hash": r.config_hash,
        }, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_train_log(path, entries):
    atomic_write_text(path, "\n".join(json.dumps(e, sort_keys=True) for e in entries) + "\n")
