"""Command-line entry points.

Subcommands: train, rollout, sweep, plot, inspect.  Exit codes: 0 on
success, 1 on runtime failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evaluation, fileio, training
from .config import (ENV_SEED, ConfigError, config_hash, load_config, output_dir)
from .expert import ExpertConfig
from .fileio import FormatError
from .rollout import ExpertPolicy, PositionBasedPolicy, ZeroPolicy

BASELINES = ("expert", "position-based", "zero")


def _baseline_policy(name, expert_cfg):
    if name == "expert":
        return ExpertPolicy(expert_cfg)
    if name == "position-based":
        return PositionBasedPolicy(expert_cfg)
    if name == "zero":
        return ZeroPolicy()
    raise ConfigError(f"unknown controller '{name}'; baselines are {BASELINES}")


def _policy_from_args(args, cfg):
    """Policy plus perception pipeline, from either a checkpoint or a
    baseline controller name."""
    expert_cfg = cfg.expert_config()
    if getattr(args, "checkpoint", None):
        model, header = fileio.load_checkpoint(args.checkpoint, config_hash(cfg))
        if header["hash_mismatch"]:
            print("warning: checkpoint config hash does not match the config",
                  file=sys.stderr)
        policy = training.make_policy(model, cfg.sim.u_max)
        pipeline = training.make_pipeline(model, cfg.degrade_mode())
        return policy, pipeline, header["hash_mismatch"]
    return _baseline_policy(args.controller, expert_cfg), None, False


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training.seed = args.seed
    out = args.out or output_dir()
    os.makedirs(out, exist_ok=True)
    log = []
    result = training.train(cfg.model_spec(), cfg.train_config(), cfg.sim_config(),
                            cfg.comm_model(), cfg.expert_config(), log=log)
    ckpt_path = os.path.join(out, "checkpoint.fgnn")
    fileio.save_checkpoint(ckpt_path, result.model, config_hash(cfg), meta={
        "seed": cfg.training.seed,
        "final_loss": result.loss_curve[-1],
        "dataset_sizes": result.dataset_sizes,
        "excluded": result.excluded,
    })
    fileio.write_train_log(os.path.join(out, "train_log.jsonl"), log)
    print(f"checkpoint written to {ckpt_path} (final loss {result.loss_curve[-1]:.4f})")
    return 0


def cmd_rollout(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.training.seed
    policy, pipeline, _ = _policy_from_args(args, cfg)
    report = evaluation.evaluate_policy(
        policy, cfg.sim_config(), cfg.comm_model(), seed, cfg.expert_config(),
        pipeline, config_hash(cfg),
    )
    if args.out:
        from .rollout import run_rollout
        traj = run_rollout(cfg.sim_config(), cfg.comm_model(), policy, seed,
                           cfg.expert_config(), pipeline,
                           record_observations=cfg.perception.mode == "synthetic")
        fileio.write_trajectory(args.out, traj, config_hash(cfg), cfg.sim.ts)
    print(json.dumps({
        "controller": report.controller, "seed": report.seed,
        "raw_cost": report.raw_cost, "expert_cost": report.expert_cost,
        "normalized_cost": report.normalized, "success": report.success,
    }, sort_keys=True))
    return 0


AXES = ("exchanges", "feature_dim", "v_init", "radius", "knn", "team_size")


def _cell_config(cfg, axis, value):
    cell = dataclasses.replace(cfg)  # shallow; sections are shared, so copy via dict
    data = cfg.to_dict()
    if axis == "exchanges":
        data["controller"]["exchanges"] = int(value)
    elif axis == "feature_dim":
        data["controller"]["feature_dim"] = int(value)
    elif axis == "v_init":
        data["sim"]["v_init"] = float(value)
    elif axis == "radius":
        data["comm"]["model"] = "disk"
        data["comm"]["radius"] = float(value)
    elif axis == "knn":
        data["comm"]["model"] = "knn"
        data["comm"]["knn"] = int(value)
    elif axis == "team_size":
        data["sim"]["n_agents"] = int(value)
    from .config import config_from_dict
    return config_from_dict(data)


def cmd_sweep(args):
    cfg = load_config(args.config)
    values = args.values.split(",")
    seeds = [cfg.eval.seed_base + i for i in range(args.seeds or cfg.eval.seeds)]
    out = args.out or output_dir()
    os.makedirs(out, exist_ok=True)
    trained = {}

    def evaluate_cell(value, seed):
        cell_cfg = _cell_config(cfg, args.axis, value)
        if args.controller:
            policy = _baseline_policy(args.controller, cell_cfg.expert_config())
            pipeline = None
        elif args.checkpoint:
            model, _ = fileio.load_checkpoint(args.checkpoint)
            policy = training.make_policy(model, cell_cfg.sim.u_max)
            pipeline = training.make_pipeline(model, cell_cfg.degrade_mode())
        else:
            if value not in trained:
                result = training.train(
                    cell_cfg.model_spec(), cell_cfg.train_config(),
                    cell_cfg.sim_config(), cell_cfg.comm_model(),
                    cell_cfg.expert_config(),
                )
                trained[value] = result.model
            model = trained[value]
            policy = training.make_policy(model, cell_cfg.sim.u_max)
            pipeline = training.make_pipeline(model, cell_cfg.degrade_mode())
        return evaluation.evaluate_policy(
            policy, cell_cfg.sim_config(), cell_cfg.comm_model(), seed,
            cell_cfg.expert_config(), pipeline, config_hash(cell_cfg),
        )

    table = evaluation.run_sweep(args.axis, values, seeds, evaluate_cell)
    table_path = os.path.join(out, f"sweep_{args.axis}.tsv")
    fileio.write_table(table_path, table, config_hash(cfg))
    reports = [r for cell in table.cells for r in cell.reports]
    fileio.write_reports_jsonl(os.path.join(out, f"sweep_{args.axis}.jsonl"), reports)
    for cell in table.cells:
        print(f"{args.axis}={cell.axis_value}: median {cell.median:.3f} "
              f"iqr ({cell.iqr[0]:.3f}, {cell.iqr[1]:.3f}) success={cell.success}")
    print(f"table written to {table_path}")
    return 0


def _setup_matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "flockgnn"
    import matplotlib.pyplot as plt
    return plt


def _save_deterministic(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def cmd_plot(args):
    plt = _setup_matplotlib()
    if args.trajectory:
        trajs = [fileio.read_trajectory(p) for p in args.trajectory]
        fig, axes = plt.subplots(len(trajs), 2, figsize=(9, 4 * len(trajs)),
                                 squeeze=False)
        for row, (path, tf) in enumerate(zip(args.trajectory, trajs)):
            for col, step_idx in enumerate((0, tf.n_steps)):
                ax = axes[row][col]
                pos = tf.positions[step_idx]
                vel = tf.velocities[step_idx]
                ax.quiver(pos[:, 0], pos[:, 1], vel[:, 0], vel[:, 1],
                          angles="xy", scale_units="xy", scale=3.0, width=0.004)
                ax.plot(pos[:, 0], pos[:, 1], "o", markersize=3)
                ax.set_title(f"{tf.controller} step {step_idx}")
                ax.set_aspect("equal")
        fig.tight_layout()
        _save_deterministic(fig, args.out)
    elif args.table:
        meta, rows = fileio.read_table(args.table)
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = np.arange(len(rows))
        med = [float(r["median"]) for r in rows]
        q1 = [float(r["q1"]) for r in rows]
        q3 = [float(r["q3"]) for r in rows]
        ax.plot(xs, med, "o-", label="median normalized cost")
        ax.fill_between(xs, q1, q3, alpha=0.25, label="interquartile range")
        ax.axhline(evaluation.SUCCESS_THRESHOLD, linestyle="--", color="gray",
                   label="success threshold")
        ax.set_xticks(xs, [r["value"] for r in rows])
        ax.set_xlabel(meta.get("axis", "value"))
        ax.set_ylabel("normalized cost")
        ax.legend()
        fig.tight_layout()
        _save_deterministic(fig, args.out)
    else:
        raise ConfigError("plot needs --trajectory or --table")
    print(f"plot written to {args.out}")
    return 0


def cmd_inspect(args):
    path = args.path
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == fileio.CHECKPOINT_MAGIC:
        _, header = fileio.load_checkpoint(path)
        info = {
            "kind": "checkpoint",
            "config_hash": header["config_hash"],
            "spec": header["spec"],
            "arrays": [{"name": e["name"], "shape": e["shape"]} for e in header["arrays"]],
            "meta": header["meta"],
        }
    else:
        with open(path) as fh:
            first = fh.readline()
        if first.startswith(fileio.TRAJECTORY_MAGIC):
            tf = fileio.read_trajectory(path)
            info = {
                "kind": "trajectory", "controller": tf.controller, "seed": tf.seed,
                "config_hash": tf.config_hash, "steps": tf.n_steps,
                "agents": tf.n_agents,
                "observations": tf.observations is not None,
            }
        elif first.startswith(fileio.TABLE_MAGIC):
            meta, rows = fileio.read_table(path)
            info = {"kind": "sweep table", "meta": meta, "rows": rows}
        else:
            raise FormatError(f"{path}: unrecognized file type")
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flockgnn",
        description="Decentralized flocking with graph neural controllers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a controller by imitation")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help=f"override the training seed (also {ENV_SEED})")
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_roll = sub.add_parser("rollout", help="roll out a controller and report cost")
    p_roll.add_argument("--config", required=True)
    group = p_roll.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="trained controller checkpoint")
    group.add_argument("--controller", choices=BASELINES)
    p_roll.add_argument("--seed", type=int, default=None)
    p_roll.add_argument("--out", default=None, help="trajectory file to write")
    p_roll.set_defaults(func=cmd_rollout)

    p_sweep = sub.add_parser("sweep", help="evaluate across one experiment axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated cell values")
    p_sweep.add_argument("--seeds", type=int, default=None)
    p_sweep.add_argument("--checkpoint", default=None,
                         help="reuse one checkpoint for every cell")
    p_sweep.add_argument("--controller", choices=BASELINES, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render trajectory snapshots or sweep curves")
    p_plot.add_argument("--trajectory", nargs="+", default=None)
    p_plot.add_argument("--table", default=None)
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.set_defaults(func=cmd_plot)

    p_inspect = sub.add_parser("inspect", help="print artifact metadata")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
