"""Command-line entry point: train, evaluate, sweep, batch-stats.

Every command reads a CSV event log, emits machine-readable JSON (all
payloads carry schema_version) and is deterministic given its inputs, the
seed and a fixed thread count. Settings resolve in three layers: hard
defaults < --config key=value file < explicit flags.

Thread control: the TRAJ_NUM_THREADS environment variable caps the numeric
library's thread pool; --deterministic forces a single thread so floating
point reductions have a fixed order.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    DataFormatError,
    chronological_split,
    compute_deltas,
    load_interactions,
    prev_item_sequence,
    windowed_split,
)
from .evaluation import evaluate_interactions, evaluate_state_change
from .model import (
    CheckpointError,
    ModelDims,
    init_params,
    init_state,
    load_checkpoint,
    save_checkpoint,
)
from .tbatch import assign_batches, plan_stats
from .train import (
    TrainConfig,
    batched_forward,
    run_training,
    sequential_forward,
    set_within_batch_threads,
)

__all__ = ["main"]

SCHEMA_VERSION = 1

# keep threadpoolctl limiters alive for the life of the process; letting the
# controller object die would restore the previous limits
_THREAD_LIMITS = []

_DEFAULTS = {
    "task": "interaction",
    "epochs": 50,
    "lr": 1e-3,
    "weight_decay": 1e-5,
    "dim": 128,
    "lambda_u": 1.0,
    "lambda_i": 1.0,
    "state_loss_scale": 1.0,
    "seed": 0,
    "deterministic": False,
    "detach": "per-batch",
    "delta_scale": "mean-std",
    "out": "runs",
}

# chronological split defaults per task
_SPLIT_DEFAULTS = {
    "interaction": (80.0, 10.0),
    "state_change": (60.0, 20.0),
}

_KEY_TYPES = {
    "data": str,
    "task": str,
    "epochs": int,
    "lr": float,
    "weight_decay": float,
    "dim": int,
    "train_pct": float,
    "val_pct": float,
    "lambda_u": float,
    "lambda_i": float,
    "state_loss_scale": float,
    "seed": int,
    "deterministic": bool,
    "detach": str,
    "delta_scale": str,
    "out": str,
    "checkpoint": str,
    "dump_ranks": str,
    "sweep_train_pct": str,
    "sweep_dim": str,
}


def _parse_config_file(path: str) -> dict:
    """key=value lines; blank lines and #-comments ignored; keys may use
    dashes or underscores."""
    settings = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in _KEY_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        caster = _KEY_TYPES[key]
        if caster is bool:
            settings[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            settings[key] = caster(value)
    return settings


def _resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win). The keys the user
    actually set (either way) are recorded under "_explicit" so commands can
    tell a default apart from a choice, e.g. when a checkpoint carries its
    own training-time settings."""
    merged = dict(_DEFAULTS)
    explicit: set[str] = set()
    if getattr(args, "config", None):
        from_file = _parse_config_file(args.config)
        merged.update(from_file)
        explicit |= set(from_file)
    for key in _KEY_TYPES:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
            explicit.add(key)
    task = merged.get("task", "interaction")
    tp, vp = _SPLIT_DEFAULTS[task]
    merged.setdefault("train_pct", tp)
    merged.setdefault("val_pct", vp)
    merged["_explicit"] = explicit
    return merged


def _apply_thread_limits(settings: dict) -> None:
    limit = None
    if settings.get("deterministic"):
        limit = 1
    else:
        env = os.environ.get("TRAJ_NUM_THREADS", "").strip()
        if env:
            limit = max(1, int(env))
    if limit is None:
        return
    _THREAD_LIMITS.append(set_within_batch_threads(limit))


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig(
        epochs=settings["epochs"],
        learning_rate=settings["lr"],
        weight_decay=settings["weight_decay"],
        embedding_dim=settings["dim"],
        lambda_u=settings["lambda_u"],
        lambda_i=settings["lambda_i"],
        state_loss_scale=settings["state_loss_scale"],
        seed=settings["seed"],
        detach_policy=settings["detach"],
        task=settings["task"],
        train_pct=settings["train_pct"],
        val_pct=settings["val_pct"],
        test_pct=settings.get("test_pct"),
        delta_scale=settings["delta_scale"],
    )


def _config_meta(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "weight_decay": cfg.weight_decay,
        "embedding_dim": cfg.embedding_dim,
        "lambda_u": cfg.lambda_u,
        "lambda_i": cfg.lambda_i,
        "state_loss_scale": cfg.state_loss_scale,
        "seed": cfg.seed,
        "detach_policy": cfg.detach_policy,
        "task": cfg.task,
        "train_pct": cfg.train_pct,
        "val_pct": cfg.val_pct,
        "test_pct": cfg.test_pct,
        "delta_scale": cfg.delta_scale,
    }


def _load_dataset(settings: dict):
    path = settings.get("data")
    if not path:
        raise ValueError("--data is required")
    return load_interactions(path)


def _test_metrics(ds, params, state, cfg: TrainConfig, split, deltas, prevs):
    """Advance a copy of the end-of-train state through validation, then
    score the test window. Returns (report, rank records or None)."""
    state = state.copy()
    if split.val_end > split.train_end:
        sequential_forward(
            ds, params, state, split.train_end, split.val_end, deltas, prevs
        )
    if cfg.task == "interaction":
        return evaluate_interactions(
            ds, params, state, deltas, prevs, split.val_end, split.test_end
        )
    report = evaluate_state_change(
        ds, params, state, deltas, prevs, split.val_end, split.test_end
    )
    return report, None


def cmd_train(settings: dict) -> int:
    ds = _load_dataset(settings)
    cfg = _train_config(settings)
    if cfg.task == "state_change" and not ds.state_labels.any():
        raise ValueError("no state labels in dataset; cannot train state_change task")
    out_dir = Path(settings["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_training(ds, cfg)
    with open(out_dir / "epochs.jsonl", "w", encoding="utf-8") as fh:
        for rep in result.reports:
            fh.write(json.dumps({
                "schema_version": SCHEMA_VERSION,
                "epoch": rep.epoch,
                "total_loss": rep.total_loss,
                "prediction": rep.prediction,
                "user_reg": rep.user_reg,
                "item_reg": rep.item_reg,
                "state_ce": rep.state_ce,
                "val_metric": None if rep.val_metric is None or np.isnan(rep.val_metric)
                else rep.val_metric,
                "seconds": rep.seconds,
                "num_batches": rep.num_batches,
                "optimizer_steps": rep.optimizer_steps,
            }) + "\n")

    ckpt_path = out_dir / "checkpoint.npz"
    save_checkpoint(
        ckpt_path, result.best_params, result.best_state,
        extra={
            "config": _config_meta(cfg),
            "best_epoch": result.best_epoch,
            "best_val_metric": None if np.isnan(result.best_val_metric)
            else result.best_val_metric,
            "data_path": str(settings.get("data")),
        },
    )

    report, _ = _test_metrics(
        ds, result.best_params, result.best_state, cfg,
        result.split, result.deltas, result.prevs,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "task": cfg.task,
        "data": str(settings.get("data")),
        "best_epoch": result.best_epoch,
        "best_val_metric": None if np.isnan(result.best_val_metric)
        else result.best_val_metric,
        "test": report.to_dict(),
        "checkpoint": str(ckpt_path),
        "config": _config_meta(cfg),
    }
    (out_dir / "result.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps(payload))
    return 0


def cmd_evaluate(settings: dict) -> int:
    ckpt = settings.get("checkpoint")
    if not ckpt:
        raise ValueError("--checkpoint is required")
    params, state, extra = load_checkpoint(ckpt)
    ds = _load_dataset(settings)
    d = params.dims
    if d.num_users != ds.num_users or d.num_items != ds.num_items \
            or d.feature_dim != ds.features.shape[1]:
        raise ValueError(
            f"checkpoint/dataset mismatch: checkpoint built for "
            f"{d.num_users} users x {d.num_items} items x {d.feature_dim} features, "
            f"dataset has {ds.num_users} x {ds.num_items} x {ds.features.shape[1]}"
        )
    # settings the user did not state explicitly default to what the
    # checkpoint was trained with, so a bare `evaluate --checkpoint --data`
    # reproduces the training run's protocol
    saved = extra.get("config", {})
    explicit = settings.get("_explicit", set())
    eval_settings = dict(settings)
    for key in ("task", "train_pct", "val_pct", "delta_scale"):
        if key not in explicit and saved.get(key) is not None:
            eval_settings[key] = saved[key]
    eval_settings["dim"] = d.embedding_dim
    eval_settings["epochs"] = 1
    cfg = _train_config(eval_settings)
    if saved.get("test_pct") is not None:
        cfg.test_pct = saved["test_pct"]
        split = windowed_split(ds, cfg.train_pct, cfg.val_pct, cfg.test_pct)
    else:
        split = chronological_split(ds, cfg.train_pct, cfg.val_pct)
    deltas = compute_deltas(ds, cfg.delta_scale, train_end=split.train_end)
    prevs = prev_item_sequence(ds)
    report, records = _test_metrics(ds, params, state, cfg, split, deltas, prevs)

    dump = settings.get("dump_ranks")
    if dump and records is not None:
        with open(dump, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seq_id", "rank", "reciprocal_rank"])
            for rec in records:
                writer.writerow([rec.seq_id, rec.rank, repr(rec.reciprocal_rank)])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "task": cfg.task,
        "checkpoint": str(ckpt),
        "data": str(settings.get("data")),
        **report.to_dict(),
    }
    if "out" in settings.get("_explicit", set()):
        out_dir = Path(settings["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8"
        )
    print(json.dumps(payload))
    return 0


def _parse_axis(text: str | None, caster):
    if not text:
        return None
    return [caster(tok) for tok in text.split(",") if tok.strip()]


def cmd_sweep(settings: dict) -> int:
    ds = _load_dataset(settings)
    train_axis = _parse_axis(settings.get("sweep_train_pct"), float)
    dim_axis = _parse_axis(settings.get("sweep_dim"), int)
    if not train_axis and not dim_axis:
        raise ValueError("sweep needs --sweep-train-pct and/or --sweep-dim")
    base_cfg = _train_config(settings)
    if train_axis is None:
        train_axis = [base_cfg.train_pct]
    if dim_axis is None:
        dim_axis = [base_cfg.embedding_dim]

    grid = []
    for tp in train_axis:
        for dim in dim_axis:
            point = (tp, dim)
            if point in grid:
                print(f"warning: duplicate grid point train_pct={tp} dim={dim}, "
                      "skipping", file=sys.stderr)
                continue
            grid.append(point)

    out_dir = Path(settings["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for tp, dim in grid:
        cfg = _train_config({**settings, "train_pct": tp, "dim": dim})
        # fixed-size validation/test windows right after the train window so
        # points with different train_pct are scored on comparable data
        cfg.test_pct = cfg.val_pct
        row = {"train_pct": tp, "dim": dim, "seed": cfg.seed}
        try:
            result = run_training(ds, cfg)
            report, _ = _test_metrics(
                ds, result.best_params, result.best_state, cfg,
                result.split, result.deltas, result.prevs,
            )
            row.update(report.to_dict())
            row["best_epoch"] = result.best_epoch
            row["status"] = "ok"
        except Exception as e:  # keep sweeping, report at the end
            failures += 1
            row["status"] = "error"
            row["error"] = str(e)
            print(f"error: grid point train_pct={tp} dim={dim} failed: {e}",
                  file=sys.stderr)
        rows.append(row)

    payload = {"schema_version": SCHEMA_VERSION, "task": settings["task"],
               "points": rows}
    (out_dir / "sweep.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    fields = ["train_pct", "dim", "seed", "status", "mrr", "recall_at_10", "auc",
              "n_test_interactions", "wall_clock_seconds", "best_epoch", "error"]
    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
    print(json.dumps(payload))
    return 1 if failures else 0


def cmd_batch_stats(settings: dict) -> int:
    ds = _load_dataset(settings)
    plan = assign_batches(ds)
    stats = plan_stats(plan)

    dims = ModelDims(ds.num_users, ds.num_items, settings["dim"],
                     ds.features.shape[1])
    params = init_params(dims, settings["seed"])
    deltas = compute_deltas(ds, settings["delta_scale"])
    prevs = prev_item_sequence(ds)

    requested = int(os.environ.get("TRAJ_NUM_THREADS", "4") or 4)
    effective, limiter = set_within_batch_threads(requested)
    _THREAD_LIMITS.append(limiter)

    state_seq = init_state(dims, settings["seed"])
    t0 = time.perf_counter()
    sequential_forward(ds, params, state_seq, 0, len(ds), deltas, prevs)
    seq_seconds = time.perf_counter() - t0

    state_bat = init_state(dims, settings["seed"])
    t0 = time.perf_counter()
    batched_forward(ds, params, state_bat, plan, deltas, prevs)
    bat_seconds = time.perf_counter() - t0

    divergence = max(
        float(np.abs(state_seq.user_dyn - state_bat.user_dyn).max()),
        float(np.abs(state_seq.item_dyn - state_bat.item_dyn).max()),
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "data": str(settings.get("data")),
        "stats": stats,
        "embedding_dim": settings["dim"],
        "requested_threads": requested,
        "effective_threads": effective,
        "sequential_seconds": seq_seconds,
        "batched_seconds": bat_seconds,
        "speedup": seq_seconds / bat_seconds if bat_seconds > 0 else None,
        "state_max_divergence": divergence,
    }
    print(json.dumps(payload))
    return 0


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--data", help="interaction CSV path")
    sp.add_argument("--config", help="key=value settings file (flags win)")
    sp.add_argument("--task", choices=["interaction", "state_change"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--weight-decay", type=float, dest="weight_decay")
    sp.add_argument("--dim", type=int, help="dynamic embedding dimension")
    sp.add_argument("--train-pct", type=float, dest="train_pct")
    sp.add_argument("--val-pct", type=float, dest="val_pct")
    sp.add_argument("--lambda-u", type=float, dest="lambda_u")
    sp.add_argument("--lambda-i", type=float, dest="lambda_i")
    sp.add_argument("--state-loss-scale", type=float, dest="state_loss_scale")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action="store_true", default=None,
                    help="single-threaded, bit-reproducible runs")
    sp.add_argument("--detach", choices=["per-batch", "none"],
                    help="backprop truncation policy")
    sp.add_argument("--delta-scale", choices=["mean-std", "max", "none"],
                    dest="delta_scale")
    sp.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traj",
        description="Dynamic user/item embedding trajectories from "
                    "timestamped interaction logs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common_flags(sp)

    sp = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _add_common_flags(sp)
    sp.add_argument("--checkpoint", help="checkpoint .npz written by train")
    sp.add_argument("--dump-ranks", dest="dump_ranks",
                    help="write per-interaction rank records to this CSV")

    sp = sub.add_parser("sweep", help="grid of training runs")
    _add_common_flags(sp)
    sp.add_argument("--sweep-train-pct", dest="sweep_train_pct",
                    help="comma-separated train percentages")
    sp.add_argument("--sweep-dim", dest="sweep_dim",
                    help="comma-separated embedding dimensions")

    sp = sub.add_parser("batch-stats",
                        help="batch plan statistics and forward-pass timings")
    _add_common_flags(sp)
    return parser


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "batch-stats": cmd_batch_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _resolve_settings(args)
        _apply_thread_limits(settings)
        return _COMMANDS[args.command](settings)
    except (DataFormatError, CheckpointError, ValueError, OSError,
            FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
