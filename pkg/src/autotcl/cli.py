"""Command-line entry point.

Subcommands: train, eval-forecast, ablate, export-masks, plot-losses.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import time

import numpy as np
import torch

from .config import (
    VARIANTS,
    ExperimentConfig,
    canonical_json,
    config_hash,
    load_config,
)
from .data import (
    TimeSeriesDataset,
    load_series,
    select_channels,
    standardize,
)
from .encoder import Encoder
from .errors import (
    ConfigError,
    FormatError,
    NumericalError,
    SchemaError,
    ValidationError,
)
from .evaluation import run_forecast_evaluation, write_forecast_csv
from .trainer import Trainer, load_checkpoint, trainer_from_checkpoint, training_windows

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

HOURLY_HORIZONS = (24, 48, 168, 336, 720)
MINUTE_HORIZONS = (24, 48, 96, 288, 672)


def resolve_data_path(name_or_path: str) -> str:
    """A dataset argument is a path, or a name under AUTOTCL_DATA_DIR."""
    if not name_or_path:
        raise ConfigError("no dataset given", key="dataset")
    if os.path.exists(name_or_path):
        return name_or_path
    root = os.environ.get("AUTOTCL_DATA_DIR")
    if root:
        candidate = os.path.join(root, name_or_path)
        if os.path.exists(candidate):
            return candidate
    raise FormatError(
        f"dataset {name_or_path!r} not found (also looked under AUTOTCL_DATA_DIR)"
    )


def prepare_dataset(cfg: ExperimentConfig, dataset_arg: str | None = None) -> TimeSeriesDataset:
    path = resolve_data_path(dataset_arg or cfg.dataset)
    ds = load_series(path, cfg.data_format)
    if ds.task == "forecasting":
        ds = select_channels(ds, cfg.setting)
    return standardize(ds)


def dataset_fingerprint(ds: TimeSeriesDataset) -> str:
    hasher = hashlib.sha256()
    hasher.update(np.ascontiguousarray(ds.values).tobytes())
    if ds.labels is not None:
        hasher.update(np.ascontiguousarray(ds.labels).tobytes())
    return hasher.hexdigest()


def _ensure_out(path: str, force: bool) -> None:
    if os.path.exists(path):
        if not force:
            raise ConfigError(
                f"output path {path!r} exists; pass --force to overwrite"
            )
        if os.path.isdir(path):
            shutil.rmtree(path)
        else:
            os.remove(path)
    os.makedirs(path, exist_ok=True)


def _refuse_overwrite(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ConfigError(f"output path {path!r} exists; pass --force to overwrite")


def method_label(cfg: ExperimentConfig) -> str:
    return cfg.method if cfg.variant == "full" else f"{cfg.method}-{cfg.variant}"


def write_manifest(out_dir: str, cfg: ExperimentConfig, ds: TimeSeriesDataset, extra: dict) -> dict:
    manifest = {
        "run_id": os.path.basename(os.path.normpath(out_dir)),
        "config_hash": config_hash(cfg),
        "dataset_name": ds.name,
        "dataset_fingerprint": dataset_fingerprint(ds),
        "split_ratios": "60/20/20 chronological" if ds.task == "forecasting" else "archive",
        "metrics_scale": "standardized",
        "created_unix": int(time.time()),
        "outputs": extra,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _train_run(cfg: ExperimentConfig, out_dir: str, dataset_arg: str | None = None):
    ds = prepare_dataset(cfg, dataset_arg)
    windows = training_windows(ds, cfg)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(cfg) + "\n")
    trainer = Trainer(cfg, in_channels=windows.shape[-1], run_dir=out_dir)
    history = trainer.fit(windows)
    write_manifest(
        out_dir,
        cfg,
        ds,
        extra={
            "config": "config.json",
            "log": "train_log.jsonl",
            "final_checkpoint": os.path.basename(trainer.last_checkpoint or ""),
        },
    )
    return trainer, ds, history


def _load_run(run_dir: str):
    """Read back a run directory: resolved config plus newest checkpoint."""
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.isfile(cfg_path):
        raise ConfigError(f"no config.json under {run_dir!r}; is this a run directory?")
    cfg = load_config(cfg_path)
    ckpts = sorted(
        name
        for name in os.listdir(run_dir)
        if name.startswith("checkpoint_ep") and name.endswith(".pt")
    )
    if not ckpts:
        raise ValidationError(f"no checkpoint under {run_dir!r}")
    state = load_checkpoint(os.path.join(run_dir, ckpts[-1]))
    return cfg, state


def _parse_horizons(text: str | None, dataset_name: str) -> list[int]:
    if text:
        try:
            horizons = [int(tok) for tok in text.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"bad --horizons value {text!r}", key="horizons")
        if not horizons or any(h < 1 for h in horizons):
            raise ConfigError(f"bad --horizons value {text!r}", key="horizons")
        return horizons
    grid = MINUTE_HORIZONS if "ettm" in dataset_name.lower() else HOURLY_HORIZONS
    return list(grid)


def _forecast_rows(cfg: ExperimentConfig, ds_name: str, results) -> list[dict]:
    rows = []
    for res in results:
        rows.append(
            {
                "method": method_label(cfg),
                "dataset": ds_name,
                "setting": res.setting,
                "horizon": res.horizon,
                "mse": res.mse,
                "mae": res.mae,
                "seed": cfg.seed,
                "config_hash": config_hash(cfg),
            }
        )
    if len(results) > 1:
        rows.append(
            {
                "method": method_label(cfg),
                "dataset": ds_name,
                "setting": results[0].setting,
                "horizon": "avg",
                "mse": float(np.mean([r.mse for r in results])),
                "mae": float(np.mean([r.mae for r in results])),
                "seed": cfg.seed,
                "config_hash": config_hash(cfg),
            }
        )
    return rows


# ----- subcommands -----


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg.validate()
    _ensure_out(args.out, args.force)
    trainer, ds, history = _train_run(cfg, args.out)
    last = history.epochs[-1]
    print(
        f"run {os.path.basename(os.path.normpath(args.out))}: "
        f"{cfg.epochs} epochs, final contrastive loss {last['l_con']:.6f}"
    )
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_eval_forecast(args) -> int:
    cfg, state = _load_run(args.run_dir)
    if args.setting:
        setting = {"uni": "univariate", "multi": "multivariate"}[args.setting]
        cfg = dataclasses.replace(cfg, setting=setting)
        cfg.validate()
    encoder = Encoder(state["in_channels"], cfg.encoder_config)
    encoder.load_state_dict(state["encoder_state"])

    ds = prepare_dataset(cfg, args.dataset)
    if ds.task != "forecasting":
        raise ConfigError("eval-forecast needs a forecasting dataset", key="dataset")
    if ds.n_channels != state["in_channels"]:
        raise ConfigError(
            f"dataset has {ds.n_channels} channels under setting {cfg.setting!r} "
            f"but the encoder was trained on {state['in_channels']}"
        )
    horizons = _parse_horizons(args.horizons, ds.name)
    results = run_forecast_evaluation(encoder, ds, cfg.window_len, horizons, cfg.setting)

    out = args.out or os.path.join(args.run_dir, "forecast_results.csv")
    _refuse_overwrite(out, args.force)
    write_forecast_csv(out, _forecast_rows(cfg, ds.name, results))
    for res in results:
        print(f"H={res.horizon:<4d} mse={res.mse:.6f} mae={res.mae:.6f} (n={res.n_test})")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, variant=args.variant)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()
    _ensure_out(args.out, args.force)
    trainer, ds, history = _train_run(cfg, args.out)
    if ds.task != "forecasting":
        raise ConfigError("ablate evaluates forecasting datasets", key="dataset")
    horizons = _parse_horizons(args.horizons, ds.name)
    results = run_forecast_evaluation(
        trainer.encoder, ds, cfg.window_len, horizons, cfg.setting
    )
    out = os.path.join(args.out, "results.csv")
    write_forecast_csv(out, _forecast_rows(cfg, ds.name, results))
    for res in results:
        print(f"H={res.horizon:<4d} mse={res.mse:.6f} mae={res.mae:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_export_masks(args) -> int:
    cfg, state = _load_run(args.run_dir)
    trainer = trainer_from_checkpoint(state)
    ds = prepare_dataset(cfg, args.dataset)
    if ds.n_channels != state["in_channels"]:
        raise ConfigError(
            f"dataset has {ds.n_channels} channels but the run used {state['in_channels']}"
        )
    lo, hi = ds.split_range(args.split)
    T = cfg.window_len
    starts = list(range(lo, hi - T + 1, T))[: args.n]
    if len(starts) < args.n:
        raise ValidationError(
            f"split {args.split} admits only {len(starts)} non-overlapping windows"
        )
    out_dir = args.out or os.path.join(args.run_dir, "masks")
    _refuse_overwrite(out_dir, args.force)
    if os.path.exists(out_dir):
        shutil.rmtree(out_dir)
    os.makedirs(out_dir)

    x = torch.as_tensor(
        np.stack([ds.values[s : s + T] for s in starts]), dtype=torch.float32
    )
    with torch.no_grad():
        view = trainer.compute_view(x, mode="eval")
    paths = []
    for i, start in enumerate(starts):
        path = os.path.join(out_dir, f"mask_{i:03d}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "pi", "h", "g", "v_star"])
            for step in range(T):
                writer.writerow(
                    [
                        start + step,
                        float(x[i, step, 0]),
                        float(view.masks.pi[i, step]),
                        float(view.masks.h[i, step]),
                        float(view.masks.g[i, step]),
                        float(view.v_star[i, step, 0]),
                    ]
                )
        paths.append(path)
    print("\n".join(paths))
    return EXIT_OK


def cmd_plot_losses(args) -> int:
    log_path = os.path.join(args.run_dir, "train_log.jsonl")
    if not os.path.isfile(log_path):
        raise FormatError(f"no training log at {log_path}")
    rows = []
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise FormatError(f"training log {log_path} is empty")

    by_epoch: dict[int, list[dict]] = {}
    for row in rows:
        by_epoch.setdefault(row["epoch"], []).append(row)
    epochs = sorted(by_epoch)

    def epoch_mean(key):
        series = []
        for e in epochs:
            vals = [r[key] for r in by_epoch[e] if key in r]
            series.append(float(np.mean(vals)) if vals else None)
        return series

    l_con = epoch_mean("l_con")
    l_aug = epoch_mean("l_aug")
    has_aug = any(v is not None for v in l_aug)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, l_con, marker="o", label="contrastive loss")
    if has_aug:
        pts = [(e, v) for e, v in zip(epochs, l_aug) if v is not None]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label="augmentation loss")
    else:
        ax.plot(epochs, epoch_mean("l_g"), marker="s", label="instance contrast term")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    png_path = os.path.join(args.run_dir, "loss_curves.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)

    side_path = os.path.join(args.run_dir, "loss_curves.json")
    with open(side_path, "w", encoding="utf-8") as fh:
        json.dump({"epochs": epochs, "l_con": l_con, "l_aug": l_aug}, fh)
    print(f"wrote {png_path}")
    return EXIT_OK


# ----- argument parsing -----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autotcl",
        description="Contrastive time series representation learning with a "
        "learned factorized augmentation network",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train encoder and augmentation networks")
    p.add_argument("config", help="path to a flat JSON experiment config")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-forecast", help="linear-probe forecasting evaluation")
    p.add_argument("run_dir")
    p.add_argument("dataset", help="dataset path or name under AUTOTCL_DATA_DIR")
    p.add_argument("--horizons", default=None, help="comma-separated horizons")
    p.add_argument("--setting", choices=["uni", "multi"], default=None)
    p.add_argument("--out", default=None, help="results CSV path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval_forecast)

    p = sub.add_parser("ablate", help="train a variant and evaluate it")
    p.add_argument("config")
    p.add_argument("variant", choices=[v for v in VARIANTS])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--horizons", default="24,48,168")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-masks", help="export eval-mode masks for inspection")
    p.add_argument("run_dir")
    p.add_argument("dataset")
    p.add_argument("--n", type=int, default=1, help="number of windows")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--out", default=None, help="output directory (default run_dir/masks)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export_masks)

    p = sub.add_parser("plot-losses", help="plot training loss curves")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot_losses)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        message = f"numerical abort: {exc}"
        if exc.checkpoint_path:
            message += f" (last good checkpoint: {exc.checkpoint_path})"
        print(message, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
