"""Alternating optimization of the encoder and augmentation networks.

Each batch computes one augmented view. On epochs where
``epoch % aug_period == 0`` the augmentation optimizer steps first on the
augmentation objective (encoder parameters participate in that graph but are
never stepped by it); the encoder then steps on the contrastive objective
against the detached view. All randomness flows through named generator
streams derived from the experiment seed, so runs are bit-reproducible and
checkpoints can resume mid-schedule without drift.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .augment import (
    PI_CLAMP,
    AugmentationNetwork,
    AugmentedView,
    MaskPair,
    compose_view,
    static_augment,
)
from .backbone import init_weights
from .config import ExperimentConfig
from .data import TimeSeriesDataset, instance_windows, make_windows
from .encoder import Encoder
from .errors import NumericalError, SchemaError, ValidationError
from .objectives import LossReport, aug_loss, contrastive_loss, global_contrast_loss

SCHEMA_VERSION = 1
STREAM_NAMES = ("init", "data", "eta", "concrete", "triplet", "static")
LEARNED_VARIANTS = ("full", "wo_h", "wo_g", "wo_dv", "adversarial")
STATIC_VARIANTS = ("cutout", "jitter", "random_aug")


def stream_seed(seed: int, name: str) -> int:
    """Derive a child seed for a named stream from the experiment seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def make_streams(seed: int) -> dict[str, torch.Generator]:
    return {
        name: torch.Generator().manual_seed(stream_seed(seed, name))
        for name in STREAM_NAMES
    }


def weights_fingerprint(module: nn.Module) -> str:
    """Content hash of all parameters and buffers, for isolation checks."""
    hasher = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        hasher.update(name.encode("utf-8"))
        hasher.update(tensor.detach().cpu().numpy().tobytes())
    return hasher.hexdigest()


@dataclass
class TrainingHistory:
    """Per-epoch summaries and per-step loss records, as plain dicts."""

    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def loss_curve(self, key: str) -> list:
        return [rec.get(key) for rec in self.epochs]


def training_windows(ds: TimeSeriesDataset, cfg: ExperimentConfig) -> np.ndarray:
    """Materialize the (N, T, F) training window array for a dataset.

    Forecasting slides config-length windows over the train split;
    classification uses whole instances as windows.
    """
    if ds.task == "classification":
        inst, _ = instance_windows(ds)
        return inst
    batches = make_windows(ds, cfg.window_len, cfg.stride, "train", cfg.batch_size)
    return np.concatenate([b.windows for b in batches], axis=0)


class Trainer:
    def __init__(self, cfg: ExperimentConfig, in_channels: int, run_dir: str | None = None):
        cfg.validate()
        self.cfg = cfg
        self.in_channels = in_channels
        self.run_dir = run_dir
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
        self.streams = make_streams(cfg.seed)

        self.encoder = Encoder(in_channels, cfg.encoder_config)
        init_weights(self.encoder, self.streams["init"])
        self.uses_aug_net = cfg.variant in LEARNED_VARIANTS
        if self.uses_aug_net:
            self.aug_net = AugmentationNetwork(
                in_channels,
                hidden_dim=cfg.aug_hidden_dim,
                depth=cfg.aug_depth,
                g_floor=cfg.g_floor,
                concrete=cfg.concrete,
            )
            init_weights(self.aug_net, self.streams["init"])
            self.aug_opt = torch.optim.Adam(
                self.aug_net.parameters(), lr=cfg.lr_aug, betas=(0.9, 0.999)
            )
        else:
            self.aug_net = None
            self.aug_opt = None
        self.enc_opt = torch.optim.Adam(
            self.encoder.parameters(), lr=cfg.lr_encoder, betas=(0.9, 0.999)
        )

        self.history = TrainingHistory()
        self.epoch_next = 0
        self.global_step = 0
        self.aug_update_count = 0
        self.last_checkpoint: str | None = None

    # ----- per-batch pieces, separately testable -----

    def compute_view(self, x: torch.Tensor, mode: str = "train") -> AugmentedView:
        """One augmented view per window, per the configured variant."""
        cfg = self.cfg
        if self.uses_aug_net:
            masks = self.aug_net(x, mode=mode, rng=self.streams["concrete"])
            if cfg.variant == "wo_h":
                masks = MaskPair(
                    pi=torch.full_like(masks.pi, 1.0 - PI_CLAMP),
                    h=torch.ones_like(masks.h),
                    g=masks.g,
                )
            elif cfg.variant == "wo_g":
                masks = MaskPair(pi=masks.pi, h=masks.h, g=torch.ones_like(masks.g))
            return compose_view(x, masks, g_floor=cfg.g_floor)
        if cfg.variant == "wo_aug":
            ones = torch.ones(x.shape[:-1], dtype=x.dtype)
            masks = MaskPair(
                pi=torch.full(x.shape[:-1], 1.0 - PI_CLAMP, dtype=x.dtype),
                h=ones,
                g=ones.clone(),
            )
            return AugmentedView(v=x, v_star=x, masks=masks)
        if cfg.variant == "cutout":
            return static_augment(x, "cutout", self.streams["static"], l_frac=cfg.cutout_frac)
        if cfg.variant == "jitter":
            return static_augment(x, "jitter", self.streams["static"], sigma=cfg.jitter_sigma)
        return static_augment(x, "random_aug", self.streams["static"])

    def aug_step(self, x: torch.Tensor, view: AugmentedView):
        """Step the augmentation optimizer once; encoder weights untouched."""
        cfg = self.cfg
        if cfg.variant == "adversarial":
            z_x = self.encoder(x).pooled
            z_v = self.encoder(view.v).pooled
            total = -global_contrast_loss(z_x, z_v, cfg.temperature)
            l_pri = l_t = None
        else:
            total, part_pri, part_t = aug_loss(
                x,
                view.v_star,
                view.masks.pi,
                view.masks.h,
                self.encoder,
                cfg.l0_weight,
                cfg.continuity_weight,
                rng=self.streams["triplet"],
                concrete=cfg.concrete,
            )
            l_pri, l_t = float(part_pri.detach()), float(part_t.detach())
        if not torch.isfinite(total):
            raise NumericalError(
                "non-finite augmentation loss",
                context=f"step {self.global_step}",
                checkpoint_path=self.last_checkpoint,
            )
        self.aug_opt.zero_grad(set_to_none=True)
        self.encoder.zero_grad(set_to_none=True)
        total.backward()
        self.aug_opt.step()
        self.encoder.zero_grad(set_to_none=True)  # discard gradients never meant to step
        self.aug_update_count += 1
        return float(total.detach()), l_pri, l_t

    def encoder_step(self, x: torch.Tensor, view: AugmentedView):
        """Step the encoder optimizer on the contrastive objective."""
        cfg = self.cfg
        apply_eta = cfg.variant != "wo_dv"
        v = view.v.detach()
        rep_x = self.encoder(x, apply_eta=apply_eta, rng=self.streams["eta"])
        rep_v = self.encoder(v, apply_eta=apply_eta, rng=self.streams["eta"])
        total, part_g, part_l = contrastive_loss(
            rep_x.pooled,
            rep_v.pooled,
            rep_v.per_step,
            cfg.segment_len,
            cfg.local_weight,
            cfg.temperature,
        )
        if not torch.isfinite(total):
            raise NumericalError(
                "non-finite contrastive loss",
                context=f"step {self.global_step}",
                checkpoint_path=self.last_checkpoint,
            )
        self.enc_opt.zero_grad(set_to_none=True)
        total.backward()
        self.enc_opt.step()
        return (
            float(total.detach()),
            float(part_g.detach()),
            None if part_l is None else float(part_l.detach()),
        )

    def train_epoch(self, windows: torch.Tensor, epoch: int) -> list[LossReport]:
        cfg = self.cfg
        perm = torch.randperm(windows.shape[0], generator=self.streams["data"])
        update_aug = self.uses_aug_net and (epoch % cfg.aug_period == 0)
        reports = []
        for i in range(0, windows.shape[0], cfg.batch_size):
            x = windows[perm[i : i + cfg.batch_size]]
            view = self.compute_view(x)
            l_aug = l_pri = l_t = None
            if update_aug:
                l_aug, l_pri, l_t = self.aug_step(x, view)
            l_con, l_g, l_l = self.encoder_step(x, view)
            report = LossReport(
                batch_size=x.shape[0],
                l_g=l_g,
                l_con=l_con,
                l_l=l_l,
                l_pri=l_pri,
                l_t=l_t,
                l_aug=l_aug,
            )
            reports.append(report)
            self.history.steps.append(report.to_record(self.global_step, epoch))
            self.global_step += 1
        return reports

    # ----- full loop -----

    def fit(self, windows, stop_after: int | None = None) -> TrainingHistory:
        """Run epochs until the configured budget, or ``stop_after`` more.

        Stopping early leaves the trainer resumable: saving a checkpoint and
        reloading reproduces the uninterrupted run bit for bit.
        """
        cfg = self.cfg
        windows = torch.as_tensor(np.asarray(windows), dtype=torch.float32)
        if windows.dim() != 3 or windows.shape[0] < 1:
            raise ValidationError("fit needs a non-empty (N, T, F) window array")
        window_len = windows.shape[1]
        if window_len < 3:
            raise ValidationError(
                f"window length {window_len} too short for the continuity objective"
            )
        if cfg.local_weight > 0 and window_len < 3 * cfg.segment_len:
            raise ValidationError(
                f"window length {window_len} < 3 * segment_len {cfg.segment_len}"
            )
        log_path = os.path.join(self.run_dir, "train_log.jsonl") if self.run_dir else None
        last_epoch = cfg.epochs
        if stop_after is not None:
            last_epoch = min(last_epoch, self.epoch_next + stop_after)
        while self.epoch_next < last_epoch:
            epoch = self.epoch_next
            started = time.perf_counter()
            first_step = len(self.history.steps)
            reports = self.train_epoch(windows, epoch)
            wall = time.perf_counter() - started
            self.epoch_next = epoch + 1
            record = _epoch_summary(epoch, reports, wall)
            self.history.epochs.append(record)
            if self.run_dir and (
                (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs
            ):
                path = os.path.join(self.run_dir, f"checkpoint_ep{epoch + 1:04d}.pt")
                record["checkpoint_path"] = self.save(path)
            if log_path:
                with open(log_path, "a", encoding="utf-8") as fh:
                    for row in self.history.steps[first_step:]:
                        fh.write(json.dumps(row) + "\n")
        return self.history

    # ----- persistence -----

    def state_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.cfg.to_dict(),
            "in_channels": self.in_channels,
            "epoch_next": self.epoch_next,
            "global_step": self.global_step,
            "aug_update_count": self.aug_update_count,
            "encoder_state": self.encoder.state_dict(),
            "enc_opt_state": self.enc_opt.state_dict(),
            "aug_state": self.aug_net.state_dict() if self.aug_net else None,
            "aug_opt_state": self.aug_opt.state_dict() if self.aug_opt else None,
            "rng_states": {name: gen.get_state() for name, gen in self.streams.items()},
            "history": {"epochs": self.history.epochs, "steps": self.history.steps},
        }

    def save(self, path: str) -> str:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        torch.save(self.state_dict(), path)
        self.last_checkpoint = path
        return path


def _epoch_summary(epoch: int, reports: list[LossReport], wall: float) -> dict:
    def mean_of(key):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        return sum(vals) / len(vals) if vals else None

    return {
        "epoch": epoch,
        "n_steps": len(reports),
        "wall_clock": wall,
        "checkpoint_path": None,
        "l_g": mean_of("l_g"),
        "l_l": mean_of("l_l"),
        "l_con": mean_of("l_con"),
        "l_pri": mean_of("l_pri"),
        "l_t": mean_of("l_t"),
        "l_aug": mean_of("l_aug"),
    }


def save_checkpoint(trainer: Trainer, path: str) -> str:
    return trainer.save(path)


_REQUIRED_KEYS = (
    "config",
    "in_channels",
    "epoch_next",
    "global_step",
    "aug_update_count",
    "encoder_state",
    "enc_opt_state",
    "rng_states",
    "history",
)


def load_checkpoint(path: str) -> dict:
    """Read and validate a checkpoint file; never returns partial state."""
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise SchemaError(f"cannot read checkpoint {path}: corrupt or wrong format") from exc
    if not isinstance(state, dict) or "schema_version" not in state:
        raise SchemaError("checkpoint has no schema version", expected=SCHEMA_VERSION, found=None)
    if state["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            "checkpoint schema mismatch",
            expected=SCHEMA_VERSION,
            found=state["schema_version"],
        )
    missing = [key for key in _REQUIRED_KEYS if key not in state]
    if missing:
        raise SchemaError(f"checkpoint missing keys {missing}", expected=SCHEMA_VERSION)
    return state


def trainer_from_checkpoint(source, run_dir: str | None = None) -> Trainer:
    """Rebuild a Trainer ready to continue exactly where it stopped."""
    if isinstance(source, str):
        state = load_checkpoint(source)
        ckpt_path = source
    else:
        state, ckpt_path = source, None
    cfg = ExperimentConfig.from_dict(state["config"])
    trainer = Trainer(cfg, state["in_channels"], run_dir=run_dir)
    trainer.encoder.load_state_dict(state["encoder_state"])
    trainer.enc_opt.load_state_dict(state["enc_opt_state"])
    if trainer.aug_net is not None:
        trainer.aug_net.load_state_dict(state["aug_state"])
        trainer.aug_opt.load_state_dict(state["aug_opt_state"])
    for name, rng_state in state["rng_states"].items():
        trainer.streams[name].set_state(rng_state)
    trainer.epoch_next = state["epoch_next"]
    trainer.global_step = state["global_step"]
    trainer.aug_update_count = state["aug_update_count"]
    trainer.history = TrainingHistory(
        epochs=list(state["history"]["epochs"]), steps=list(state["history"]["steps"])
    )
    trainer.last_checkpoint = ckpt_path
    return trainer


def train(
    cfg: ExperimentConfig, ds: TimeSeriesDataset, run_dir: str | None = None
) -> tuple[Encoder, AugmentationNetwork | None, TrainingHistory]:
    """Train on a prepared (already standardized) dataset."""
    windows = training_windows(ds, cfg)
    trainer = Trainer(cfg, in_channels=windows.shape[-1], run_dir=run_dir)
    history = trainer.fit(windows)
    return trainer.encoder, trainer.aug_net, history
