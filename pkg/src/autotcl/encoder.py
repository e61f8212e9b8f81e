"""Representation network: dilated conv encoder with timestamp masking noise.

The view-diversity noise is realized inside the encoder as random zeroing of
whole timestamps in the first hidden layer, so the time-domain view stays
clean and invertible while the contrastive passes still see stochastic
variation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import KERNEL_SIZE, DilatedConvStack
from .errors import NumericalError, ValidationError


@dataclass
class EncoderConfig:
    depth: int = 10
    hidden_dim: int = 64
    repr_dim: int = 320
    dropout: float = 0.0
    mask_prob: float = 0.5  # probability a timestamp's hidden state is zeroed

    def validate(self) -> None:
        if self.depth < 1:
            raise ValidationError(f"depth must be >= 1, got {self.depth}")
        if self.repr_dim < 1:
            raise ValidationError(f"repr_dim must be >= 1, got {self.repr_dim}")
        if self.hidden_dim < 1:
            raise ValidationError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValidationError(f"mask_prob must be in [0, 1], got {self.mask_prob}")


@dataclass
class Representation:
    per_step: torch.Tensor  # (..., T, D)
    pooled: torch.Tensor  # (..., D), max over time


def receptive_field(cfg: EncoderConfig) -> int:
    """Timestamps visible to one output step: 1 + sum_l (k-1) * 2^l."""
    return 1 + (KERNEL_SIZE - 1) * (2**cfg.depth - 1)


class Encoder(nn.Module):
    def __init__(self, in_channels: int, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.in_channels = in_channels
        self.input_proj = nn.Linear(in_channels, cfg.hidden_dim)
        self.stack = DilatedConvStack(cfg.hidden_dim, cfg.depth)
        self.head = nn.Linear(cfg.hidden_dim, cfg.repr_dim)

    def forward(
        self,
        x: torch.Tensor,
        apply_eta: bool = False,
        rng: torch.Generator | None = None,
    ) -> Representation:
        """Embed a (T, F) window or (B, T, F) batch.

        apply_eta=True zeroes each timestamp of the first hidden layer with
        probability mask_prob (and applies dropout when configured); both are
        off for clean/eval embeddings. All randomness comes from ``rng``.
        """
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.in_channels:
            raise ValidationError(
                f"expected {self.in_channels} channels, got {x.shape[-1]}"
            )

        hidden = self.input_proj(x)
        if apply_eta and self.cfg.mask_prob > 0:
            keep = torch.rand(hidden.shape[:2], generator=rng, dtype=hidden.dtype)
            keep = (keep >= self.cfg.mask_prob).to(hidden.dtype)
            hidden = hidden * keep.unsqueeze(-1)

        feats = self.stack(hidden)
        if apply_eta and self.cfg.dropout > 0:
            keep = torch.rand(feats.shape, generator=rng, dtype=feats.dtype)
            keep = (keep >= self.cfg.dropout).to(feats.dtype) / (1.0 - self.cfg.dropout)
            feats = feats * keep

        per_step = self.head(feats)
        if not torch.isfinite(per_step).all():
            raise NumericalError("non-finite encoder output", context="head")
        pooled = per_step.max(dim=1).values
        if squeeze:
            per_step, pooled = per_step.squeeze(0), pooled.squeeze(0)
        return Representation(per_step=per_step, pooled=pooled)
