"""Shared dilated 1-d convolution backbone and weight init helpers."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericalError

KERNEL_SIZE = 3


class DilatedBlock(nn.Module):
    """Residual block: GELU then one dilated conv, same-length padding."""

    def __init__(self, in_channels: int, out_channels: int, dilation: int):
        super().__init__()
        padding = (KERNEL_SIZE - 1) // 2 * dilation
        self.conv = nn.Conv1d(
            in_channels, out_channels, KERNEL_SIZE, padding=padding, dilation=dilation
        )
        self.proj = (
            nn.Conv1d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x if self.proj is None else self.proj(x)
        return self.conv(F.gelu(x)) + residual


class DilatedConvStack(nn.Module):
    """``depth`` residual blocks with dilation doubling per block.

    Operates on time-major (B, T, C) tensors; channel count is constant
    through the stack.
    """

    def __init__(self, channels: int, depth: int):
        super().__init__()
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        self.blocks = nn.ModuleList(
            DilatedBlock(channels, channels, 2**level) for level in range(depth)
        )

    def forward(self, x: torch.Tensor, check_finite: bool = False) -> torch.Tensor:
        x = x.transpose(1, 2)  # conv wants (B, C, T)
        for level, block in enumerate(self.blocks):
            x = block(x)
            if check_finite and not torch.isfinite(x).all():
                raise NumericalError(
                    "non-finite activations", context=f"dilated block {level}"
                )
        return x.transpose(1, 2)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Fan-in-scaled uniform init, drawn from an explicit generator.

    Deterministic replacement for the framework default so checkpoint and
    resume tests can assert bit-identical weights.
    """
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv1d, nn.Linear)):
                fan_in = m.weight.shape[1]
                if m.weight.dim() == 3:
                    fan_in *= m.weight.shape[2]
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)
