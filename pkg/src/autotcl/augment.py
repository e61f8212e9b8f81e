"""Learned factorized augmentation.

An input window x is factored into an informative part selected by a
per-timestamp mask h and transformed by a per-timestamp nonzero mask g, giving
the view v* = (g * h) * x elementwise. h is sampled from a hard binary concrete
distribution so mask learning stays differentiable; g is bounded away from
zero so the view stays invertible (x* = v*/g wherever h is nonzero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .backbone import DilatedConvStack
from .errors import NumericalError, ValidationError

PI_CLAMP = 1e-6
G_FLOOR = 0.05


@dataclass(frozen=True)
class HardConcreteParams:
    """Temperature and stretch interval of the relaxed Bernoulli."""

    tau: float = 0.5
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not (self.gamma < 0 < 1 < self.zeta):
            raise ValidationError(
                f"stretch must satisfy gamma < 0 < 1 < zeta, got ({self.gamma}, {self.zeta})"
            )


@dataclass
class MaskPair:
    """Per-timestamp Bernoulli locations pi, sampled mask h, transform mask g.

    Tensors share a trailing time axis; a leading batch axis is optional.
    """

    pi: torch.Tensor
    h: torch.Tensor
    g: torch.Tensor

    @property
    def alpha(self) -> torch.Tensor:
        """Log-odds of pi."""
        return torch.log(self.pi) - torch.log1p(-self.pi)


@dataclass
class AugmentedView:
    v: torch.Tensor  # view fed to the encoder
    v_star: torch.Tensor  # informative transformed part, before any noise
    masks: MaskPair
    noise_seed: int | None = None


def _logit(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p) - torch.log1p(-p)


def concrete_sample(pi, eps, params: HardConcreteParams = HardConcreteParams()):
    """Draw h = clip(stretch(sigmoid((logit(eps) + logit(pi)) / tau))) in [0, 1].

    Accepts scalars or tensors; gradients flow through pi. Both pi and eps
    must lie strictly inside (0, 1); clamping is the caller's job.
    """
    scalar_in = not (torch.is_tensor(pi) or torch.is_tensor(eps))
    if torch.is_tensor(pi):
        dtype = pi.dtype
    elif torch.is_tensor(eps):
        dtype = eps.dtype
    else:
        dtype = torch.float64
    pi = torch.as_tensor(pi, dtype=dtype)
    eps = torch.as_tensor(eps, dtype=dtype)
    if not ((pi > 0).all() and (pi < 1).all()):
        raise ValidationError("pi must lie strictly inside (0, 1)")
    if not ((eps > 0).all() and (eps < 1).all()):
        raise ValidationError("eps must lie strictly inside (0, 1)")
    s = torch.sigmoid((_logit(eps) + _logit(pi)) / params.tau)
    stretched = s * (params.zeta - params.gamma) + params.gamma
    h = stretched.clamp(0.0, 1.0)
    return h.item() if scalar_in else h


def gate_open_logit(params: HardConcreteParams) -> float:
    """The constant tau * log(-gamma/zeta) appearing in the mask CDF."""
    return params.tau * math.log(-params.gamma / params.zeta)


def prob_zero(pi, params: HardConcreteParams = HardConcreteParams()):
    """P(h = 0) for a hard concrete variable at location pi."""
    pi = torch.as_tensor(pi, dtype=torch.float64)
    return torch.sigmoid(gate_open_logit(params) - _logit(pi))


def prob_one(pi, params: HardConcreteParams = HardConcreteParams()):
    """P(h = 1) at location pi."""
    pi = torch.as_tensor(pi, dtype=torch.float64)
    edge = params.tau * math.log((1 - params.gamma) / (params.zeta - 1))
    return 1.0 - torch.sigmoid(edge - _logit(pi))


def expected_l0(pi: torch.Tensor, params: HardConcreteParams = HardConcreteParams()):
    """Expected count of nonzero mask entries, summed over the time axis.

    Equals sum_t sigmoid(alpha_t - tau*log(-gamma/zeta)); differentiable in
    pi. Batched input (B, T) returns one scalar per batch row.
    """
    if not torch.is_tensor(pi):
        pi = torch.as_tensor(pi, dtype=torch.float64)
    if not ((pi > 0).all() and (pi < 1).all()):
        raise ValidationError("pi must lie strictly inside (0, 1)")
    return torch.sigmoid(_logit(pi) - gate_open_logit(params)).sum(dim=-1)


def compose_view(x: torch.Tensor, masks: MaskPair, g_floor: float = G_FLOOR) -> AugmentedView:
    """Build the factorized view v* = (g * h) * x, masks broadcast over channels."""
    if masks.h.shape != masks.g.shape or masks.h.shape != x.shape[:-1]:
        raise ValidationError(
            f"mask shape {tuple(masks.h.shape)} does not match x {tuple(x.shape)}"
        )
    if (masks.g.abs() < g_floor).any():
        raise ValidationError(f"transform mask entries must satisfy |g| >= {g_floor}")
    v_star = (masks.g * masks.h).unsqueeze(-1) * x
    return AugmentedView(v=v_star, v_star=v_star, masks=masks)


class AugmentationNetwork(nn.Module):
    """Shared dilated-conv feature extractor with two per-timestamp heads.

    The factorization head emits Bernoulli locations pi through a sigmoid;
    the transformation head emits g = 1 + tanh(r) * (1 - g_floor), keeping
    g inside [g_floor, 2 - g_floor].
    """

    def __init__(
        self,
        in_channels: int,
        hidden_dim: int = 64,
        depth: int = 2,
        g_floor: float = G_FLOOR,
        concrete: HardConcreteParams | None = None,
    ):
        super().__init__()
        self.g_floor = g_floor
        self.concrete = concrete or HardConcreteParams()
        self.input_proj = nn.Linear(in_channels, hidden_dim)
        self.stack = DilatedConvStack(hidden_dim, depth)
        self.factor_head = nn.Linear(hidden_dim, 1)
        self.transform_head = nn.Linear(hidden_dim, 1)

    def forward(
        self,
        x: torch.Tensor,
        mode: str = "train",
        rng: torch.Generator | None = None,
    ) -> MaskPair:
        """Produce (pi, h, g) for a window batch.

        x: (T, F) or (B, T, F). Train mode samples h via the hard concrete
        reparameterization from ``rng``; eval mode thresholds pi at 0.5.
        """
        if mode not in ("train", "eval"):
            raise ValidationError(f"mode must be train or eval, got {mode!r}")
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if not torch.isfinite(x).all():
            raise ValidationError("augmentation input contains non-finite values")

        hidden = self.input_proj(x)
        if not torch.isfinite(hidden).all():
            raise NumericalError("non-finite activations", context="input projection")
        hidden = self.stack(hidden, check_finite=True)

        pi = torch.sigmoid(self.factor_head(hidden).squeeze(-1))
        pi = pi.clamp(PI_CLAMP, 1.0 - PI_CLAMP)
        if not torch.isfinite(pi).all():
            raise NumericalError("non-finite activations", context="factorization head")

        r = self.transform_head(hidden).squeeze(-1)
        if not torch.isfinite(r).all():
            raise NumericalError("non-finite activations", context="transform head")
        g = 1.0 + torch.tanh(r) * (1.0 - self.g_floor)

        if mode == "eval":
            h = (pi >= 0.5).to(pi.dtype)
        else:
            eps = torch.rand(pi.shape, generator=rng, dtype=pi.dtype)
            eps = eps.clamp(PI_CLAMP, 1.0 - PI_CLAMP)
            h = concrete_sample(pi, eps, self.concrete)

        if squeeze:
            pi, h, g = pi.squeeze(0), h.squeeze(0), g.squeeze(0)
        return MaskPair(pi=pi, h=h, g=g)


def _identity_masks(shape, dtype) -> MaskPair:
    ones = torch.ones(shape, dtype=dtype)
    pi = torch.full(shape, 1.0 - PI_CLAMP, dtype=dtype)
    return MaskPair(pi=pi, h=ones, g=ones.clone())


def static_augment(
    x: torch.Tensor,
    policy: str,
    rng: torch.Generator,
    l_frac: float = 0.5,
    sigma: float = 0.3,
    s: float = 1.0,
) -> AugmentedView:
    """Classic augmentations expressed in the same (h, g) mask algebra.

    cutout zeroes a random contiguous span of round(l_frac * T) timestamps;
    scaling multiplies by a constant; jitter adds Gaussian noise on top of an
    identity view; random_aug picks cutout or jitter per instance with the
    strength drawn from its standard range.
    """
    if x.dim() == 3:
        views = [static_augment(inst, policy, rng, l_frac, sigma, s) for inst in x]
        return AugmentedView(
            v=torch.stack([vw.v for vw in views]),
            v_star=torch.stack([vw.v_star for vw in views]),
            masks=MaskPair(
                pi=torch.stack([vw.masks.pi for vw in views]),
                h=torch.stack([vw.masks.h for vw in views]),
                g=torch.stack([vw.masks.g for vw in views]),
            ),
        )

    T = x.shape[0]
    if policy == "random_aug":
        if torch.rand((), generator=rng) < 0.5:
            frac = 0.3 + 0.5 * torch.rand((), generator=rng).item()
            return static_augment(x, "cutout", rng, l_frac=frac)
        std = 0.3 + 0.7 * torch.rand((), generator=rng).item()
        return static_augment(x, "jitter", rng, sigma=std)

    masks = _identity_masks((T,), x.dtype)
    noise_seed = None
    if policy == "cutout":
        if not 0.0 < l_frac < 1.0:
            raise ValidationError(f"cutout fraction must be in (0, 1), got {l_frac}")
        span = int(round(l_frac * T))
        if span > 0:
            start = int(torch.randint(0, T - span + 1, (), generator=rng))
            masks.h[start : start + span] = 0.0
            masks.pi[start : start + span] = PI_CLAMP
    elif policy == "scaling":
        masks.g.fill_(s)
    elif policy == "jitter":
        if sigma < 0:
            raise ValidationError(f"jitter sigma must be >= 0, got {sigma}")
        noise_seed = int(torch.randint(0, 2**31 - 1, (), generator=rng))
    else:
        raise ValidationError(f"unknown augmentation policy {policy!r}")

    view = compose_view(x, masks)
    if policy == "jitter" and sigma > 0:
        noise_rng = torch.Generator().manual_seed(noise_seed)
        noise = sigma * torch.randn(x.shape, generator=noise_rng, dtype=x.dtype)
        view = AugmentedView(
            v=view.v_star + noise, v_star=view.v_star, masks=view.masks, noise_seed=noise_seed
        )
    return view
