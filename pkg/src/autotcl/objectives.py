"""Training objectives.

Augmentation side: a relevant-information loss (expected mask density plus a
mean-embedding discrepancy between originals and views) and a temporal
continuity triplet on the factorization mask. Encoder side: instance-level
InfoNCE between originals and views plus a local subsequence contrast within
each view.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .augment import HardConcreteParams, expected_l0
from .encoder import Encoder
from .errors import NumericalError, ValidationError


@dataclass
class LossReport:
    """Scalar losses for one step; augmentation entries appear only on steps
    where the augmentation objective was computed."""

    batch_size: int
    l_g: float
    l_con: float
    l_l: float | None = None
    l_pri: float | None = None
    l_t: float | None = None
    l_aug: float | None = None

    def to_record(self, step: int, epoch: int) -> dict:
        row = {"step": step, "epoch": epoch, "l_g": self.l_g, "l_con": self.l_con}
        for key in ("l_l", "l_pri", "l_t", "l_aug"):
            val = getattr(self, key)
            if val is not None:
                row[key] = val
        return row


def pri_loss(
    batch_x: torch.Tensor,
    views_vstar: torch.Tensor,
    pis: torch.Tensor,
    encoder: Encoder,
    l0_weight: float,
    concrete: HardConcreteParams = HardConcreteParams(),
) -> torch.Tensor:
    """Mask-density penalty plus squared distance between batch-mean embeddings.

    The density term is expected_l0(pi) normalized by the window length and
    averaged over the batch. Both embedding passes run without the timestamp
    masking noise so the discrepancy compares clean representations.
    """
    if batch_x.dim() != 3 or batch_x.shape[0] < 1:
        raise ValidationError("pri_loss needs a non-empty (B, T, F) batch")
    if l0_weight < 0:
        raise ValidationError(f"l0_weight must be >= 0, got {l0_weight}")
    window_len = batch_x.shape[1]
    density = expected_l0(pis, concrete) / window_len  # (B,)
    mean_x = encoder(batch_x).pooled.mean(dim=0)
    mean_v = encoder(views_vstar).pooled.mean(dim=0)
    discrepancy = ((mean_x - mean_v) ** 2).sum()
    return l0_weight * density.mean() + discrepancy


def sample_triplets(
    batch_size: int, window_len: int, rng: torch.Generator | None = None
) -> list[tuple[int, int, int]]:
    """Draw (anchor, positive, negative) timestamp triples per instance.

    Positive is an adjacent timestamp; negative is uniform over indices
    further than a quarter window from the anchor.
    """
    if window_len < 3:
        raise ValidationError(
            f"window length {window_len} admits no valid triplet (need >= 3)"
        )
    triples = []
    for _ in range(batch_size):
        a = int(torch.randint(0, window_len, (), generator=rng))
        sides = [side for side in (a - 1, a + 1) if 0 <= side < window_len]
        p = sides[int(torch.randint(0, len(sides), (), generator=rng))]
        far = [i for i in range(window_len) if abs(i - a) > window_len / 4]
        if not far:
            raise ValidationError(
                f"no timestamp further than T/4 from anchor {a} at T={window_len}"
            )
        n = far[int(torch.randint(0, len(far), (), generator=rng))]
        triples.append((a, p, n))
    return triples


def triplet_loss_at(
    h_masks: torch.Tensor, triples: list[tuple[int, int, int]]
) -> torch.Tensor:
    """Evaluate mean(|h_a - h_p| - |h_a - h_n|) at fixed triples."""
    if h_masks.dim() != 2 or h_masks.shape[0] != len(triples):
        raise ValidationError("h_masks must be (B, T) with one triple per row")
    idx = torch.as_tensor(triples, dtype=torch.long)
    rows = torch.arange(h_masks.shape[0])
    h_a = h_masks[rows, idx[:, 0]]
    h_p = h_masks[rows, idx[:, 1]]
    h_n = h_masks[rows, idx[:, 2]]
    return ((h_a - h_p).abs() - (h_a - h_n).abs()).mean()


def temporal_triplet_loss(
    h_masks: torch.Tensor, rng: torch.Generator | None = None
) -> torch.Tensor:
    """Continuity pressure on the factorization mask; may be negative."""
    triples = sample_triplets(h_masks.shape[0], h_masks.shape[1], rng)
    return triplet_loss_at(h_masks, triples)


def aug_loss(
    batch_x: torch.Tensor,
    views_vstar: torch.Tensor,
    masks_pi: torch.Tensor,
    masks_h: torch.Tensor,
    encoder: Encoder,
    l0_weight: float,
    continuity_weight: float,
    rng: torch.Generator | None = None,
    concrete: HardConcreteParams = HardConcreteParams(),
    triples: list[tuple[int, int, int]] | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Combined augmentation objective; returns (total, pri part, triplet part)."""
    part_pri = pri_loss(batch_x, views_vstar, masks_pi, encoder, l0_weight, concrete)
    if triples is None:
        triples = sample_triplets(masks_h.shape[0], masks_h.shape[1], rng)
    part_t = triplet_loss_at(masks_h, triples)
    return part_pri + continuity_weight * part_t, part_pri, part_t


def _unit_rows(z: torch.Tensor, what: str) -> torch.Tensor:
    norms = z.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        raise NumericalError(f"zero-norm {what} embedding", context="cosine similarity")
    return z / norms


def global_contrast_loss(
    z_x: torch.Tensor, z_v: torch.Tensor, temperature: float = 1.0
) -> torch.Tensor:
    """Batchwise InfoNCE with cosine similarity over temperature.

    Positive pairs are matched rows; negatives are the other views in the
    batch; the positive term stays in the denominator, so the loss is >= 0,
    equals 0 at batch size 1, and equals log B under uniform similarity.
    """
    if z_x.dim() != 2 or z_x.shape != z_v.shape:
        raise ValidationError("embeddings must be matching (B, D) matrices")
    if z_x.shape[0] < 1:
        raise ValidationError("empty batch")
    if temperature <= 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    zx = _unit_rows(z_x, "anchor")
    zv = _unit_rows(z_v, "view")
    sim = zx @ zv.transpose(0, 1) / temperature
    log_prob = sim.diagonal() - torch.logsumexp(sim, dim=1)
    return -log_prob.mean()


def local_contrast_loss(
    per_step: torch.Tensor, segment_len: int, temperature: float = 1.0
) -> torch.Tensor:
    """Subsequence contrast within each view.

    The window is cut into floor(T / segment_len) non-overlapping segments,
    each embedded by max-pooling its per-step features. A segment's positive
    is its adjacent segment; its negatives are segments at index distance
    >= 2. Segments without any negative are skipped as anchors, which needs
    T >= 3 * segment_len to leave at least two eligible anchors.
    """
    if per_step.dim() == 2:
        per_step = per_step.unsqueeze(0)
    if segment_len < 1:
        raise ValidationError(f"segment_len must be >= 1, got {segment_len}")
    window_len = per_step.shape[1]
    if window_len < 3 * segment_len:
        raise ValidationError(
            f"window length {window_len} < 3 * segment_len {segment_len}: "
            "no segment has a valid negative"
        )
    k = window_len // segment_len
    segs = per_step[:, : k * segment_len, :]
    segs = segs.reshape(per_step.shape[0], k, segment_len, -1).max(dim=2).values
    segs = _unit_rows(segs, "segment")
    sim = segs @ segs.transpose(1, 2) / temperature  # (B, k, k)

    anchor_losses = []
    for s in range(k):
        negs = [j for j in range(k) if abs(j - s) >= 2]
        if not negs:
            continue
        pos = s + 1 if s + 1 < k else s - 1
        pos_sim = sim[:, s, pos].unsqueeze(1)
        neg_sim = sim[:, s, negs]
        denom = torch.logsumexp(torch.cat([pos_sim, neg_sim], dim=1), dim=1)
        anchor_losses.append(-(pos_sim.squeeze(1) - denom))
    return torch.stack(anchor_losses, dim=1).mean()


def contrastive_loss(
    z_x: torch.Tensor,
    z_v: torch.Tensor,
    view_per_step: torch.Tensor | None,
    segment_len: int,
    local_weight: float,
    temperature: float = 1.0,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    """Encoder objective; returns (total, global part, local part or None).

    The local term is evaluated on the view's per-step embeddings and only
    when its weight is positive.
    """
    if local_weight < 0:
        raise ValidationError(f"local_weight must be >= 0, got {local_weight}")
    part_g = global_contrast_loss(z_x, z_v, temperature)
    if local_weight == 0 or view_per_step is None:
        return part_g, part_g, None
    part_l = local_contrast_loss(view_per_step, segment_len, temperature)
    return part_g + local_weight * part_l, part_g, part_l
