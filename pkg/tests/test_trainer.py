"""Alternating optimization: schedule, isolation, determinism, persistence."""

import json
import math
import os

import numpy as np
import pytest
import torch

from autotcl.augment import PI_CLAMP
from autotcl.data import TimeSeriesDataset
from autotcl.errors import NumericalError, SchemaError, ValidationError
from autotcl.objectives import contrastive_loss, global_contrast_loss
from autotcl.trainer import (
    SCHEMA_VERSION,
    STREAM_NAMES,
    Trainer,
    load_checkpoint,
    make_streams,
    save_checkpoint,
    stream_seed,
    train,
    trainer_from_checkpoint,
    training_windows,
    weights_fingerprint,
)
from conftest import sinusoid_dataset, sinusoid_series, tiny_config


def toy_windows(n=16, T=24, F=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, T, F)).astype(np.float32)


# ----- seed streams -----


def test_stream_seed_is_deterministic_and_named():
    assert stream_seed(0, "eta") == stream_seed(0, "eta")
    assert stream_seed(0, "eta") != stream_seed(0, "data")
    assert stream_seed(0, "eta") != stream_seed(1, "eta")
    assert 0 <= stream_seed(123, "init") < 2**63


def test_make_streams_covers_all_names():
    streams = make_streams(5)
    assert set(streams) == set(STREAM_NAMES)
    draws = {name: torch.rand(1, generator=g).item() for name, g in streams.items()}
    assert len(set(draws.values())) == len(draws)  # streams do not collide


def test_fingerprint_tracks_weight_changes():
    trainer = Trainer(tiny_config(), in_channels=2)
    before = weights_fingerprint(trainer.encoder)
    assert before == weights_fingerprint(trainer.encoder)
    with torch.no_grad():
        trainer.encoder.head.bias.add_(1.0)
    assert weights_fingerprint(trainer.encoder) != before


# ----- alternation schedule -----


@pytest.mark.parametrize("period,epochs,expected_epochs", [(2, 4, {0, 2}), (3, 4, {0, 3})])
def test_aug_updates_follow_epoch_period(period, epochs, expected_epochs):
    cfg = tiny_config(aug_period=period, epochs=epochs, batch_size=4)
    trainer = Trainer(cfg, in_channels=2)
    trainer.fit(toy_windows(n=8))

    with_aug = {row["epoch"] for row in trainer.history.steps if "l_aug" in row}
    assert with_aug == expected_epochs

    batches_per_epoch = 2  # 8 windows / batch 4
    assert trainer.aug_update_count == batches_per_epoch * math.ceil(epochs / period)


def test_epoch_summary_marks_skipped_aug_epochs():
    cfg = tiny_config(aug_period=2, epochs=2, batch_size=4)
    trainer = Trainer(cfg, in_channels=2)
    history = trainer.fit(toy_windows(n=8))
    assert len(history.epochs) == 2
    assert history.epochs[0]["l_aug"] is not None
    assert history.epochs[1]["l_aug"] is None
    assert history.loss_curve("l_con") == [rec["l_con"] for rec in history.epochs]


def test_aug_step_precedes_encoder_step_within_batch():
    """On qualifying epochs the augmentation update sees pre-update encoder
    weights: the encoder fingerprint is unchanged across aug_step."""
    cfg = tiny_config()
    trainer = Trainer(cfg, in_channels=2)
    x = torch.as_tensor(toy_windows(n=4), dtype=torch.float32)
    view = trainer.compute_view(x)

    enc_before = weights_fingerprint(trainer.encoder)
    aug_before = weights_fingerprint(trainer.aug_net)
    trainer.aug_step(x, view)
    assert weights_fingerprint(trainer.encoder) == enc_before
    assert weights_fingerprint(trainer.aug_net) != aug_before

    aug_after = weights_fingerprint(trainer.aug_net)
    view = trainer.compute_view(x)
    trainer.encoder_step(x, view)
    assert weights_fingerprint(trainer.aug_net) == aug_after
    assert weights_fingerprint(trainer.encoder) != enc_before


# ----- determinism -----


def test_same_seed_runs_are_bit_identical():
    cfg = tiny_config(epochs=2)
    wins = toy_windows()
    a = Trainer(cfg, in_channels=2)
    b = Trainer(cfg, in_channels=2)
    ha = a.fit(wins)
    hb = b.fit(wins)
    assert ha.steps == hb.steps
    assert weights_fingerprint(a.encoder) == weights_fingerprint(b.encoder)
    assert weights_fingerprint(a.aug_net) == weights_fingerprint(b.aug_net)


def test_different_seeds_diverge():
    wins = toy_windows()
    a = Trainer(tiny_config(seed=0), in_channels=2)
    b = Trainer(tiny_config(seed=1), in_channels=2)
    a.fit(wins)
    b.fit(wins)
    assert weights_fingerprint(a.encoder) != weights_fingerprint(b.encoder)


def test_identity_frozen_augmentation_reduces_to_plain_contrastive():
    """With the view pinned to the raw input and zero augmentation loss
    weights, the contrastive trajectory matches a run with no augmentation
    network at all."""
    from autotcl.augment import AugmentedView, MaskPair

    wins = toy_windows()

    def identity_view(x, mode="train"):
        ones = torch.ones(x.shape[:-1], dtype=x.dtype)
        masks = MaskPair(
            pi=torch.full(x.shape[:-1], 1.0 - PI_CLAMP, dtype=x.dtype),
            h=ones,
            g=ones.clone(),
        )
        return AugmentedView(v=x, v_star=x, masks=masks)

    pinned = Trainer(
        tiny_config(epochs=2, l0_weight=0.0, continuity_weight=0.0), in_channels=2
    )
    pinned.compute_view = identity_view
    hp = pinned.fit(wins)

    control = Trainer(tiny_config(epochs=2, variant="wo_aug"), in_channels=2)
    hc = control.fit(wins)

    assert [r["l_con"] for r in hp.steps] == [r["l_con"] for r in hc.steps]
    assert weights_fingerprint(pinned.encoder) == weights_fingerprint(control.encoder)


# ----- numerical abort -----


def test_non_finite_contrastive_loss_aborts_with_checkpoint_pointer(monkeypatch):
    trainer = Trainer(tiny_config(), in_channels=2)
    trainer.last_checkpoint = "runs/last_good.pt"
    nan = torch.tensor(float("nan"))
    monkeypatch.setattr(
        "autotcl.trainer.contrastive_loss", lambda *a, **k: (nan, nan, None)
    )
    x = torch.as_tensor(toy_windows(n=4))
    with pytest.raises(NumericalError) as err:
        trainer.encoder_step(x, trainer.compute_view(x))
    assert err.value.checkpoint_path == "runs/last_good.pt"


def test_non_finite_aug_loss_aborts(monkeypatch):
    trainer = Trainer(tiny_config(), in_channels=2)
    nan = torch.tensor(float("nan"))
    monkeypatch.setattr(
        "autotcl.trainer.aug_loss", lambda *a, **k: (nan, nan, nan)
    )
    x = torch.as_tensor(toy_windows(n=4))
    with pytest.raises(NumericalError):
        trainer.aug_step(x, trainer.compute_view(x))


# ----- checkpointing -----


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    cfg = tiny_config(epochs=1)
    trainer = Trainer(cfg, in_channels=2)
    trainer.fit(toy_windows())
    path = save_checkpoint(trainer, str(tmp_path / "ck.pt"))

    again = trainer_from_checkpoint(path)
    assert weights_fingerprint(again.encoder) == weights_fingerprint(trainer.encoder)
    assert weights_fingerprint(again.aug_net) == weights_fingerprint(trainer.aug_net)
    assert again.epoch_next == trainer.epoch_next
    assert again.global_step == trainer.global_step
    assert again.aug_update_count == trainer.aug_update_count
    assert again.history.steps == trainer.history.steps
    for name in STREAM_NAMES:
        assert torch.equal(again.streams[name].get_state(), trainer.streams[name].get_state())


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = tiny_config(epochs=3)
    wins = toy_windows()

    straight = Trainer(cfg, in_channels=2)
    hs = straight.fit(wins)

    interrupted = Trainer(cfg, in_channels=2)
    interrupted.fit(wins, stop_after=1)
    path = interrupted.save(str(tmp_path / "mid.pt"))
    resumed = trainer_from_checkpoint(path)
    hr = resumed.fit(wins)

    assert hr.steps == hs.steps
    assert weights_fingerprint(resumed.encoder) == weights_fingerprint(straight.encoder)
    assert weights_fingerprint(resumed.aug_net) == weights_fingerprint(straight.aug_net)


def test_truncated_checkpoint_is_a_schema_error(tmp_path):
    cfg = tiny_config(epochs=1)
    trainer = Trainer(cfg, in_channels=2)
    trainer.fit(toy_windows())
    path = str(tmp_path / "ck.pt")
    trainer.save(path)
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[: len(blob) // 2])
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_version_mismatch_reports_expected_and_found(tmp_path):
    trainer = Trainer(tiny_config(epochs=1), in_channels=2)
    state = trainer.state_dict()
    state["schema_version"] = 99
    path = str(tmp_path / "ck.pt")
    torch.save(state, path)
    with pytest.raises(SchemaError) as err:
        load_checkpoint(path)
    assert err.value.expected == SCHEMA_VERSION
    assert err.value.found == 99


def test_missing_keys_rejected(tmp_path):
    trainer = Trainer(tiny_config(epochs=1), in_channels=2)
    state = trainer.state_dict()
    del state["rng_states"]
    path = str(tmp_path / "ck.pt")
    torch.save(state, path)
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_fit_writes_checkpoints_and_log(tmp_path):
    cfg = tiny_config(epochs=2, checkpoint_every=1, batch_size=4)
    run_dir = str(tmp_path / "run")
    os.makedirs(run_dir)
    trainer = Trainer(cfg, in_channels=2, run_dir=run_dir)
    trainer.fit(toy_windows(n=8))

    assert os.path.exists(os.path.join(run_dir, "checkpoint_ep0001.pt"))
    assert os.path.exists(os.path.join(run_dir, "checkpoint_ep0002.pt"))
    rows = [
        json.loads(line)
        for line in open(os.path.join(run_dir, "train_log.jsonl"))
    ]
    assert len(rows) == trainer.global_step
    assert all("l_con" in row and "l_g" in row for row in rows)
    assert all("l_aug" in row for row in rows if row["epoch"] == 0)
    assert all("l_aug" not in row for row in rows if row["epoch"] == 1)


# ----- fit validation -----


def test_fit_rejects_empty_and_short_windows():
    trainer = Trainer(tiny_config(), in_channels=2)
    with pytest.raises(ValidationError):
        trainer.fit(np.zeros((0, 24, 2), dtype=np.float32))
    with pytest.raises(ValidationError):
        trainer.fit(np.zeros((4, 2, 2), dtype=np.float32))


def test_fit_rejects_window_shorter_than_local_span():
    trainer = Trainer(tiny_config(segment_len=4, local_weight=0.5), in_channels=2)
    with pytest.raises(ValidationError):
        trainer.fit(toy_windows(T=8))


# ----- variants -----


def test_wo_aug_logs_no_augmentation_losses():
    cfg = tiny_config(variant="wo_aug", epochs=1)
    trainer = Trainer(cfg, in_channels=2)
    assert trainer.aug_net is None
    trainer.fit(toy_windows())
    assert all("l_aug" not in row for row in trainer.history.steps)
    x = torch.as_tensor(toy_windows(n=4))
    view = trainer.compute_view(x)
    assert torch.equal(view.v, x)


def test_wo_g_pins_transform_mask_to_ones():
    trainer = Trainer(tiny_config(variant="wo_g"), in_channels=2)
    view = trainer.compute_view(torch.as_tensor(toy_windows(n=4)))
    assert torch.equal(view.masks.g, torch.ones_like(view.masks.g))
    assert not torch.equal(view.masks.h, torch.ones_like(view.masks.h))


def test_wo_h_pins_factorization_mask_to_ones():
    trainer = Trainer(tiny_config(variant="wo_h"), in_channels=2)
    view = trainer.compute_view(torch.as_tensor(toy_windows(n=4)))
    assert torch.equal(view.masks.h, torch.ones_like(view.masks.h))
    assert (view.masks.pi == 1.0 - PI_CLAMP).all()
    assert not torch.equal(view.masks.g, torch.ones_like(view.masks.g))


def test_wo_dv_disables_encoder_noise():
    cfg = tiny_config(variant="wo_dv")
    trainer = Trainer(cfg, in_channels=2)
    x = torch.as_tensor(toy_windows(n=4))
    view = trainer.compute_view(x)
    with torch.no_grad():
        rep_x = trainer.encoder(x)
        rep_v = trainer.encoder(view.v.detach())
        want, _, _ = contrastive_loss(
            rep_x.pooled, rep_v.pooled, rep_v.per_step,
            cfg.segment_len, cfg.local_weight, cfg.temperature,
        )
    l_con, _, _ = trainer.encoder_step(x, view)
    assert l_con == pytest.approx(want.item(), rel=1e-6)


def test_adversarial_maximizes_agreement_loss():
    cfg = tiny_config(variant="adversarial")
    trainer = Trainer(cfg, in_channels=2)
    x = torch.as_tensor(toy_windows(n=4))
    view = trainer.compute_view(x)
    with torch.no_grad():
        want = -global_contrast_loss(
            trainer.encoder(x).pooled,
            trainer.encoder(view.v).pooled,
            cfg.temperature,
        ).item()
    l_aug, l_pri, l_t = trainer.aug_step(x, view)
    assert l_pri is None and l_t is None
    assert l_aug == pytest.approx(want, rel=1e-6)


def test_cutout_variant_zeroes_configured_span():
    cfg = tiny_config(variant="cutout", cutout_frac=0.25)
    trainer = Trainer(cfg, in_channels=2)
    assert trainer.aug_net is None
    x = torch.as_tensor(toy_windows(n=4, T=24))
    view = trainer.compute_view(x)
    assert ((view.masks.h == 0).sum(dim=1) == round(0.25 * 24)).all()


def test_jitter_variant_keeps_informative_part_clean():
    cfg = tiny_config(variant="jitter", jitter_sigma=0.3)
    trainer = Trainer(cfg, in_channels=2)
    x = torch.as_tensor(toy_windows(n=4, T=24))
    view = trainer.compute_view(x)
    assert torch.equal(view.v_star, x)
    assert not torch.equal(view.v, x)


# ----- windowing and the top-level entry point -----


def test_training_windows_forecasting_counts():
    ds = sinusoid_dataset(n=400)
    cfg = tiny_config(window_len=24, stride=4)
    wins = training_windows(ds, cfg)
    train_len = ds.split["train"][1] - ds.split["train"][0]
    assert wins.shape == ((train_len - 24) // 4 + 1, 24, 2)


def test_training_windows_classification_uses_whole_instances():
    values = sinusoid_series(n=60, channels=1)
    ds = TimeSeriesDataset(
        values=values,
        name="toy",
        task="classification",
        instance_length=30,
        labels=np.array([0, 1]),
    )
    wins = training_windows(ds, tiny_config(window_len=10))
    assert wins.shape == (2, 30, 1)


def test_train_entry_point_runs_and_reports(tmp_path):
    ds = sinusoid_dataset(n=200)
    cfg = tiny_config(window_len=24, stride=8, epochs=2, checkpoint_every=2)
    run_dir = str(tmp_path / "run")
    os.makedirs(run_dir)
    encoder, aug_net, history = train(cfg, ds, run_dir=run_dir)
    assert aug_net is not None
    assert len(history.epochs) == 2
    assert history.epochs[-1]["checkpoint_path"] is not None
    assert os.path.exists(history.epochs[-1]["checkpoint_path"])


def test_train_creates_missing_run_dir(tmp_path):
    """A nested run directory that does not exist yet is created, not a crash."""
    ds = sinusoid_dataset(n=200)
    cfg = tiny_config(window_len=24, stride=8, epochs=1, checkpoint_every=1)
    run_dir = str(tmp_path / "deep" / "run")
    train(cfg, ds, run_dir=run_dir)
    assert os.path.exists(os.path.join(run_dir, "train_log.jsonl"))


def test_contrastive_loss_decreases_on_learnable_data():
    """Smoke oracle: on periodic data the contrastive loss trends down over
    a 200-step run."""
    ds = sinusoid_dataset(n=400, noise=0.05)
    cfg = tiny_config(
        window_len=24, stride=2, epochs=15, batch_size=8,
        depth=1, hidden_dim=8, repr_dim=8, lr_encoder=0.003,
    )
    wins = training_windows(ds, cfg)
    trainer = Trainer(cfg, in_channels=2)
    trainer.fit(wins)
    curve = [row["l_con"] for row in trainer.history.steps]
    assert len(curve) >= 200
    assert np.mean(curve[-10:]) < np.mean(curve[:10])
