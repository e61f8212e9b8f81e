"""Encoder shapes, timestamp-masking noise, and receptive field geometry."""

import math

import pytest
import torch

from _oracles import central_diff_grad, rel_err
from autotcl.backbone import DilatedConvStack, init_weights
from autotcl.encoder import Encoder, EncoderConfig, receptive_field
from autotcl.errors import NumericalError, ValidationError


def small_encoder(in_channels=2, depth=2, mask_prob=0.5, dropout=0.0, seed=0):
    enc = Encoder(
        in_channels,
        EncoderConfig(depth=depth, hidden_dim=8, repr_dim=6, dropout=dropout, mask_prob=mask_prob),
    )
    init_weights(enc, torch.Generator().manual_seed(seed))
    return enc


# ----- shapes and pooling -----


def test_batched_shapes():
    enc = small_encoder()
    out = enc(torch.randn(3, 24, 2, generator=torch.Generator().manual_seed(0)))
    assert out.per_step.shape == (3, 24, 6)
    assert out.pooled.shape == (3, 6)


def test_unbatched_shapes():
    enc = small_encoder()
    out = enc(torch.randn(24, 2, generator=torch.Generator().manual_seed(0)))
    assert out.per_step.shape == (24, 6)
    assert out.pooled.shape == (6,)


def test_pooled_is_max_over_time():
    enc = small_encoder()
    out = enc(torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(1)))
    assert torch.equal(out.pooled, out.per_step.max(dim=1).values)


def test_rejects_wrong_channel_count():
    enc = small_encoder(in_channels=2)
    with pytest.raises(ValidationError):
        enc(torch.randn(4, 24, 3))


def test_nan_input_raises_numerical_error():
    enc = small_encoder()
    x = torch.zeros(1, 24, 2)
    x[0, 5, 0] = float("nan")
    with pytest.raises(NumericalError):
        enc(x)


# ----- config validation -----


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(depth=0),
        dict(repr_dim=0),
        dict(hidden_dim=0),
        dict(dropout=1.0),
        dict(dropout=-0.1),
        dict(mask_prob=1.5),
        dict(mask_prob=-0.5),
    ],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValidationError):
        EncoderConfig(**kwargs).validate()


# ----- timestamp masking noise -----


def test_clean_pass_is_deterministic_without_rng():
    enc = small_encoder()
    x = torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(2))
    assert torch.equal(enc(x).per_step, enc(x).per_step)


def test_noisy_pass_deterministic_under_fixed_seed():
    enc = small_encoder()
    x = torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(2))
    a = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(7))
    b = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(7))
    assert torch.equal(a.per_step, b.per_step)


def test_noisy_pass_varies_across_seeds():
    enc = small_encoder()
    x = torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(2))
    a = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(1))
    b = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(2))
    assert not torch.equal(a.per_step, b.per_step)


def test_zero_mask_prob_noise_is_noop():
    enc = small_encoder(mask_prob=0.0)
    x = torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(3))
    clean = enc(x)
    noisy = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(0))
    assert torch.equal(clean.per_step, noisy.per_step)


def test_noise_zeroes_whole_timestamps_at_stated_rate():
    """Hook the backbone input: zeroed rows are whole timestamps and their
    count matches a Binomial(B*T, mask_prob) draw within 3 sigma."""
    mask_prob = 0.5
    enc = small_encoder(mask_prob=mask_prob)
    captured = {}
    handle = enc.stack.register_forward_pre_hook(
        lambda module, args: captured.setdefault("hidden", args[0].detach().clone())
    )
    B, T = 200, 50
    x = torch.randn(B, T, 2, generator=torch.Generator().manual_seed(4))
    enc(x, apply_eta=True, rng=torch.Generator().manual_seed(11))
    handle.remove()

    hidden = captured["hidden"]
    row_zero = (hidden == 0).all(dim=-1)
    any_zero = (hidden == 0).any(dim=-1)
    assert torch.equal(row_zero, any_zero)  # all-or-nothing per timestamp

    n = B * T
    frac = row_zero.double().mean().item()
    assert abs(frac - mask_prob) < 3 * math.sqrt(mask_prob * (1 - mask_prob) / n)


def test_dropout_rides_on_noise_flag():
    enc = small_encoder(mask_prob=0.0, dropout=0.5)
    x = torch.randn(2, 24, 2, generator=torch.Generator().manual_seed(5))
    clean = enc(x)
    noisy = enc(x, apply_eta=True, rng=torch.Generator().manual_seed(0))
    assert not torch.equal(clean.per_step, noisy.per_step)


# ----- receptive field -----


@pytest.mark.parametrize("depth,expected", [(1, 3), (3, 15), (10, 2047)])
def test_receptive_field_values(depth, expected):
    assert receptive_field(EncoderConfig(depth=depth)) == expected


def test_receptive_field_bounds_influence():
    """Perturbing the input beyond the receptive half-width leaves an output
    step bit-identical; perturbing inside it does not."""
    depth = 2
    enc = small_encoder(depth=depth)
    half = (receptive_field(EncoderConfig(depth=depth)) - 1) // 2
    T, probe = 40, 20
    x = torch.randn(1, T, 2, generator=torch.Generator().manual_seed(6))
    base = enc(x).per_step[0, probe]

    far = x.clone()
    far[0, probe + half + 1] += 5.0
    assert torch.equal(enc(far).per_step[0, probe], base)

    near = x.clone()
    near[0, probe + half] += 5.0
    assert not torch.equal(enc(near).per_step[0, probe], base)


def test_stack_preserves_length_and_width():
    stack = DilatedConvStack(8, 3)
    out = stack(torch.randn(2, 33, 8))
    assert out.shape == (2, 33, 8)


def test_stack_rejects_zero_depth():
    with pytest.raises(ValueError):
        DilatedConvStack(8, 0)


# ----- init and gradients -----


def test_init_is_generator_deterministic():
    a = small_encoder(seed=9)
    b = small_encoder(seed=9)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = small_encoder(seed=10)
    assert any(
        not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_pooled_gradient_matches_finite_differences():
    torch.manual_seed(0)
    enc = Encoder(1, EncoderConfig(depth=1, hidden_dim=4, repr_dim=3, mask_prob=0.0)).double()
    x = torch.randn(1, 8, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(7))

    def run():
        return enc(x).pooled.sum()

    enc.zero_grad()
    run().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in enc.parameters()]).numpy()

    theta0 = torch.cat([p.detach().reshape(-1) for p in enc.parameters()]).numpy()

    def fn(theta):
        i = 0
        for p in enc.parameters():
            n = p.numel()
            with torch.no_grad():
                p.copy_(torch.as_tensor(theta[i : i + n]).reshape(p.shape))
            i += n
        with torch.no_grad():
            return run().item()

    numeric = central_diff_grad(fn, theta0, eps=1e-6)
    assert rel_err(analytic, numeric) < 1e-3
