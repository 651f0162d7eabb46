import logging

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given
import hypothesis.strategies as st

from itl_seg.loss import (LossConfig, compute_breakdown, dice_loss, site_loss, source_memory_loss,
                          target_memory_loss, total_loss)
from itl_seg.model import build_model


def _scale_for(loss):
    """c such that dice_loss(c * gt, gt) == loss (up to eps)."""
    return (1.0 - loss) / (1.0 + loss)


class PassThrough(nn.Module):
    """Returns its input as the prediction of either branch"""

    def __init__(self, phase_index=2, with_source=True):
        super().__init__()
        self.anchor = nn.Parameter(torch.zeros(()))
        self.phase_index = phase_index
        self.source_decoder = nn.Identity() if with_source else None

    def forward(self, x, branch="target"):
        return x + 0 * self.anchor


GT = torch.zeros(6, 6)
GT[1:3, 1:3] = 1


def _batch(*losses):
    x = torch.stack([_scale_for(l) * GT for l in losses])
    return x, GT.expand(len(losses), 6, 6).clone()


def test_dice_loss_identical():
    assert float(dice_loss(GT, GT)) <= 1e-6


def test_dice_loss_disjoint():
    assert float(dice_loss(1 - GT, GT)) == pytest.approx(1.0, abs=1e-5)


def test_dice_loss_half_overlap():
    pred = torch.zeros(6, 6)
    pred[1, 1:3] = 1
    assert float(dice_loss(pred, GT)) == pytest.approx(1 / 3, abs=1e-4)


def test_dice_loss_both_empty_is_zero():
    z = torch.zeros(4, 4)
    assert float(dice_loss(z, z)) == pytest.approx(0.0)


def test_dice_loss_batched():
    x, y = _batch(0.2, 0.4)
    np.testing.assert_allclose(dice_loss(x, y).numpy(), [0.2, 0.4], atol=1e-4)


def test_dice_loss_rejects_bad_input():
    with pytest.raises(ValueError, match="Shape mismatch"):
        dice_loss(torch.zeros(4, 4), torch.zeros(4, 5))
    with pytest.raises(ValueError):
        dice_loss(torch.full((4, 4), 1.5), torch.zeros(4, 4))


@pytest.mark.parametrize("seed", range(100))
def test_dice_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    pred = torch.tensor(rng.uniform(0.05, 0.95, size=(8, 8)), dtype=torch.float64, requires_grad=True)
    gt = torch.tensor(rng.random((8, 8)) > 0.5, dtype=torch.float64)
    dice_loss(pred, gt).backward()
    analytic = pred.grad.numpy()

    h = 1e-6
    base = pred.detach().numpy()
    numeric = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        up, down = base.copy(), base.copy()
        up[idx] += h
        down[idx] -= h
        numeric[idx] = (float(dice_loss(torch.from_numpy(up), gt)) - float(dice_loss(torch.from_numpy(down), gt))) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 16), st.integers(1, 16), st.floats(0.0, 1.0))
def test_dice_loss_stays_in_unit_range(seed, h, w, density):
    rng = np.random.default_rng(seed)
    pred = torch.tensor(rng.random((h, w)), dtype=torch.float64)
    gt = torch.tensor(rng.random((h, w)) < density, dtype=torch.float64)
    eps = 1e-5
    loss = float(dice_loss(pred, gt, eps))
    assert 0.0 <= loss < 1.0 + eps


def test_site_loss_mean():
    x, y = _batch(0.2, 0.4)
    assert float(site_loss(PassThrough(), x, y)) == pytest.approx(0.3, abs=1e-4)


def test_site_loss_perfect():
    x, y = _batch(0.0, 0.0)
    assert float(site_loss(PassThrough(), x, y)) == pytest.approx(0.0, abs=1e-5)


def test_site_loss_empty_batch():
    with pytest.raises(ValueError):
        site_loss(PassThrough(), torch.zeros(0, 6, 6), torch.zeros(0, 6, 6))


def test_memory_losses_phase_one_are_zero():
    model = PassThrough(phase_index=1, with_source=False)
    memory = {"A": _batch(0.5)}
    assert float(target_memory_loss(model, memory)) == 0.0
    assert float(source_memory_loss(model, memory)) == 0.0


def test_target_memory_loss_weighted_sum():
    memory = {"A": _batch(0.2, 0.2), "B": _batch(0.6)}
    assert float(target_memory_loss(PassThrough(), memory, 0.5)) == pytest.approx(0.4, abs=1e-4)
    assert float(target_memory_loss(PassThrough(), memory, 0.0)) == 0.0


def test_per_site_weights():
    memory = {"A": _batch(0.2), "B": _batch(0.6)}
    value = target_memory_loss(PassThrough(), memory, {"A": 1.0, "B": 0.0})
    assert float(value) == pytest.approx(0.2, abs=1e-4)


def test_source_memory_loss_single_site():
    assert float(source_memory_loss(PassThrough(), {"A": _batch(0.3)}, 0.5)) == pytest.approx(0.15, abs=1e-4)


def test_source_memory_loss_needs_source_decoder():
    with pytest.raises(ValueError):
        source_memory_loss(PassThrough(with_source=False), {"A": _batch(0.3)})


def test_empty_memory_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert float(target_memory_loss(PassThrough(), {})) == 0.0
        assert float(source_memory_loss(PassThrough(), {})) == 0.0
    assert "empty memory" in caplog.text


@pytest.mark.parametrize("parts, expected", [
    ((0.4, 0.2, 0.1), 0.7),
    ((0.5, None, None), 0.5),
    ((0.0, 0.0, 0.0), 0.0),
])
def test_total_loss(parts, expected):
    l_site, l_target, l_source = (None if p is None else torch.tensor(p) for p in parts)
    breakdown = total_loss(l_site, l_target, l_source)
    assert float(breakdown.l_all) == pytest.approx(expected)
    assert float(breakdown.l_model) == pytest.approx(expected - parts[0])


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=-1.0)
    with pytest.raises(ValueError):
        LossConfig(smoothing_eps=0.0)
    config = LossConfig(site_alpha={"A": 2.0})
    assert config.alpha_for("A") == 2.0 and config.alpha_for("B") == 0.5


def test_breakdown_skips_model_loss_when_disabled():
    x, y = _batch(0.2)
    memory = {"A": _batch(0.6)}
    with_model = compute_breakdown(PassThrough(), x, y, memory, LossConfig())
    without = compute_breakdown(PassThrough(), x, y, memory, LossConfig(), use_model_loss=False)
    assert float(with_model.l_model) == pytest.approx(0.6, abs=1e-4)
    assert float(without.l_model) == 0.0
    assert float(without.l_all) == pytest.approx(0.2, abs=1e-4)


def test_source_loss_only_reaches_encoder(enc_spec, dec_spec):
    model = build_model(enc_spec, dec_spec, phase=2, seed=3)
    model.train()
    x = torch.randn(2, 3, 32, 32)
    y = (torch.rand(2, 32, 32) > 0.5).float()
    source_memory_loss(model, {"A": (x, y)}, 0.5).backward()
    assert all(p.grad is None for p in model.source_decoder.parameters())
    assert all(p.grad is None for p in model.target_decoder.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in model.encoder.parameters())
