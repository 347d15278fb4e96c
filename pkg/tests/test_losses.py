import math

import numpy as np
import pytest
import torch

from djcm import ConfigurationError, InvalidInputError, LossConfig
from djcm.losses import joint_loss, mae_loss, weighted_bce


def test_mae_zero_for_identical():
    x = torch.randn(2, 100, dtype=torch.float64)
    assert mae_loss(x, x.clone()).item() == 0.0


def test_mae_known_value():
    target = torch.zeros(1, 4)
    pred = torch.tensor([[1.0, -1.0, 2.0, 0.0]])
    assert mae_loss(target, pred).item() == pytest.approx(1.0)


def test_mae_ignores_padded_tail():
    target = torch.zeros(1, 10)
    pred = torch.zeros(1, 10)
    pred[0, 6:] = 99.0  # garbage only beyond the valid region
    valid = torch.tensor([6])
    assert mae_loss(target, pred, valid).item() == 0.0
    assert mae_loss(target, pred).item() > 0.0


def test_bce_closed_form_unvoiced_frame():
    # all-zero target, uniform 0.5 prediction: -360*log(0.5) per frame
    target = torch.zeros(1, 1, 360)
    pred = torch.full((1, 1, 360), 0.5)
    expected = 360 * math.log(2.0)
    assert weighted_bce(target, pred).item() == pytest.approx(expected, abs=1e-4)


def test_bce_closed_form_one_hot_frame():
    # one-hot target, uniform 0.5: -(10*log .5 + 359*log .5) = 369*log 2
    target = torch.zeros(1, 1, 360)
    target[0, 0, 17] = 1.0
    pred = torch.full((1, 1, 360), 0.5)
    expected = 369 * math.log(2.0)
    assert weighted_bce(target, pred, alpha=10.0).item() == pytest.approx(expected, abs=1e-4)


def test_bce_mean_over_frames_and_batch():
    target = torch.zeros(2, 3, 360)
    pred = torch.full((2, 3, 360), 0.5)
    assert weighted_bce(target, pred).item() == pytest.approx(360 * math.log(2.0), abs=1e-4)


def test_bce_masks_invalid_frames():
    target = torch.zeros(1, 4, 360)
    pred = torch.full((1, 4, 360), 0.5)
    pred[0, 2:] = 0.999  # junk frames that the mask must exclude
    valid = torch.tensor([2])
    assert weighted_bce(target, pred, valid).item() == pytest.approx(360 * math.log(2.0), abs=1e-4)


def test_bce_survives_saturated_predictions():
    target = torch.ones(1, 1, 360)
    pred = torch.ones(1, 1, 360)  # log(1-p) would be -inf without clamping
    value = weighted_bce(target, pred).item()
    assert math.isfinite(value)
    target = torch.zeros(1, 1, 360)
    pred = torch.zeros(1, 1, 360)
    assert math.isfinite(weighted_bce(target, pred).item())


def test_bce_rejects_out_of_range_predictions():
    target = torch.zeros(1, 1, 360)
    with pytest.raises(InvalidInputError):
        weighted_bce(target, torch.full((1, 1, 360), 1.2))
    with pytest.raises(InvalidInputError):
        weighted_bce(target, torch.full((1, 1, 360), -0.1))


def _central_difference_grad(f, x, eps=1e-6):
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def test_mae_gradient_matches_finite_differences():
    torch.manual_seed(0)
    target = torch.randn(2, 16, dtype=torch.float64)
    pred = torch.randn(2, 16, dtype=torch.float64, requires_grad=True)
    loss = mae_loss(target, pred)
    loss.backward()
    fd = _central_difference_grad(lambda p: mae_loss(target, p), pred.detach().clone())
    rel = (pred.grad - fd).abs().max() / fd.abs().max()
    assert rel.item() < 1e-5


def test_bce_gradient_matches_finite_differences():
    torch.manual_seed(1)
    target = (torch.rand(1, 3, 8, dtype=torch.float64) > 0.7).double()
    pred = torch.rand(1, 3, 8, dtype=torch.float64) * 0.8 + 0.1
    pred.requires_grad_(True)
    loss = weighted_bce(target, pred, alpha=10.0)
    loss.backward()
    fd = _central_difference_grad(lambda p: weighted_bce(target, p, alpha=10.0),
                                  pred.detach().clone())
    rel = (pred.grad - fd).abs().max() / fd.abs().max()
    assert rel.item() < 1e-5


class TestJointLoss:
    def test_default_weighting(self):
        a = torch.tensor(2.0)
        b = torch.tensor(3.0)
        assert joint_loss(a, b).item() == pytest.approx(1.8 * 2.0 + 0.2 * 3.0)

    def test_omega_one_is_plain_sum(self):
        a = torch.tensor(0.123456)
        b = torch.tensor(7.654321)
        total = joint_loss(a, b, omega=1.0).item()
        assert abs(total - (a.item() + b.item())) < 1e-7

    def test_endpoints(self):
        a, b = torch.tensor(5.0), torch.tensor(11.0)
        assert joint_loss(a, b, omega=2.0).item() == pytest.approx(10.0)
        assert joint_loss(a, b, omega=0.0).item() == pytest.approx(22.0)

    def test_omega_validation(self):
        with pytest.raises(ConfigurationError):
            LossConfig(omega=2.5)
        with pytest.raises(ConfigurationError):
            LossConfig(omega=-0.1)
        with pytest.raises(ConfigurationError):
            LossConfig(alpha=0.0)
