import numpy as np
import pytest

from services.errors import ConfigError, ContractError, DimensionError
from services.fusion_head import (TaskHead, batch_loss, fuse, fused_width, head_forward, hidden_widths, huber,
                                  huber_tensor)
from services.tensor import Parameter, Tensor


@pytest.mark.parametrize("error, expected", [(0.0, 0.0), (1.0, 0.5), (2.0, 2.0), (3.0, 4.0)])
def test_huber_values(error, expected):
    assert huber(1.0 + error, 1.0, 2.0) == pytest.approx(expected)
    assert huber(1.0 - error, 1.0, 2.0) == pytest.approx(expected)


def test_huber_is_continuous_at_delta():
    delta = 2.0
    below = huber(0.0, delta - 1e-9, delta)
    above = huber(0.0, delta + 1e-9, delta)
    assert above == pytest.approx(below, abs=1e-8)


def test_huber_tensor_matches_scalar(rng):
    pred = rng.normal(scale=3.0, size=20)
    ref = rng.normal(scale=3.0, size=20)
    values = huber_tensor(Tensor(pred), ref, 1.5).data
    np.testing.assert_allclose(values, [huber(p, r, 1.5) for p, r in zip(pred, ref)])


def test_huber_rejects_non_positive_delta():
    with pytest.raises(ConfigError):
        huber(1.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        huber_tensor(Tensor([1.0]), [0.0], -1.0)


def test_batch_loss_mean_and_gradient():
    pred = Parameter([[1.0, 2.0, 3.0, 4.0]], "pred")
    ref = [[1.0, 1.0, 1.0, 1.0]]
    loss = batch_loss(pred, ref, 2.0)
    assert loss.item() == pytest.approx((0.0 + 0.5 + 2.0 + 4.0) / 4)
    loss.backward()
    # dL/dŷ: e / n в квадратичной зоне, delta · sign / n в линейной
    np.testing.assert_allclose(pred.grad, [[0.0, 0.25, 0.5, 0.5]])


def test_batch_loss_contract():
    with pytest.raises(DimensionError):
        batch_loss(Tensor(np.zeros((2, 4))), np.zeros((2, 3)), 1.0)
    with pytest.raises(ContractError):
        batch_loss(Tensor(np.zeros((0, 4))), np.zeros((0, 4)), 1.0)


def test_fuse_shapes(rng):
    d_prime = rng.normal(size=(3, 26, 4))
    a_prime = rng.normal(size=(3, 4, 9))
    assert fuse(Tensor(d_prime), Tensor(a_prime), "CI").shape == (3, 4, 35)
    cd = fuse(Tensor(d_prime), Tensor(a_prime), "CD").data
    assert cd.shape == (3, 140)
    # строка канала c: его столбец D', затем его AP
    np.testing.assert_allclose(cd[:, 35:61], d_prime[:, :, 1])
    np.testing.assert_allclose(cd[:, 61:70], a_prime[:, 1])


def test_fuse_single_branch_and_none(rng):
    assert fuse(None, Tensor(rng.normal(size=(2, 4, 9))), "CI").shape == (2, 4, 9)
    assert fuse(Tensor(rng.normal(size=(2, 26, 4))), None, "CD").shape == (2, 104)
    with pytest.raises(ContractError):
        fuse(None, None, "CD")


def test_fused_width(model_cfg):
    assert fused_width(model_cfg(strategy="CI")) == 26 + 9
    assert fused_width(model_cfg(strategy="CD")) == 4 * (26 + 9)
    assert fused_width(model_cfg(strategy="CD", head_input="global_only")) == 4 * (2 + 9)
    assert fused_width(model_cfg(strategy="CI", use_ddm_branch=False)) == 9


def test_hidden_widths_taper(model_cfg):
    widths = hidden_widths(140, model_cfg(head_hidden_layers=9))
    assert len(widths) == 9
    assert widths[0] == 16 and widths[-1] == 4
    assert all(a >= b for a, b in zip(widths, widths[1:]))
    assert hidden_widths(140, model_cfg(head_hidden_layers=1)) == [16]


@pytest.mark.parametrize("strategy, fused_shape", [("CI", (5, 4, 35)), ("CD", (5, 140))])
def test_head_outputs_four_channels(model_cfg, rng, strategy, fused_shape):
    head = TaskHead(model_cfg(strategy=strategy), rng)
    out = head_forward(Tensor(rng.normal(size=fused_shape)), head, strategy)
    assert out.shape == (5, 4)
    assert len(head.layers) == 3 + 1


def test_ci_head_shares_weights_across_channels(model_cfg, rng):
    head = TaskHead(model_cfg(strategy="CI"), rng)
    x = rng.normal(size=(1, 4, 35))
    x[0, 3] = x[0, 0]
    out = head.forward(Tensor(x)).data
    assert out[0, 3] == pytest.approx(out[0, 0])
