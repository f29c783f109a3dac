import numpy as np
import pytest

from czsl_engine.autodiff import Tensor, ops, precision
from czsl_engine.autodiff.layers import (
    BN_EPS,
    Conv1x1Block,
    Linear,
    Module,
    avgpool_spatial,
    batch_norm,
    layer_forward,
)
from czsl_engine.errors import ConfigError, DimensionError


def test_linear_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    params = {"weight": Tensor(np.eye(4)), "bias": Tensor(np.zeros(4))}
    np.testing.assert_array_equal(layer_forward("linear", x, params).data, x.data)


def test_linear_width_mismatch():
    layer = Linear(4, 2, np.random.default_rng(0), "fc")
    with pytest.raises(DimensionError):
        layer(Tensor(np.ones((1, 3))))


def test_avgpool_constant_field():
    column = np.arange(5.0)
    x = Tensor(np.repeat(column[None, :, None], 49, axis=2))
    np.testing.assert_allclose(layer_forward("avgpool-spatial", x).data, column[None, :], atol=1e-6)


def test_concat_kind():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 2)))
    assert layer_forward("concat", [a, b]).shape == (2, 5)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        layer_forward("conv3x3", Tensor(np.ones((1, 2))))


def test_batch_norm_train_normalizes_and_updates_running_stats():
    with precision(np.float64):
        x = Tensor(np.random.default_rng(1).standard_normal((4, 3, 49)) * 2.0 + 5.0)
        mean, var = np.zeros(3), np.ones(3)
        out = batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), mean, var, train_mode=True)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2)), np.zeros(3), atol=1e-9)
    np.testing.assert_allclose(out.data.var(axis=(0, 2)), np.ones(3), atol=1e-3)
    np.testing.assert_allclose(mean, 0.1 * x.data.mean(axis=(0, 2)))
    assert np.all(var != 1.0)


def test_batch_norm_eval_uses_running_stats():
    with precision(np.float64):
        x = Tensor(np.full((2, 2, 49), 3.0))
        mean, var = np.array([1.0, 3.0]), np.array([4.0, 1.0])
        out = batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, train_mode=False)
    np.testing.assert_allclose(out.data[0, 0], np.full(49, 2.0 / np.sqrt(4.0 + BN_EPS)))
    np.testing.assert_allclose(out.data[0, 1], np.zeros(49))
    np.testing.assert_array_equal(mean, [1.0, 3.0])


def test_conv_block_eval_is_deterministic_and_shapes():
    block = Conv1x1Block(6, 5, 0.3, np.random.default_rng(0), "ie")
    raw = Tensor(np.random.default_rng(1).standard_normal((2, 6, 49)))
    a = block(raw, np.random.default_rng(2), train_mode=False)
    b = block(raw, np.random.default_rng(3), train_mode=False)
    assert a.shape == (2, 5, 49)
    np.testing.assert_array_equal(a.data, b.data)
    assert np.all(a.data >= 0)


def test_conv_block_rejects_wrong_channels():
    block = Conv1x1Block(6, 5, 0.0, np.random.default_rng(0), "ie")
    with pytest.raises(DimensionError):
        block(Tensor(np.ones((1, 4, 49))), None, False)


def test_module_collects_named_parameters_and_buffers():
    class Net(Module):
        def __init__(self):
            rng = np.random.default_rng(0)
            self.enc = Conv1x1Block(3, 2, 0.0, rng, "enc")
            self.head = Linear(2, 2, rng, "head")

    net = Net()
    assert set(net.parameters()) == {
        "enc.weight", "enc.bias", "enc.bn.gamma", "enc.bn.beta", "head.weight", "head.bias",
    }
    assert set(net.buffers()) == {"enc.bn.running_mean", "enc.bn.running_var"}


def test_conv_kind_matches_block():
    rng = np.random.default_rng(0)
    block = Conv1x1Block(4, 3, 0.0, rng, "c")
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 49)))
    params = {
        "weight": block.weight, "bias": block.bias, "gamma": block.gamma, "beta": block.beta,
        "running_mean": block.running_mean.copy(), "running_var": block.running_var.copy(),
    }
    functional = layer_forward("conv1x1-bn-relu-dropout", x, params, train_mode=False)
    np.testing.assert_array_equal(functional.data, block(x, None, False).data)
    assert ops.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert avgpool_spatial(x).shape == (2, 4)
