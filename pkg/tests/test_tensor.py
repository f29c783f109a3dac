import math

import numpy as np
import pytest

from czsl_engine.autodiff import Tape, Tensor, backward, ops, precision
from czsl_engine.autodiff.gradcheck import check_gradients
from czsl_engine.autodiff.layers import batch_norm
from czsl_engine.errors import ContractError, DegenerateVectorError, DimensionError, NumericError

TOL = 1e-4
TRIALS = 20


def _weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(x, weights))


def _assert_grads(fn, arrays):
    errors = check_gradients(fn, arrays)
    for index, err in errors.items():
        assert err < TOL, f"input {index}: relative error {err}"


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(Tensor(np.eye(2)), a).data, a.data)
    assert np.array_equal(ops.matmul(a, Tensor([[5.0], [6.0]])).data, np.array([[17.0], [39.0]]))
    out = ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(3, 4)))
    assert out.shape == (2, 4)
    assert not out.data.any()


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_scaled_softmax_examples():
    out = ops.scaled_softmax(Tensor([[0.0, 0.0, 0.0]]), axis=-1, inverse_temperature=7.0)
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-7)

    out = ops.scaled_softmax(Tensor([[math.log(2.0), 0.0]]), axis=-1, inverse_temperature=1.0)
    np.testing.assert_allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-6)

    out = ops.scaled_softmax(Tensor([[1.0, 0.0]]), axis=-1, inverse_temperature=1000.0)
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-6)


def test_scaled_softmax_columns_and_zero_temperature():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 5)))
    cols = ops.scaled_softmax(x, axis=-2, inverse_temperature=3.0)
    np.testing.assert_allclose(cols.data.sum(axis=0), np.ones(5), atol=1e-6)
    with pytest.raises(NumericError):
        ops.scaled_softmax(x, inverse_temperature=0.0)
    uniform = ops.scaled_softmax(x, inverse_temperature=0.0, allow_zero=True)
    np.testing.assert_allclose(uniform.data, np.full((4, 5), 0.2), atol=1e-7)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        ops.scaled_softmax(Tensor([[np.inf, 0.0]]))


def test_l2_normalize_examples():
    np.testing.assert_allclose(ops.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-7)
    unit = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(ops.l2_normalize(Tensor(unit)).data, unit)
    with pytest.raises(DegenerateVectorError):
        ops.l2_normalize(Tensor([0.0, 0.0]))


def test_backward_simple_cases():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    y = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(y, y))
    backward(tape, loss)
    np.testing.assert_allclose(y.grad, [2.0, 4.0])


def test_backward_needs_scalar_and_finite_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ContractError):
        backward(tape, y)
    with Tape() as tape:
        z = ops.sum(ops.mul(x, np.inf))
    with pytest.raises(NumericError):
        backward(tape, z)


def test_ops_outside_a_tape_are_not_recorded():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.mul(x, 3.0)
    with Tape() as tape:
        z = ops.sum(y)
        ops.add(Tensor([1.0]), Tensor([2.0]))  # no grads needed, not recorded
    assert tape.op_names() == ["sum"]
    backward(tape, z)
    assert x.grad is None


def test_precision_scope_switches_dtype():
    assert Tensor([1.0]).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_elementwise_and_matmul(trial):
    rng = np.random.default_rng(trial)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    c = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 2))

    def fn(a, b, c):
        h = ops.add(ops.mul(a, c), ops.sub(a, c))
        return _weighted_sum(ops.matmul(h, b), w)

    _assert_grads(fn, [a, b, c])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_shape_ops(trial):
    rng = np.random.default_rng(100 + trial)
    x = rng.standard_normal((2, 3, 4))
    y = rng.standard_normal((2, 3, 2))
    w = rng.standard_normal((2, 4, 3))
    idx = np.array([0, 2, 2, 1])

    def fn(x, y):
        joined = ops.concat([x, y], axis=-1)
        swapped = ops.swapaxes(joined, 1, 2)
        flat = ops.reshape(ops.transpose(swapped, (0, 2, 1)), (2, 3, 6))
        picked = ops.getitem(flat, (slice(None), idx))
        return ops.add(_weighted_sum(ops.swapaxes(flat, 1, 2)[:, :4], w), ops.mean(picked))

    _assert_grads(fn, [x, y])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_softmax_and_log_softmax(trial):
    rng = np.random.default_rng(200 + trial)
    x = rng.standard_normal((4, 5))
    w_row = rng.standard_normal((4, 5))
    w_col = rng.standard_normal((4, 5))

    def fn(x):
        rows = ops.scaled_softmax(x, axis=-1, inverse_temperature=2.0)
        cols = ops.scaled_softmax(x, axis=-2, inverse_temperature=1.5)
        return ops.add(_weighted_sum(rows, w_row), ops.add(_weighted_sum(cols, w_col), ops.mean(ops.log_softmax(x))))

    _assert_grads(fn, [x])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_normalize_and_cosines(trial):
    rng = np.random.default_rng(300 + trial)
    v = rng.standard_normal((3, 5))
    anchors = rng.standard_normal((4, 5))
    w = rng.standard_normal((3, 5))
    weights = rng.standard_normal((3, 4))

    def fn(v, anchors, w):
        logits = ops.cosine_logits(v, anchors, 2.0)
        pair = ops.pairwise_cosine(v, w, 3.0)
        return ops.add(_weighted_sum(logits, weights), ops.sum(pair))

    _assert_grads(fn, [v, anchors, w])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_cross_entropy(trial):
    rng = np.random.default_rng(400 + trial)
    logits = rng.standard_normal((5, 4))
    targets = rng.integers(0, 4, size=5)
    _assert_grads(lambda x: ops.cross_entropy(x, targets), [logits])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_relu_dropout_and_positions(trial):
    rng = np.random.default_rng(500 + trial)
    # keep values away from the ReLU kink
    x = rng.uniform(0.2, 1.0, size=(2, 3, 49)) * rng.choice([-1.0, 1.0], size=(2, 3, 49))
    weights = rng.uniform(0.1, 1.0, size=(2, 49))
    w = rng.standard_normal((2, 3))

    def fn(x, weights):
        h = ops.dropout(ops.relu(x), 0.4, np.random.default_rng(7), True)
        return _weighted_sum(ops.weighted_positions(h, weights), w)

    _assert_grads(fn, [x, weights])


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradients_batch_norm(trial):
    rng = np.random.default_rng(600 + trial)
    x = rng.standard_normal((3, 4, 6))
    gamma = rng.uniform(0.5, 1.5, size=4)
    beta = rng.standard_normal(4)
    w = rng.standard_normal((3, 4, 6))

    def fn(x, gamma, beta):
        out = batch_norm(x, gamma, beta, np.zeros(4), np.ones(4), train_mode=True)
        return _weighted_sum(out, w)

    _assert_grads(fn, [x, gamma, beta])


def test_dropout_modes():
    x = Tensor(np.ones((4, 50)))
    assert ops.dropout(x, 0.3, np.random.default_rng(0), train_mode=False) is x
    assert ops.dropout(x, 0.0, np.random.default_rng(0), train_mode=True) is x
    out = ops.dropout(x, 0.5, np.random.default_rng(0), train_mode=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    with pytest.raises(NumericError):
        ops.dropout(x, 1.0, np.random.default_rng(0), True)
