import numpy as np
import pytest

from fovealsearch import tensor as T
from fovealsearch.gradcheck import (
    OP_TOLERANCE,
    check_elementwise_ops,
    check_scalar_function,
    check_structural_ops,
    relative_error,
)
from fovealsearch.tensor import NumericError, Tape, Tensor


def test_hard_sigmoid_definition_points():
    assert T.hard_sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)
    assert T.hard_sigmoid(Tensor([3.0])).data[0] == 1.0
    assert T.hard_sigmoid(Tensor([-3.0])).data[0] == 0.0


def test_mul_forward_and_backward():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    with Tape() as tape:
        y = T.mul(a, b)
        loss = y.sum()
    assert np.allclose(y.data, [3.0, 8.0])
    grads = tape.gradients(loss, [a, b])
    assert np.allclose(grads[a].data, [3.0, 4.0])
    assert np.allclose(grads[b].data, [1.0, 2.0])


def test_elementwise_dispatch_and_errors():
    out = T.elementwise("add", Tensor([1.0]), Tensor([2.0]))
    assert out.data[0] == 3.0
    with pytest.raises(ValueError):
        T.elementwise("nope", Tensor([1.0]))
    with pytest.raises(ValueError):
        T.elementwise("mul", Tensor([1.0]))
    with pytest.raises(ValueError):
        T.elementwise("tanh", Tensor([1.0]), Tensor([1.0]))


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_log_of_non_positive_is_an_error():
    with pytest.raises(NumericError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(NumericError):
        T.log(Tensor([-1.0]))


def test_non_finite_values_rejected():
    with pytest.raises(NumericError):
        Tensor([np.nan])
    with pytest.raises(NumericError):
        T.exp(Tensor([1e9]))  # overflows to inf


def test_dtype_switch_and_context():
    assert Tensor([1.0]).dtype == np.float32
    with T.using_dtype("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(ValueError):
        T.set_default_dtype("float16")


def test_reshape_shares_values():
    x = Tensor(np.arange(6, dtype=np.float64))
    y = x.reshape(2, 3)
    assert y.shape == (2, 3)
    assert np.shares_memory(x.data, y.data)


def test_dense_identity_and_hand_case():
    x = Tensor([1.0, 0.0])
    w = Tensor(np.eye(2))
    y = T.dense(x, w, Tensor([0.0, 0.0]))
    assert np.allclose(y.data, [1.0, 0.0])

    y2 = T.dense(Tensor([1.0, 2.0]), Tensor([[1.0], [1.0]]), Tensor([0.5]))
    assert y2.data[0] == pytest.approx(3.5)


def test_dense_dimension_mismatch():
    with pytest.raises(ValueError):
        T.dense(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones((2, 4))))


def test_conv2d_identity_kernel():
    x = Tensor(np.array([[[2.5]]]))
    k = Tensor(np.ones((1, 1, 1, 1)))
    y = T.conv2d(x, k, Tensor([0.0]))
    assert y.data[0, 0, 0] == pytest.approx(2.5)


def test_conv2d_sum_of_ones():
    x = Tensor(np.ones((3, 3, 1)))
    k = Tensor(np.ones((2, 2, 1, 1)))
    y = T.conv2d(x, k)
    assert y.shape == (2, 2, 1)
    assert np.allclose(y.data, 4.0)


def test_conv2d_kernel_too_large():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((2, 2, 1))), Tensor(np.ones((4, 4, 1, 1))), pad=0)


def test_conv2d_matches_scipy_style_reference():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 6, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), stride=2, pad=1).data
    # brute-force cross-correlation
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ho = (5 + 2 - 3) // 2 + 1
    wo = (6 + 2 - 3) // 2 + 1
    ref = np.zeros((ho, wo, 4))
    for i in range(ho):
        for j in range(wo):
            patch = xp[2 * i : 2 * i + 3, 2 * j : 2 * j + 3, :]
            for f in range(4):
                ref[i, j, f] = np.sum(patch * k[:, :, :, f])
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_1x1_equals_dense_over_channels():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 1, 6))
    k = rng.normal(size=(1, 1, 6, 3))
    b = rng.normal(size=(3,))
    with T.using_dtype("float64"):
        conv = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, pad=0)
        via_dense = T.dense(Tensor(x.reshape(6)), Tensor(k.reshape(6, 3)), Tensor(b))
    assert np.allclose(conv.data.reshape(3), via_dense.data, atol=1e-12)


def test_softmax_uniform_and_stability():
    y = T.softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
    assert np.allclose(y.data, 0.25)
    y2 = T.softmax(Tensor([1000.0, 0.0]))
    assert y2.data[0] == pytest.approx(1.0)
    assert y2.data[1] == pytest.approx(0.0)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    y = T.softmax(Tensor(rng.normal(scale=10, size=(4, 9))))
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(5, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    grads = tape.gradients(loss, [x])
    assert np.array_equal(grads[x].data, np.ones(5))


def test_backward_chain_rule_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = T.mul(x, x).sum()
    grads = tape.gradients(loss, [x])
    assert np.allclose(grads[x].data, [2.0, 4.0])


def test_backward_fanout_adds():
    x = Tensor([1.0, 1.0], requires_grad=True)
    with Tape() as tape:
        y = T.add(x, x)
        loss = y.sum()
    grads = tape.gradients(loss, [x])
    assert np.allclose(grads[x].data, [2.0, 2.0])


def test_backward_disconnected_leaf_is_exact_zero():
    x = Tensor([1.0], requires_grad=True)
    unused = Tensor([5.0], requires_grad=True)
    with Tape() as tape:
        loss = T.mul(x, 2.0).sum()
    grads = tape.gradients(loss, [x, unused])
    assert grads[unused].data[0] == 0.0


def test_backward_requires_scalar_loss_on_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = T.mul(x, 2.0)
    with pytest.raises(ValueError):
        tape.gradients(y, [x])
    off_tape = Tensor([3.0])
    with pytest.raises(ValueError):
        tape.gradients(off_tape, [x])


def test_no_tape_means_no_recording():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        pass
    y = T.mul(x, 3.0)
    assert y.data[0] == 3.0
    assert not tape._nodes


def test_gradients_of_broadcast_bias():
    x = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        loss = T.add(x, b).sum()
    grads = tape.gradients(loss, [x, b])
    assert grads[b].data.shape == (3,)
    assert np.allclose(grads[b].data, 4.0)


@pytest.mark.parametrize("seed", range(20))
def test_finite_difference_all_elementwise_ops(seed):
    with T.using_dtype("float64"):
        errors = check_elementwise_ops(seed)
    assert max(errors.values()) < OP_TOLERANCE, errors


@pytest.mark.parametrize("seed", range(20))
def test_finite_difference_structural_ops(seed):
    with T.using_dtype("float64"):
        errors = check_structural_ops(seed)
    assert max(errors.values()) < OP_TOLERANCE, errors


def test_conv2d_asymmetric_padding_gradients():
    rng = np.random.default_rng(11)
    with T.using_dtype("float64"):
        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        k = Tensor(rng.normal(size=(4, 4, 2, 3)), requires_grad=True)
        w = rng.normal(size=(4, 4, 3))
        errors = check_scalar_function(
            lambda: (T.conv2d(x, k, stride=1, pad=((1, 2), (1, 2))) * w).sum(),
            {"x": x, "k": k},
        )
    assert max(errors.values()) < OP_TOLERANCE


def test_relative_error_uses_unit_floor():
    assert relative_error(np.array([1e-9]), np.array([0.0])) < 1e-8
    assert relative_error(np.array([200.0]), np.array([100.0])) == pytest.approx(0.5)
