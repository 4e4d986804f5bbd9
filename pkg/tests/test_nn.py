import numpy as np
import pytest

from fovealsearch import nn
from fovealsearch import tensor as T
from fovealsearch.gradcheck import MODEL_TOLERANCE, check_scalar_function
from fovealsearch.nn import Adam, BatchNorm, ConvLstmCell, EarlyStopper, dropout
from fovealsearch.tensor import Tape, Tensor


def make_cell(seed=0, cin=2, f=2, k=2, stride=1, pad=0):
    return ConvLstmCell(cin, f, k, stride=stride, padding=pad, rng=np.random.default_rng(seed))


def zero_cell(**kwargs):
    cell = make_cell(**kwargs)
    for p in cell.params().values():
        p.assign(np.zeros(p.shape))
    return cell


def scalar_lstm_reference(weights, x_seq):
    """Direct float evaluation of the six gate equations for 1x1 inputs."""
    wi, wf, wo, wc, ui, uf, uo, uc, bi, bf, bo, bc = weights

    def hs(v):
        return min(max(0.2 * v + 0.5, 0.0), 1.0)

    h = c = 0.0
    outs = []
    for x in x_seq:
        i = hs(wi * x + ui * h + bi)
        f = hs(wf * x + uf * h + bf)
        o = hs(wo * x + uo * h + bo)
        c_tilde = np.tanh(wc * x + uc * h + bc)
        c = f * c + i * c_tilde
        h = o * np.tanh(c)
        outs.append((h, c))
    return outs


def test_convlstm_zero_weights_zero_state():
    cell = zero_cell()
    x = Tensor(np.random.default_rng(0).normal(size=(3, 3, 2)).astype(np.float32))
    h, c = cell.initial_state(0, 3, 3)
    for _ in range(4):
        h, c = cell.step(x, h, c)
        assert np.all(h.data == 0.0)
        assert np.all(c.data == 0.0)


def test_convlstm_zero_weights_nonzero_cell_state():
    cell = zero_cell()
    x = Tensor(np.ones((3, 3, 2), dtype=np.float32))
    h0, c0 = cell.initial_state(0, 3, 3)
    c_prev = Tensor(np.full(c0.shape, 0.8, dtype=np.float32))
    h, c = cell.step(x, h0, c_prev)
    # gates are hs(0)=0.5 and the candidate is tanh(0)=0
    assert np.allclose(c.data, 0.4, atol=1e-7)
    assert np.allclose(h.data, 0.5 * np.tanh(0.4), atol=1e-7)


def test_convlstm_matches_scalar_reference_on_1x1_input():
    rng = np.random.default_rng(42)
    with T.using_dtype("float64"):
        cell = ConvLstmCell(1, 1, 1, stride=1, padding=0, rng=rng)
        weights = []
        for group in (cell.input_kernels, cell.recurrent_kernels):
            for g in nn.GATES:
                weights.append(float(group[g].data.reshape(-1)[0]))
        for g in nn.GATES:
            b = rng.normal()
            cell.biases[g].assign(np.array([b]))
            weights.append(b)
        xs = rng.normal(size=50)
        h, c = cell.initial_state(0, 1, 1)
        ref = scalar_lstm_reference(weights, xs)
        for x, (h_ref, c_ref) in zip(xs, ref):
            h, c = cell.step(Tensor(np.full((1, 1, 1), x)), h, c)
            assert abs(h.item() - h_ref) < 1e-10
            assert abs(c.item() - c_ref) < 1e-10


def test_convlstm_state_update_identity_by_construction():
    rng = np.random.default_rng(5)
    cell = make_cell(seed=3)
    x = Tensor(rng.normal(size=(4, 4, 2)).astype(np.float32))
    h, c = cell.initial_state(0, 4, 4)
    for _ in range(3):
        h_prev, c_prev = h, c
        h, c, gates = cell.step_with_gates(x, h_prev, c_prev)
        recomposed = gates["forget"].data * c_prev.data + gates["input"].data * gates["candidate"].data
        assert np.array_equal(c.data, recomposed)
        assert np.array_equal(h.data, gates["output"].data * np.tanh(c.data))


def test_convlstm_gate_range():
    rng = np.random.default_rng(9)
    cell = make_cell(seed=1)
    x = Tensor(rng.normal(scale=5.0, size=(5, 5, 2)).astype(np.float32))
    h, c = cell.initial_state(0, 5, 5)
    _, _, gates = cell.step_with_gates(x, h, c)
    for name in ("input", "forget", "output"):
        assert gates[name].data.min() >= 0.0
        assert gates[name].data.max() <= 1.0


def test_convlstm_state_shape_mismatch():
    cell = make_cell()
    x = Tensor(np.zeros((3, 3, 2), dtype=np.float32))
    h, c = cell.initial_state(0, 3, 3)
    bad_c = Tensor(np.zeros((1, 2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        cell.step(x, h, bad_c)


def test_convlstm_gradients_finite_difference():
    rng = np.random.default_rng(17)
    with T.using_dtype("float64"):
        cell = ConvLstmCell(2, 2, 2, stride=1, padding=1, rng=rng)
        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        h0 = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
        c0 = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
        wh = rng.normal(size=(5, 5, 2))
        wc = rng.normal(size=(5, 5, 2))

        def loss():
            h, c = cell.step(x, h0, c0)
            return (h * wh).sum() + (c * wc).sum()

        params = dict(cell.params())
        params.update({"x": x, "h0": h0, "c0": c0})
        errors = check_scalar_function(loss, params)
    assert max(errors.values()) < 1e-4, errors


def test_convlstm_unrolled_equals_explicit_composition():
    rng = np.random.default_rng(23)
    with T.using_dtype("float64"):
        cell = ConvLstmCell(1, 1, 2, stride=1, padding=0, rng=rng)
        xs = [Tensor(rng.normal(size=(3, 3, 1))) for _ in range(3)]
        w = rng.normal(size=(2, 2, 1))
        params = list(cell.params().values())

        with Tape() as tape:
            h, c = cell.initial_state(0, 3, 3)
            for x in xs:
                h, c = cell.step(x, h, c)
            loss_loop = (h * w).sum()
        grads_loop = tape.gradients(loss_loop, params)

        with Tape() as tape2:
            h0, c0 = cell.initial_state(0, 3, 3)
            h1, c1 = cell.step(xs[0], h0, c0)
            h2, c2 = cell.step(xs[1], h1, c1)
            h3, _ = cell.step(xs[2], h2, c2)
            loss_explicit = (h3 * w).sum()
        grads_explicit = tape2.gradients(loss_explicit, params)

    for p in params:
        assert np.allclose(grads_loop[p].data, grads_explicit[p].data, atol=1e-12)


def test_batchnorm_normalizes_batch():
    rng = np.random.default_rng(0)
    bn = BatchNorm(3)
    x = Tensor(rng.normal(loc=5.0, scale=2.0, size=(64, 3)).astype(np.float32))
    y = bn(x, "train")
    assert np.allclose(y.data.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(y.data.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_moving_update_single_step():
    bn = BatchNorm(1, momentum=0.99)
    x = Tensor(np.array([[1.0], [1.0]], dtype=np.float32))
    bn(x, "train")
    assert bn.moving_mean[0] == pytest.approx(0.01, abs=1e-9)


def test_batchnorm_moving_stats_match_hand_iteration():
    bn = BatchNorm(1, momentum=0.9)
    batches = [np.array([[1.0], [3.0]]), np.array([[-2.0], [2.0]])]
    m = 0.0
    v = 1.0
    for b in batches:
        bn(Tensor(b.astype(np.float32)), "train")
        mu = b.mean()
        sig = b.var()
        m = m * 0.9 + mu * 0.1
        v = v * 0.9 + sig * 0.1
    assert bn.moving_mean[0] == pytest.approx(m, abs=1e-6)
    assert bn.moving_var[0] == pytest.approx(v, abs=1e-6)


def test_batchnorm_infer_is_batch_size_invariant():
    rng = np.random.default_rng(4)
    bn = BatchNorm(2)
    bn(Tensor(rng.normal(size=(32, 2)).astype(np.float32)), "train")
    sample = rng.normal(size=(1, 2)).astype(np.float32)
    alone = bn(Tensor(sample), "infer").data
    batch = np.concatenate([sample, rng.normal(size=(7, 2)).astype(np.float32)])
    together = bn(Tensor(batch), "infer").data[:1]
    assert np.array_equal(alone, together)


def test_batchnorm_infer_before_train_warns(caplog):
    bn = BatchNorm(2, name="bn_test")
    with caplog.at_level("WARNING"):
        out = bn(Tensor(np.ones((2, 2), dtype=np.float32)), "infer")
    assert "bn_test" in caplog.text
    # M=0, V=1 initialization
    expected = (1.0 - 0.0) / np.sqrt(1.0 + bn.eps)
    assert np.allclose(out.data, expected, atol=1e-6)


def test_batchnorm_bad_mode():
    bn = BatchNorm(1)
    with pytest.raises(ValueError):
        bn(Tensor(np.ones((2, 1), dtype=np.float32)), "both")


def test_batchnorm_gradients():
    rng = np.random.default_rng(31)
    with T.using_dtype("float64"):
        bn = BatchNorm(2)
        x = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        w = rng.normal(size=(6, 2))
        params = {"x": x, **bn.params()}
        errors = check_scalar_function(lambda: (bn(x, "train") * w).sum(), params)
    assert max(errors.values()) < 1e-4, errors


def test_dropout_rate_zero_and_infer_are_identity():
    x = Tensor(np.arange(10, dtype=np.float32))
    rng = np.random.default_rng(0)
    assert np.array_equal(dropout(x, 0.0, "train", rng).data, x.data)
    assert dropout(x, 0.5, "infer") is x


def test_dropout_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(np.ones(100_000, dtype=np.float32))
    y = dropout(x, 0.5, "train", rng)
    surviving = np.count_nonzero(y.data) / y.size
    assert surviving == pytest.approx(0.5, abs=0.01)
    assert y.data.mean() == pytest.approx(1.0, abs=0.01)


def test_dropout_bad_rate():
    with pytest.raises(ValueError):
        dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    opt.step({p: Tensor(np.zeros(2, dtype=np.float32))})
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_first_step_magnitude_is_lr():
    p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    opt.step({p: Tensor(np.full(3, 7.0, dtype=np.float32))})
    assert np.allclose(np.abs(p.data), 0.01, rtol=1e-4)


def test_adam_matches_hand_iterated_recurrence():
    with T.using_dtype("float64"):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        w, m, v, t = 1.0, 0.0, 0.0, 0
        for _ in range(3):
            g = 2.0 * float(p.data[0])
            opt.step({p: Tensor(np.array([g]))})
            g_ref = 2.0 * w
            t += 1
            m = 0.9 * m + 0.1 * g_ref
            v = 0.999 * v + 0.001 * g_ref * g_ref
            w = w - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert abs(float(p.data[0]) - w) < 1e-9


def test_adam_gradient_shape_mismatch():
    p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    opt = Adam({"p": p})
    with pytest.raises(ValueError):
        opt.step({p: Tensor(np.zeros(4, dtype=np.float32))})


def test_init_deterministic_under_seed():
    a = nn.glorot_uniform((20, 20), 20, 20, np.random.default_rng(123))
    b = nn.glorot_uniform((20, 20), 20, 20, np.random.default_rng(123))
    assert np.array_equal(a, b)


def test_init_variance_and_zero_bias():
    w, b = nn.init_dense(100, 100, np.random.default_rng(7))
    expected_var = 2.0 / (100 + 100)
    assert w.data.var() == pytest.approx(expected_var, rel=0.2)
    assert np.all(b.data == 0.0)


def test_early_stopper_plateau_scenario():
    stopper = EarlyStopper(patience=5)
    losses = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0]
    stopped_at = None
    for epoch, loss in enumerate(losses, start=1):
        if stopper.update(loss, lambda e=epoch: {"epoch": e}):
            stopped_at = epoch
            break
    assert stopped_at == 7
    assert stopper.best_snapshot == {"epoch": 2}


def test_early_stopper_improvement_resets_counter():
    stopper = EarlyStopper(patience=2)
    assert not stopper.update(3.0, dict)
    assert not stopper.update(4.0, dict)
    assert not stopper.update(2.0, dict)
    assert not stopper.update(2.5, dict)
    assert stopper.update(2.5, dict)
