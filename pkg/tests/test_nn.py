import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from ssvepnet.errors import ConfigError, DataIntegrityError, NumericalError, StateError
from ssvepnet.nn import (AdamState, BatchNorm1d, Conv1d, Dense, Dropout, Flatten, MaxPool1d,
                         Network, ReLU, Recurrent, adam_step, cce_loss, grad_check, l2_penalty,
                         load_checkpoint, one_hot, relu, save_checkpoint, softmax, softmax_cce_grad)

seeds = st.integers(0, 2**32 - 1)


def layer_fd(layer, x, train=True, eps=1e-6):
    """Max relative error of the layer's input and parameter gradients for the
    scalar ``sum(r * layer(x))`` with a fixed random projection ``r``."""
    r = np.random.default_rng(99).standard_normal(layer.forward(x, train).shape)
    f = lambda: float(np.sum(r * layer.forward(x, train)))
    layer.zero_grad()
    layer.forward(x, train)
    dx = layer.backward(r)
    pairs = [(x, dx)] + [(layer.params[k], layer.grads[k].copy()) for k in layer.params]
    worst = 0.0
    for arr, g in pairs:
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


# -- conv / pool ---------------------------------------------------------------

def test_conv_hand_example():
    conv = Conv1d(1, 1, 2)
    conv.params["w"][...] = 1.0
    np.testing.assert_array_equal(conv.forward(np.array([[[1.0, 2.0, 3.0]]])), [[[3.0, 5.0]]])


def test_conv_output_length():
    assert Conv1d(7, 16, 10, 4).out_length(1500) == 373
    with pytest.raises(ConfigError):
        Conv1d(7, 16, 10, 4).out_length(9)


@given(seeds, st.integers(1, 6), st.integers(1, 4))
def test_conv_matches_correlate(seed, kernel, stride):
    rng = np.random.default_rng(seed)
    conv = Conv1d(3, 2, kernel, stride, seed=seed % 100)
    conv.params["b"][...] = rng.standard_normal(2)
    x = rng.standard_normal((2, 3, 20))
    out = conv.forward(x)
    for b in range(2):
        for f in range(2):
            ref = sum(signal.correlate(x[b, c], conv.params["w"][f, c], mode="valid") for c in range(3))
            np.testing.assert_allclose(out[b, f], ref[::stride] + conv.params["b"][f], atol=1e-12)


def test_conv_gradients():
    x = np.random.default_rng(0).standard_normal((2, 3, 23))
    assert layer_fd(Conv1d(3, 4, 5, 2, seed=1), x) < 1e-6


def test_pool_examples_and_gradient():
    pool = MaxPool1d(2)
    np.testing.assert_array_equal(pool.forward(np.array([[[1.0, 3.0, 2.0, 5.0]]])), [[[3.0, 5.0]]])
    assert pool.output_shape((16, 373)) == (16, 186)
    x = np.random.default_rng(1).standard_normal((2, 3, 11))     # continuous draws: no ties
    assert layer_fd(pool, x) < 1e-6
    with pytest.raises(ConfigError):
        pool.forward(np.zeros((1, 1, 1)))


def test_pool_tie_routes_to_first():
    pool = MaxPool1d(2)
    pool.forward(np.array([[[4.0, 4.0]]]))
    np.testing.assert_array_equal(pool.backward(np.array([[[1.0]]])), [[[1.0, 0.0]]])


# -- batch norm -----------------------------------------------------------------

def test_bn_constant_input():
    bn = BatchNorm1d(2)
    assert np.all(np.abs(bn.forward(np.full((3, 2, 5), 7.0), train=True)) < 1e-3)
    bn.params["beta"][...] = 5.0
    np.testing.assert_allclose(bn.forward(np.full((3, 2, 5), 7.0), train=True), 5.0, atol=1e-3)


def test_bn_moments():
    x = 10 * np.random.default_rng(2).standard_normal((8, 3, 50)) + 4
    y = BatchNorm1d(3).forward(x, train=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-6)


def test_bn_eval_before_train():
    with pytest.raises(StateError):
        BatchNorm1d(2).forward(np.zeros((1, 2, 3)))


def test_bn_running_stats_and_gradients():
    bn = BatchNorm1d(2)
    x = 3 + 2 * np.random.default_rng(3).standard_normal((4, 2, 6))
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=(0, 2)))
    bn.params["gamma"][...] = [1.5, 0.5]
    assert layer_fd(bn, x, train=True) < 1e-6
    assert layer_fd(bn, x, train=False) < 1e-6


# -- relu / dropout / dense ------------------------------------------------------------

def test_relu_and_dense():
    np.testing.assert_array_equal(relu(np.array([-2.0, 3.0])), [0.0, 3.0])
    dense = Dense(4, 3, seed=5)
    x = np.random.default_rng(4).standard_normal((5, 4))
    np.testing.assert_allclose(dense.forward(x), x @ dense.params["w"] + dense.params["b"])
    assert layer_fd(dense, x) < 1e-6
    assert layer_fd(ReLU(), x + 0.01) < 1e-6


def test_dropout_identity_cases():
    x = np.random.default_rng(5).standard_normal((3, 4))
    np.testing.assert_array_equal(Dropout(0.0).forward(x, train=True), x)
    np.testing.assert_array_equal(Dropout(0.5).forward(x, train=False), x)
    with pytest.raises(ConfigError):
        Dropout(1.0)


def test_dropout_monte_carlo_expectation():
    x = np.array([[1.0, -2.0, 0.5]])
    drop = Dropout(0.5, seed=11)
    batch = np.repeat(x, 100_000, axis=0)
    mean = drop.forward(batch, train=True).mean(axis=0)
    np.testing.assert_allclose(mean, x[0], rtol=0.02)


# -- softmax / loss / penalty ------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros((1, 4))), 0.25)
    mpmath.mp.dps = 30
    z = [mpmath.mpf(v) for v in (1, 2, 3)]
    ref = [float(mpmath.exp(v) / sum(mpmath.exp(u) for u in z)) for v in z]
    np.testing.assert_allclose(softmax(np.array([[1.0, 2.0, 3.0]]))[0], ref, atol=1e-15)
    np.testing.assert_allclose(ref, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


@given(seeds, st.floats(-50, 50))
def test_softmax_rows_and_shift(seed, c):
    z = 5 * np.random.default_rng(seed).standard_normal((4, 6))
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)


def test_cce_examples():
    assert cce_loss(np.eye(4), np.eye(4)) <= 1e-10
    assert cce_loss(np.full((3, 4), 0.25), one_hot([0, 1, 3], 4)) == pytest.approx(np.log(4), abs=1e-9)
    with pytest.raises(ConfigError):
        cce_loss(np.full((1, 2), 0.5), np.array([[0.5, 0.5]]))


def test_cce_logit_gradient():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((5, 4))
    y = one_hot(rng.integers(0, 4, 5), 4)
    g = softmax_cce_grad(softmax(z), y)
    eps = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        num = (cce_loss(softmax(zp), y) - cce_loss(softmax(zm), y)) / (2 * eps)
        assert abs(num - g[idx]) <= 1e-6 * max(abs(num), abs(g[idx]), 1e-8)


def test_l2_penalty_examples():
    assert l2_penalty([np.zeros(3)], 0.5)[0] == 0.0
    val, grads = l2_penalty([np.array([3.0])], 1.0)
    assert val == 9.0
    np.testing.assert_array_equal(grads[0], [6.0])


def test_penalty_skips_biases_and_bn():
    net = Network([Conv1d(2, 3, 3, seed=1), BatchNorm1d(3), Flatten(), Dense(12, 4, seed=2)], (2, 6), 4)
    assert [w.shape for w in net.weights()] == [(3, 2, 3), (12, 4)]


def test_objective_gradient_includes_weight_decay():
    rng = np.random.default_rng(7)
    net = Network([Flatten(), Dense(6, 4, seed=3)], (2, 3), 4)
    x = rng.standard_normal((5, 2, 3))
    y = rng.integers(0, 4, 5)
    lam = 0.3
    net.loss_and_grad(x, y, 0.0)
    plain = net.layers[1].grads["w"].copy()
    net.loss_and_grad(x, y, lam)
    np.testing.assert_allclose(net.layers[1].grads["w"] - plain, 2 * lam * net.layers[1].params["w"],
                               atol=1e-12)
    assert grad_check(net, x, y, lam=lam) < 1e-6


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient():
    w = np.array([1.0, -2.0])
    adam_step(AdamState(lr=0.1), [w], [np.zeros(2)])
    np.testing.assert_array_equal(w, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    w = np.zeros(3)
    st_ = AdamState(lr=0.01)
    adam_step(st_, [w], [np.array([0.5, -3.0, 1e-3])])
    assert np.all(np.abs(w - (-0.01 * np.sign([0.5, -3.0, 1e-3]))) < 0.01 * 1e-5)
    assert st_.step == 1


def test_adam_scalar_descent():
    w = np.array([1.0])
    state = AdamState(lr=0.1)
    for _ in range(100):
        adam_step(state, [w], [2 * w])
    assert abs(w[0]) < 0.05
    assert np.all(state.v[0] >= 0)


def test_adam_shape_mismatch():
    with pytest.raises(ConfigError):
        adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])


# -- recurrent cells -------------------------------------------------------------

def test_vanilla_zero_input():
    cell = Recurrent("vanilla", 3, 5, seed=1)
    np.testing.assert_array_equal(cell.forward(np.zeros((2, 3, 4))), 0.0)


def test_lstm_saturated_forget_gate_preserves_cell():
    H = 4
    cell = Recurrent("lstm", 2, H, seed=2)
    cell.params["w_hh"][...] = 0.0
    cell.params["b"][H:2 * H] = 10.0
    c0 = np.array([[0.5, -0.3, 0.8, 0.1]])
    cell.forward(np.zeros((1, 2, 10)), initial_state=(np.zeros((1, H)), c0))
    assert np.max(np.abs(cell.last_cell_state - c0)) < 1e-3


@pytest.mark.parametrize("kind", ["vanilla", "lstm", "gru"])
def test_bptt_gradients(kind):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 5))
    assert layer_fd(Recurrent(kind, 3, 4, seed=4), x) < 1e-5


# -- network, grad check, checkpoints ---------------------------------------------------

def small_cnn(dropout=0.5):
    return Network([Conv1d(2, 3, 4, 2, seed=1), BatchNorm1d(3), ReLU(), MaxPool1d(2), Flatten(),
                    Dropout(dropout, seed=2), Dense(27, 4, seed=3)], (2, 40), 4)


def test_grad_check_small_cnn():
    x = np.random.default_rng(9).standard_normal((3, 2, 40))
    assert grad_check(small_cnn(), x, [0, 2, 3]) < 1e-4


def test_grad_check_zero_parameter_model():
    net = Network([Flatten()], (4,), 4)
    assert grad_check(net, np.zeros((2, 4)), [0, 1]) == 0.0


def test_grad_check_restores_running_stats():
    net = small_cnn()
    x = np.random.default_rng(10).standard_normal((3, 2, 40))
    before = net.layers[1].buffers["running_mean"].copy()
    grad_check(net, x, [0, 1, 2])
    np.testing.assert_array_equal(net.layers[1].buffers["running_mean"], before)


def test_non_finite_forward_is_reported():
    net = Network([Flatten(), Dense(2, 4)], (2,), 4)
    with pytest.raises(NumericalError, match="layer"):
        net.forward(np.array([[np.inf, 0.0]]))


def test_network_shape_validation():
    with pytest.raises(ConfigError):
        Network([Flatten(), Dense(5, 4)], (2, 3), 4)


def test_checkpoint_round_trip(tmp_path):
    net = small_cnn()
    x = np.random.default_rng(11).standard_normal((4, 2, 40))
    net.forward(x, train=True)
    save_checkpoint(net, tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:8] == b"SCUNET01"
    back = load_checkpoint(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.predict_proba(x), net.predict_proba(x))
    assert back.descriptor() == net.descriptor()


@pytest.mark.parametrize("damage", ["magic", "truncate"])
def test_checkpoint_corruption(tmp_path, damage):
    net = small_cnn()
    net.forward(np.zeros((2, 2, 40)), train=True)
    save_checkpoint(net, tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    raw = b"XXXXXXXX" + raw[8:] if damage == "magic" else raw[:-8]
    (tmp_path / "m.bin").write_bytes(raw)
    with pytest.raises(DataIntegrityError):
        load_checkpoint(tmp_path / "m.bin")
