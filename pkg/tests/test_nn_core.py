import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topomap_nav import nn_core
from topomap_nav.errors import NumericError, ParameterError
from topomap_nav.nn_core import Layer, Network, adam_init, adam_update, backward, finite_diff_check, forward, init_network


def mse_loss_fn(net, x, y):
    def fn():
        out, cache = forward(net, x)
        diff = out - y
        loss = 0.5 * float((diff**2).sum()) / len(x)
        grads, _ = backward(net, cache, diff / len(x))
        return loss, grads

    return fn


class TestForward:
    def test_identity_layer(self):
        net = Network([Layer(np.eye(3), np.zeros(3), "linear")])
        x = np.array([0.3, -2.0, 5.0])
        assert np.array_equal(net(x), x)

    def test_relu_negative(self):
        net = Network([Layer(-np.eye(3), np.zeros(3), "relu")])
        assert net(np.array([1.0, 2.0, 3.0])).tolist() == [0, 0, 0]

    def test_deterministic_and_batch_consistent(self):
        net = init_network([4, 8, 3], ["relu", "sigmoid"], seed=2)
        x = np.random.default_rng(0).normal(size=(5, 4))
        a, _ = forward(net, x)
        b, _ = forward(net, x)
        assert np.array_equal(a, b)
        for i in range(5):
            np.testing.assert_allclose(net(x[i]), a[i], rtol=0, atol=1e-14)

    def test_bad_shapes(self):
        with pytest.raises(ParameterError):
            Layer(np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(ParameterError):
            Network([Layer(np.zeros((2, 3)), np.zeros(2)), Layer(np.zeros((2, 3)), np.zeros(2))])
        with pytest.raises(ParameterError):
            Layer(np.zeros((2, 3)), np.zeros(2), "tanh")
        with pytest.raises(ParameterError):
            init_network([3, 2], ["relu", "relu"], 0)(np.zeros(4))

    def test_xavier_bounds(self):
        net = init_network([10, 30], ["linear"], seed=1)
        assert np.abs(net.layers[0].w).max() <= np.sqrt(6 / 40)
        assert (net.layers[0].b == 0).all()

    def test_sigmoid_extremes(self):
        with np.errstate(over="raise", invalid="raise"):
            s = nn_core.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert s.tolist() == [0.0, 0.5, 1.0]


class TestBackward:
    def test_linear_closed_form(self):
        net = Network([Layer(np.zeros((2, 3)), np.zeros(2), "linear")])
        x = np.array([1.0, 2.0, 3.0])
        _, cache = forward(net, x)
        grads, gx = backward(net, cache, np.ones(2))
        assert np.array_equal(grads[0], np.outer(np.ones(2), x))
        assert np.array_equal(grads[1], np.ones(2))
        assert gx.shape == (3,)

    def test_zero_upstream(self):
        net = init_network([3, 5, 2], ["relu", "sigmoid"], 0)
        _, cache = forward(net, np.ones(3))
        grads, gx = backward(net, cache, np.zeros(2))
        assert all((g == 0).all() for g in grads) and (gx == 0).all()

    @given(st.integers(0, 10_000), st.sampled_from(["relu", "sigmoid", "linear"]))
    def test_finite_differences(self, seed, act):
        rng = np.random.default_rng(seed)
        net = init_network([3, 6, 2], [act, "sigmoid"], seed)
        x, y = rng.normal(size=(4, 3)), rng.uniform(size=(4, 2))
        rep = finite_diff_check(net.params(), mse_loss_fn(net, x, y), tolerance=1e-4)
        assert rep.passed, rep

    def test_wrt_preact(self):
        net = init_network([3, 4, 2], ["relu", "sigmoid"], 5)
        x = np.random.default_rng(1).normal(size=(3, 3))
        out, cache = forward(net, x)
        up = np.random.default_rng(2).normal(size=out.shape)
        g_full, _ = backward(net, cache, up)
        g_pre, _ = backward(net, cache, up * out * (1 - out), wrt_preact=True)
        for a, b in zip(g_full, g_pre):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_input_gradient(self):
        net = init_network([3, 4, 1], ["sigmoid", "linear"], 3)
        x = np.array([0.1, -0.4, 0.7])
        _, cache = forward(net, x)
        _, gx = backward(net, cache, np.ones(1))
        eps = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            num = (net(x + e)[0] - net(x - e)[0]) / (2 * eps)
            assert gx[i] == pytest.approx(num, rel=1e-6)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        st_ = adam_init(p, lr=0.1)
        adam_update(p, [np.zeros(2)], st_)
        assert p[0].tolist() == [1.0, -2.0]

    def test_moves_against_gradient(self):
        p = [np.array([0.0, 0.0])]
        st_ = adam_init(p, lr=0.01)
        for _ in range(50):
            adam_update(p, [np.array([1.0, -3.0])], st_)
        assert p[0][0] < 0 < p[0][1]
        # bias correction: the first step has magnitude lr regardless of |g|
        q = [np.array([0.0])]
        s2 = adam_init(q, lr=0.01)
        adam_update(q, [np.array([1e-3])], s2)
        assert q[0][0] == pytest.approx(-0.01, rel=1e-3)

    def test_quadratic_converges(self):
        target = np.array([1.5, -0.7])
        p = [np.zeros(2)]
        st_ = adam_init(p, lr=1e-2)
        for _ in range(5000):
            adam_update(p, [2 * (p[0] - target) * np.array([1.0, 3.0])], st_)
        assert float(((p[0] - target) ** 2 * np.array([1.0, 3.0])).sum()) < 1e-6

    def test_nan_gradient(self):
        p = [np.zeros(2)]
        with pytest.raises(NumericError):
            adam_update(p, [np.array([np.nan, 0.0])], adam_init(p))

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        with pytest.raises(ParameterError):
            adam_update(p, [np.zeros(3)], adam_init(p))


class TestGradCheck:
    def test_least_squares_tight(self):
        rng = np.random.default_rng(0)
        net = Network([Layer(rng.normal(size=(1, 3)), np.zeros(1), "linear")])
        x, y = rng.normal(size=(10, 3)), rng.normal(size=(10, 1))
        rep = finite_diff_check(net.params(), mse_loss_fn(net, x, y), tolerance=1e-6)
        assert rep.passed and rep.n_checked == 4

    def test_detects_broken_backward(self):
        net = init_network([3, 4, 1], ["relu", "linear"], 1)
        x, y = np.ones((2, 3)), np.zeros((2, 1))
        good = mse_loss_fn(net, x, y)

        def broken():
            loss, grads = good()
            return loss, [g * 1.1 if i == 0 else g for i, g in enumerate(grads)]

        assert not finite_diff_check(net.params(), broken).passed

    def test_subsampling(self):
        net = init_network([20, 20, 1], ["relu", "linear"], 1)
        rep = finite_diff_check(net.params(), mse_loss_fn(net, np.ones((2, 20)), np.zeros((2, 1))), max_per_tensor=5)
        assert rep.n_checked == 5 + 5 + 5 + 1


def test_checkpoint_round_trip_exact(tmp_path):
    net = init_network([4, 7, 2], ["relu", "sigmoid"], 9)
    nn_core.save_network(net, tmp_path / "n.json")
    back = nn_core.load_network(tmp_path / "n.json")
    for a, b in zip(net.params(), back.params()):
        assert np.array_equal(a, b)
    assert [l.act for l in back.layers] == ["relu", "sigmoid"]
    with pytest.raises(ParameterError):
        nn_core.network_from_dict({"format_version": 2, "layers": []})
