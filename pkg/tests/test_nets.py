import numpy as np
import pytest

from conftest import finite_difference, vector_rel_err
from fescycle.errors import ShapeMismatch
from fescycle.nets import Adam, Mlp


def manual_forward(net, x):
    """Loop-based re-implementation used as the duplicate oracle."""
    h = [float(v) for v in x]
    n_layers = len(net.layer_sizes) - 1
    for li in range(n_layers):
        w = net.params[2 * li]
        b = net.params[2 * li + 1]
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            out.append(acc)
        if li < n_layers - 1:
            out = [v if v > 0.0 else 0.0 for v in out]
        h = out
    return np.array(h)


class TestForward:
    def test_zero_network_outputs_zero(self):
        net = Mlp([3, 4, 2])
        for p in net.params:
            p[:] = 0.0
        assert np.all(net.forward(np.ones(3)) == 0.0)

    def test_identity_path(self):
        net = Mlp([2, 2, 1])
        for p in net.params:
            p[:] = 0.0
        net.params[0][0, 0] = 1.0  # x0 -> hidden0
        net.params[2][0, 0] = 1.0  # hidden0 -> out
        assert net.forward(np.array([3.5, -1.0]))[0] == 3.5
        # ReLU blocks the negative branch
        assert net.forward(np.array([-2.0, 5.0]))[0] == 0.0

    def test_matches_manual_reimplementation(self):
        rng = np.random.default_rng(42)
        net = Mlp([5, 7, 6, 3], rng)
        for _ in range(20):
            x = rng.standard_normal(5)
            got = net.forward(x)
            want = manual_forward(net, x)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_batched_equals_rowwise(self):
        rng = np.random.default_rng(1)
        net = Mlp([4, 8, 2], rng)
        xs = rng.standard_normal((6, 4))
        batched = net.forward(xs)
        for i in range(6):
            np.testing.assert_allclose(batched[i], net.forward(xs[i]), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        net = Mlp([4, 8, 2])
        with pytest.raises(ShapeMismatch):
            net.forward(np.zeros(5))


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = Mlp([4, 8, 8, 3], rng)
        x = rng.standard_normal((5, 4))
        g_out = rng.standard_normal((5, 3))
        _, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, g_out)

        def value():
            return float(np.sum(net.forward(x) * g_out))

        fd = finite_difference(net.params, value, h=1e-5)
        assert vector_rel_err(grads, fd) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        net = Mlp([4, 8, 3], rng)
        x = rng.standard_normal((2, 4))
        g_out = rng.standard_normal((2, 3))
        _, cache = net.forward_cached(x)
        _, gin = net.backward(cache, g_out)

        def value():
            return float(np.sum(net.forward(x) * g_out))

        fd = finite_difference([x], value, h=1e-6)[0]
        assert vector_rel_err([gin], [fd]) < 1e-4

    def test_zero_output_grad_gives_zero_grads(self):
        rng = np.random.default_rng(3)
        net = Mlp([3, 5, 2], rng)
        _, cache = net.forward_cached(rng.standard_normal((4, 3)))
        grads, gin = net.backward(cache, np.zeros((4, 2)))
        assert all(np.all(g == 0.0) for g in grads)
        assert np.all(gin == 0.0)

    def test_dead_relu_unit_blocks_gradient(self):
        net = Mlp([1, 2, 1])
        for p in net.params:
            p[:] = 0.0
        net.params[0][0, 0] = 1.0   # unit 0 pre-activation = x
        net.params[0][0, 1] = -1.0  # unit 1 pre-activation = -x (dead for x>0)
        net.params[2][:, 0] = 1.0
        _, cache = net.forward_cached(np.array([2.0]))
        grads, _ = net.backward(cache, np.array([1.0]))
        # incoming weight of the dead unit gets no gradient
        assert grads[0][0, 1] == 0.0
        assert grads[0][0, 0] != 0.0


class TestAdam:
    def test_quadratic_convergence(self):
        params = [np.array([5.0, -3.0])]
        opt = Adam(params, lr=0.05)
        for _ in range(2000):
            grads = [2.0 * (params[0] - np.array([1.0, 2.0]))]
            opt.step(params, grads)
        np.testing.assert_allclose(params[0], [1.0, 2.0], atol=1e-4)

    def test_state_round_trip(self):
        rng = np.random.default_rng(0)
        params = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        opt = Adam(params, lr=1e-3)
        for _ in range(5):
            opt.step(params, [np.ones((3, 2)), np.ones(2)])
        clone = Adam.from_state(opt.to_state(), params)
        assert clone.t == opt.t
        for a, b in zip(clone.m + clone.v, opt.m + opt.v):
            np.testing.assert_array_equal(a, b)
        # both optimizers continue identically
        p1 = [p.copy() for p in params]
        p2 = [p.copy() for p in params]
        g = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        opt.step(p1, g)
        clone.step(p2, g)
        for a, b in zip(p1, p2):
            np.testing.assert_array_equal(a, b)
