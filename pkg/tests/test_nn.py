"""Network engine checks: initialization, forward semantics, gradients, Adam.

Backward passes are certified two ways: an independent per-layer central
finite-difference comparison written in this file, and the engine's own
grad_check (which promotes to float64 and samples coordinates).
"""

import numpy as np
import pytest

from phasekit.nn import (
    Adam,
    Network,
    batchnorm,
    dense,
    grad_check,
    leaky_relu,
    relu,
    sigmoid,
    validate_specs,
)
from phasekit.numerics import RandomStream


def l1_loss(target):
    def fn(out):
        diff = out - target
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    return fn


def sq_loss(target):
    def fn(out):
        diff = out - target
        return float(np.sum(diff**2)), 2.0 * diff
    return fn


def e2e_like_specs():
    specs = [dense(784, 2048)]
    for _ in range(3):
        specs += [batchnorm(2048), relu(), dense(2048, 2048)]
    specs += [batchnorm(2048), relu(), dense(2048, 784), sigmoid()]
    return specs


class TestSpecsAndInit:
    def test_chain_validation(self):
        validate_specs([dense(3, 5), relu(), dense(5, 2)])
        with pytest.raises(ValueError):
            validate_specs([dense(3, 5), dense(4, 2)])
        with pytest.raises(ValueError):
            validate_specs([dense(3, 5), batchnorm(6)])
        with pytest.raises(ValueError):
            validate_specs([])

    def test_wide_mlp_param_count(self):
        net = Network.initialize(e2e_like_specs(), RandomStream(0))
        expected = (
            784 * 2048 + 2048
            + 3 * (2048 * 2048 + 2048)
            + 2048 * 784 + 784
            + 4 * 2 * 2048
        )
        assert expected == 15_819_536
        assert net.param_count == expected

    def test_deterministic_init(self):
        a = Network.initialize([dense(10, 7), relu(), dense(7, 3)], RandomStream(5))
        b = Network.initialize([dense(10, 7), relu(), dense(7, 3)], RandomStream(5))
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_kaiming_uniform_variance(self):
        # Var(U(-sqrt(6/fan_in), +sqrt(6/fan_in))) = 2 / fan_in
        net = Network.initialize([dense(100, 100)], RandomStream(6), dtype=np.float64)
        var = float(net.params["0.weight"].var())
        assert 0.8 * 0.02 <= var <= 1.2 * 0.02
        assert np.all(net.params["0.bias"] == 0)

    def test_batchnorm_init(self):
        net = Network.initialize([batchnorm(4)], RandomStream(7))
        assert np.array_equal(net.params["0.scale"], np.ones(4, dtype=np.float32))
        assert np.array_equal(net.params["0.shift"], np.zeros(4, dtype=np.float32))
        assert np.array_equal(net.buffers["0.running_mean"], np.zeros(4, dtype=np.float32))
        assert np.array_equal(net.buffers["0.running_var"], np.ones(4, dtype=np.float32))


class TestForward:
    def test_relu_values(self):
        net = Network.initialize([relu()], RandomStream(0), dtype=np.float64)
        out, _ = net.forward(np.array([[-1.0, 2.0]]))
        assert np.array_equal(out, np.array([[0.0, 2.0]]))

    def test_sigmoid_values(self):
        net = Network.initialize([sigmoid()], RandomStream(0), dtype=np.float64)
        out, _ = net.forward(np.array([[0.0]]))
        assert abs(out[0, 0] - 0.5) <= 1e-15

    def test_sigmoid_range_extreme_inputs(self):
        net = Network.initialize([sigmoid()], RandomStream(0), dtype=np.float32)
        out, _ = net.forward(np.array([[-1e30, -50.0, 0.0, 50.0, 1e30]], dtype=np.float32))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.all(np.isfinite(out))

    def test_leaky_relu_slope(self):
        net = Network.initialize([leaky_relu(0.2)], RandomStream(0), dtype=np.float64)
        out, _ = net.forward(np.array([[-10.0, 5.0]]))
        assert np.allclose(out, [[-2.0, 5.0]])

    def test_batchnorm_train_normalizes(self):
        net = Network.initialize([batchnorm(3)], RandomStream(1), dtype=np.float64)
        x = 10.0 * RandomStream(2).standard_normal((64, 3)) + 5.0
        out, _ = net.forward(x, train=True)
        assert np.max(np.abs(out.mean(axis=0))) <= 1e-6
        assert np.max(np.abs(out.var(axis=0) - 1.0)) <= 1e-6

    def test_batchnorm_batch_one_rejected_in_train(self):
        net = Network.initialize([batchnorm(3)], RandomStream(1))
        with pytest.raises(ValueError):
            net.forward(np.ones((1, 3)), train=True)
        out, _ = net.forward(np.ones((1, 3)), train=False)
        assert out.shape == (1, 3)

    def test_batchnorm_running_stats_track_batch(self):
        net = Network.initialize([batchnorm(2)], RandomStream(3), dtype=np.float64)
        x = RandomStream(4).standard_normal((32, 2)) * 3.0 + 1.5
        mu = x.mean(axis=0)
        var_unbiased = x.var(axis=0) * 32 / 31
        mean_errs = []
        var_errs = []
        for _ in range(30):
            net.forward(x, train=True)
            mean_errs.append(float(np.max(np.abs(net.buffers["0.running_mean"] - mu))))
            var_errs.append(float(np.max(np.abs(net.buffers["0.running_var"] - var_unbiased))))
        # geometric approach with ratio (1 - momentum), to float rounding
        for errs in (mean_errs, var_errs):
            assert errs[-1] <= (0.9**29) * errs[0] * (1 + 1e-9) + 1e-12
            for k in range(len(errs) - 1):
                assert errs[k + 1] <= 0.9 * errs[k] * (1 + 1e-9) + 1e-12

    def test_eval_mode_deterministic_and_pure(self):
        specs = [dense(6, 8), batchnorm(8), relu(), dense(8, 4), sigmoid()]
        net = Network.initialize(specs, RandomStream(5))
        x = RandomStream(6).standard_normal((3, 6), dtype=np.float32)
        a, _ = net.forward(x)
        buf_before = {k: v.copy() for k, v in net.buffers.items()}
        b, _ = net.forward(x)
        assert np.array_equal(a, b)
        for k in buf_before:
            assert np.array_equal(net.buffers[k], buf_before[k])

    def test_train_mode_updates_buffers(self):
        net = Network.initialize([batchnorm(2)], RandomStream(7))
        before = net.buffers["0.running_mean"].copy()
        net.forward(np.array([[5.0, 5.0], [7.0, 9.0]], dtype=np.float32), train=True)
        assert not np.array_equal(net.buffers["0.running_mean"], before)

    def test_width_mismatch(self):
        net = Network.initialize([dense(4, 2)], RandomStream(8))
        with pytest.raises(ValueError):
            net.forward(np.ones((2, 5)))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        specs = [dense(5, 7), batchnorm(7), relu(), dense(7, 2), sigmoid()]
        net = Network.initialize(specs, RandomStream(9), dtype=np.float64)
        x = RandomStream(10).standard_normal((4, 5))
        out, cache = net.forward(x, train=True)
        grads, gin = net.backward(cache, np.zeros_like(out))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(gin == 0)

    def test_dense_weight_gradient_is_input(self):
        # single unit, loss = output: d(w x + b)/dw = x exactly
        net = Network.initialize([dense(3, 1)], RandomStream(11), dtype=np.float64)
        x = np.array([[2.0, -1.0, 4.0]])
        out, cache = net.forward(x)
        grads, _ = net.backward(cache, np.ones_like(out))
        assert np.array_equal(grads["0.weight"], x.T)
        assert np.array_equal(grads["0.bias"], np.array([1.0]))

    def test_dense_matches_handrolled_finite_differences(self):
        # independent of grad_check: explicit FD loop over every coordinate
        net = Network.initialize([dense(4, 3)], RandomStream(12), dtype=np.float64)
        x = RandomStream(13).standard_normal((5, 4))
        target = RandomStream(14).standard_normal((5, 3))
        loss = sq_loss(target)
        out, cache = net.forward(x)
        grads, _ = net.backward(cache, loss(out)[1])
        h = 1e-6
        w = net.params["0.weight"]
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            lp = loss(net.forward(x)[0])[0]
            w[idx] = orig - h
            lm = loss(net.forward(x)[0])[0]
            w[idx] = orig
            numeric = (lp - lm) / (2 * h)
            assert abs(grads["0.weight"][idx] - numeric) <= 1e-6 * max(1.0, abs(numeric))


class TestGradCheck:
    def test_three_layer_l1(self):
        specs = [dense(12, 16), relu(), dense(16, 10), relu(), dense(10, 6)]
        net = Network.initialize(specs, RandomStream(15))
        x = RandomStream(16).standard_normal((8, 12))
        target = RandomStream(17).standard_normal((8, 6))
        assert grad_check(net, x, l1_loss(target)) <= 1e-5

    def test_batchnorm_train_mode(self):
        specs = [dense(10, 12), batchnorm(12), relu(), dense(12, 5)]
        net = Network.initialize(specs, RandomStream(18))
        x = RandomStream(19).standard_normal((8, 10))
        target = RandomStream(20).standard_normal((8, 5))
        assert grad_check(net, x, sq_loss(target), train=True) <= 1e-4

    def test_single_dense_squared_loss(self):
        net = Network.initialize([dense(6, 4)], RandomStream(21))
        x = RandomStream(22).standard_normal((3, 6))
        target = RandomStream(23).standard_normal((3, 4))
        assert grad_check(net, x, sq_loss(target)) <= 1e-7

    def test_every_layer_kind_random_shapes(self):
        stream = RandomStream(24)
        heads = [[], [sigmoid()], [leaky_relu(0.2)], [relu()]]
        for trial in range(8):
            d_in = int(stream.integers(2, 32))
            d_mid = int(stream.integers(2, 32))
            d_out = int(stream.integers(1, 32))
            specs = [dense(d_in, d_mid), batchnorm(d_mid), relu(), dense(d_mid, d_out)]
            specs += heads[trial % len(heads)]
            net = Network.initialize(specs, stream.child(trial))
            x = stream.standard_normal((6, d_in))
            target = stream.uniform((6, d_out))
            err = grad_check(net, x, sq_loss(target), train=True, num_coords=120)
            assert err <= 1e-4, f"trial {trial}: {err}"

    def test_eval_mode_batchnorm_gradients(self):
        specs = [dense(7, 9), batchnorm(9), relu(), dense(9, 3), sigmoid()]
        net = Network.initialize(specs, RandomStream(25))
        # move running stats off their init so eval mode is nontrivial
        net.forward(RandomStream(26).standard_normal((16, 7), dtype=np.float32), train=True)
        x = RandomStream(27).standard_normal((5, 7))
        target = RandomStream(28).uniform((5, 3))
        assert grad_check(net, x, sq_loss(target), train=False) <= 1e-5


class TestAdam:
    def test_first_step_is_signed_lr(self):
        params = {"w": np.zeros(1)}
        opt = Adam(params, lr=0.1)
        opt.step({"w": np.ones(1)})
        assert abs(params["w"][0] + 0.1 / (1.0 + 1e-8)) <= 1e-12

    def test_zero_gradients_leave_params(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = Adam(params, lr=0.5)
        for _ in range(100):
            opt.step({"w": np.zeros(2)})
        assert np.array_equal(params["w"], np.array([1.0, -2.0]))

    def test_converges_on_scalar_quadratic(self):
        params = {"w": np.array([1.0])}
        opt = Adam(params, lr=0.01)
        for _ in range(5000):
            opt.step({"w": 2.0 * params["w"]})
        assert abs(params["w"][0]) <= 1e-3

    def test_shape_mismatch(self):
        opt = Adam({"w": np.zeros(3)})
        with pytest.raises(ValueError):
            opt.step({"w": np.zeros(4)})

    def test_trains_small_regression(self):
        stream = RandomStream(29)
        net = Network.initialize([dense(4, 16), relu(), dense(16, 1)], stream)
        w_true = np.array([0.5, -1.0, 2.0, 0.25])
        x = stream.standard_normal((256, 4), dtype=np.float32)
        y = (x @ w_true)[:, None].astype(np.float32)
        opt = Adam(net.params, lr=1e-2)
        first = None
        for _ in range(300):
            out, cache = net.forward(x)
            diff = out - y
            loss = float(np.mean(diff**2))
            if first is None:
                first = loss
            grads, _ = net.backward(cache, 2.0 * diff / diff.size)
            opt.step(grads)
        assert loss < 0.05 * first
