"""Measurement model checks: operators, gradients, shot noise, padding.

The magnitude-map pullback is checked against central finite differences
(the oracle), skipping bins whose magnitude is near zero where the map is
not differentiable.
"""

import numpy as np
import pytest

from phasekit.measurement import (
    FourierOperator,
    GaussianOperator,
    NoiseConfig,
    NoiselessError,
    make_operator,
    shot_noise,
    snr,
    zero_pad,
)
from phasekit.numerics import RandomStream, circular_shift, l2_norm, point_reflect


def fd_gradient(apply_fn, x, g, step=1e-6):
    """Central finite differences of L(x) = sum(g * apply_fn(x)); the oracle."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (np.sum(g * apply_fn(xp)) - np.sum(g * apply_fn(xm))) / (2 * step)
        it.iternext()
    return grad


class TestFourierOperator:
    def test_constant_image_dc_only(self):
        op = FourierOperator(28, 28)
        y = op.apply(np.ones((28, 28)))
        assert abs(y[0, 0] - 28.0) <= 1e-9
        rest = y.copy()
        rest[0, 0] = 0.0
        assert np.max(rest) <= 1e-9

    def test_nonnegative_and_shapes(self):
        op = FourierOperator(8, 6)
        x = RandomStream(1).standard_normal((3, 8, 6))
        y = op.apply(x)
        assert y.shape == (3, 8, 6)
        assert np.all(y >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            FourierOperator(8, 8).apply(np.zeros((7, 8)))

    def test_translation_and_rotation_invariance(self):
        op = FourierOperator(28, 28)
        x = RandomStream(2).standard_normal((28, 28))
        ref = op.apply(x)
        for s, t in [(1, 0), (0, 1), (9, 23), (27, 27)]:
            assert np.max(np.abs(op.apply(circular_shift(x, s, t)) - ref)) <= 1e-9
        assert np.max(np.abs(op.apply(point_reflect(x)) - ref)) <= 1e-9

    def test_gradient_matches_finite_differences(self):
        op = FourierOperator(8, 8)
        stream = RandomStream(3)
        x = stream.standard_normal((8, 8))
        g = stream.standard_normal((8, 8))
        y, pullback = op.apply_with_gradient(x)
        keep = y >= 1e-6
        analytic = pullback(g * keep)
        numeric = fd_gradient(op.apply, x, g * keep)
        denom = max(1e-12, float(np.max(np.abs(numeric))))
        assert np.max(np.abs(analytic - numeric)) / denom <= 1e-5

    def test_gradient_zero_for_zero_upstream(self):
        op = FourierOperator(5, 5)
        x = RandomStream(4).standard_normal((5, 5))
        _, pullback = op.apply_with_gradient(x)
        assert np.array_equal(pullback(np.zeros((5, 5))), np.zeros((5, 5)))

    def test_padded_gradient_matches_finite_differences(self):
        op = FourierOperator(4, 4, pad_factor=2)
        stream = RandomStream(5)
        x = stream.standard_normal((4, 4))
        g = stream.standard_normal((8, 8))
        y, pullback = op.apply_with_gradient(x)
        keep = y >= 1e-6
        analytic = pullback(g * keep)
        numeric = fd_gradient(op.apply, x, g * keep)
        denom = max(1e-12, float(np.max(np.abs(numeric))))
        assert analytic.shape == (4, 4)
        assert np.max(np.abs(analytic - numeric)) / denom <= 1e-5

    def test_padded_apply_equals_pad_then_measure(self):
        plain = FourierOperator(56, 56)
        padded = FourierOperator(28, 28, pad_factor=2)
        x = RandomStream(6).uniform((28, 28))
        assert np.allclose(padded.apply(x), plain.apply(zero_pad(x, 2)), atol=1e-12)


class TestGaussianOperator:
    def test_zero_input(self):
        op = GaussianOperator(16, 9, seed=0)
        assert np.array_equal(op.apply(np.zeros(9)), np.zeros(16))

    def test_injected_matrix_example(self):
        op = GaussianOperator.from_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
        assert np.array_equal(op.apply(np.array([3.0, 4.0])), np.array([3.0, 4.0]))

    def test_entry_distribution(self):
        op = GaussianOperator(400, 400, seed=12)
        assert abs(op.matrix.mean()) <= 0.001
        assert abs(op.matrix.var() - 1.0 / 400) <= 0.1 / 400

    def test_reproducible_construction(self):
        a = GaussianOperator(50, 30, seed=7)
        b = GaussianOperator(50, 30, seed=7)
        assert np.array_equal(a.matrix, b.matrix)
        c = GaussianOperator(50, 30, seed=8)
        assert not np.array_equal(a.matrix, c.matrix)

    def test_accepts_images_and_batches(self):
        op = GaussianOperator(10, 12, seed=1)
        img = RandomStream(7).uniform((3, 4))
        flat = img.reshape(12)
        assert np.allclose(op.apply(img), op.apply(flat))
        batch = RandomStream(8).uniform((5, 3, 4))
        ys = op.apply(batch)
        assert ys.shape == (5, 10)
        assert np.allclose(ys[2], op.apply(batch[2]))

    def test_identity_matrix_gradient_is_sign(self):
        op = GaussianOperator.from_matrix(np.eye(3))
        x = np.array([2.0, -5.0, 0.0])
        _, pullback = op.apply_with_gradient(x)
        assert np.array_equal(pullback(np.ones(3)), np.array([1.0, -1.0, 0.0]))

    def test_gradient_matches_finite_differences(self):
        op = GaussianOperator(6, 10, seed=3)
        stream = RandomStream(9)
        x = stream.standard_normal(10)
        g = stream.standard_normal(6)
        y, pullback = op.apply_with_gradient(x)
        keep = y >= 1e-6
        analytic = pullback(g * keep)
        numeric = fd_gradient(op.apply, x, g * keep)
        denom = max(1e-12, float(np.max(np.abs(numeric))))
        assert np.max(np.abs(analytic - numeric)) / denom <= 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GaussianOperator(4, 9, seed=0).apply(np.zeros(8))


class TestDescriptors:
    def test_fourier_round_trip(self):
        op = FourierOperator(28, 28, pad_factor=2)
        clone = make_operator(op.descriptor())
        x = RandomStream(10).uniform((28, 28))
        assert np.array_equal(clone.apply(x), op.apply(x))

    def test_gaussian_round_trip(self):
        op = GaussianOperator(100, 784, seed=5)
        clone = make_operator(op.descriptor())
        assert np.array_equal(clone.matrix, op.matrix)

    def test_unknown_kind_and_fields_rejected(self):
        with pytest.raises(ValueError):
            make_operator({"kind": "hadamard", "n": 4})
        with pytest.raises(ValueError):
            make_operator({"kind": "gaussian", "m": 2, "n": 2, "seed": 0, "rows": 1})

    def test_injected_matrix_has_no_descriptor(self):
        with pytest.raises(ValueError):
            GaussianOperator.from_matrix(np.eye(2)).descriptor()


class TestShotNoise:
    def test_alpha_zero_pass_through(self):
        y = RandomStream(11).uniform((9,), high=4.0)
        cfg = NoiseConfig(alpha=0.0, stream=RandomStream(0))
        out = shot_noise(y, cfg)
        assert np.array_equal(out, y)
        assert out is not y

    def test_zero_magnitudes_stay_zero(self):
        cfg = NoiseConfig(alpha=2.0, stream=RandomStream(1))
        assert np.array_equal(shot_noise(np.zeros(20), cfg), np.zeros(20))

    def test_negative_magnitudes_rejected(self):
        cfg = NoiseConfig(alpha=1.0, stream=RandomStream(1))
        with pytest.raises(ValueError):
            shot_noise(np.array([-0.5]), cfg)

    def test_intensity_unbiased(self):
        # E[y_hat^2] = y^2; Monte-Carlo with 1e5 draws, 3 sigma margin
        y = np.full(100_000, 10.0)
        cfg = NoiseConfig(alpha=1.0, stream=RandomStream(2))
        out = shot_noise(y, cfg)
        mean_sq = float(np.mean(out**2))
        assert 99.0 <= mean_sq <= 101.0

    def test_scale_equivariance_exact(self):
        y = RandomStream(13).uniform((500,), high=6.0)
        c = 3.5
        a = shot_noise(y, NoiseConfig(alpha=1.2, stream=RandomStream(14)))
        b = shot_noise(c * y, NoiseConfig(alpha=c * 1.2, stream=RandomStream(14)))
        assert np.allclose(b, c * a, rtol=1e-12)

    def test_count_scale_preserves_intensity_mean(self):
        y = np.full(100_000, 0.5)
        cfg = NoiseConfig(alpha=1.0, stream=RandomStream(15), count_scale=28.0)
        out = shot_noise(y, cfg)
        assert abs(float(np.mean(out**2)) - 0.25) <= 0.01

    def test_nonnegative_output(self):
        y = RandomStream(16).uniform((5000,), high=2.0)
        out = shot_noise(y, NoiseConfig(alpha=3.0, stream=RandomStream(17)))
        assert np.all(out >= 0)

    def test_deterministic_given_stream(self):
        y = RandomStream(18).uniform((64,), high=5.0)
        a = shot_noise(y, NoiseConfig(alpha=2.0, stream=RandomStream(19)))
        b = shot_noise(y, NoiseConfig(alpha=2.0, stream=RandomStream(19)))
        assert np.array_equal(a, b)


class TestSnr:
    def test_alternating_noise_definition(self):
        y = np.full(100, 7.0)
        noise = 0.5 * np.where(np.arange(100) % 2 == 0, 1.0, -1.0)
        report = snr(y, y + noise)
        assert abs(report.mu_magn - 7.0) <= 1e-12
        assert abs(report.sigma_noise - 0.5) <= 1e-12
        assert abs(report.snr - 14.0) <= 1e-9

    def test_noiseless_signalled(self):
        y = np.ones(10)
        with pytest.raises(NoiselessError):
            snr(y, y.copy())

    def test_alpha_doubling_halves_snr(self):
        y = RandomStream(20).uniform((200_000,), low=0.5, high=8.0)
        s1 = snr(y, shot_noise(y, NoiseConfig(alpha=1.0, stream=RandomStream(21)))).snr
        s2 = snr(y, shot_noise(y, NoiseConfig(alpha=2.0, stream=RandomStream(22)))).snr
        ratio = s1 / s2
        assert 1.6 <= ratio <= 2.4


class TestZeroPad:
    def test_identity(self):
        x = RandomStream(23).uniform((4, 5))
        out = zero_pad(x, 1)
        assert np.array_equal(out, x)
        assert out is not x

    def test_construction(self):
        x = RandomStream(24).uniform((28, 28))
        out = zero_pad(x, 2)
        assert out.shape == (56, 56)
        assert np.array_equal(out[:28, :28], x)
        assert np.all(out[28:, :] == 0) and np.all(out[:, 28:] == 0)

    def test_norm_preserved(self):
        x = RandomStream(25).standard_normal((12, 7))
        assert abs(l2_norm(zero_pad(x, 3)) - l2_norm(x)) <= 1e-12

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            zero_pad(np.zeros((2, 2)), 0)
