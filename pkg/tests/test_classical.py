"""Projection solver checks.

Single iterations of HIO and RAAR are compared against hand-stepped
replicas written from the update rules, so the solver loops are certified
against the definitions rather than against themselves; desk-scale runs
then check that the oversampled regime actually reconstructs digits.
"""

import numpy as np
import pytest

from phasekit.classical import (
    ObjectConstraint,
    best_of_restarts,
    gerchberg_saxton,
    hio,
    magnitude_project,
    raar,
)
from phasekit.data import make_synthetic_digits
from phasekit.evaluation import evaluate
from phasekit.measurement import FourierOperator, zero_pad
from phasekit.numerics import RandomStream, dft2, idft2, l2_norm


def digit(i):
    return make_synthetic_digits(i + 1, RandomStream(500))[i].astype(np.float64)


def project_with_phase(x, y, zero_phase):
    """In-test replica of the magnitude projector, from the definition."""
    spectrum = dft2(x)
    mags = np.abs(spectrum)
    ok = mags > 1e-12
    phase = np.where(ok, spectrum / np.where(ok, mags, 1.0), zero_phase)
    return idft2(y * phase).real


def draw_start_and_phase(y, constraint, stream):
    """Replicates the solvers' documented draw order."""
    x0 = stream.uniform(y.shape) * constraint.support_mask
    zero_phase = np.exp(1j * stream.uniform(y.shape, high=2.0 * np.pi))
    return x0, zero_phase


class TestObjectConstraint:
    def test_projection(self):
        c = ObjectConstraint.padded_corner((2, 2), 2)
        x = np.full((4, 4), 2.0)
        x[0, 0] = -3.0
        out = c.project(x)
        assert out[0, 0] == 0.0 and out[0, 1] == 1.0
        assert np.all(out[2:, :] == 0) and np.all(out[:, 2:] == 0)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            ObjectConstraint(np.zeros((3, 3), dtype=bool))


class TestMagnitudeProject:
    def test_fixed_point(self):
        x = digit(0)
        y = np.abs(dft2(x))
        assert np.max(np.abs(magnitude_project(x, y) - x)) <= 1e-9

    def test_projection_reaches_magnitude_set(self):
        # before the real-part step the projected point has magnitudes y exactly
        x = RandomStream(1).uniform((16, 16))
        y = np.abs(dft2(digit(1)[:16, :16]))
        spectrum = dft2(x)
        phase = spectrum / np.abs(spectrum)
        complex_proj = idft2(y * phase)
        assert l2_norm(np.abs(dft2(complex_proj)) - y) <= 1e-9

    def test_zero_measurements(self):
        x = RandomStream(2).uniform((8, 8))
        assert np.max(np.abs(magnitude_project(x, np.zeros((8, 8))))) <= 1e-12

    def test_zero_bins_take_supplied_phase(self):
        y = np.ones((4, 4))
        zero_phase = np.exp(1j * RandomStream(3).uniform((4, 4), high=2 * np.pi))
        out = magnitude_project(np.zeros((4, 4)), y, zero_phase)
        assert np.allclose(out, idft2(y * zero_phase).real)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            magnitude_project(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSolverSteps:
    """One-iteration agreement with hand-stepped update rules."""

    def setup_method(self):
        self.x_true = digit(2)
        self.op = FourierOperator(28, 28)
        self.y = self.op.apply(self.x_true)
        self.c = ObjectConstraint.full_frame((28, 28))

    def test_hio_single_iteration(self):
        seed = 11
        x0, zp = draw_start_and_phase(self.y, self.c, RandomStream(seed))
        pm = project_with_phase(x0, self.y, zp)
        good = self.c.support_mask & (pm >= 0.0) & (pm <= 1.0)
        x1 = np.where(good, pm, x0 - 0.8 * pm)
        result = hio(self.y, self.c, 0.8, 1, RandomStream(seed))
        assert np.allclose(result.x_hat, self.c.project(x1), atol=1e-13)
        assert abs(result.residual_trace[0] - l2_norm(np.abs(dft2(x1)) - self.y)) <= 1e-9

    def test_raar_single_iteration(self):
        seed = 12
        beta = 0.87
        x0, zp = draw_start_and_phase(self.y, self.c, RandomStream(seed))
        pm = project_with_phase(x0, self.y, zp)
        rm = 2 * pm - x0
        rs = 2 * self.c.project(rm) - rm
        x1 = 0.5 * beta * (rs + x0) + (1 - beta) * pm
        result = raar(self.y, self.c, beta, 1, RandomStream(seed))
        assert np.allclose(result.x_hat, self.c.project(x1), atol=1e-13)

    def test_gs_single_iteration(self):
        seed = 13
        x0, zp = draw_start_and_phase(self.y, self.c, RandomStream(seed))
        x1 = self.c.project(project_with_phase(x0, self.y, zp))
        result = gerchberg_saxton(self.y, self.c, 1, RandomStream(seed))
        assert np.allclose(result.x_hat, x1, atol=1e-13)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            hio(self.y, self.c, 2.5, 10, RandomStream(0))
        with pytest.raises(ValueError):
            raar(self.y, self.c, 1.0, 10, RandomStream(0))
        with pytest.raises(ValueError):
            gerchberg_saxton(self.y, self.c, 0, RandomStream(0))
        with pytest.raises(ValueError):
            hio(np.zeros((4, 4)), self.c, 0.8, 10, RandomStream(0))


class TestSolverContracts:
    def test_zero_measurements_give_zero(self):
        c = ObjectConstraint.full_frame((12, 12))
        y = np.zeros((12, 12))
        for solver in (
            lambda s: gerchberg_saxton(y, c, 50, s),
            lambda s: hio(y, c, 0.8, 50, s),
            lambda s: raar(y, c, 0.87, 1000, s),
        ):
            res = solver(RandomStream(20))
            assert np.max(np.abs(res.x_hat)) <= 1e-12
            assert res.residual <= 1e-12

    def test_feasibility_and_residual_consistency(self):
        x = digit(3)
        for pad, make_c in ((1, ObjectConstraint.full_frame((28, 28))),
                            (2, ObjectConstraint.padded_corner((28, 28), 2))):
            op = FourierOperator(28, 28, pad_factor=pad)
            y = op.apply(x)
            for solver, iters in ((gerchberg_saxton, 60),):
                res = solver(y, make_c, iters, RandomStream(21))
                assert len(res.residual_trace) == iters
                assert np.all(res.x_hat >= 0) and np.all(res.x_hat <= 1)
                assert np.all(res.x_hat[~make_c.support_mask] == 0)
                recomputed = l2_norm(np.abs(dft2(res.x_hat)) - y)
                assert abs(recomputed - res.residual) <= 1e-9

    def test_hio_raar_feasibility(self):
        x = digit(4)
        y = FourierOperator(28, 28).apply(x)
        c = ObjectConstraint.full_frame((28, 28))
        for res in (hio(y, c, 0.8, 120, RandomStream(22)),
                    raar(y, c, 0.87, 120, RandomStream(23))):
            assert np.all(res.x_hat >= 0) and np.all(res.x_hat <= 1)
            assert abs(l2_norm(np.abs(dft2(res.x_hat)) - y) - res.residual) <= 1e-9
            assert len(res.residual_trace) == 120
            assert np.all(np.isfinite(res.residual_trace))

    def test_gs_trace_tends_downward(self):
        x = digit(5)
        op = FourierOperator(28, 28, pad_factor=2)
        y = op.apply(x)
        c = ObjectConstraint.padded_corner((28, 28), 2)
        downward = 0
        for seed in range(10):
            res = gerchberg_saxton(y, c, 150, RandomStream(40 + seed))
            if res.residual_trace[-1] <= res.residual_trace[0]:
                downward += 1
        assert downward >= 9

    def test_deterministic_given_stream(self):
        x = digit(6)
        y = FourierOperator(28, 28).apply(x)
        c = ObjectConstraint.full_frame((28, 28))
        a = hio(y, c, 0.8, 40, RandomStream(50))
        b = hio(y, c, 0.8, 40, RandomStream(50))
        assert np.array_equal(a.x_hat, b.x_hat)
        assert a.residual == b.residual


class TestBestOfRestarts:
    def setup_method(self):
        self.x = digit(7)
        self.y = FourierOperator(28, 28).apply(self.x)
        self.c = ObjectConstraint.full_frame((28, 28))
        self.solve = lambda s: hio(self.y, self.c, 0.8, 80, s)

    def test_k1_is_single_solve(self):
        stream = RandomStream(60)
        picked = best_of_restarts(self.solve, 1, stream)
        single = self.solve(RandomStream(60).child(0))
        assert np.array_equal(picked.x_hat, single.x_hat)
        assert picked.restart_index == 0

    def test_min_contract(self):
        stream = RandomStream(61)
        picked = best_of_restarts(self.solve, 4, stream)
        individuals = [self.solve(RandomStream(61).child(r)) for r in range(4)]
        for run in individuals:
            assert picked.residual <= run.residual
        assert picked.residual == individuals[picked.restart_index].residual

    def test_deterministic(self):
        a = best_of_restarts(self.solve, 3, RandomStream(62))
        b = best_of_restarts(self.solve, 3, RandomStream(62))
        assert np.array_equal(a.x_hat, b.x_hat)
        assert a.restart_index == b.restart_index

    def test_k_validation(self):
        with pytest.raises(ValueError):
            best_of_restarts(self.solve, 0, RandomStream(63))


@pytest.mark.slow
class TestDeskScaleReconstruction:
    def test_oversampled_solvers_reconstruct(self):
        digits = make_synthetic_digits(6, RandomStream(501)).astype(np.float64)
        op = FourierOperator(28, 28, pad_factor=2)
        c = ObjectConstraint.padded_corner((28, 28), 2)
        hio_ok = gs_ok = 0
        for i, x in enumerate(digits):
            y = op.apply(x)
            truth = zero_pad(x, 2)
            r_hio = hio(y, c, 0.8, 1000, RandomStream(700 + i))
            r_gs = gerchberg_saxton(y, c, 1000, RandomStream(800 + i))
            hio_ok += evaluate(truth, r_hio.x_hat).mse <= 0.01
            gs_ok += evaluate(truth, r_gs.x_hat).mse <= 0.02
        assert hio_ok >= 4
        assert gs_ok >= 4

    def test_padding_beats_no_padding(self):
        digits = make_synthetic_digits(8, RandomStream(502)).astype(np.float64)
        op2 = FourierOperator(28, 28, pad_factor=2)
        op1 = FourierOperator(28, 28)
        c2 = ObjectConstraint.padded_corner((28, 28), 2)
        c1 = ObjectConstraint.full_frame((28, 28))
        padded, plain = [], []
        for i, x in enumerate(digits):
            r2 = hio(op2.apply(x), c2, 0.8, 1000, RandomStream(900 + i))
            padded.append(evaluate(zero_pad(x, 2), r2.x_hat).mse)
            r1 = hio(op1.apply(x), c1, 0.8, 1000, RandomStream(950 + i))
            plain.append(evaluate(x, r1.x_hat).mse)
        assert float(np.mean(padded)) < float(np.mean(plain))
