"""Projection-based phase retrieval over Fourier magnitudes.

Gerchberg-Saxton alternating projections, Fienup's hybrid input-output
feedback, and the relaxed averaged alternating reflections scheme, all
sharing one magnitude projector and one object constraint (realness, a
[0,1] box, and a support mask). Restart selection keeps the candidate
with the smallest measurement residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import TWO_PI, dft2, idft2, l2_norm

ZERO_PHASE_TOL = 1e-12


@dataclass
class ObjectConstraint:
    """Realness plus a value box on a known support; zero elsewhere."""

    support_mask: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        self.support_mask = np.asarray(self.support_mask, dtype=bool)
        if not self.support_mask.any():
            raise ValueError("support mask needs at least one true pixel")
        if not self.lo < self.hi:
            raise ValueError("empty value box")

    @classmethod
    def full_frame(cls, shape):
        return cls(np.ones(shape, dtype=bool))

    @classmethod
    def padded_corner(cls, inner_shape, factor):
        """Support of zero_pad(x, factor): the top-left inner block."""
        factor = int(factor)
        h, w = inner_shape
        mask = np.zeros((factor * h, factor * w), dtype=bool)
        mask[:h, :w] = True
        return cls(mask)

    @property
    def shape(self):
        return self.support_mask.shape

    def project(self, x):
        return np.clip(x, self.lo, self.hi) * self.support_mask


@dataclass
class SolveResult:
    x_hat: np.ndarray = field(repr=False)
    residual: float
    restart_index: int
    residual_trace: np.ndarray = field(repr=False)


def _draw_zero_phase(stream, shape):
    theta = stream.uniform(shape, high=TWO_PI)
    return np.exp(1j * theta)


def _project_spectrum(spectrum, y, zero_phase):
    mags = np.abs(spectrum)
    ok = mags > ZERO_PHASE_TOL
    phase = np.where(ok, spectrum / np.where(ok, mags, 1.0), zero_phase)
    return idft2(y * phase).real


def magnitude_project(x, y, zero_phase=None):
    """Replace the Fourier magnitudes of x with y, keeping x's phases.

    Bins where |dft2(x)| < 1e-12 carry no usable phase; they take
    `zero_phase` (a unit-modulus array, typically drawn once per solve)
    or phase 1 when none is given.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if zero_phase is None:
        zero_phase = np.ones_like(y, dtype=complex)
    return _project_spectrum(dft2(x), y, zero_phase)


def _prepare(y, constraint, stream):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != constraint.shape:
        raise ValueError(f"measurement shape {y.shape} != constraint {constraint.shape}")
    # draw order is part of the determinism contract: start image, then phase
    x0 = stream.uniform(y.shape) * constraint.support_mask
    zero_phase = _draw_zero_phase(stream, y.shape)
    return y, x0, zero_phase


def _finish(x, y, trace, constraint):
    x_hat = constraint.project(x)
    residual = l2_norm(np.abs(dft2(x_hat)) - y)
    return SolveResult(
        x_hat=x_hat,
        residual=residual,
        restart_index=0,
        residual_trace=np.asarray(trace),
    )


def gerchberg_saxton(y, constraint, iters, stream):
    """Alternate the magnitude projection with the object projection."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    y, x, zero_phase = _prepare(y, constraint, stream)
    trace = []
    for _ in range(iters):
        pm = _project_spectrum(dft2(x), y, zero_phase)
        x = constraint.project(pm)
        trace.append(l2_norm(np.abs(dft2(x)) - y))
    return _finish(x, y, trace, constraint)


def hio(y, constraint, beta, iters, stream):
    """Fienup feedback: keep magnitude-projected pixels where they satisfy
    the object constraint, push back x - beta * x' elsewhere."""
    if not 0 < beta < 2:
        raise ValueError("beta must be in (0, 2)")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    y, x, zero_phase = _prepare(y, constraint, stream)
    mask = constraint.support_mask
    trace = []
    for _ in range(iters):
        pm = _project_spectrum(dft2(x), y, zero_phase)
        good = mask & (pm >= constraint.lo) & (pm <= constraint.hi)
        x = np.where(good, pm, x - beta * pm)
        trace.append(l2_norm(np.abs(dft2(x)) - y))
    return _finish(x, y, trace, constraint)


def raar(y, constraint, beta, iters, stream):
    """Relaxed averaged alternating reflections:
    x <- (beta/2) (R_S R_M + I) x + (1 - beta) P_M x."""
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    y, x, zero_phase = _prepare(y, constraint, stream)
    trace = []
    for _ in range(iters):
        pm = _project_spectrum(dft2(x), y, zero_phase)
        rm = 2.0 * pm - x
        rs = 2.0 * constraint.project(rm) - rm
        x = 0.5 * beta * (rs + x) + (1.0 - beta) * pm
        trace.append(l2_norm(np.abs(dft2(x)) - y))
    return _finish(x, y, trace, constraint)


def best_of_restarts(solve, k, stream):
    """Run `solve(child_stream)` k times; keep the smallest residual.

    Children are stream.child(0) ... stream.child(k-1), so reruns with the
    same stream reproduce both the runs and the selection bit-exactly.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for r in range(k):
        result = solve(stream.child(r))
        if best is None or result.residual < best.residual:
            result.restart_index = r
            best = result
    return best
