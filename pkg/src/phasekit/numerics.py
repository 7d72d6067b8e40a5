"""Deterministic numeric substrate shared by every other module.

Provides counter-based random streams (same seed, same machine, same draws,
on any platform), orthonormal 2-D DFTs, circular shifts, point reflection
and circular cross-correlation. Everything operates on plain numpy arrays;
shapes (..., h, w) are accepted where batching makes sense.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


class RandomStream:
    """Reproducible random source addressed by (seed, stream_id, path).

    Built on Philox counter-based bit generation, so the draw sequence is
    identical across platforms and numpy builds. Distinct stream ids (or
    child paths) give statistically independent sequences; `child(i)` is
    the supported way to hand independent randomness to restarts, samples
    or workers without coordinating counters.

    Float draws are always generated in double precision and cast on
    request, so the canonical sequence does not depend on the caller's
    dtype.
    """

    def __init__(self, seed, stream_id=0, path=()):
        seed = int(seed)
        stream_id = int(stream_id)
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative integers")
        self.seed = seed
        self.stream_id = stream_id
        self.path = tuple(int(p) for p in path)
        if any(p < 0 for p in self.path):
            raise ValueError("child indices must be non-negative")
        key = (self.seed, self.stream_id) + self.path
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

    def child(self, index):
        """Derive an independent stream; children never collide with the parent."""
        return RandomStream(self.seed, self.stream_id, self.path + (int(index),))

    def standard_normal(self, shape=(), dtype=np.float64):
        x = self._gen.standard_normal(size=shape)
        return x.astype(dtype, copy=False)

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float64):
        x = self._gen.random(size=shape)
        return (low + (high - low) * x).astype(dtype, copy=False)

    def poisson(self, lam):
        """Poisson draws with per-element rates; lam must be finite and >= 0."""
        lam = np.asarray(lam, dtype=np.float64)
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("poisson rates must be finite and non-negative")
        return self._gen.poisson(lam)

    def permutation(self, n):
        return self._gen.permutation(int(n))

    def integers(self, low, high, shape=()):
        return self._gen.integers(low, high, size=shape)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def dft2(x):
    """Orthonormal 2-D DFT over the trailing two axes.

    The 1/sqrt(h*w) normalization makes the transform unitary, so energy is
    preserved exactly and the adjoint equals the inverse.
    """
    return np.fft.fft2(np.asarray(x), norm="ortho")


def idft2(spectrum):
    """Inverse of :func:`dft2`; unitary, so idft2(dft2(x)) == x to rounding."""
    return np.fft.ifft2(np.asarray(spectrum), norm="ortho")


def circular_shift(x, shift_rows, shift_cols):
    """Cyclically translate the trailing two axes.

    out[..., i, j] = x[..., (i - shift_rows) % h, (j - shift_cols) % w],
    i.e. positive shifts move content down/right with wraparound.
    """
    return np.roll(np.asarray(x), (int(shift_rows), int(shift_cols)), axis=(-2, -1))


def point_reflect(x):
    """180-degree rotation about the origin on the circular grid.

    out[..., i, j] = x[..., (-i) % h, (-j) % w]. Together with circular
    shifts this generates the transform group that leaves Fourier
    magnitudes untouched.
    """
    x = np.asarray(x)
    h, w = x.shape[-2], x.shape[-1]
    rows = (-np.arange(h)) % h
    cols = (-np.arange(w)) % w
    return x[..., rows[:, None], cols[None, :]]


def circular_cross_correlate(a, b):
    """Circular cross-correlation c[s, t] = sum_{i,j} a[i,j] * b[(i+s)%h, (j+t)%w].

    Computed in the frequency domain; c[s, t] is maximal where shifting b
    back by (s, t) best matches a, so argmax(c) recovers a cyclic
    translation between two copies of the same image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.fft.ifft2(np.conj(np.fft.fft2(a)) * np.fft.fft2(b)).real


def l2_norm(x):
    return float(np.linalg.norm(np.asarray(x).ravel()))


def assert_finite(x, label="array"):
    """Raise if any element is NaN or infinite. Cheap guard for boundaries."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise FloatingPointError(f"{label} contains {bad} non-finite elements")
    return x
