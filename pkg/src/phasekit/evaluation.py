"""Ambiguity-aware evaluation.

Fourier magnitudes are blind to circular translation and 180-degree
rotation, so reconstructions are registered before scoring: correlate the
truth against the estimate and its point reflection, undo the best shift
for each, keep whichever candidate scores the lower MSE. Metrics are MSE,
MAE and SSIM (11x11 Gaussian window), plus a gradient-magnitude histogram
used to diagnose over-smooth reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import circular_cross_correlate, circular_shift, point_reflect

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class Registration:
    delta_s: int
    delta_t: int
    rotated: bool
    aligned: np.ndarray = field(repr=False)


@dataclass
class EvalRecord:
    mse: float
    mae: float
    ssim: float
    registration: Registration | None = None


def register(x, x_hat):
    """Undo the circular-shift / rot180 ambiguity of x_hat relative to x.

    Each candidate (plain and point-reflected) is aligned at the argmax of
    its circular cross-correlation with x; the candidate with lower
    post-alignment MSE wins, ties going to the unrotated candidate. The
    argmax scans in row-major order, so exact correlation ties resolve to
    the lexicographically smallest (delta_s, delta_t).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")

    best = None
    for rotated in (False, True):
        candidate = point_reflect(x_hat) if rotated else x_hat
        corr = circular_cross_correlate(x, candidate)
        s, t = np.unravel_index(int(np.argmax(corr)), corr.shape)
        aligned = circular_shift(candidate, -s, -t)
        mse = float(np.mean((x - aligned) ** 2))
        if best is None or mse < best[0]:
            best = (mse, Registration(int(s), int(t), rotated, aligned))
    return best[1]


def _gaussian_window(size, sigma):
    r = (size - 1) // 2
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2, data_range=1.0):
    """Mean structural similarity over valid (fully interior) windows.

    Gaussian-weighted local moments without sample-size correction; the
    standard constants C1 = (k1 L)^2, C2 = (k2 L)^2 stabilize the ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}")

    w = _gaussian_window(window, sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))

    def wmean(patches):
        return np.tensordot(patches, w, axes=([2, 3], [0, 1]))

    mu_a = wmean(wa)
    mu_b = wmean(wb)
    var_a = wmean(wa * wa) - mu_a**2
    var_b = wmean(wb * wb) - mu_b**2
    cov = wmean(wa * wb) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def metrics(x, x_hat_aligned):
    """MSE, MAE, SSIM of an already-registered reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    x_hat_aligned = np.asarray(x_hat_aligned, dtype=np.float64)
    diff = x - x_hat_aligned
    return EvalRecord(
        mse=float(np.mean(diff**2)),
        mae=float(np.mean(np.abs(diff))),
        ssim=ssim(x, x_hat_aligned),
    )


def evaluate(x, x_hat, align=True):
    """Register (optionally) and score; the one-stop call used by the harness."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if align:
        reg = register(x, x_hat)
    else:
        reg = Registration(0, 0, False, x_hat)
    record = metrics(x, reg.aligned)
    record.registration = reg
    return record


def gradient_magnitude_histogram(x, bins, value_range=(0.0, np.sqrt(2.0))):
    """Normalized histogram of forward-difference gradient magnitudes.

    Gradients are taken on the (h-1, w-1) interior so both differences
    exist at every counted pixel. The default range covers [0,1] images,
    whose gradient magnitude is at most sqrt(2).

    Returns (density, bin_edges); density sums to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    bins = int(bins)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-2] < 2 or x.shape[-1] < 2:
        raise ValueError("expected (h, w) or (n, h, w) images with h, w >= 2")
    dh = x[:, 1:, :-1] - x[:, :-1, :-1]
    dw = x[:, :-1, 1:] - x[:, :-1, :-1]
    mag = np.hypot(dh, dw)
    counts, edges = np.histogram(mag.ravel(), bins=bins, range=value_range)
    total = counts.sum()
    if total == 0:
        raise ValueError("no gradient samples in range")
    return counts / total, edges


def box_blur3(x):
    """3x3 box filter with edge replication; test/demo helper for smoothing."""
    x = np.asarray(x, dtype=np.float64)
    padded = np.pad(x, ((1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            out += padded[di : di + x.shape[0], dj : dj + x.shape[1]]
    return out / 9.0
