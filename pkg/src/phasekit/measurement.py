"""Magnitude-only measurement models y = |Ax| and shot noise.

Two operators: the orthonormal 2-D Fourier transform (optionally of a
zero-padded frame, which is how oversampling enters) and a dense Gaussian
matrix with N(0, 1/m) entries for compressive measurements. Both expose
`apply` and `apply_with_gradient`; the pullback implements
Re(A^H (g * sign(Ax))) with sign(0) = 0, which is what latent optimization
differentiates through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream, dft2, idft2

ZERO_BIN_TOL = 1e-12
# fixed stream id so a Gaussian matrix depends on its seed alone
_MATRIX_STREAM_ID = 104729


def zero_pad(x, factor):
    """Embed x in the top-left corner of a (factor*h, factor*w) zero frame."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("pad factor must be >= 1")
    x = np.asarray(x)
    if factor == 1:
        return x.copy()
    h, w = x.shape[-2], x.shape[-1]
    out = np.zeros(x.shape[:-2] + (factor * h, factor * w), dtype=x.dtype)
    out[..., :h, :w] = x
    return out


class FourierOperator:
    """y = |dft2(zero_pad(x, pad_factor))| over (..., height, width) inputs.

    pad_factor = 1 measures the image's own spectrum; larger factors
    measure the spectrum of the origin-anchored padded frame, so there are
    pad_factor^2 more magnitudes than unknowns.
    """

    kind = "fourier2d"

    def __init__(self, height, width, pad_factor=1):
        self.height = int(height)
        self.width = int(width)
        self.pad_factor = int(pad_factor)
        if self.height < 1 or self.width < 1:
            raise ValueError("frame dimensions must be positive")
        if self.pad_factor < 1:
            raise ValueError("pad factor must be >= 1")

    @property
    def n(self):
        return self.height * self.width

    @property
    def m(self):
        return self.n * self.pad_factor * self.pad_factor

    @property
    def output_shape(self):
        return (self.height * self.pad_factor, self.width * self.pad_factor)

    def _check(self, x):
        x = np.asarray(x)
        if x.ndim < 2 or x.shape[-2:] != (self.height, self.width):
            raise ValueError(
                f"expected trailing shape {(self.height, self.width)}, got {x.shape}"
            )
        return x

    def apply(self, x):
        x = self._check(x)
        return np.abs(dft2(zero_pad(x, self.pad_factor)))

    def apply_with_gradient(self, x):
        x = self._check(x)
        spectrum = dft2(zero_pad(x, self.pad_factor))
        mags = np.abs(spectrum)
        safe = np.where(mags > ZERO_BIN_TOL, mags, 1.0)
        phase = np.where(mags > ZERO_BIN_TOL, spectrum / safe, 0.0)

        h, w = self.height, self.width

        def pullback(g):
            g = np.asarray(g)
            if g.shape != mags.shape:
                raise ValueError(f"gradient shape {g.shape} != output shape {mags.shape}")
            full = idft2(g * phase).real
            return np.ascontiguousarray(full[..., :h, :w])

        return mags, pullback

    def descriptor(self):
        d = {"kind": self.kind, "height": self.height, "width": self.width}
        if self.pad_factor != 1:
            d["pad_factor"] = self.pad_factor
        return d

    def __repr__(self):
        pad = f", pad_factor={self.pad_factor}" if self.pad_factor != 1 else ""
        return f"FourierOperator({self.height}x{self.width}{pad})"


class GaussianOperator:
    """y = |Ax| with dense A of shape (m, n), entries drawn N(0, 1/m).

    The matrix is materialized once from (m, n, seed), so equal parameters
    give bit-identical operators. Inputs may arrive flat (..., n) or as
    images whose trailing two axes multiply to n; outputs are flat (..., m).
    """

    kind = "gaussian"

    def __init__(self, m, n, seed, _matrix=None):
        self.m = int(m)
        self.n = int(n)
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        self.seed = None if seed is None else int(seed)
        if _matrix is not None:
            matrix = np.asarray(_matrix, dtype=np.float64)
            if matrix.shape != (self.m, self.n):
                raise ValueError(f"matrix shape {matrix.shape} != ({self.m}, {self.n})")
            self.matrix = matrix
        else:
            if self.seed is None:
                raise ValueError("seed is required unless a matrix is injected")
            stream = RandomStream(self.seed, _MATRIX_STREAM_ID)
            self.matrix = stream.standard_normal((self.m, self.n)) / np.sqrt(self.m)
        self.matrix.setflags(write=False)

    @classmethod
    def from_matrix(cls, matrix):
        """Wrap an explicit matrix (tests, ablations). No descriptor round-trip."""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix.shape[0], matrix.shape[1], None, _matrix=matrix)

    def _rows(self, x):
        x = np.asarray(x)
        if x.ndim >= 1 and x.shape[-1] == self.n:
            return x, x.shape[:-1]
        if x.ndim >= 2 and x.shape[-2] * x.shape[-1] == self.n:
            lead = x.shape[:-2]
            return x.reshape(lead + (self.n,)), lead
        raise ValueError(f"cannot interpret shape {x.shape} as vectors of length {self.n}")

    def apply(self, x):
        rows, lead = self._rows(x)
        return np.abs(rows @ self.matrix.T).reshape(lead + (self.m,))

    def apply_with_gradient(self, x):
        x = np.asarray(x)
        rows, lead = self._rows(x)
        ax = rows @ self.matrix.T
        y = np.abs(ax)
        sign = np.sign(ax)
        sign[np.abs(ax) <= ZERO_BIN_TOL] = 0.0
        out_shape = x.shape

        def pullback(g):
            g = np.asarray(g)
            if g.shape != lead + (self.m,):
                raise ValueError(f"gradient shape {g.shape} != {lead + (self.m,)}")
            grad = (g * sign) @ self.matrix
            return grad.reshape(out_shape)

        return y.reshape(lead + (self.m,)), pullback

    def descriptor(self):
        if self.seed is None:
            raise ValueError("operator built from an injected matrix has no descriptor")
        return {"kind": self.kind, "m": self.m, "n": self.n, "seed": self.seed}

    def __repr__(self):
        return f"GaussianOperator(m={self.m}, n={self.n}, seed={self.seed})"


def make_operator(descriptor):
    """Rebuild an operator from its serialized descriptor dict."""
    d = dict(descriptor)
    kind = d.pop("kind", None)
    if kind == "fourier2d":
        allowed = {"height", "width", "pad_factor"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown fourier2d fields: {sorted(unknown)}")
        return FourierOperator(d["height"], d["width"], d.get("pad_factor", 1))
    if kind == "gaussian":
        allowed = {"m", "n", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown gaussian fields: {sorted(unknown)}")
        return GaussianOperator(d["m"], d["n"], d["seed"])
    raise ValueError(f"unknown operator kind: {kind!r}")


@dataclass
class NoiseConfig:
    """Shot-noise settings.

    alpha is the noise level (0 means pass-through). count_scale converts
    magnitudes to the photon-count scale before Poisson sampling and back
    after; the noise model is scale-equivariant, so this only re-expresses
    which alpha corresponds to which signal-to-noise ratio. With the
    orthonormal transform, count_scale = sqrt(h*w) makes alpha mean the
    same thing it would for an unnormalized transform.
    """

    alpha: float
    stream: RandomStream
    count_scale: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.count_scale <= 0:
            raise ValueError("count_scale must be positive")


@dataclass
class SnrReport:
    mu_magn: float
    sigma_noise: float
    snr: float


class NoiselessError(ValueError):
    """Raised when an SNR is requested but the noise is exactly zero."""


def shot_noise(y, config):
    """Poisson intensity noise: y_hat = alpha * sqrt(Poisson(y^2 / alpha^2)).

    Unbiased in intensity (E[y_hat^2] = y^2) and scale-equivariant:
    scaling y and alpha together scales y_hat by the same factor.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("magnitudes must be nonnegative")
    if config.alpha == 0:
        return y.copy()
    scaled = y * config.count_scale
    counts = config.stream.poisson(np.square(scaled / config.alpha))
    return (config.alpha / config.count_scale) * np.sqrt(counts)


def snr(y, y_noisy):
    """Measured signal-to-noise ratio: mean magnitude over noise std."""
    y = np.asarray(y, dtype=np.float64)
    y_noisy = np.asarray(y_noisy, dtype=np.float64)
    if y.shape != y_noisy.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_noisy.shape}")
    noise = y_noisy - y
    sigma = float(noise.std())
    if sigma == 0.0:
        raise NoiselessError("y_noisy equals y; SNR is undefined")
    mu = float(y.mean())
    return SnrReport(mu_magn=mu, sigma_noise=sigma, snr=mu / sigma)
