"""Small dense-network engine with manual backpropagation and Adam.

Just enough machinery for the reconstruction pipelines: fully connected
layers, batch normalization, ReLU / leaky ReLU / sigmoid, reverse-mode
gradients for parameters and inputs, and an Adam optimizer. Everything is
plain numpy; forward returns an activation cache that backward consumes,
so differentiating through a frozen network (for latent optimization) is
the same code path as training.
"""

from __future__ import annotations

import numpy as np

from .numerics import RandomStream


def dense(in_dim, out_dim):
    return {"kind": "dense", "in_dim": int(in_dim), "out_dim": int(out_dim)}


def batchnorm(dim, momentum=0.1, epsilon=1e-5):
    return {"kind": "batchnorm", "dim": int(dim), "momentum": float(momentum),
            "epsilon": float(epsilon)}


def relu():
    return {"kind": "relu"}


def leaky_relu(slope=0.2):
    return {"kind": "leaky_relu", "slope": float(slope)}


def sigmoid():
    return {"kind": "sigmoid"}


_KINDS = {"dense", "batchnorm", "relu", "leaky_relu", "sigmoid"}


def validate_specs(specs):
    """Check the dimension chain; returns (in_dim, out_dim) of the stack."""
    width = None
    first = None
    for k, spec in enumerate(specs):
        kind = spec.get("kind")
        if kind not in _KINDS:
            raise ValueError(f"layer {k}: unknown kind {kind!r}")
        if kind == "dense":
            if width is not None and spec["in_dim"] != width:
                raise ValueError(
                    f"layer {k}: dense expects width {spec['in_dim']}, chain carries {width}"
                )
            if first is None:
                first = spec["in_dim"]
            width = spec["out_dim"]
        elif kind == "batchnorm":
            if width is not None and spec["dim"] != width:
                raise ValueError(
                    f"layer {k}: batchnorm dim {spec['dim']} != chain width {width}"
                )
            if width is None:
                first = spec["dim"]
            width = spec["dim"]
    if not specs:
        raise ValueError("empty layer list")
    return first, width


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Network:
    """A stack of layers with explicit parameters and running buffers.

    Parameters live in `params` ({"<layer>.weight": array, ...}) and are
    updated in place by the optimizer. Batchnorm running statistics live
    in `buffers` and change only during train-mode forward passes, so
    eval-mode forwards are pure.
    """

    def __init__(self, specs, params, buffers, dtype):
        self.specs = list(specs)
        self.params = params
        self.buffers = buffers
        self.dtype = np.dtype(dtype)

    @classmethod
    def initialize(cls, specs, stream, dtype=np.float32):
        """Kaiming-uniform dense weights (U(+-sqrt(6/fan_in))), zero biases,
        identity batchnorm with zero running mean and unit running variance."""
        validate_specs(specs)
        dtype = np.dtype(dtype)
        params = {}
        buffers = {}
        for k, spec in enumerate(specs):
            if spec["kind"] == "dense":
                bound = np.sqrt(6.0 / spec["in_dim"])
                params[f"{k}.weight"] = stream.uniform(
                    (spec["in_dim"], spec["out_dim"]), low=-bound, high=bound, dtype=dtype
                )
                params[f"{k}.bias"] = np.zeros(spec["out_dim"], dtype=dtype)
            elif spec["kind"] == "batchnorm":
                params[f"{k}.scale"] = np.ones(spec["dim"], dtype=dtype)
                params[f"{k}.shift"] = np.zeros(spec["dim"], dtype=dtype)
                buffers[f"{k}.running_mean"] = np.zeros(spec["dim"], dtype=dtype)
                buffers[f"{k}.running_var"] = np.ones(spec["dim"], dtype=dtype)
        return cls(specs, params, buffers, dtype)

    @property
    def input_dim(self):
        for spec in self.specs:
            if spec["kind"] == "dense":
                return spec["in_dim"]
            if spec["kind"] == "batchnorm":
                return spec["dim"]
        return None

    @property
    def output_dim(self):
        for spec in reversed(self.specs):
            if spec["kind"] == "dense":
                return spec["out_dim"]
            if spec["kind"] == "batchnorm":
                return spec["dim"]
        return None

    @property
    def param_count(self):
        return sum(int(p.size) for p in self.params.values())

    def astype(self, dtype):
        dtype = np.dtype(dtype)
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return Network(self.specs, params, buffers, dtype)

    def copy(self):
        return self.astype(self.dtype)

    def forward(self, x, train=False):
        """Run the stack; returns (output, cache) with cache feeding backward.

        Train mode normalizes by batch statistics and updates the running
        buffers; eval mode is a pure function of the input.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2:
            raise ValueError(f"expected (batch, features), got shape {x.shape}")
        expected = self.input_dim
        if expected is not None and x.shape[1] != expected:
            raise ValueError(f"input width {x.shape[1]} != first layer width {expected}")

        cache = []
        out = x
        for k, spec in enumerate(self.specs):
            kind = spec["kind"]
            if kind == "dense":
                w = self.params[f"{k}.weight"]
                b = self.params[f"{k}.bias"]
                cache.append(("dense", k, out))
                out = out @ w + b
            elif kind == "batchnorm":
                out, entry = self._batchnorm_forward(k, spec, out, train)
                cache.append(entry)
            elif kind == "relu":
                mask = out > 0
                cache.append(("relu", k, mask))
                out = out * mask
            elif kind == "leaky_relu":
                mask = out > 0
                cache.append(("leaky_relu", k, mask))
                out = np.where(mask, out, spec["slope"] * out)
            elif kind == "sigmoid":
                out = _stable_sigmoid(out)
                cache.append(("sigmoid", k, out))
        return out, cache

    def _batchnorm_forward(self, k, spec, x, train):
        eps = spec["epsilon"]
        scale = self.params[f"{k}.scale"]
        shift = self.params[f"{k}.shift"]
        if train:
            n = x.shape[0]
            if n < 2:
                raise ValueError(
                    "train-mode batchnorm needs batch size >= 2 "
                    "(unbiased running-variance correction is undefined at 1)"
                )
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv = 1.0 / np.sqrt(var + eps)
            xhat = (x - mu) * inv
            mom = spec["momentum"]
            rm = self.buffers[f"{k}.running_mean"]
            rv = self.buffers[f"{k}.running_var"]
            rm *= 1.0 - mom
            rm += mom * mu
            rv *= 1.0 - mom
            rv += mom * var * (n / (n - 1.0))
        else:
            rm = self.buffers[f"{k}.running_mean"]
            rv = self.buffers[f"{k}.running_var"]
            inv = 1.0 / np.sqrt(rv + eps)
            xhat = (x - rm) * inv
        return scale * xhat + shift, ("batchnorm", k, xhat, inv, train)

    def backward(self, cache, grad_out):
        """Reverse the stack; returns (param_grads, input_grad).

        Gradients are exact for the forward pass that produced `cache`
        (including train-mode batch coupling).
        """
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g = np.asarray(grad_out, dtype=self.dtype)
        for entry in reversed(cache):
            kind, k = entry[0], entry[1]
            if kind == "dense":
                x = entry[2]
                w = self.params[f"{k}.weight"]
                grads[f"{k}.weight"] += x.T @ g
                grads[f"{k}.bias"] += g.sum(axis=0)
                g = g @ w.T
            elif kind == "batchnorm":
                _, _, xhat, inv, train = entry
                scale = self.params[f"{k}.scale"]
                grads[f"{k}.scale"] += (g * xhat).sum(axis=0)
                grads[f"{k}.shift"] += g.sum(axis=0)
                gx = g * scale
                if train:
                    n = xhat.shape[0]
                    g = (inv / n) * (
                        n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0)
                    )
                else:
                    g = gx * inv
            elif kind == "relu":
                g = g * entry[2]
            elif kind == "leaky_relu":
                slope = self.specs[k]["slope"]
                g = np.where(entry[2], g, slope * g)
            elif kind == "sigmoid":
                s = entry[2]
                g = g * s * (1.0 - s)
        return grads, g


class Adam:
    """Adam with bias correction, updating bound parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = self.params[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != param {p.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.epsilon)


def grad_check(net, x, loss_fn, train=False, num_coords=260, step=1e-5, seed=987):
    """Max relative disagreement between backward and central differences.

    Promotes the network and input to float64, samples >= num_coords
    coordinates across all parameters and the input, and returns
    max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    loss_fn maps the network output to (scalar_loss, dloss_doutput) and
    must be deterministic.

    Two classes of coordinate are excluded, both standard for difference
    oracles: probes where the step flips a relu/leaky mask (the loss is
    not differentiable across that segment), and coordinates where both
    sides already agree within 1e-8 * max(1, |loss|) absolutely (there
    the central difference is pure cancellation noise; this is how a
    coordinate whose true gradient is exactly zero, e.g. a dense bias
    feeding train-mode batchnorm, avoids a spurious relative error).
    """
    net = net.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    out, cache = net.forward(x, train=train)
    loss0, dout = loss_fn(out)
    grads, grad_in = net.backward(cache, dout)
    atol = 1e-8 * max(1.0, abs(float(loss0)))

    arrays = [(name, net.params[name], grads[name]) for name in sorted(net.params)]
    arrays.append(("input", x, grad_in))
    sizes = np.array([a.size for _, a, _ in arrays])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])

    def loss_and_masks():
        o, c = net.forward(x, train=train)
        masks = [e[2] for e in c if e[0] in ("relu", "leaky_relu")]
        return float(loss_fn(o)[0]), masks

    stream = RandomStream(seed)
    picks = stream.integers(0, total, (min(num_coords, total),))
    worst = 0.0
    for flat in np.unique(picks):
        a = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = int(flat - offsets[a])
        _, arr, analytic_arr = arrays[a]
        orig = arr.flat[idx]
        arr.flat[idx] = orig + step
        lp, masks_p = loss_and_masks()
        arr.flat[idx] = orig - step
        lm, masks_m = loss_and_masks()
        arr.flat[idx] = orig
        if any(not np.array_equal(mp, mm) for mp, mm in zip(masks_p, masks_m)):
            continue
        numeric = (lp - lm) / (2.0 * step)
        analytic = float(analytic_arr.flat[idx])
        if abs(analytic - numeric) <= atol:
            continue
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst
