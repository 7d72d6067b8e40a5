"""Learned reconstruction models and their training loops.

Three families: an end-to-end regressor mapping measurements straight to
images, a variational autoencoder whose decoder serves as the prior for
latent optimization, and a conditional GAN whose generator takes
concat(z, y) and is trained with a non-saturating adversarial loss plus a
heavily weighted L1 term. Measurements are always recomputed on the fly
from clean images; adversarial and Bernoulli losses are evaluated in
logit space (softplus identities), which keeps every history entry finite
without ad-hoc clamping.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .measurement import NoiseConfig, shot_noise
from .nn import Adam, Network, batchnorm, dense, leaky_relu, relu, sigmoid
from .numerics import RandomStream, assert_finite

# stream ids keep shuffling, latent draws and training noise independent
_SHUFFLE_ID = 11
_LATENT_ID = 12
_NOISE_ID = 13

LOGVAR_CLAMP = 15.0


@dataclass
class TrainConfig:
    """Hyperparameters for one training run; serialized into archives."""

    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_rec: float = 1000.0
    seed: int = 0
    noise_alpha: float = 0.0
    noise_count_scale: float = 1.0
    operator: dict | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if self.learning_rate <= 0 or self.lambda_rec < 0:
            raise ValueError("learning_rate must be positive, lambda_rec nonnegative")

    def to_dict(self):
        return asdict(self)


def mlp_specs(dims, with_batchnorm=True, head_sigmoid=True):
    """Dense stack dims[0] -> ... -> dims[-1]; batchnorm+relu between
    layers, optional sigmoid head."""
    specs = []
    for i in range(len(dims) - 1):
        specs.append(dense(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            if with_batchnorm:
                specs.append(batchnorm(dims[i + 1]))
            specs.append(relu())
    if head_sigmoid:
        specs.append(sigmoid())
    return specs


def e2e_specs(y_dim=784, hidden=2048, x_dim=784, depth=4):
    return mlp_specs([y_dim] + [hidden] * depth + [x_dim])


def generator_specs(y_dim=784, hidden=2048, x_dim=784, depth=4):
    """Conditional generator on concat(z, y) with dim(z) = dim(y)."""
    return mlp_specs([2 * y_dim] + [hidden] * depth + [x_dim])


def discriminator_specs(x_dim=784, y_dim=784, widths=(1024, 512, 256)):
    """Dense stack on concat(x, y), leaky relu, no batchnorm; the network
    emits a logit and discriminate() applies the sigmoid."""
    dims = [x_dim + y_dim] + list(widths)
    specs = []
    for i in range(len(dims) - 1):
        specs.append(dense(dims[i], dims[i + 1]))
        specs.append(leaky_relu(0.2))
    specs.append(dense(dims[-1], 1))
    return specs


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    # log(1 + e^x), overflow-safe
    return np.logaddexp(0.0, x)


def discriminate(disc, x, y):
    """P(real | x, y) for a logit-head discriminator; strictly inside (0,1)."""
    x = np.atleast_2d(np.asarray(x))
    y = np.atleast_2d(np.asarray(y))
    logits, _ = disc.forward(np.concatenate([x, y], axis=1).astype(disc.dtype))
    return _sigmoid(logits.astype(np.float64))


def generate(generator, z, y):
    """Eval-mode sample x_hat = G(z, y); z and y must have equal width."""
    z = np.asarray(z)
    y = np.asarray(y)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_2d(y)
    if z.shape != y.shape:
        raise ValueError(f"z shape {z.shape} != y shape {y.shape}")
    if 2 * z.shape[1] != generator.input_dim:
        raise ValueError(
            f"generator expects concat width {generator.input_dim}, got {2 * z.shape[1]}"
        )
    out, _ = generator.forward(np.concatenate([z, y], axis=1).astype(generator.dtype))
    return out[0] if squeeze else out


def l1_loss_and_grad(pred, target):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def vae_kl(mu, logvar):
    """KL(N(mu, e^logvar) || N(0, 1)) summed over latent dims, batch mean."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    per_sample = -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=-1)
    return float(np.mean(per_sample))


class VAE:
    """Encoder trunk with mean / log-variance heads and a logit decoder.

    decode() applies the sigmoid head, so decoded pixels live in [0,1];
    decode_with_gradient() exposes the pullback latent optimization needs.
    """

    def __init__(self, trunk, mu_head, logvar_head, decoder, latent_dim):
        self.trunk = trunk
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder
        self.latent_dim = int(latent_dim)

    @classmethod
    def build(cls, latent_dim, stream, x_dim=784, hidden=500, dtype=np.float32):
        trunk = Network.initialize(
            mlp_specs([x_dim, hidden, hidden], with_batchnorm=False, head_sigmoid=False),
            stream.child(0), dtype,
        )
        mu_head = Network.initialize([dense(hidden, latent_dim)], stream.child(1), dtype)
        logvar_head = Network.initialize([dense(hidden, latent_dim)], stream.child(2), dtype)
        decoder = Network.initialize(
            mlp_specs([latent_dim, hidden, hidden, x_dim], with_batchnorm=False,
                      head_sigmoid=False),
            stream.child(3), dtype,
        )
        return cls(trunk, mu_head, logvar_head, decoder, latent_dim)

    @property
    def networks(self):
        return {"trunk": self.trunk, "mu_head": self.mu_head,
                "logvar_head": self.logvar_head, "decoder": self.decoder}

    @property
    def dtype(self):
        return self.decoder.dtype

    def astype(self, dtype):
        nets = {k: v.astype(dtype) for k, v in self.networks.items()}
        return VAE(nets["trunk"], nets["mu_head"], nets["logvar_head"],
                   nets["decoder"], self.latent_dim)

    def encode(self, x):
        x = np.atleast_2d(np.asarray(x))
        h, _ = self.trunk.forward(x.astype(self.trunk.dtype))
        mu, _ = self.mu_head.forward(h)
        logvar, _ = self.logvar_head.forward(h)
        return mu, logvar

    def decode(self, z):
        z = np.asarray(z)
        squeeze = z.ndim == 1
        logits, _ = self.decoder.forward(np.atleast_2d(z).astype(self.decoder.dtype))
        out = _sigmoid(logits)
        return out[0] if squeeze else out

    def decode_with_gradient(self, z):
        """Returns (x_hat, pullback) with pullback mapping dL/dx_hat to dL/dz."""
        z = np.atleast_2d(np.asarray(z)).astype(self.decoder.dtype)
        logits, cache = self.decoder.forward(z)
        out = _sigmoid(logits)

        def pullback(grad_out):
            dlogits = grad_out * out * (1.0 - out)
            _, dz = self.decoder.backward(cache, dlogits)
            return dz

        return out, pullback


def _flatten_images(images):
    images = np.asarray(images)
    return images.reshape(len(images), -1)


def _measure_flat(operator, images, noise=None):
    """y = |A x| per image, flattened to (batch, m) float32."""
    images = np.asarray(images, dtype=np.float64)
    if operator.kind == "fourier2d":
        images = images.reshape(-1, operator.height, operator.width)
    else:
        images = images.reshape(len(images), -1)
    y = operator.apply(images).reshape(len(images), -1)
    if noise is not None and noise.alpha > 0:
        y = shot_noise(y, noise)
    return y.astype(np.float32)


def _batch_noise(config, epoch, step):
    if config.noise_alpha <= 0:
        return None
    stream = RandomStream(config.seed, _NOISE_ID, (epoch, step))
    return NoiseConfig(alpha=config.noise_alpha, stream=stream,
                       count_scale=config.noise_count_scale)


def train_e2e(net, images, operator, config):
    """Minimize mean |x - G(|Ax|)| with Adam; returns per-epoch mean loss."""
    raw = _flatten_images(images).astype(np.float32)
    opt = Adam(net.params, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    shuffle = RandomStream(config.seed, _SHUFFLE_ID)
    n = len(raw)
    steps = n // config.batch_size
    if steps < 1:
        raise ValueError("dataset smaller than one batch")
    history = []
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        epoch_losses = []
        for b in range(steps):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            xb = raw[idx]
            yb = _measure_flat(operator, xb, _batch_noise(config, epoch, b))
            out, cache = net.forward(yb, train=True)
            loss, dout = l1_loss_and_grad(out, xb)
            grads, _ = net.backward(cache, dout)
            opt.step(grads)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    assert_finite(np.asarray(history), "e2e loss history")
    return history


def train_vae(vae, images, config):
    """Maximize the ELBO (Bernoulli likelihood, unit-Gaussian prior) with a
    reparameterized latent; returns per-epoch mean ELBO."""
    x_all = _flatten_images(images).astype(np.float32)
    params = {}
    for prefix, net in vae.networks.items():
        for k, v in net.params.items():
            params[f"{prefix}.{k}"] = v
    opt = Adam(params, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    shuffle = RandomStream(config.seed, _SHUFFLE_ID)
    eps_stream = RandomStream(config.seed, _LATENT_ID)
    n = len(x_all)
    steps = n // config.batch_size
    if steps < 1:
        raise ValueError("dataset smaller than one batch")
    history = []
    for _ in range(config.epochs):
        perm = shuffle.permutation(n)
        epoch_elbo = []
        for b in range(steps):
            x = x_all[perm[b * config.batch_size : (b + 1) * config.batch_size]]
            bsz = len(x)
            h, cache_t = vae.trunk.forward(x, train=True)
            mu, cache_m = vae.mu_head.forward(h)
            logvar, cache_v = vae.logvar_head.forward(h)
            inside = np.abs(logvar) < LOGVAR_CLAMP
            logvar = np.clip(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
            eps = eps_stream.standard_normal((bsz, vae.latent_dim), dtype=np.float32)
            sig = np.exp(0.5 * logvar)
            z = mu + sig * eps
            logits, cache_d = vae.decoder.forward(z, train=True)
            probs = _sigmoid(logits)

            bce = float(np.sum(_softplus(logits) - x * logits)) / bsz
            kl = float(-0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar))) / bsz
            epoch_elbo.append(-(bce + kl))

            dlogits = (probs - x) / bsz
            grads_d, dz = vae.decoder.backward(cache_d, dlogits)
            dmu = dz + mu / bsz
            dlogvar = (dz * eps * 0.5 * sig + 0.5 * (np.exp(logvar) - 1.0) / bsz) * inside
            grads_m, dh_m = vae.mu_head.backward(cache_m, dmu)
            grads_v, dh_v = vae.logvar_head.backward(cache_v, dlogvar.astype(np.float32))
            grads_t, _ = vae.trunk.backward(cache_t, dh_m + dh_v)

            merged = {}
            for prefix, grads in (("trunk", grads_t), ("mu_head", grads_m),
                                  ("logvar_head", grads_v), ("decoder", grads_d)):
                for k, v in grads.items():
                    merged[f"{prefix}.{k}"] = v
            opt.step(merged)
        history.append(float(np.mean(epoch_elbo)))
    assert_finite(np.asarray(history), "vae elbo history")
    return history


def train_cgan(generator, discriminator, images, operator, config):
    """Alternating D / G steps with the non-saturating generator loss plus
    lambda-weighted L1; fresh z per example per step. Returns per-epoch
    histories {"d_loss", "g_adv", "g_rec"}."""
    x_all = _flatten_images(images).astype(np.float32)
    x_dim = x_all.shape[1]
    opt_g = Adam(generator.params, lr=config.learning_rate,
                 beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(discriminator.params, lr=config.learning_rate,
                 beta1=config.beta1, beta2=config.beta2)
    shuffle = RandomStream(config.seed, _SHUFFLE_ID)
    z_stream = RandomStream(config.seed, _LATENT_ID)
    n = len(x_all)
    steps = n // config.batch_size
    if steps < 1:
        raise ValueError("dataset smaller than one batch")
    history = {"d_loss": [], "g_adv": [], "g_rec": []}
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        d_losses, g_advs, g_recs = [], [], []
        for b in range(steps):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            xb = x_all[idx]
            bsz = len(xb)
            yb = _measure_flat(operator, xb, _batch_noise(config, epoch, b))
            m = yb.shape[1]
            z = z_stream.standard_normal((bsz, m), dtype=np.float32)
            fake, cache_g = generator.forward(np.concatenate([z, yb], axis=1), train=True)

            # discriminator ascent on log D(x,y) + log(1 - D(G(z,y),y))
            l_real, cache_r = discriminator.forward(np.concatenate([xb, yb], axis=1))
            l_fake, cache_f = discriminator.forward(np.concatenate([fake, yb], axis=1))
            d_loss = float(np.mean(_softplus(-l_real)) + np.mean(_softplus(l_fake)))
            grads_r, _ = discriminator.backward(cache_r, (_sigmoid(l_real) - 1.0) / bsz)
            grads_f, _ = discriminator.backward(cache_f, _sigmoid(l_fake) / bsz)
            opt_d.step({k: grads_r[k] + grads_f[k] for k in grads_r})

            # generator descent on -log D(G(z,y),y) + lambda * L1, against updated D
            l_fake2, cache_f2 = discriminator.forward(np.concatenate([fake, yb], axis=1))
            g_adv = float(np.mean(_softplus(-l_fake2)))
            _, d_in = discriminator.backward(cache_f2, (_sigmoid(l_fake2) - 1.0) / bsz)
            g_rec, dfake_rec = l1_loss_and_grad(fake, xb)
            dfake = d_in[:, :x_dim] + config.lambda_rec * dfake_rec
            grads_g, _ = generator.backward(cache_g, dfake)
            opt_g.step(grads_g)

            d_losses.append(d_loss)
            g_advs.append(g_adv)
            g_recs.append(g_rec)
        history["d_loss"].append(float(np.mean(d_losses)))
        history["g_adv"].append(float(np.mean(g_advs)))
        history["g_rec"].append(float(np.mean(g_recs)))
    for key, series in history.items():
        assert_finite(np.asarray(series), f"cgan {key} history")
    return history


def build_e2e(stream, y_dim=784, hidden=2048, x_dim=784, dtype=np.float32):
    return Network.initialize(e2e_specs(y_dim, hidden, x_dim), stream, dtype)


def build_cgan(stream, y_dim=784, hidden=2048, x_dim=784,
               d_widths=(1024, 512, 256), dtype=np.float32):
    gen = Network.initialize(generator_specs(y_dim, hidden, x_dim), stream.child(0), dtype)
    disc = Network.initialize(discriminator_specs(x_dim, y_dim, d_widths),
                              stream.child(1), dtype)
    return gen, disc
