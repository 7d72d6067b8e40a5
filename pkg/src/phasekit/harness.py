"""Experiment harness: config handling, weight archives, benchmark solves,
noise and measurement-count sweeps, and report emission.

Every command takes a plain config dict (usually parsed from JSON),
normalizes it against a strict schema (unknown fields are rejected at
every level), and stamps each CSV it writes with the sha256 of the
normalized config so outputs are traceable to their exact settings.
Randomness flows through per-sample streams keyed by subset position,
which makes reruns byte-identical and lets the alpha=0 column of a noise
sweep coincide exactly with a plain solve. Wall-clock timings go to a
separate .timing.csv sidecar so the main CSVs stay reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classical import ObjectConstraint, best_of_restarts, gerchberg_saxton, hio, raar
from .data import load_dataset, make_synthetic_dataset
from .evaluation import evaluate, gradient_magnitude_histogram
from .latentopt import LatentOptConfig, dpr_solve, prcgan_refine
from .measurement import NoiseConfig, make_operator, shot_noise, snr
from .models import TrainConfig, VAE, build_cgan, build_e2e, train_cgan, train_e2e, train_vae
from .nn import Network
from .numerics import RandomStream, l2_norm

_SOLVE_STREAM_ID = 41
_NOISE_STREAM_ID = 42
_TRAIN_INIT_STREAM_ID = 43

WORKERS_ENV = "PHASEKIT_WORKERS"
DATA_DIR_ENV = "PHASEKIT_DATA_DIR"

ARCHIVE_MAGIC = b"PKWA"
ARCHIVE_VERSION = 1
ARCHIVE_SUFFIX = ".pka"

METHODS = ("hio", "raar", "gs", "e2e", "dpr", "prcgan", "prcgan_star")
CLASSICAL_METHODS = ("hio", "raar", "gs")
TRAIN_METHODS = ("e2e", "vae", "prcgan")
DATASETS = ("mnist", "fashion-mnist", "synthetic")

# which archive kind a solve method loads
_MODEL_FOR_METHOD = {"e2e": "e2e", "dpr": "vae", "prcgan": "prcgan",
                     "prcgan_star": "prcgan"}

ROW_FIELDS = ("dataset", "method", "operator", "alpha", "m", "sample_index",
              "mse", "mae", "ssim", "residual", "snr",
              "delta_s", "delta_t", "rotated", "restart_index")


class ConfigError(ValueError):
    """Invalid experiment configuration; the CLI maps this to exit code 2."""


class ArchiveError(ValueError):
    """Unreadable or corrupted weight archive."""


# ------------------------------------------------------------------ config


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_checksum(config):
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def load_config(path, limit=None, seed=None, out=None):
    """Parse a JSON config file and apply CLI overrides."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    raw = dict(raw)
    if limit is not None:
        raw["limit"] = limit
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    return raw


def _section(raw, key, defaults, where):
    given = raw.get(key) or {}
    if not isinstance(given, dict):
        raise ConfigError(f"{where}.{key} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown fields in {where}.{key}: {sorted(unknown)}")
    return {**defaults, **given}


_TOP_KEYS = {"dataset", "data_dir", "method", "operator", "seed", "limit", "out",
             "register", "weights", "weights_dir", "solver", "latent_opt",
             "train", "noise", "measurements"}

_SOLVER_DEFAULTS = {"beta": None, "iters": 1000, "restarts": 3}
_LATENT_DEFAULTS = {"steps": 10000, "learning_rate": None, "restarts": 3,
                    "sign_flip_period": 100}
_NOISE_DEFAULTS = {"alphas": [], "count_scale": "auto"}
_MEAS_DEFAULTS = {"m_values": []}
_TRAIN_DEFAULTS = {"epochs": None, "batch_size": 64, "learning_rate": None,
                   "beta1": None, "beta2": 0.999, "lambda_rec": 1000.0,
                   "latent_dim": None, "hidden": None, "limit": None,
                   "noise_alpha": 0.0}

_DEFAULT_BETA = {"hio": 0.8, "raar": 0.87}


def _normalize(raw, for_train=False):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a dict")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown fields in config: {sorted(unknown)}")

    dataset = raw.get("dataset")
    if dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got {dataset!r}")
    method = raw.get("method")
    allowed = TRAIN_METHODS if for_train else METHODS
    if method not in allowed:
        raise ConfigError(f"method must be one of {allowed}, got {method!r}")

    descriptor = raw.get("operator")
    if not isinstance(descriptor, dict):
        raise ConfigError("operator descriptor is required")
    meas = raw.get("measurements")
    sweep_template = (
        not for_train
        and descriptor.get("kind") == "gaussian"
        and "m" not in descriptor
        and isinstance(meas, dict)
        and bool(meas.get("m_values"))
    )
    if not sweep_template:
        try:
            make_operator(descriptor)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad operator descriptor: {exc}")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    limit = raw.get("limit", 256)
    if limit is not None and (not isinstance(limit, int) or limit < 1):
        raise ConfigError("limit must be a positive integer")
    register = raw.get("register")
    if register is not None and not isinstance(register, bool):
        raise ConfigError("register must be true, false, or omitted for auto")

    cfg = {
        "dataset": dataset,
        "data_dir": raw.get("data_dir") or os.environ.get(DATA_DIR_ENV) or "data",
        "method": method,
        "operator": descriptor,
        "seed": seed,
        "limit": limit,
        "out": raw.get("out"),
        "register": register,
        "weights": raw.get("weights"),
        "weights_dir": raw.get("weights_dir") or "weights",
        "solver": _section(raw, "solver", _SOLVER_DEFAULTS, "config"),
        "latent_opt": _section(raw, "latent_opt", _LATENT_DEFAULTS, "config"),
        "train": _section(raw, "train", _TRAIN_DEFAULTS, "config"),
        "noise": _section(raw, "noise", _NOISE_DEFAULTS, "config"),
        "measurements": _section(raw, "measurements", _MEAS_DEFAULTS, "config"),
    }

    solver = cfg["solver"]
    if solver["beta"] is None and method in _DEFAULT_BETA:
        solver["beta"] = _DEFAULT_BETA[method]
    if method in ("hio", "raar"):
        hi = 2.0 if method == "hio" else 1.0
        if not 0.0 < solver["beta"] < hi:
            raise ConfigError(f"{method} beta must be in (0, {hi})")
    if solver["iters"] < 1 or solver["restarts"] < 1:
        raise ConfigError("solver iters and restarts must be >= 1")

    lat = cfg["latent_opt"]
    try:
        LatentOptConfig(steps=lat["steps"], learning_rate=lat["learning_rate"],
                        restarts=lat["restarts"],
                        sign_flip_period=lat["sign_flip_period"], seed=seed)
    except ValueError as exc:
        raise ConfigError(f"bad latent_opt section: {exc}")

    for alpha in cfg["noise"]["alphas"]:
        if not isinstance(alpha, (int, float)) or alpha < 0:
            raise ConfigError("noise alphas must be nonnegative numbers")
    scale = cfg["noise"]["count_scale"]
    if scale != "auto" and (not isinstance(scale, (int, float)) or scale <= 0):
        raise ConfigError('noise count_scale must be "auto" or a positive number')
    for m in cfg["measurements"]["m_values"]:
        if not isinstance(m, int) or m < 1:
            raise ConfigError("measurement m_values must be positive integers")
    return cfg


def operator_tag(descriptor):
    """Short filesystem-safe label used in archive and output names."""
    if descriptor["kind"] == "fourier2d":
        tag = f"f{descriptor['height']}x{descriptor['width']}"
        if descriptor.get("pad_factor", 1) != 1:
            tag += f"p{descriptor['pad_factor']}"
        return tag
    return f"g{descriptor['m']}x{descriptor['n']}s{descriptor['seed']}"


# ----------------------------------------------------------- weight archive


@dataclass
class WeightArchive:
    """Self-describing container for trained weights.

    Layout: magic, little-endian (version, header_len), canonical-JSON
    header, float32 little-endian blobs in the header's order, sha256 of
    everything before it. Identical training runs produce identical bytes.
    """

    model: str
    dataset: str
    operator: dict
    train_config: dict
    networks: dict
    meta: dict

    def _header_and_blobs(self):
        nets = {}
        blobs = []
        order = []
        for name in sorted(self.networks):
            net = self.networks[name]
            params = []
            for key in sorted(net.params):
                params.append([key, list(net.params[key].shape)])
                order.append([name, "params", key])
                blobs.append(net.params[key])
            buffers = []
            for key in sorted(net.buffers):
                buffers.append([key, list(net.buffers[key].shape)])
                order.append([name, "buffers", key])
                blobs.append(net.buffers[key])
            nets[name] = {"specs": net.specs, "params": params, "buffers": buffers}
        header = {
            "format_version": ARCHIVE_VERSION,
            "model": self.model,
            "dataset": self.dataset,
            "operator": self.operator,
            "train_config": self.train_config,
            "meta": self.meta,
            "networks": nets,
            "blob_order": order,
        }
        return header, blobs

    def save(self, path):
        """Write the archive; returns its sha256 checksum (hex)."""
        header, blobs = self._header_and_blobs()
        header_bytes = canonical_json(header).encode("utf-8")
        buf = io.BytesIO()
        buf.write(ARCHIVE_MAGIC)
        buf.write(struct.pack("<II", ARCHIVE_VERSION, len(header_bytes)))
        buf.write(header_bytes)
        for blob in blobs:
            buf.write(np.ascontiguousarray(blob, dtype="<f4").tobytes())
        digest = hashlib.sha256(buf.getvalue()).digest()
        buf.write(digest)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue())
        return digest.hex()

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise ArchiveError(f"weight archive not found: {path}")
        if len(data) < 44 or data[:4] != ARCHIVE_MAGIC:
            raise ArchiveError(f"not a weight archive: {path}")
        stored = data[-32:]
        if hashlib.sha256(data[:-32]).digest() != stored:
            raise ArchiveError(f"weight archive checksum mismatch: {path}")
        version, header_len = struct.unpack("<II", data[4:12])
        if version != ARCHIVE_VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        offset = 12 + header_len
        shapes = {}
        for name, net in header["networks"].items():
            for key, shape in net["params"]:
                shapes[(name, "params", key)] = tuple(shape)
            for key, shape in net["buffers"]:
                shapes[(name, "buffers", key)] = tuple(shape)
        arrays = {}
        for name, group, key in header["blob_order"]:
            shape = shapes[(name, group, key)]
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            arrays[(name, group, key)] = raw.reshape(shape).copy()
            offset += 4 * count
        if offset != len(data) - 32:
            raise ArchiveError(f"weight archive has trailing bytes: {path}")
        networks = {}
        for name, net in header["networks"].items():
            params = {k: arrays[(name, "params", k)] for k, _ in net["params"]}
            buffers = {k: arrays[(name, "buffers", k)] for k, _ in net["buffers"]}
            networks[name] = Network(net["specs"], params, buffers, np.float32)
        return cls(model=header["model"], dataset=header["dataset"],
                   operator=header["operator"], train_config=header["train_config"],
                   networks=networks, meta=header["meta"])

    def as_model(self):
        """Materialize the stored networks as the object solvers expect."""
        if self.model == "e2e":
            return self.networks["net"]
        if self.model == "vae":
            return VAE(self.networks["trunk"], self.networks["mu_head"],
                       self.networks["logvar_head"], self.networks["decoder"],
                       self.meta["latent_dim"])
        if self.model == "prcgan":
            return self.networks["generator"], self.networks["discriminator"]
        raise ArchiveError(f"unknown model kind {self.model!r}")


def weights_path_for(cfg, descriptor):
    if cfg["weights"]:
        return Path(cfg["weights"])
    model = _MODEL_FOR_METHOD.get(cfg["method"], cfg["method"])
    name = f"{model}_{cfg['dataset']}_{operator_tag(descriptor)}_seed{cfg['seed']}"
    return Path(cfg["weights_dir"]) / (name + ARCHIVE_SUFFIX)


def _check_provenance(archive, descriptor, path):
    # Compare normalized descriptors so an omitted default (pad_factor=1)
    # matches the same operator spelled out explicitly.
    trained = make_operator(archive.operator).descriptor()
    wanted = make_operator(descriptor).descriptor()
    if trained == wanted:
        return
    keys = sorted(set(trained) | set(wanted))
    diff = [
        f"  {k}: archive={trained.get(k)!r} config={wanted.get(k)!r}"
        for k in keys
        if trained.get(k) != wanted.get(k)
    ]
    raise ConfigError(
        f"weights at {path} were trained for a different operator:\n" + "\n".join(diff)
    )


# ------------------------------------------------------------ shared pieces


def _load_split(cfg, split, limit):
    if cfg["dataset"] == "synthetic":
        n = limit or (4096 if split == "train" else 256)
        return make_synthetic_dataset(n, seed=cfg["seed"], split=split)
    try:
        return load_dataset(cfg["dataset"], cfg["data_dir"], split=split, limit=limit)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))


def _effective_register(cfg, descriptor):
    if cfg["register"] is None:
        return descriptor["kind"] == "fourier2d"
    return cfg["register"]


def _count_scale(cfg, operator):
    scale = cfg["noise"]["count_scale"]
    if scale != "auto":
        return float(scale)
    if operator.kind == "fourier2d":
        return float(np.sqrt(operator.m))
    return 1.0


def _measure_clean(operator, images):
    return operator.apply(np.asarray(images, dtype=np.float64))


def _apply_noise(cfg, operator, y_clean, alpha, alpha_index):
    """Per-sample noisy measurements and SNRs; streams depend on the alpha
    grid position but never on alpha's value history."""
    if alpha == 0:
        return y_clean, [None] * len(y_clean)
    scale = _count_scale(cfg, operator)
    root = RandomStream(cfg["seed"], _NOISE_STREAM_ID, (alpha_index,))
    noisy = np.empty_like(y_clean)
    snrs = []
    for i in range(len(y_clean)):
        noise = NoiseConfig(alpha=float(alpha), stream=root.child(i),
                            count_scale=scale)
        noisy[i] = shot_noise(y_clean[i], noise)
        snrs.append(snr(y_clean[i], noisy[i]).snr)
    return noisy, snrs


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, checksum, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={checksum}", ",".join(fields)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(f)) for f in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _read_rows_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"rows file not found: {path}")
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigError(f"rows file is empty: {path}")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    rows = list(reader)
    missing = {"method", "sample_index", "mse", "mae", "ssim"} - set(reader.fieldnames or ())
    if missing:
        raise ConfigError(f"rows file lacks columns {sorted(missing)}: {path}")
    return rows


def _metric_rows(cfg, dataset, op_tag, m_count, alpha, images, recons,
                 residuals, restart_indices, register, snrs):
    rows = []
    for i in range(len(images)):
        rec = evaluate(images[i], recons[i], align=register)
        reg = rec.registration
        rows.append({
            "dataset": dataset, "method": cfg["method"], "operator": op_tag,
            "alpha": float(alpha), "m": m_count, "sample_index": i,
            "mse": rec.mse, "mae": rec.mae, "ssim": rec.ssim,
            "residual": float(residuals[i]), "snr": snrs[i],
            "delta_s": reg.delta_s, "delta_t": reg.delta_t,
            "rotated": reg.rotated, "restart_index": int(restart_indices[i]),
        })
    defined = [s for s in snrs if s is not None]
    summary = {
        "dataset": dataset, "method": cfg["method"], "operator": op_tag,
        "alpha": float(alpha), "m": m_count, "sample_index": -1,
        "mse": float(np.mean([r["mse"] for r in rows])),
        "mae": float(np.mean([r["mae"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "residual": float(np.mean([r["residual"] for r in rows])),
        "snr": float(np.mean(defined)) if defined else None,
        "delta_s": None, "delta_t": None, "rotated": None, "restart_index": None,
    }
    return rows, summary


# ------------------------------------------------------------ method engines


def _classical_chunk(payload):
    """Worker-safe batch of classical solves (top level for pickling)."""
    descriptor, method, beta, iters, restarts, seed, indices, ys = payload
    operator = make_operator(descriptor)
    h, w = operator.height, operator.width
    if operator.pad_factor > 1:
        constraint = ObjectConstraint.padded_corner((h, w), operator.pad_factor)
    else:
        constraint = ObjectConstraint.full_frame((h, w))
    out = []
    for idx, y in zip(indices, ys):
        if method == "hio":
            def solve(s, y=y):
                return hio(y, constraint, beta, iters, s)
        elif method == "raar":
            def solve(s, y=y):
                return raar(y, constraint, beta, iters, s)
        else:
            def solve(s, y=y):
                return gerchberg_saxton(y, constraint, iters, s)
        started = time.perf_counter()
        stream = RandomStream(seed, _SOLVE_STREAM_ID).child(idx)
        result = best_of_restarts(solve, restarts, stream)
        elapsed = (time.perf_counter() - started) * 1000.0
        out.append((idx, result.x_hat[:h, :w], result.residual,
                    result.restart_index, elapsed))
    return out


def _worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _solve_classical(cfg, descriptor, y_batch):
    solver = cfg["solver"]
    n = len(y_batch)
    indices = list(range(n))
    workers = _worker_count()
    payloads = []
    chunk = max(1, (n + workers - 1) // workers)
    for start in range(0, n, chunk):
        payloads.append((descriptor, cfg["method"], solver["beta"], solver["iters"],
                         solver["restarts"], cfg["seed"],
                         indices[start : start + chunk],
                         [y_batch[i] for i in indices[start : start + chunk]]))
    if workers == 1 or len(payloads) == 1:
        chunks = [_classical_chunk(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_classical_chunk, payloads))
    merged = sorted((item for chunk_out in chunks for item in chunk_out),
                    key=lambda item: item[0])
    recons = np.stack([item[1] for item in merged])
    residuals = [item[2] for item in merged]
    restarts = [item[3] for item in merged]
    timings = [item[4] for item in merged]
    return recons, residuals, restarts, timings


def _solve_e2e(cfg, operator, archive, y_batch, image_shape):
    net = archive.as_model()
    n = len(y_batch)
    y_flat = np.asarray(y_batch, dtype=np.float32).reshape(n, -1)
    if y_flat.shape[1] != net.input_dim:
        raise ConfigError(
            f"weights expect {net.input_dim} measurements, operator yields {y_flat.shape[1]}"
        )
    started = time.perf_counter()
    out, _ = net.forward(y_flat)
    recons = out.astype(np.float64).reshape((n,) + image_shape)
    measured = operator.apply(recons)
    residuals = [
        float(l2_norm(measured[i] - np.asarray(y_batch[i], dtype=np.float64)))
        for i in range(n)
    ]
    per_sample = (time.perf_counter() - started) * 1000.0 / n
    return recons, residuals, [0] * n, [per_sample] * n


def _latent_config(cfg, steps=None, restarts=None):
    lat = cfg["latent_opt"]
    return LatentOptConfig(
        steps=lat["steps"] if steps is None else steps,
        learning_rate=lat["learning_rate"],
        restarts=lat["restarts"] if restarts is None else restarts,
        sign_flip_period=lat["sign_flip_period"],
        seed=cfg["seed"],
    )


def _solve_latent(cfg, operator, archive, y_batch, image_shape):
    started = time.perf_counter()
    if cfg["method"] == "dpr":
        result = dpr_solve(archive.as_model(), operator, y_batch, _latent_config(cfg))
    else:
        generator, _ = archive.as_model()
        if cfg["method"] == "prcgan":
            # plain conditional sampling: the degenerate zero-step refinement
            config = _latent_config(cfg, steps=0, restarts=1)
        else:
            config = _latent_config(cfg)
        result = prcgan_refine(generator, operator, y_batch, config)
    n = len(y_batch)
    recons = np.asarray(result.x_hat, dtype=np.float64).reshape((n,) + image_shape)
    per_sample = (time.perf_counter() - started) * 1000.0 / n
    restart_idx = np.atleast_1d(result.restart_index)
    finals = np.atleast_1d(result.final_residual)
    return recons, list(finals), list(restart_idx), [per_sample] * n


def _load_archive_for(cfg, descriptor):
    path = weights_path_for(cfg, descriptor)
    archive = WeightArchive.load(path)
    expected = _MODEL_FOR_METHOD[cfg["method"]]
    if archive.model != expected:
        raise ConfigError(
            f"weights at {path} hold a {archive.model!r} model, method "
            f"{cfg['method']!r} needs {expected!r}"
        )
    _check_provenance(archive, descriptor, path)
    return archive


def _run_cells(cfg, dataset, operator, descriptor, alphas):
    """Solve the subset at each alpha; returns (rows, recons-at-first-alpha,
    originals, timing rows)."""
    register = _effective_register(cfg, descriptor)
    op_tag = operator_tag(descriptor)
    images = dataset.images.astype(np.float64)
    y_clean = _measure_clean(operator, images)
    archive = None
    if cfg["method"] not in CLASSICAL_METHODS:
        archive = _load_archive_for(cfg, descriptor)
    elif descriptor["kind"] != "fourier2d":
        raise ConfigError("classical solvers operate on Fourier magnitudes only")

    all_rows = []
    timing_rows = []
    first_recons = None
    for alpha_index, alpha in enumerate(alphas):
        y_used, snrs = _apply_noise(cfg, operator, y_clean, alpha, alpha_index)
        if cfg["method"] in CLASSICAL_METHODS:
            recons, residuals, restarts, timings = _solve_classical(
                cfg, descriptor, y_used)
        elif cfg["method"] == "e2e":
            recons, residuals, restarts, timings = _solve_e2e(
                cfg, operator, archive, y_used, dataset.image_shape)
        else:
            recons, residuals, restarts, timings = _solve_latent(
                cfg, operator, archive, y_used, dataset.image_shape)
        rows, summary = _metric_rows(cfg, dataset.name, op_tag, operator.m, alpha,
                                     images, recons, residuals, restarts,
                                     register, snrs)
        all_rows.extend(rows)
        all_rows.append(summary)
        for i, ms in enumerate(timings):
            timing_rows.append({"alpha": float(alpha), "m": operator.m,
                                "sample_index": i, "wall_time_ms": ms})
        if first_recons is None:
            first_recons = recons
    return all_rows, first_recons, images, timing_rows


def _default_out(cfg, descriptor, kind):
    name = f"{kind}_{cfg['method']}_{cfg['dataset']}_{operator_tag(descriptor)}_seed{cfg['seed']}.csv"
    return Path("results") / name


def _write_timing(out, checksum, timing_rows):
    fields = ("alpha", "m", "sample_index", "wall_time_ms")
    _write_csv(str(out) + ".timing.csv", checksum, fields, timing_rows)


# ---------------------------------------------------------------- commands


def cmd_solve(raw_config):
    """Run one method over the test subset; writes rows CSV plus recon/orig
    stacks for report histograms and a timing sidecar."""
    cfg = _normalize(raw_config)
    checksum = config_checksum(cfg)
    descriptor = cfg["operator"]
    operator = make_operator(descriptor)
    dataset = _load_split(cfg, "test", cfg["limit"])
    rows, recons, images, timing = _run_cells(cfg, dataset, operator, descriptor,
                                              alphas=[0.0])
    out = Path(cfg["out"]) if cfg["out"] else _default_out(cfg, descriptor, "solve")
    _write_csv(out, checksum, ROW_FIELDS, rows)
    np.save(out.with_name(out.stem + "_recon.npy"),
            recons.astype(np.float32))
    np.save(out.with_name(out.stem + "_orig.npy"),
            images.astype(np.float32))
    _write_timing(out, checksum, timing)
    return out


def cmd_sweep_noise(raw_config):
    """Solve at each alpha in the grid; alpha=0 rows match cmd_solve exactly."""
    cfg = _normalize(raw_config)
    alphas = cfg["noise"]["alphas"]
    if not alphas:
        raise ConfigError("sweep-noise needs a nonempty noise.alphas list")
    checksum = config_checksum(cfg)
    descriptor = cfg["operator"]
    operator = make_operator(descriptor)
    dataset = _load_split(cfg, "test", cfg["limit"])
    rows, _, _, timing = _run_cells(cfg, dataset, operator, descriptor,
                                    alphas=[float(a) for a in alphas])
    out = Path(cfg["out"]) if cfg["out"] else _default_out(cfg, descriptor, "noise")
    _write_csv(out, checksum, ROW_FIELDS, rows)
    _write_timing(out, checksum, timing)
    return out


def cmd_sweep_measurements(raw_config):
    """Gaussian compressive sweep over m; per-m weights resolve by name, and a
    failing cell records an error row instead of aborting the grid."""
    cfg = _normalize(raw_config)
    m_values = cfg["measurements"]["m_values"]
    if not m_values:
        raise ConfigError("sweep-measurements needs a nonempty measurements.m_values list")
    template = cfg["operator"]
    if template.get("kind") != "gaussian":
        raise ConfigError("sweep-measurements needs a gaussian operator template")
    if "m" in template:
        raise ConfigError("omit operator.m; it comes from measurements.m_values")
    if cfg["method"] in CLASSICAL_METHODS:
        raise ConfigError("classical solvers operate on Fourier magnitudes only")
    checksum = config_checksum(cfg)
    dataset = _load_split(cfg, "test", cfg["limit"])
    all_rows = []
    error_rows = []
    timing = []
    for m in m_values:
        descriptor = {**template, "m": int(m)}
        try:
            operator = make_operator(descriptor)
            rows, _, _, cell_timing = _run_cells(cfg, dataset, operator, descriptor,
                                                 alphas=[0.0])
        except (ConfigError, ArchiveError, ValueError) as exc:
            error_rows.append({"m": int(m), "error": str(exc)})
            continue
        for row in cell_timing:
            row["m"] = operator.m
        all_rows.extend(rows)
        timing.extend(cell_timing)
    out = Path(cfg["out"]) if cfg["out"] else Path("results") / (
        f"measurements_{cfg['method']}_{cfg['dataset']}_seed{cfg['seed']}.csv")
    _write_csv(out, checksum, ROW_FIELDS, all_rows)
    _write_timing(out, checksum, timing)
    if error_rows:
        _write_csv(str(out) + ".errors.csv", checksum, ("m", "error"), error_rows)
    return out


_REPORT_KEYS = {"rows", "out", "bins", "limit", "seed"}
_HIST_BINS_DEFAULT = 32


def cmd_report(raw_config):
    """Aggregate a rows CSV per method and emit gradient-magnitude histogram
    mass (columns sum to 1) from the solve's saved recon/orig stacks."""
    if isinstance(raw_config, (str, Path)):
        raw_config = {"rows": str(raw_config)}
    unknown = set(raw_config) - _REPORT_KEYS
    if unknown:
        raise ConfigError(f"unknown fields in config: {sorted(unknown)}")
    rows_path = raw_config.get("rows")
    if not rows_path:
        raise ConfigError("report config needs a rows path")
    bins = raw_config.get("bins", _HIST_BINS_DEFAULT)
    if not isinstance(bins, int) or bins < 2:
        raise ConfigError("bins must be an integer >= 2")
    cfg = {"rows": str(rows_path), "bins": bins}
    checksum = config_checksum(cfg)

    rows = _read_rows_csv(rows_path)
    by_method = {}
    for row in rows:
        try:
            if int(row["sample_index"]) < 0:
                continue
            by_method.setdefault(row["method"], []).append(
                (float(row["mse"]), float(row["mae"]), float(row["ssim"])))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"malformed row in {rows_path}: {row}")
    if not by_method:
        raise ConfigError(f"no sample rows in {rows_path}")
    summary_rows = []
    for method in sorted(by_method):
        triples = np.asarray(by_method[method], dtype=np.float64)
        summary_rows.append({
            "method": method, "samples": len(triples),
            "mse": float(triples[:, 0].mean()),
            "mae": float(triples[:, 1].mean()),
            "ssim": float(triples[:, 2].mean()),
        })
    rows_file = Path(rows_path)
    out = Path(raw_config.get("out") or
               rows_file.with_name(rows_file.stem + "_report.csv"))
    _write_csv(out, checksum, ("method", "samples", "mse", "mae", "ssim"),
               summary_rows)

    stacks = {}
    recon_path = rows_file.with_name(rows_file.stem + "_recon.npy")
    orig_path = rows_file.with_name(rows_file.stem + "_orig.npy")
    if orig_path.exists():
        stacks["original"] = np.load(orig_path)
    if recon_path.exists() and len(by_method) == 1:
        stacks[next(iter(by_method))] = np.load(recon_path)
    if stacks:
        columns = sorted(stacks)
        table = {}
        edges = None
        for name in columns:
            mass, edges = gradient_magnitude_histogram(
                stacks[name].astype(np.float64), bins=bins)
            table[name] = mass
        hist_rows = []
        for b in range(bins):
            row = {"bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1])}
            for name in columns:
                row[name] = float(table[name][b])
            hist_rows.append(row)
        _write_csv(out.with_name(out.stem + "_hist.csv"), checksum,
                   ["bin_lo", "bin_hi"] + columns, hist_rows)
    return out


def _train_defaults_for(method):
    if method == "prcgan":
        return {"learning_rate": 2e-4, "beta1": 0.5, "epochs": 50}
    if method == "vae":
        return {"learning_rate": 1e-3, "beta1": 0.9, "epochs": 100}
    return {"learning_rate": 1e-3, "beta1": 0.9, "epochs": 50}


def cmd_train(raw_config):
    """Train one model and persist it as a weight archive plus a per-epoch
    loss-history CSV."""
    cfg = _normalize(raw_config, for_train=True)
    checksum = config_checksum(cfg)
    descriptor = cfg["operator"]
    operator = make_operator(descriptor)
    section = cfg["train"]
    defaults = _train_defaults_for(cfg["method"])
    scale = _count_scale(cfg, operator)
    train_config = TrainConfig(
        epochs=section["epochs"] or defaults["epochs"],
        batch_size=section["batch_size"],
        learning_rate=section["learning_rate"] or defaults["learning_rate"],
        beta1=defaults["beta1"] if section["beta1"] is None else section["beta1"],
        beta2=section["beta2"],
        lambda_rec=section["lambda_rec"],
        seed=cfg["seed"],
        noise_alpha=section["noise_alpha"],
        noise_count_scale=scale if section["noise_alpha"] > 0 else 1.0,
        operator=descriptor,
    )
    dataset = _load_split(cfg, "train", section["limit"])
    images = dataset.images
    init_stream = RandomStream(cfg["seed"], _TRAIN_INIT_STREAM_ID)
    meta = {}

    if cfg["method"] == "e2e":
        hidden = section["hidden"] or 2048
        net = build_e2e(init_stream, y_dim=operator.m, hidden=hidden,
                        x_dim=operator.n)
        history = {"loss": train_e2e(net, images, operator, train_config)}
        networks = {"net": net}
    elif cfg["method"] == "vae":
        latent = section["latent_dim"] or (
            128 if descriptor["kind"] == "fourier2d" else 20)
        hidden = section["hidden"] or 500
        model = VAE.build(latent, init_stream, x_dim=operator.n, hidden=hidden)
        history = {"elbo": train_vae(model, images, train_config)}
        networks = dict(model.networks)
        meta["latent_dim"] = latent
    else:
        hidden = section["hidden"] or 2048
        d_widths = tuple(max(1, hidden // (2 ** k)) for k in (1, 2, 3))
        gen, disc = build_cgan(init_stream, y_dim=operator.m, hidden=hidden,
                               x_dim=operator.n, d_widths=d_widths)
        history = train_cgan(gen, disc, images, operator, train_config)
        networks = {"generator": gen, "discriminator": disc}
        meta["y_dim"] = operator.m

    archive = WeightArchive(model=cfg["method"], dataset=cfg["dataset"],
                            operator=descriptor,
                            train_config=train_config.to_dict(),
                            networks=networks, meta=meta)
    out = Path(cfg["out"]) if cfg["out"] else weights_path_for(
        {**cfg, "weights": None}, descriptor)
    archive.save(out)

    series = sorted(history)
    epochs = len(history[series[0]])
    hist_rows = [
        {"epoch": e, **{name: history[name][e] for name in series}}
        for e in range(epochs)
    ]
    _write_csv(out.with_name(out.stem + "_history.csv"), checksum,
               ["epoch"] + series, hist_rows)
    return out
