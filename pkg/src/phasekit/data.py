"""Dataset ingestion and measurement caching.

Reads the standard big-endian IDX containers (plain or gzipped), exposes
train / test-subset splits with pixels scaled to [0,1], generates a
deterministic synthetic stroke-digit set for data-free runs, and persists
per-sample measurements in a checksummed binary cache so experiments can
be recomputed bit-exactly.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measurement import shot_noise
from .numerics import RandomStream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
TEST_SUBSET_SIZE = 1024

_FILE_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Malformed IDX container; message states which contract was broken."""


class CacheIntegrityError(ValueError):
    """Measurement cache failed its checksum or structural validation."""


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count, what, path):
    data = fh.read(count)
    if len(data) != count:
        raise IdxFormatError(
            f"{path}: truncated payload reading {what} "
            f"(wanted {count} bytes, got {len(data)})"
        )
    return data


def load_idx_images(path):
    """Parse an IDX image file into a float32 (N, H, W) array scaled by 1/255."""
    path = str(path)
    with _open_maybe_gzip(path) as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, "magic", path))[0]
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected image magic 0x{IDX_IMAGE_MAGIC:08x}"
            )
        n, h, w = struct.unpack(">iii", _read_exact(fh, 12, "dimensions", path))
        if n < 0 or h < 1 or w < 1:
            raise IdxFormatError(f"{path}: nonsensical dimensions ({n}, {h}, {w})")
        raw = _read_exact(fh, n * h * w, f"{n} {h}x{w} images", path)
        extra = fh.read(1)
        if extra:
            raise IdxFormatError(f"{path}: trailing bytes after declared payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w)
    return pixels.astype(np.float32) / 255.0


def load_idx_labels(path):
    """Parse an IDX label file into a uint8 (N,) array."""
    path = str(path)
    with _open_maybe_gzip(path) as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, "magic", path))[0]
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected label magic 0x{IDX_LABEL_MAGIC:08x}"
            )
        n = struct.unpack(">i", _read_exact(fh, 4, "count", path))[0]
        raw = _read_exact(fh, n, f"{n} labels", path)
    return np.frombuffer(raw, dtype=np.uint8).copy()


@dataclass
class Dataset:
    name: str
    split: str
    images: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError("images must be (N, H, W)")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise IdxFormatError(
                f"dimension mismatch: {len(self.images)} images vs {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def _find_file(data_dir, name, base):
    candidates = []
    for parent in (Path(data_dir) / name, Path(data_dir)):
        for suffix in ("", ".gz"):
            candidates.append(parent / (base + suffix))
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(
        f"no {base}[.gz] for dataset {name!r} under {data_dir} "
        f"(looked in {data_dir}/{name}/ and {data_dir}/)"
    )


def load_dataset(name, data_dir, split="test", limit=None):
    """Load mnist / fashion-mnist from IDX files.

    The test split is the first TEST_SUBSET_SIZE images of the test file in
    file order; `limit` then truncates further. Images must be 28x28.
    Labels load when the companion file exists and are otherwise None.
    """
    if name not in ("mnist", "fashion-mnist"):
        raise ValueError(f"unknown dataset {name!r} (expected mnist or fashion-mnist)")
    if split not in _FILE_NAMES:
        raise ValueError(f"unknown split {split!r}")
    image_base, label_base = _FILE_NAMES[split]
    images = load_idx_images(_find_file(data_dir, name, image_base))
    if images.shape[1:] != (28, 28):
        raise IdxFormatError(
            f"dimension mismatch: {name} images are {images.shape[1]}x{images.shape[2]}, expected 28x28"
        )
    labels = None
    try:
        labels = load_idx_labels(_find_file(data_dir, name, label_base))
    except FileNotFoundError:
        pass
    if labels is not None and len(labels) != len(images):
        raise IdxFormatError(
            f"dimension mismatch: {len(images)} images vs {len(labels)} labels"
        )
    if split == "test":
        images = images[:TEST_SUBSET_SIZE]
        labels = labels[:TEST_SUBSET_SIZE] if labels is not None else None
    if limit is not None:
        limit = int(limit)
        images = images[:limit]
        labels = labels[:limit] if labels is not None else None
    return Dataset(name=name, split=split, images=images, labels=labels)


def _segment_distance(rows, cols, p, q):
    v = q - p
    denom = float(v @ v) + 1e-12
    t = np.clip(((rows - p[0]) * v[0] + (cols - p[1]) * v[1]) / denom, 0.0, 1.0)
    return np.hypot(rows - (p[0] + t * v[0]), cols - (p[1] + t * v[1]))


def make_synthetic_digits(n, stream, size=28):
    """Deterministic stroke images: a few joined line segments with soft
    Gaussian profiles, loosely digit-like in sparsity and mean intensity."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.zeros((n, size, size), dtype=np.float32)
    margin = max(2, size // 7)
    span = size - 2 * margin
    for i in range(n):
        s = stream.child(i)
        n_pts = 3 + int(s.integers(0, 3))
        pts = margin + s.uniform((n_pts, 2)) * span
        width = 0.8 + 0.7 * float(s.uniform(()))
        canvas = np.zeros((size, size))
        for k in range(n_pts - 1):
            d = _segment_distance(rows, cols, pts[k], pts[k + 1])
            canvas = np.maximum(canvas, np.exp(-0.5 * (d / width) ** 2))
        images[i] = np.clip((canvas - 0.05) / 0.95, 0.0, 1.0).astype(np.float32)
    return images


def make_synthetic_dataset(n, seed, split="test"):
    """Data-free stand-in dataset; same seed gives the same images forever.

    Splits draw from disjoint streams so train and test never share an image.
    """
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    stream = RandomStream(seed, stream_id=771, path=(0 if split == "train" else 1,))
    images = make_synthetic_digits(int(n), stream)
    return Dataset(name="synthetic", split=split, images=images, labels=None)


_CACHE_MAGIC = b"PKMC"
_CACHE_VERSION = 1


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class MeasurementCache:
    """Per-sample measurements plus the provenance needed to recompute them.

    descriptor holds the dataset identity, operator descriptor, noise
    settings and shapes; y (and y_noisy when present) are float32.
    """

    descriptor: dict
    y: np.ndarray
    y_noisy: np.ndarray | None = None

    def save(self, path):
        header = dict(self.descriptor)
        header["shape"] = list(self.y.shape)
        header["has_noisy"] = self.y_noisy is not None
        header_bytes = _canonical_json(header).encode("ascii")
        blob = bytearray()
        blob += _CACHE_MAGIC
        blob += struct.pack("<II", _CACHE_VERSION, len(header_bytes))
        blob += header_bytes
        blob += np.ascontiguousarray(self.y, dtype="<f4").tobytes()
        if self.y_noisy is not None:
            blob += np.ascontiguousarray(self.y_noisy, dtype="<f4").tobytes()
        digest = hashlib.sha256(bytes(blob)).digest()
        blob += digest
        Path(path).write_bytes(bytes(blob))

    @classmethod
    def load(cls, path):
        blob = Path(path).read_bytes()
        if len(blob) < 44 or blob[:4] != _CACHE_MAGIC:
            raise CacheIntegrityError(f"{path}: not a measurement cache")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise CacheIntegrityError(f"{path}: checksum mismatch")
        version, header_len = struct.unpack("<II", body[4:12])
        if version != _CACHE_VERSION:
            raise CacheIntegrityError(f"{path}: unsupported cache version {version}")
        header = json.loads(body[12 : 12 + header_len].decode("ascii"))
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        payload = body[12 + header_len :]
        expected = count * 4 * (2 if header["has_noisy"] else 1)
        if len(payload) != expected:
            raise CacheIntegrityError(f"{path}: payload size {len(payload)} != {expected}")
        y = np.frombuffer(payload[: count * 4], dtype="<f4").reshape(shape).copy()
        y_noisy = None
        if header["has_noisy"]:
            y_noisy = np.frombuffer(payload[count * 4 :], dtype="<f4").reshape(shape).copy()
        descriptor = {k: v for k, v in header.items() if k not in ("shape", "has_noisy")}
        return cls(descriptor=descriptor, y=y, y_noisy=y_noisy)


def build_measurements(dataset, operator, noise=None):
    """Measure every image; with a NoiseConfig, also store noisy copies.

    Noise streams are derived per sample (config.stream.child(i)), so any
    single entry is recomputable without replaying the whole set.
    """
    y = operator.apply(dataset.images.astype(np.float64)).astype(np.float32)
    descriptor = {
        "dataset": dataset.name,
        "split": dataset.split,
        "n": len(dataset),
        "operator": operator.descriptor(),
        "alpha": None,
        "count_scale": None,
        "noise_stream": None,
    }
    y_noisy = None
    if noise is not None and noise.alpha > 0:
        from .measurement import NoiseConfig

        y_noisy = np.empty_like(y)
        for i in range(len(dataset)):
            per_sample = NoiseConfig(
                alpha=noise.alpha,
                stream=noise.stream.child(i),
                count_scale=noise.count_scale,
            )
            y_noisy[i] = shot_noise(y[i].astype(np.float64), per_sample).astype(np.float32)
        descriptor["alpha"] = noise.alpha
        descriptor["count_scale"] = noise.count_scale
        descriptor["noise_stream"] = [noise.stream.seed, noise.stream.stream_id,
                                      *noise.stream.path]
    return MeasurementCache(descriptor=descriptor, y=y, y_noisy=y_noisy)
