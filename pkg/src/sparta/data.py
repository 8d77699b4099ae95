"""Datasets: CIFAR-10 binary ingestion, a seeded synthetic task, batching.

Pixels stay in [0, 255] everywhere; normalization belongs to the model.

Synthetic task layout.  Every class mean is mid-gray plus two
class-specific sign patterns, both mirror-symmetric left/right so that
horizontal flips keep an image in its class:

* a sparse *marker* on a few central pixels with amplitude ``margin / 2``
  (class means differ by ``margin`` there, far more than a 16-pixel attack
  budget can bridge), and
* a dense *texture* on every pixel with amplitude ``margin * texture``
  (small per pixel but spread over the whole image).

Gaussian noise is added and the result clipped to [0, 255].  Both features
separate the classes in the clean setting; only the marker survives an
L-infinity perturbation larger than the texture amplitude.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import seeding
from . import tensor as T

CIFAR_RECORD = 3073
CIFAR_SHAPE = (32, 32, 3)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise DatasetError(f"images must be N x H x W x C, got shape {images.shape}")
        if len(images) == 0:
            raise DatasetError("dataset is empty")
        if labels.shape != (len(images),):
            raise DatasetError(f"labels shape {labels.shape} does not match {len(images)} images")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DatasetError(f"labels must lie in [0, {self.class_count})")
        if images.min() < 0 or images.max() > 255:
            raise DatasetError("pixels must lie in [0, 255]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


# ------------------------------------------------------------------ CIFAR-10


def decode_cifar10(data: bytes) -> Dataset:
    """Decode the CIFAR-10 binary layout: label byte + R, G, B 32x32 planes."""
    if len(data) == 0 or len(data) % CIFAR_RECORD:
        raise DatasetError(f"truncated CIFAR-10 data: {len(data)} bytes is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetError(f"record {bad}: label byte {labels[bad]} is out of range 0..9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return Dataset(images.astype(np.float64), labels, 10)


def load_cifar10(path) -> Dataset:
    """Load one batch file, or every ``*.bin`` in a directory (sorted by name)."""
    path = Path(path)
    files = sorted(path.glob("*.bin")) if path.is_dir() else [path]
    if not files:
        raise DatasetError(f"no .bin files under {path}")
    parts = [decode_cifar10(f.read_bytes()) for f in files]
    if len(parts) == 1:
        return parts[0]
    return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), 10)


def encode_cifar10(ds: Dataset) -> bytes:
    """Inverse of :func:`decode_cifar10`; pixels must be integers in [0, 255]."""
    if ds.image_shape != CIFAR_SHAPE or ds.class_count > 10:
        raise DatasetError("CIFAR-10 layout needs 32x32x3 images and at most 10 classes")
    px = ds.images
    if not np.array_equal(px, np.round(px)):
        raise DatasetError("CIFAR-10 layout stores integer pixels only")
    planes = px.astype(np.uint8).transpose(0, 3, 1, 2).reshape(len(ds), -1)
    return np.concatenate([ds.labels.astype(np.uint8)[:, None], planes], axis=1).tobytes()


# ------------------------------------------------------------ generic files

_GENERIC_MAGIC = "sparta-dataset 1"


def save_dataset(ds: Dataset, path) -> None:
    """Two manifest lines then the images and labels tensors."""
    head = f"{_GENERIC_MAGIC}\nclasses {ds.class_count} count {len(ds)}\n".encode()
    buf = io.BytesIO()
    T.write_tensor(buf, ds.images)
    T.write_tensor(buf, ds.labels.astype(np.float64))
    Path(path).write_bytes(head + buf.getvalue())


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    fp = io.BytesIO(data)
    magic = fp.readline().decode(errors="replace").strip()
    if magic != _GENERIC_MAGIC:
        raise DatasetError(f"{path}: not a dataset file")
    fields = fp.readline().decode().split()
    meta = dict(zip(fields[::2], fields[1::2]))
    images = T.read_tensor(fp)
    labels = T.read_tensor(fp)
    if len(labels) != int(meta["count"]):
        raise DatasetError(f"{path}: manifest count {meta['count']} does not match {len(labels)} labels")
    return Dataset(images, labels.astype(np.int64), int(meta["classes"]))


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic classification task; ``seed`` fixes the class means."""

    class_count: int = 10
    samples_per_class: int = 200
    extent: tuple[int, int, int] = (8, 8, 3)
    seed: int = 0
    margin: float = 120.0
    noise: float = 25.0
    texture: float = 1.0 / 16.0
    marker_pixels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(int(d) for d in self.extent))
        if self.margin < 0:
            raise ValueError("margin must be >= 0 (0 gives identical classes)")
        if self.class_count < 2 or self.samples_per_class < 1:
            raise ValueError("need at least 2 classes and 1 sample per class")
        if self.noise < 0 or self.texture < 0:
            raise ValueError("noise and texture must be nonnegative")
        h, w, _ = self.extent
        if w < 2 or not 1 <= self.marker_pixels <= h * (w // 2):
            raise ValueError("marker does not fit the image")


def _mirror(half: np.ndarray, w: int) -> np.ndarray:
    """Build a W-wide map from its left ceil(W/2) columns, symmetric under flip."""
    right = half[:, : w // 2][:, ::-1]
    return np.concatenate([half, right], axis=1)[:, :w]


def synth_means(spec: SynthSpec) -> np.ndarray:
    """Class means, shape class_count x H x W x C."""
    h, w, c = spec.extent
    r = seeding.rng(spec.seed, "synth", "means")
    half_w = (w + 1) // 2
    k = spec.class_count
    # Marker: the rows/columns closest to the centre, left half, mirrored.
    cells = sorted(((abs(i - (h - 1) / 2), (w // 2 - 1) - j, i, j) for i in range(h) for j in range(w // 2)))
    marker = np.zeros((k, h, half_w, c))
    codes = _distinct_codes(r, k, spec.marker_pixels * c)
    for m, (_, _, i, j) in enumerate(cells[: spec.marker_pixels]):
        marker[:, i, j, :] = codes[:, m * c:(m + 1) * c]
    tex = r.choice([-1.0, 1.0], size=(k, h, half_w, c))
    mean = 127.5 + spec.margin / 2 * marker + spec.margin * spec.texture * tex * (marker == 0)
    return np.stack([_mirror(m, w) for m in mean])


def _distinct_codes(r: np.random.Generator, k: int, bits: int) -> np.ndarray:
    """k distinct random +-1 vectors of length ``bits`` (repeats only if 2**bits < k)."""
    n = 2 ** min(bits, 20)
    pick = r.permutation(n)[:k] if n >= k else r.integers(0, n, size=k)
    out = ((pick[:, None] >> np.arange(bits)[None, :] % 20) & 1).astype(np.float64)
    return 2 * out - 1


def make_synth(spec: SynthSpec, split: str = "train") -> Dataset:
    """Draw ``samples_per_class`` images per class; splits share class means."""
    means = synth_means(spec)
    r = seeding.rng(spec.seed, "synth", split)
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    labels = labels[r.permutation(len(labels))]
    x = means[labels] + r.normal(0.0, spec.noise, size=(len(labels), *spec.extent))
    return Dataset(np.clip(x, 0.0, 255.0), labels, spec.class_count)


# ------------------------------------------------------------------ batching


def batch_indices(n: int, batch_size: int, shuffle_seed: int | None) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(n) if shuffle_seed is None else seeding.rng(shuffle_seed, "shuffle").permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(ds: Dataset, batch_size: int, shuffle_seed: int | None = None,
            augment: bool = False) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of (images, labels); ``augment`` flips each image with p=0.5."""
    flip_rng = seeding.rng(0 if shuffle_seed is None else shuffle_seed, "flip")
    for idx in batch_indices(len(ds), batch_size, shuffle_seed):
        x = ds.images[idx]
        if augment:
            flip = flip_rng.random(len(idx)) < 0.5
            x = np.where(flip[:, None, None, None], x[:, :, ::-1, :], x)
        yield x, ds.labels[idx]
