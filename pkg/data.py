# data.py
"""
CIFAR-10 binary-batch ingestion, normalization statistics and the
pad-crop-flip augmentation pipeline with seeded, epoch-dependent shuffling.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from config import Config
from utils.errors import DatasetError
from utils.hashing import files_sha256

log = logging.getLogger(__name__)

TRAIN_FILES      = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES       = ["test_batch.bin"]
IMAGE_SHAPE      = (3, 32, 32)
IMAGE_BYTES      = 3 * 32 * 32
RECORD_BYTES     = 1 + IMAGE_BYTES
RECORDS_PER_FILE = 10_000
NUM_CLASSES      = 10


# ---------- types ----------
@dataclass
class Cifar10Set:
    images: np.ndarray          # (N, 3, 32, 32) float32 in [0, 1]
    labels: np.ndarray          # (N,) int64 in 0..9
    split:  str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got '{self.split}'")
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"images must be (N, 3, 32, 32), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"labels shape {self.labels.shape} does not match {self.images.shape[0]} images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValueError("labels must lie in 0..9")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class AugmentConfig:
    pad:       int = Config.AUG_PAD
    flip_prob: float = Config.AUG_FLIP_PROB
    mean:      tuple[float, float, float] = (0.0, 0.0, 0.0)
    std:       tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be within [0, 1], got {self.flip_prob}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std need one value per channel")
        if min(self.std) <= 0:
            raise ValueError(f"std must be positive, got {self.std}")

    def with_stats(self, mean, std) -> "AugmentConfig":
        return AugmentConfig(self.pad, self.flip_prob, tuple(float(m) for m in mean), tuple(float(s) for s in std))


# ---------- loading ----------
def split_files(split: str) -> list[str]:
    if split == "train":
        return TRAIN_FILES
    if split == "test":
        return TEST_FILES
    raise ValueError(f"split must be 'train' or 'test', got '{split}'")


def _read_batch_file(path: str, records_per_file: int | None) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    whole = raw.size // RECORD_BYTES
    if raw.size % RECORD_BYTES:
        raise DatasetError(
            f"truncated record ({raw.size % RECORD_BYTES} of {RECORD_BYTES} bytes)", path, whole * RECORD_BYTES
        )
    if records_per_file is not None and whole != records_per_file:
        raise DatasetError(f"expected {records_per_file} records, found {whole}", path)
    records = raw.reshape(whole, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DatasetError(f"label byte {labels[i]} out of range 0..9 in record {i}", path, i * RECORD_BYTES)
    images = records[:, 1:].reshape(whole, *IMAGE_SHAPE).astype(np.float32) / np.float32(255.0)
    return images, labels


def load_cifar10_bin(path: str, split: str = "train", records_per_file: int | None = RECORDS_PER_FILE) -> Cifar10Set:
    """Read the canonical binary batches of one split from ``path``.
    ``records_per_file=None`` accepts files of any whole record count."""
    names = split_files(split)
    missing = [n for n in names if not os.path.isfile(os.path.join(path, n))]
    if missing:
        raise DatasetError(f"missing CIFAR-10 files {missing}; expected {names} under {path}", path)

    images, labels = [], []
    for name in names:
        imgs, labs = _read_batch_file(os.path.join(path, name), records_per_file)
        images.append(imgs)
        labels.append(labs)
    ds = Cifar10Set(np.concatenate(images), np.concatenate(labels), split)
    log.info("loaded CIFAR-10 %s split: %d images from %s", split, len(ds), path)
    return ds


def encode_record(image: np.ndarray, label: int) -> bytes:
    """Inverse of the loader for one record (label byte + R, G, B planes)."""
    pixels = np.rint(np.asarray(image, dtype=np.float64) * 255.0).astype(np.uint8)
    return bytes([int(label)]) + pixels.reshape(-1).tobytes()


def dataset_checksum(path: str, split: str = "train") -> str:
    return files_sha256(os.path.join(path, name) for name in split_files(split))


def subset(ds: Cifar10Set, n: int | None, seed: int = Config.SEED) -> Cifar10Set:
    if n is None or n >= len(ds):
        return ds
    if n < 1:
        raise ValueError(f"subset size must be >= 1, got {n}")
    idx = np.sort(np.random.default_rng(seed).permutation(len(ds))[:n])
    return Cifar10Set(ds.images[idx], ds.labels[idx], ds.split)


# ---------- normalization stats ----------
def compute_norm_stats(train: Cifar10Set, chunk: int = 5000) -> tuple[np.ndarray, np.ndarray]:
    if len(train) == 0:
        raise ValueError("compute_norm_stats: empty dataset")
    count = len(train) * IMAGE_SHAPE[1] * IMAGE_SHAPE[2]
    total = np.zeros(3)
    for i in range(0, len(train), chunk):
        total += train.images[i:i + chunk].sum(axis=(0, 2, 3), dtype=np.float64)
    mean = total / count
    sq = np.zeros(3)
    for i in range(0, len(train), chunk):
        d = train.images[i:i + chunk].astype(np.float64) - mean[None, :, None, None]
        sq += (d * d).sum(axis=(0, 2, 3))
    std = np.sqrt(sq / count)
    if np.any(std <= 0):
        raise ValueError(f"compute_norm_stats: degenerate channel std {std.tolist()}")
    return mean, std


def save_norm_stats(path: str, mean, std, checksum: str | None = None) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"mean": [float(m) for m in mean], "std": [float(s) for s in std], "source_sha256": checksum},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_norm_stats(path: str, checksum: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    if checksum is not None and d.get("source_sha256") not in (None, checksum):
        raise ValueError(f"{path}: stats were computed from different source files")
    return np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64)


def norm_stats_for(data_dir: str, train: Cifar10Set, cache_dir: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cached per-channel statistics of the training split."""
    cache = os.path.join(cache_dir or data_dir, Config.NORM_STATS_FILE)
    try:
        checksum = dataset_checksum(data_dir, "train")
    except OSError:
        checksum = None
    if os.path.isfile(cache):
        try:
            return load_norm_stats(cache, checksum)
        except (ValueError, KeyError):
            log.warning("ignoring stale normalization stats at %s", cache)
    mean, std = compute_norm_stats(train)
    try:
        save_norm_stats(cache, mean, std, checksum)
    except OSError as e:
        log.warning("could not cache normalization stats: %s", e)
    return mean, std


# ---------- augmentation ----------
def normalize(x: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    mean = np.asarray(cfg.mean, dtype=np.float64)
    std = np.asarray(cfg.std, dtype=np.float64)
    shape = (-1, 1, 1) if x.ndim == 3 else (1, -1, 1, 1)
    return (np.asarray(x, dtype=np.float64) - mean.reshape(shape)) / std.reshape(shape)


def crop_flip(image: np.ndarray, top: int, left: int, flip: bool, cfg: AugmentConfig) -> np.ndarray:
    """Zero-pad by cfg.pad, take the 32x32 window at (top, left), optionally
    mirror horizontally, then normalize."""
    if image.shape != IMAGE_SHAPE:
        raise ValueError(f"augment: expected {IMAGE_SHAPE} image, got {image.shape}")
    p = cfg.pad
    if not (0 <= top <= 2 * p and 0 <= left <= 2 * p):
        raise ValueError(f"augment: crop offset ({top}, {left}) outside the padded canvas")
    canvas = np.pad(np.asarray(image, dtype=np.float64), ((0, 0), (p, p), (p, p)))
    out = canvas[:, top:top + 32, left:left + 32]
    if flip:
        out = out[:, :, ::-1]
    return normalize(out, cfg)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    top = int(rng.integers(0, 2 * cfg.pad + 1))
    left = int(rng.integers(0, 2 * cfg.pad + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    return crop_flip(image, top, left, flip, cfg)


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batches(
    ds: Cifar10Set,
    batch_size: int,
    shuffle_seed: int = Config.SEED,
    epoch: int = 0,
    cfg: AugmentConfig | None = None,
    shuffle: bool | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images float64 NCHW, labels). Train split: seeded permutation
    per epoch plus augmentation; test split: in order, normalization only.
    The final partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    train = ds.split == "train"
    if shuffle is None:
        shuffle = train
    n = len(ds)
    order = epoch_order(n, shuffle_seed, epoch) if shuffle else np.arange(n)
    rng = np.random.default_rng([shuffle_seed, epoch, 1])

    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = ds.images[idx]
        if cfg is None:
            x = imgs.astype(np.float64)
        elif train:
            x = np.stack([augment(img, cfg, rng) for img in imgs])
        else:
            x = normalize(imgs, cfg)
        yield x, ds.labels[idx]
