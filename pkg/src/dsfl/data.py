"""Synthetic fire images, binary PGM ingestion, and non-IID partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

BACKGROUND_MAX = 0.3


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, size, size), values in [0, 1]
    labels: np.ndarray  # (n,), 0 = no incident, 1 = fire

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in (0, 1)}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx])


def gen_synthetic(n: int, image_size: int, rng: np.random.Generator) -> Dataset:
    """Smoothed low-amplitude noise; fire images add a bright Gaussian blob."""
    if n < 4:
        raise ValueError("need at least 4 examples")
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    bg = rng.uniform(0.0, BACKGROUND_MAX, size=(n, image_size, image_size))
    images = uniform_filter(bg, size=(1, 3, 3), mode="reflect")
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    for i in np.flatnonzero(labels == 1):
        peak = rng.uniform(0.6, 1.0)
        width = rng.uniform(image_size / 8, image_size / 4)
        cy, cx = rng.uniform(0, image_size - 1, size=2)
        bump = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        images[i] = np.clip(images[i] + bump, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64))


def train_test_split(ds: Dataset, rng: np.random.Generator, test_fraction: float = 0.2):
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def label_distribution(labels, n_classes: int = 2) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    return counts / counts.sum()


def partition_dirichlet(labels, n_meds: int, alpha: float, rng: np.random.Generator) -> dict[int, list[int]]:
    """Split example indices over MEDs with per-class Dirichlet(alpha) proportions.

    Empty shards are then filled by moving one example at a time from the
    currently largest shard.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_meds > len(labels):
        raise ValueError(f"{n_meds} MEDs but only {len(labels)} examples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    shards: list[list[int]] = [[] for _ in range(n_meds)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(n_meds, alpha))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
        for med, part in enumerate(np.split(idx, cuts)):
            shards[med].extend(int(i) for i in part)
    for med in range(n_meds):
        if not shards[med]:
            donor = max(range(n_meds), key=lambda m: (len(shards[m]), -m))
            shards[med].append(shards[donor].pop())
    return {med: sorted(s) for med, s in enumerate(shards)}


# ---------------------------------------------------------------------------
# Binary PGM
# ---------------------------------------------------------------------------

class PGMError(ValueError):
    pass


def _header_tokens(data: bytes, count: int) -> tuple[list[tuple[bytes, int]], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PGMError(f"truncated header at byte {pos}")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PGMError(f"truncated header at byte {pos}")
    return tokens, pos + 1


def _pool_to(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape
    side = min(h, w)
    side -= side % size
    if side < size:
        raise PGMError(f"image {w}x{h} is smaller than the target size {size}")
    top, left = (h - side) // 2, (w - side) // 2
    crop = image[top : top + side, left : left + side]
    f = side // size
    return crop.reshape(size, f, size, f).mean(axis=(1, 3))


def load_pgm(path, image_size: int | None = None) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM as floats in [0, 1].

    With ``image_size`` the image is center-cropped to a square and mean-pooled
    down to ``image_size x image_size``.
    """
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise PGMError("truncated header at byte 0")
    magic = data[:2].decode("latin-1")
    if magic != "P5":
        raise PGMError(f"unsupported magic {magic} at byte 0")
    tokens, raster_off = _header_tokens(data[2:], 3)
    (w_tok, w_off), (h_tok, _), (m_tok, m_off) = tokens
    raster_off += 2
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError:
        raise PGMError(f"malformed header at byte {w_off + 2}") from None
    if width <= 0 or height <= 0:
        raise PGMError(f"bad dimensions {width}x{height} at byte {w_off + 2}")
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval} at byte {m_off + 2}")
    need = width * height
    raster = data[raster_off : raster_off + need]
    if len(raster) < need:
        raise PGMError(f"truncated payload at byte {raster_off + len(raster)}: expected {need} bytes, got {len(raster)}")
    image = np.frombuffer(raster, dtype=np.uint8).reshape(height, width) / 255.0
    if image_size is not None:
        image = _pool_to(image, image_size)
    return image


def save_pgm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("pixels must lie in [0, 1]")
    pixels = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def save_dataset(ds: Dataset, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "label"])
        for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
            name = f"img_{i}_{int(label)}.pgm"
            save_pgm(img, out / name)
            writer.writerow([name, int(label)])
            paths.append(out / name)
    return paths


def load_directory(path, image_size: int) -> Dataset:
    """Load ``labels.csv`` plus the PGM files it lists."""
    root = Path(path)
    with open(root / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{root / 'labels.csv'} lists no images")
    images = np.stack([load_pgm(root / r["file"], image_size) for r in rows])
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    if not set(labels.tolist()) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    return Dataset(images, labels)
