"""Small image corpora: seeded synthetic fields, P6 PPM folders and CIFAR-10 binary files.

All loaders return float32 images in [0, 1] with shape (n, 3, s, s). Resizing
is bilinear with half-pixel centres (``align_corners=False``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError

log = logging.getLogger(__name__)

CIFAR_RECORD = 1 + 3 * 32 * 32
SYNTH_MARGIN = 0.1


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"
    root: str = ""
    image_size: int = 32
    limit: int | None = None
    seed: int = 0
    indices: tuple | None = None  # subset of the corpus, set by train_val_split


@dataclass
class LabeledImages:
    images: torch.Tensor
    labels: torch.Tensor
    skipped: int = 0

    def __len__(self):
        return self.images.shape[0]


def spec_from_config(cfg) -> DatasetSpec:
    return DatasetSpec(cfg.data_source, cfg.data_root, cfg.encoder.image_size, cfg.data_limit or None, cfg.seed)


# -- synthetic -------------------------------------------------------------


def _synthetic_item(size: int, seed: int, index: int) -> tuple[np.ndarray, int]:
    rng = np.random.default_rng([seed, index])
    label = int(rng.integers(0, 2))
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.empty((3, size, size))
    for c in range(3):
        field = np.zeros((size, size))
        for _ in range(3):
            fy, fx = rng.uniform(-3, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            field += np.sin(2 * np.pi * (fy * ys + fx * xs) / size + phase)
        img[c] = 0.5 + 0.1 * field / 3.0 + rng.uniform(-0.1, 0.1)
    # center the red-minus-blue mean, then push it to +/- margin by class
    diff = img[0].mean() - img[2].mean()
    sign = 1.0 if label else -1.0
    img[0] += -diff / 2 + sign * SYNTH_MARGIN / 2
    img[2] += diff / 2 - sign * SYNTH_MARGIN / 2
    return np.clip(img, 0.0, 1.0), label


def class_functional(images: torch.Tensor) -> torch.Tensor:
    """Linear functional whose sign gives the synthetic class: mean(R) - mean(B)."""
    return images[:, 0].mean(dim=(1, 2)) - images[:, 2].mean(dim=(1, 2))


def synthetic_images(n: int, size: int, seed: int, indices=None) -> LabeledImages:
    """Smooth sums of random 2-D sinusoids; the class is the sign of :func:`class_functional`."""
    idx = range(n) if indices is None else indices
    items = [_synthetic_item(size, seed, int(i)) for i in idx]
    images = torch.from_numpy(np.stack([im for im, _ in items])).float()
    labels = torch.tensor([lb for _, lb in items], dtype=torch.long)
    return LabeledImages(images, labels)


# -- file formats ------------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM (P6) into a (h, w, 3) uint8 array."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a P6 PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    body = data[pos + 1:pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: truncated PPM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path, rgb: np.ndarray):
    """Write a (h, w, 3) uint8 array as P6."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def decode_cifar_record(record: bytes) -> tuple[np.ndarray, int]:
    """One CIFAR-10 binary record -> ((3, 32, 32) uint8, label)."""
    if len(record) != CIFAR_RECORD:
        raise ValueError(f"CIFAR record must be {CIFAR_RECORD} bytes, got {len(record)}")
    pixels = np.frombuffer(record, dtype=np.uint8, offset=1).reshape(3, 32, 32)
    return pixels, record[0]


def _cifar_files(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    return sorted(root.glob("*.bin"))


def resize(images: torch.Tensor, size: int) -> torch.Tensor:
    if images.shape[-2:] == (size, size):
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False)


def _load_cifar(root: Path, size: int) -> LabeledImages:
    imgs, labels = [], []
    for path in _cifar_files(root):
        data = path.read_bytes()
        if len(data) % CIFAR_RECORD:
            log.warning("%s: size is not a multiple of the record length; trailing bytes ignored", path)
        for k in range(len(data) // CIFAR_RECORD):
            px, lb = decode_cifar_record(data[k * CIFAR_RECORD:(k + 1) * CIFAR_RECORD])
            imgs.append(px)
            labels.append(lb)
    if not imgs:
        return LabeledImages(torch.empty(0, 3, size, size), torch.empty(0, dtype=torch.long))
    x = torch.from_numpy(np.stack(imgs)).float() / 255.0
    return LabeledImages(resize(x, size), torch.tensor(labels, dtype=torch.long))


def _load_folder(root: Path, size: int) -> LabeledImages:
    """PPM files under ``root``; images in sub-directory k get label k (sorted names)."""
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    groups = [(i, sorted(d.glob("*.ppm"))) for i, d in enumerate(subdirs)] or [(0, sorted(root.glob("*.ppm")))]
    imgs, labels, skipped = [], [], 0
    for label, paths in groups:
        for path in paths:
            try:
                rgb = read_ppm(path)
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                skipped += 1
                continue
            x = torch.from_numpy(rgb.copy()).permute(2, 0, 1).float().unsqueeze(0) / 255.0
            imgs.append(resize(x, size))
            labels.append(label)
    if skipped:
        log.warning("%d unreadable images skipped under %s", skipped, root)
    if not imgs:
        return LabeledImages(torch.empty(0, 3, size, size), torch.empty(0, dtype=torch.long), skipped)
    return LabeledImages(torch.cat(imgs), torch.tensor(labels, dtype=torch.long), skipped)


def corpus_size(spec: DatasetSpec) -> int:
    if spec.source == "synthetic":
        return spec.limit if spec.limit is not None else 512
    return len(load_dataset(replace(spec, indices=None)))


def load_dataset(spec: DatasetSpec) -> LabeledImages:
    """Load the whole (limited, subset) corpus into memory."""
    if spec.source == "synthetic":
        n = spec.limit if spec.limit is not None else 512
        indices = spec.indices if spec.indices is not None else range(n)
        data = synthetic_images(n, spec.image_size, spec.seed, indices)
    else:
        root = Path(spec.root)
        if not root.exists():
            raise ConfigError(f"dataset root {root} does not exist")
        if spec.source == "cifar_binary":
            data = _load_cifar(root, spec.image_size)
        elif spec.source == "image_folder":
            data = _load_folder(root, spec.image_size)
        else:
            raise ConfigError(f"unknown dataset source {spec.source!r}")
        if spec.limit is not None:
            if spec.limit > len(data):
                raise ConfigError(f"limit {spec.limit} exceeds corpus size {len(data)}")
            data = LabeledImages(data.images[:spec.limit], data.labels[:spec.limit], data.skipped)
        if spec.indices is not None:
            idx = torch.tensor(spec.indices, dtype=torch.long)
            data = LabeledImages(data.images[idx], data.labels[idx], data.skipped)
    if len(data) == 0:
        raise ConfigError(f"empty corpus for {spec.source} at {spec.root or '<synthetic>'}")
    return data


def load_batches(spec: DatasetSpec, batch_size: int, shuffle_seed: int | None = 0, drop_last: bool = False):
    """One epoch of image batches in a seed-determined order; the last batch may be short."""
    data = load_dataset(spec)
    n = len(data)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield data.images[torch.from_numpy(order[start:start + batch_size])]


def train_val_split(spec: DatasetSpec, fraction: float, seed: int) -> tuple[DatasetSpec, DatasetSpec]:
    """Disjoint seeded split; the first part holds ``round(fraction * n)`` items."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    base = spec.indices if spec.indices is not None else tuple(range(corpus_size(spec)))
    perm = np.random.default_rng(seed).permutation(len(base))
    k = int(round(fraction * len(base)))
    first = tuple(sorted(base[i] for i in perm[:k]))
    second = tuple(sorted(base[i] for i in perm[k:]))
    return replace(spec, indices=first), replace(spec, indices=second)


class StepBatches:
    """Training batches indexed by global step, so a resumed run sees the same stream.

    Each epoch is a fresh permutation seeded by ``(seed, epoch)``; short tail
    batches are dropped to keep the batch size constant.
    """

    def __init__(self, images: torch.Tensor, batch_size: int, seed: int):
        if images.shape[0] < batch_size:
            raise ConfigError(f"batch_size {batch_size} exceeds corpus size {images.shape[0]}")
        self.images = images
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = images.shape[0] // batch_size
        self._epoch, self._order = -1, None

    def __getitem__(self, step: int) -> torch.Tensor:
        epoch, k = divmod(step, self.per_epoch)
        if epoch != self._epoch:
            self._order = torch.from_numpy(np.random.default_rng([self.seed, epoch]).permutation(self.images.shape[0]))
            self._epoch = epoch
        return self.images[self._order[k * self.batch_size:(k + 1) * self.batch_size]]
