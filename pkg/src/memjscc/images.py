"""Image sources: the CIFAR-10 on-disk layouts and a procedural fallback.

Images are returned as float32 arrays ``[N, H, W, C]`` scaled to [0, 1].
"""

from __future__ import annotations

import logging
import os
import pickle
from pathlib import Path

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

DATA_ENV = "MEMJSCC_DATA_DIR"
CIFAR_RECORD = 1 + 3 * 32 * 32
BIN_DIR = "cifar-10-batches-bin"
PY_DIR = "cifar-10-batches-py"


def _to_hwc(flat: np.ndarray) -> np.ndarray:
    # CIFAR stores each image as three 32x32 colour planes
    return flat.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)


def read_cifar_bin(path) -> tuple[np.ndarray, np.ndarray]:
    """One binary batch file -> (uint8 images [N,32,32,3], labels)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size is not a multiple of {CIFAR_RECORD}")
    raw = raw.reshape(-1, CIFAR_RECORD)
    return _to_hwc(raw[:, 1:]), raw[:, 0].astype(np.int64)


def read_cifar_pickle(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        d = pickle.load(fh, encoding="bytes")
    return _to_hwc(np.asarray(d[b"data"], dtype=np.uint8)), \
        np.asarray(d[b"labels"], dtype=np.int64)


def find_cifar(root=None) -> Path | None:
    """Locate a CIFAR-10 directory under ``root`` or ``$MEMJSCC_DATA_DIR``."""
    root = root or os.environ.get(DATA_ENV)
    if not root:
        return None
    root = Path(root)
    for cand in (root / BIN_DIR, root / PY_DIR, root):
        if (cand / "test_batch.bin").exists() or (cand / "test_batch").exists():
            return cand
    return None


def load_cifar10(root, split: str = "train",
                 limit: int | None = None) -> np.ndarray:
    base = find_cifar(root)
    if base is None:
        raise FileNotFoundError(f"no CIFAR-10 batches under {root}")
    names = ([f"data_batch_{i}" for i in range(1, 6)] if split == "train"
             else ["test_batch"])
    chunks = []
    for name in names:
        if (base / f"{name}.bin").exists():
            imgs, _ = read_cifar_bin(base / f"{name}.bin")
        else:
            imgs, _ = read_cifar_pickle(base / name)
        chunks.append(imgs)
        if limit is not None and sum(len(c) for c in chunks) >= limit:
            break
    out = np.concatenate(chunks)[:limit]
    return out.astype(np.float32) / 255.0


def synthetic_images(count: int, seed: int = 0, size: int = 32,
                     channels: int = 3) -> np.ndarray:
    """Procedural natural-looking images.

    Each image is a colour-mixed ``1/f^2`` random field with a few
    soft-edged ellipses and rectangles on top, so it has the smooth
    regions, edges and inter-channel correlation a learned codec exploits.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = 1.0
    amp = 1.0 / f ** 2
    amp[0, 0] = 0.0
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    out = np.empty((count, size, size, channels), dtype=np.float32)
    for i in range(count):
        spec = amp * (rng.normal(size=(channels,) + f.shape)
                      + 1j * rng.normal(size=(channels,) + f.shape))
        field = np.fft.irfft2(spec, s=(size, size))
        field /= field.std(axis=(1, 2), keepdims=True) + 1e-12
        mix = rng.normal(size=(channels, channels)) * 0.3 + np.eye(channels)
        img = np.tensordot(field, mix, axes=([0], [0])) * 0.12
        img += rng.uniform(0.2, 0.8, channels)
        for _ in range(rng.integers(1, 5)):
            cy, cx = rng.uniform(0, 1, 2)
            ry, rx = rng.uniform(0.08, 0.4, 2)
            colour = rng.uniform(0, 1, channels)
            if rng.random() < 0.5:
                d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
            else:
                d = np.maximum(np.abs(yy - cy) / ry, np.abs(xx - cx) / rx) ** 2
            mask = expit((1.0 - d) * rng.uniform(8, 30))
            img = img * (1 - mask[..., None]) + colour * mask[..., None]
        img += rng.normal(0, 0.02, img.shape)
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def load_images(split: str, count: int, seed: int = 0, root=None,
                source: str = "auto") -> tuple[np.ndarray, str]:
    """Return ``(images, source_name)``.

    ``source`` is ``cifar``, ``synthetic`` or ``auto`` (CIFAR when it can
    be found, otherwise synthetic images with a warning).
    """
    if source in ("cifar", "auto"):
        base = find_cifar(root)
        if base is not None:
            return load_cifar10(base, split, count), "cifar10"
        if source == "cifar":
            raise FileNotFoundError(
                f"CIFAR-10 not found (set {DATA_ENV} or pass --data-dir)")
        log.warning("CIFAR-10 not found; using synthetic images")
    elif source != "synthetic":
        raise ValueError(f"unknown image source {source!r}")
    # disjoint streams for train and test
    offset = 0 if split == "train" else 1_000_003
    return synthetic_images(count, seed + offset), "synthetic"


def to_nchw(images: np.ndarray):
    import torch
    return torch.from_numpy(np.ascontiguousarray(
        images.transpose(0, 3, 1, 2)))
