"""Self-supervision sample construction: neighbouring style/content patches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import AugmentConfig, augment
from .imageops import resize_to_height

MIN_HEIGHT = 32
MIN_WIDTH = 64


@dataclass
class PatchPair:
    style: np.ndarray
    content: np.ndarray
    content_aug: np.ndarray | None = None
    offset: int = 0
    style_left: bool = True


def is_usable(img: np.ndarray, height: int = MIN_HEIGHT) -> bool:
    h, w = img.shape[1:]
    if h < MIN_HEIGHT or w < MIN_WIDTH:
        return False
    return round(w * height / h) > 2 * height


def filter_usable(images: Sequence[np.ndarray], height: int = MIN_HEIGHT) -> list[np.ndarray]:
    """Drop low-resolution images, then height-normalise and keep those wider than twice their height."""
    out = []
    for img in images:
        h, w = img.shape[1:]
        if h < MIN_HEIGHT or w < MIN_WIDTH:
            continue
        norm = img if h == height else resize_to_height(img, height)
        if norm.shape[2] > 2 * height:
            out.append(norm)
    return out


def crop_patch_pair(img: np.ndarray, rng: np.random.Generator) -> PatchPair:
    """Two abutting H x H crops at a uniform offset; which one is the style patch is a fair coin."""
    h, w = img.shape[1:]
    if w <= 2 * h:
        raise ValueError(f"image width {w} must exceed twice its height {h}")
    x = int(rng.integers(0, w - 2 * h + 1))
    left = img[:, :, x:x + h].copy()
    right = img[:, :, x + h:x + 2 * h].copy()
    style_left = bool(rng.random() < 0.5)
    style, content = (left, right) if style_left else (right, left)
    return PatchPair(style=style, content=content, offset=x, style_left=style_left)


def make_batch(
    pool: Sequence[np.ndarray], n: int, cfg: AugmentConfig, rng: np.random.Generator
) -> list[PatchPair]:
    """Sample ``n`` images with replacement and build augmented patch pairs from each."""
    if not len(pool):
        raise ValueError("cannot build a batch from an empty image pool")
    batch = []
    for idx in rng.integers(0, len(pool), n):
        pair = crop_patch_pair(pool[idx], rng)
        pair.content_aug = augment(pair.content, cfg, rng)
        batch.append(pair)
    return batch


def stack_batch(batch: Sequence[PatchPair]):
    """(style, content, content_aug) as three ``B x 3 x H x H`` float32 arrays."""
    return (
        np.stack([p.style for p in batch]).astype(np.float32),
        np.stack([p.content for p in batch]).astype(np.float32),
        np.stack([p.content_aug for p in batch]).astype(np.float32),
    )
