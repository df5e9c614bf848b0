"""Conversions between the ``3 x H x W`` float [-1, 1] layout and PIL / uint8."""
from __future__ import annotations

import numpy as np
from PIL import Image


def to_uint8_hwc(img: np.ndarray) -> np.ndarray:
    u = (np.clip(img, -1.0, 1.0) + 1.0) * 127.5
    return np.round(u).astype(np.uint8).transpose(1, 2, 0)


def from_uint8_hwc(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = arr[:, :, :3]
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1).copy()


def to_pil(img: np.ndarray) -> Image.Image:
    return Image.fromarray(to_uint8_hwc(img), mode="RGB")


def from_pil(im: Image.Image) -> np.ndarray:
    return from_uint8_hwc(np.asarray(im.convert("RGB")))


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize carried out in float (no uint8 quantisation)."""
    if img.shape[1:] == (height, width):
        return img.copy()
    chans = [
        np.asarray(Image.fromarray(np.ascontiguousarray(c, dtype=np.float32), mode="F").resize((width, height), Image.BILINEAR))
        for c in img
    ]
    return np.clip(np.stack(chans), -1.0, 1.0).astype(np.float32)


def resize_to_height(img: np.ndarray, height: int) -> np.ndarray:
    h, w = img.shape[1:]
    width = max(1, int(round(w * height / h)))
    return resize(img, height, width)


def save_png(img: np.ndarray, path) -> None:
    to_pil(img).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return from_pil(im)
