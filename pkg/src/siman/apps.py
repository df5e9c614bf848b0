"""Generative applications on a pretrained encoder/decoder: synthesis, editing, interpolation, attention maps."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import core
from .data.augment import blur_postpass
from .data.imageops import resize, resize_to_height, save_png
from .data.patches import filter_usable
from .data.render import content_canvas
from .data.sketch import sketch_overlay
from .trainer import Generator


def stride_multiple(gen: Generator) -> tuple[int, int]:
    spec = gen.encoder.spec
    h, w = spec.input_height, 4 * spec.input_height
    _, ho, wo = spec.encoder_output_shape(h, w)
    return max(1, h // max(ho, 1)), max(1, w // max(wo, 1))


def fit_width(img: np.ndarray, multiple: int) -> np.ndarray:
    """Pad on the right (edge-replicated) so the width is a multiple of ``multiple``."""
    w = img.shape[2]
    extra = (-w) % multiple
    return np.pad(img, ((0, 0), (0, 0), (0, extra)), mode="edge") if extra else img


def prepare(img: np.ndarray, gen: Generator) -> np.ndarray:
    height = gen.encoder.spec.input_height
    if img.shape[1] != height:
        img = resize_to_height(img, height)
    return fit_width(img, stride_multiple(gen)[1])


def _t(img: np.ndarray, like: torch.nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    return torch.from_numpy(np.ascontiguousarray(img))[None].to(dtype)


def _img(t: torch.Tensor) -> np.ndarray:
    return t[0].detach().float().clamp(-1, 1).numpy()


@torch.no_grad()
def stylize(gen: Generator, content: np.ndarray, style: np.ndarray) -> np.ndarray:
    """Decode ``content`` in the look of ``style``; output matches the (height-normalised) content size."""
    gen.eval()
    c = prepare(content, gen)
    s = prepare(style, gen)
    out = _img(gen(_t(c, gen), _t(s, gen)))
    width = content.shape[2] if content.shape[1] == c.shape[1] else resize_to_height(content, c.shape[1]).shape[2]
    return out[:, :, :width]


def edit(gen: Generator, source: np.ndarray, target_text: str, font: str | Path,
         output_size: tuple[int, int] | None = None) -> np.ndarray:
    """Put ``target_text`` (rendered in ``font`` on a clean canvas) into the style of ``source``."""
    if not filter_usable([source]):
        raise ValueError(f"source image {source.shape[1]}x{source.shape[2]} is too small to serve as a style reference")
    height = gen.encoder.spec.input_height
    canvas = content_canvas(target_text, font, height=height, min_width=0)
    out = stylize(gen, canvas, source)
    return resize(out, *output_size) if output_size else out


def synthesize(gen: Generator, styles: Sequence[np.ndarray], texts: Sequence[str], font: str | Path,
               rng: np.random.Generator, sketch: bool = True, blur_p: float = 0.0,
               blur_kernel: tuple[int, int] = (5, 11)) -> list[tuple[np.ndarray, str, int]]:
    """One sample per text; style images are drawn uniformly with replacement.

    Returns ``(image, text, style_index)`` triples.
    """
    usable = [i for i, s in enumerate(styles) if filter_usable([s])]
    if not usable:
        raise ValueError("no style image is usable after filtering")
    height = gen.encoder.spec.input_height
    out = []
    for text in texts:
        k = usable[int(rng.integers(0, len(usable)))]
        style = resize_to_height(styles[k], height) if styles[k].shape[1] != height else styles[k]
        canvas = content_canvas(text, font, height=height)
        if sketch:
            canvas = sketch_overlay(canvas, style)
        img = stylize(gen, canvas, style)
        if blur_p and rng.random() < blur_p:
            img = blur_postpass(img, rng, blur_kernel)
        out.append((img, text, k))
    return out


@torch.no_grad()
def _encode_pair(gen: Generator, a: np.ndarray, b: np.ndarray):
    a = prepare(a, gen)
    b = prepare(b, gen)
    if b.shape != a.shape:
        b = resize(b, *a.shape[1:])
    fa = gen.encoder(_t(a, gen))[0]
    fb = gen.encoder(_t(b, gen))[0]
    return fa, fb, a.shape[2]


@torch.no_grad()
def interpolate(gen: Generator, a: np.ndarray, b: np.ndarray, mode: str = "color", steps: int = 4,
                text_a: str | None = None, text_b: str | None = None) -> list[np.ndarray]:
    """``steps + 1`` decoded frames for alpha = 0, 1/steps, ..., 1.

    color: A's glyphs with statistics moving from A's to B's.
    glyph: A's style with the glyph shapes moving from A's to B's; needs the same string in both.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if mode not in ("color", "glyph"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if mode == "glyph" and (text_a is None or text_a != text_b):
        raise ValueError("glyph interpolation requires the same string in both images")
    gen.eval()
    cfg = gen.norm_cfg
    fa, fb, width = _encode_pair(gen, a, b)
    Q, K = core.instance_norm(fa, cfg), core.instance_norm(fb, cfg)
    src, tgt = core.local_stats(fa, cfg), core.local_stats(fb, cfg)
    frames = []
    for i in range(steps + 1):
        alpha = i / steps
        if mode == "color":
            feat = core.color_interpolate(Q, K, src, tgt, alpha)
        else:
            feat = core.glyph_interpolate(Q, K, src, alpha)
        frames.append(_img(gen.decoder(feat[None])))
    return frames


@torch.no_grad()
def attention_maps(gen: Generator, style: np.ndarray, content: np.ndarray,
                   queries: Sequence[tuple[int, int]]) -> tuple[list[np.ndarray], dict]:
    """Attention column of each query position over the style positions.

    Returns one heatmap per query, upsampled to the size-normalised style patch, and a summary dict.
    """
    gen.eval()
    style = prepare(style, gen)
    fs = gen.encoder(_t(style, gen))[0]
    fc = gen.encoder(_t(prepare(content, gen), gen))[0]
    cfg = gen.norm_cfg
    A = core.attention_weights(core.instance_norm(fs, cfg), core.instance_norm(fc, cfg))
    hs, ws = fs.shape[1:]
    hq, wq = fc.shape[1:]
    maps, cols = [], []
    for (qy, qx) in queries:
        if not (0 <= qy < hq and 0 <= qx < wq):
            raise IndexError(f"query ({qy}, {qx}) outside the {hq}x{wq} content map")
        col = A[:, qy * wq + qx]
        grid = col.reshape(1, 1, hs, ws).float()
        up = F.interpolate(grid, size=style.shape[1:], mode="nearest")[0, 0].numpy()
        maps.append(up)
        am = int(col.argmax())
        cols.append({"query": [qy, qx], "sum": float(col.sum()), "argmax": [am // ws, am % ws],
                     "max": float(col.max())})
    return maps, {"style_map": [hs, ws], "content_map": [hq, wq], "queries": cols}


def heatmap_overlay(style: np.ndarray, heat: np.ndarray, strength: float = 0.7) -> np.ndarray:
    """Red heat blended over a grey copy of the style patch."""
    h = heat[: style.shape[1], : style.shape[2]]
    h = h / h.max() if h.max() > 0 else h
    grey = np.repeat(style.mean(0, keepdims=True), 3, 0)
    red = np.stack([np.ones_like(h), -np.ones_like(h), -np.ones_like(h)])
    w = strength * h[None]
    return np.clip(grey * (1 - w) + red * w, -1, 1).astype(np.float32)


def save_frames(frames: Sequence[np.ndarray], out_dir: str | Path, stem: str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = out_dir / f"{stem}_{i:03d}.png"
        save_png(f, p)
        paths.append(p)
    return paths
