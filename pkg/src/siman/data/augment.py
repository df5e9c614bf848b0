"""Photometric augmentation of content patches.

Only colour changes, blurring, sharpen blending and random noise exist here.
Spatial families (cropping, perspective, piecewise affine, elastic) are not
implemented at all: recovering a patch from its neighbour relies on stroke
geometry being identical in both.

Pipeline: optional inversion, one colour op, then one of
{sharpen, blur family, noise family}. Every choice is uniform over the enabled
options.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, fields

import numpy as np
from PIL import Image
from scipy import ndimage

COLOR_OPS = (
    "channel_dropout",
    "channel_shuffle",
    "to_gray",
    "rgb_shift",
    "equalize",
    "brightness_contrast",
    "color_jitter",
    "hue_saturation_value",
    "tone_curve",
)
BLUR_OPS = ("jpeg", "box_blur", "gaussian_blur", "median_blur", "motion_blur")
NOISE_OPS = ("emboss", "gauss_noise", "iso_noise", "multiplicative_noise")


@dataclass(frozen=True)
class AugmentConfig:
    color_change: bool = True
    blurring: bool = True
    sharpen_blend: bool = True
    random_noise: bool = True
    invert_p: float = 0.5
    color_ops: tuple[str, ...] = COLOR_OPS
    blur_ops: tuple[str, ...] = BLUR_OPS
    noise_ops: tuple[str, ...] = NOISE_OPS
    brightness_limit: float = 0.5
    contrast_limit: float = 0.5
    jitter: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    blur_kernel: tuple[int, int] = (3, 3)
    jpeg_quality: tuple[int, int] = (40, 80)
    sharpen_alpha: tuple[float, float] = (1.0, 1.0)
    sharpen_lightness: tuple[float, float] = (0.5, 1.0)
    emboss_alpha: tuple[float, float] = (0.5, 1.0)
    emboss_strength: tuple[float, float] = (0.8, 1.0)
    gauss_var: tuple[float, float] = (10.0, 50.0)  # in 8-bit intensity units squared
    iso_color_shift: tuple[float, float] = (0.1, 0.5)
    iso_intensity: tuple[float, float] = (0.5, 1.0)
    multiplicative: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        for name, allowed in (("color_ops", COLOR_OPS), ("blur_ops", BLUR_OPS), ("noise_ops", NOISE_OPS)):
            bad = set(getattr(self, name)) - set(allowed)
            if bad:
                raise ValueError(f"unknown {name}: {sorted(bad)}")
        if not 0.0 <= self.invert_p <= 1.0:
            raise ValueError("invert_p must be a probability")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(color_change=False, blurring=False, sharpen_blend=False, random_noise=False)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown augmentation fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# ---------------------------------------------------------------- helpers
# colour/filter ops take and return H x W x 3 float arrays in [0, 1]

def _filter(u: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return np.stack([ndimage.correlate(u[:, :, c], kernel, mode="mirror") for c in range(3)], axis=2)


def gaussian_kernel1d(k: int, sigma: float | None = None) -> np.ndarray:
    if sigma is None or sigma <= 0:
        sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
    x = np.arange(k) - (k - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def rgb_to_hsv(u):
    r, g, b = u[..., 0], u[..., 1], u[..., 2]
    mx = u.max(-1)
    mn = u.min(-1)
    d = mx - mn
    h = np.zeros_like(mx)
    safe = np.where(d > 0, d, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6, h)
    h = np.where(mx == g, (b - r) / safe + 2, h)
    h = np.where(mx == b, (r - g) / safe + 4, h)
    h = np.where(d > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], -1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(h.shape + (3,))
    for k, (a, b, c) in enumerate(choices):
        m = i == k
        out[m] = np.stack([a[m], b[m], c[m]], -1)
    return out


def _gray(u):
    return u @ np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------- colour ops

def channel_dropout(u, rng, cfg):
    out = u.copy()
    out[:, :, rng.integers(0, 3)] = 0.0
    return out


def channel_shuffle(u, rng, cfg):
    return u[:, :, rng.permutation(3)]


def to_gray(u, rng, cfg):
    return np.repeat(_gray(u)[:, :, None], 3, axis=2)


def rgb_shift(u, rng, cfg):
    return u + rng.uniform(-20, 20, 3) / 255.0


def equalize(u, rng, cfg):
    out = np.empty_like(u)
    for c in range(3):
        q = np.clip(np.round(u[:, :, c] * 255), 0, 255).astype(int)
        hist = np.bincount(q.ravel(), minlength=256)
        cdf = hist.cumsum()
        nz = cdf[cdf > 0]
        lo = nz[0] if nz.size else 0
        denom = cdf[-1] - lo
        if denom <= 0:
            out[:, :, c] = u[:, :, c]
            continue
        lut = np.clip(np.round((cdf - lo) / denom * 255), 0, 255)
        out[:, :, c] = lut[q] / 255.0
    return out


def brightness_contrast(u, rng, cfg):
    alpha = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
    beta = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit)
    return u * alpha + beta


def color_jitter(u, rng, cfg):
    b, c, s, h = cfg.jitter
    out = u * rng.uniform(max(0.0, 1 - b), 1 + b)
    out = np.clip(out, 0, 1)
    mean = _gray(out).mean()
    out = np.clip((out - mean) * rng.uniform(max(0.0, 1 - c), 1 + c) + mean, 0, 1)
    g = _gray(out)[:, :, None]
    out = np.clip((out - g) * rng.uniform(max(0.0, 1 - s), 1 + s) + g, 0, 1)
    hsv = rgb_to_hsv(out)
    hsv[..., 0] = hsv[..., 0] + rng.uniform(-h, h)
    return hsv_to_rgb(hsv)


def hue_saturation_value(u, rng, cfg):
    hsv = rgb_to_hsv(u)
    hsv[..., 0] = hsv[..., 0] + rng.uniform(-20, 20) / 180.0
    hsv[..., 1] = np.clip(hsv[..., 1] + rng.uniform(-30, 30) / 255.0, 0, 1)
    hsv[..., 2] = np.clip(hsv[..., 2] + rng.uniform(-20, 20) / 255.0, 0, 1)
    return hsv_to_rgb(hsv)


def tone_curve(u, rng, cfg):
    low = np.clip(rng.normal(0.25, 0.1), 0, 1)
    high = np.clip(rng.normal(0.75, 0.1), 0, 1)
    t = np.clip(u, 0, 1)
    return 3 * (1 - t) ** 2 * t * low + 3 * (1 - t) * t ** 2 * high + t ** 3


# ---------------------------------------------------------------- post ops

def sharpen(u, rng, cfg):
    alpha = rng.uniform(*cfg.sharpen_alpha)
    lightness = rng.uniform(*cfg.sharpen_lightness)
    nochange = np.zeros((3, 3))
    nochange[1, 1] = 1
    effect = -np.ones((3, 3))
    effect[1, 1] = 8 + lightness
    return _filter(u, (1 - alpha) * nochange + alpha * effect)


def _blur_k(rng, cfg):
    lo, hi = cfg.blur_kernel
    ks = [k for k in range(lo, hi + 1) if k % 2 == 1] or [lo]
    return int(ks[rng.integers(0, len(ks))])


def jpeg(u, rng, cfg):
    q = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
    buf = io.BytesIO()
    Image.fromarray(np.round(np.clip(u, 0, 1) * 255).astype(np.uint8), "RGB").save(buf, format="JPEG", quality=q)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def box_blur(u, rng, cfg):
    k = _blur_k(rng, cfg)
    return _filter(u, np.full((k, k), 1.0 / (k * k)))


def gaussian_blur(u, rng, cfg):
    g = gaussian_kernel1d(_blur_k(rng, cfg))
    return _filter(u, np.outer(g, g))


def median_blur(u, rng, cfg):
    k = _blur_k(rng, cfg)
    return np.stack([ndimage.median_filter(u[:, :, c], size=k, mode="mirror") for c in range(3)], axis=2)


def motion_blur(u, rng, cfg):
    k = _blur_k(rng, cfg)
    kernel = np.zeros((k, k))
    direction = rng.integers(0, 4)
    c = k // 2
    if direction == 0:
        kernel[c, :] = 1
    elif direction == 1:
        kernel[:, c] = 1
    elif direction == 2:
        np.fill_diagonal(kernel, 1)
    else:
        np.fill_diagonal(np.fliplr(kernel), 1)
    return _filter(u, kernel / kernel.sum())


def emboss(u, rng, cfg):
    alpha = rng.uniform(*cfg.emboss_alpha)
    s = rng.uniform(*cfg.emboss_strength)
    nochange = np.zeros((3, 3))
    nochange[1, 1] = 1
    effect = np.array([[-1 - s, -s, 0], [-s, 1, s], [0, s, 1 + s]])
    return _filter(u, (1 - alpha) * nochange + alpha * effect)


def gauss_noise(u, rng, cfg):
    std = np.sqrt(rng.uniform(*cfg.gauss_var)) / 255.0
    return u + rng.normal(0.0, std, u.shape)


def iso_noise(u, rng, cfg):
    # luminance noise shared across channels plus weaker independent chroma noise
    shift = rng.uniform(*cfg.iso_color_shift)
    intensity = rng.uniform(*cfg.iso_intensity)
    lum = rng.normal(0.0, 0.08 * intensity, u.shape[:2])[:, :, None]
    chroma = rng.normal(0.0, 0.05 * shift, u.shape)
    return u + lum + chroma


def multiplicative_noise(u, rng, cfg):
    return u * rng.uniform(*cfg.multiplicative, u.shape[:2])[:, :, None]


OPS = {name: globals()[name] for name in COLOR_OPS + BLUR_OPS + NOISE_OPS + ("sharpen",)}


def plan(cfg: AugmentConfig, rng: np.random.Generator) -> tuple[bool, list[str]]:
    """Draw which operations an augmentation pass applies (before their parameters)."""
    invert = bool(cfg.color_change and cfg.invert_p > 0 and rng.random() < cfg.invert_p)
    ops = []
    if cfg.color_change and cfg.color_ops:
        ops.append(cfg.color_ops[rng.integers(0, len(cfg.color_ops))])
    families = []
    if cfg.sharpen_blend:
        families.append(("sharpen",))
    if cfg.blurring and cfg.blur_ops:
        families.append(cfg.blur_ops)
    if cfg.random_noise and cfg.noise_ops:
        families.append(cfg.noise_ops)
    if families:
        fam = families[rng.integers(0, len(families))]
        ops.append(fam[rng.integers(0, len(fam))])
    return invert, ops


def apply_ops(img: np.ndarray, invert: bool, ops: list[str], cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = -img if invert else img.copy()
    if not ops:
        return out.astype(np.float32)
    u = (out.transpose(1, 2, 0).astype(np.float64) + 1.0) / 2.0
    for name in ops:
        u = np.clip(OPS[name](u, rng, cfg), 0.0, 1.0)
    return (u * 2.0 - 1.0).transpose(2, 0, 1).astype(np.float32)


def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Photometrically augment a ``3 x H x W`` image in [-1, 1]; shape and pixel layout are preserved."""
    invert, ops = plan(cfg, rng)
    return np.clip(apply_ops(img, invert, ops, cfg, rng), -1.0, 1.0)


def blur_postpass(img: np.ndarray, rng: np.random.Generator, kernel=(5, 11), jpeg_quality=(40, 80)) -> np.ndarray:
    """Random degradation for synthetic samples: one of JPEG / box / Gaussian / median / motion blur."""
    cfg = AugmentConfig(blur_kernel=tuple(kernel), jpeg_quality=tuple(jpeg_quality))
    op = BLUR_OPS[rng.integers(0, len(BLUR_OPS))]
    return np.clip(apply_ops(img, False, [op], cfg, rng), -1.0, 1.0)
