"""Word-image renderer used for toy corpora, content canvases and editing targets."""
from __future__ import annotations

import functools
import hashlib
import json
import string
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

# 52 letters, 10 digits, 32 punctuation symbols; the 95th class is the blank/EOS token
ALPHABET_94 = string.digits + string.ascii_letters + string.punctuation
TOY_ALPHABET = string.ascii_uppercase + string.digits

FONT_DIRS = (
    "/usr/share/fonts",
    "/usr/local/share/fonts",
    "~/.fonts",
    "~/.local/share/fonts",
    "/Library/Fonts",
    "C:/Windows/Fonts",
)
DEFAULT_FONT_NAMES = ("DejaVuSans.ttf", "DejaVuSerif.ttf", "DejaVuSansMono.ttf")
STANDARD_FONT_NAMES = ("Arial.ttf", "arial.ttf", "DejaVuSans.ttf")


class RenderError(ValueError):
    pass


class LabeledSample(NamedTuple):
    image: np.ndarray  # 3 x H x W, float32 in [-1, 1]
    text: str


@dataclass(frozen=True)
class RenderSpec:
    text: str
    font: str
    height: int = 32
    width: int | None = None  # None: fit the glyph run plus margins
    font_size: int | None = None  # None: 0.7 * height
    fg: tuple[int, int, int] = (0, 0, 0)
    bg: tuple[int, int, int] = (255, 255, 255)
    bg2: tuple[int, int, int] | None = None  # right-hand colour of a horizontal gradient
    slant: float = 0.0  # horizontal shear (px per px of height)
    curvature: float = 0.0  # baseline sine amplitude in px
    margin: int = 4
    min_width: int = 0
    sketch: bool = False

    def __post_init__(self):
        if not self.text:
            raise RenderError("text must be non-empty")
        if tuple(self.fg) == tuple(self.bg) and self.bg2 is None:
            raise RenderError("foreground and background colours are identical; the render would be unreadable")


def find_fonts(font_dir: str | Path | None = None, names: Sequence[str] | None = None) -> list[Path]:
    """Font files under ``font_dir`` (or the usual system locations), sorted by name.

    With ``names`` only files with those basenames are returned, in the given order.
    """
    dirs = [Path(font_dir).expanduser()] if font_dir else [Path(d).expanduser() for d in FONT_DIRS]
    found: dict[str, Path] = {}
    for d in dirs:
        if not d.is_dir():
            continue
        for p in sorted(d.rglob("*")):
            if p.suffix.lower() in (".ttf", ".otf") and p.name not in found:
                found[p.name] = p
    if names is None:
        return [found[k] for k in sorted(found)]
    return [found[n] for n in names if n in found]


def default_fonts(font_dir: str | Path | None = None, count: int = 3) -> list[Path]:
    fonts = find_fonts(font_dir, DEFAULT_FONT_NAMES)
    if len(fonts) < count:
        extra = [f for f in find_fonts(font_dir) if f not in fonts]
        fonts += extra[: count - len(fonts)]
    if not fonts:
        raise RenderError(f"no font files found (searched {font_dir or FONT_DIRS})")
    return fonts[:count]


def standard_font(font_dir: str | Path | None = None) -> Path:
    fonts = find_fonts(font_dir, STANDARD_FONT_NAMES)
    return fonts[0] if fonts else default_fonts(font_dir, 1)[0]


@functools.lru_cache(maxsize=32)
def _cmap(font_path: str) -> frozenset[int]:
    from fontTools.ttLib import TTFont

    with TTFont(font_path, lazy=True, fontNumber=0) as tt:
        return frozenset(tt.getBestCmap() or {})


@functools.lru_cache(maxsize=64)
def _font(font_path: str, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(font_path, size=size)


def check_glyphs(text: str, font_path: str) -> None:
    cmap = _cmap(str(font_path))
    for ch in text:
        if ch.isspace():
            continue
        if ord(ch) not in cmap:
            raise RenderError(f"font {Path(font_path).name} has no glyph for {ch!r} (U+{ord(ch):04X})")


def text_mask(spec: RenderSpec) -> np.ndarray:
    """Anti-aliased coverage mask (H x W, floats in [0, 1]) of the text run."""
    check_glyphs(spec.text, spec.font)
    size = spec.font_size or max(6, int(round(spec.height * 0.7)))
    font = _font(str(spec.font), size)
    left, top, right, bottom = font.getbbox(spec.text)
    run_w = right - left
    extra = int(np.ceil(abs(spec.slant) * spec.height))
    need = run_w + 2 * spec.margin + extra
    width = spec.width if spec.width is not None else max(need, spec.min_width)
    if width < need:
        raise RenderError(f"canvas width {width} is too narrow for the glyph run ({need} px needed)")
    mask = Image.new("L", (width, spec.height), 0)
    draw = ImageDraw.Draw(mask)
    x0 = (width - run_w - extra) // 2 - left + (extra if spec.slant > 0 else 0)
    ascent, descent = font.getmetrics()
    y0 = (spec.height - (ascent + descent)) // 2
    draw.text((x0, y0), spec.text, fill=255, font=font)
    m = np.asarray(mask, dtype=np.float32) / 255.0
    if spec.slant:
        # x_src = x + slant * (y - h/2): shear about the vertical centre
        h = spec.height
        img = Image.fromarray((m * 255).astype(np.uint8), mode="L")
        img = img.transform(img.size, Image.AFFINE, (1, spec.slant, -spec.slant * h / 2, 0, 1, 0), Image.BILINEAR)
        m = np.asarray(img, dtype=np.float32) / 255.0
    if spec.curvature:
        cols = np.arange(width)
        shift = np.round(spec.curvature * np.sin(2 * np.pi * cols / max(width, 1))).astype(int)
        out = np.zeros_like(m)
        for j, s in enumerate(shift):
            out[:, j] = np.roll(m[:, j], s)
            if s > 0:
                out[:s, j] = 0
            elif s < 0:
                out[s:, j] = 0
        m = out
    return m


def render_word(spec: RenderSpec) -> LabeledSample:
    """Rasterise ``spec.text``; deterministic in the spec."""
    m = text_mask(spec)[None]
    h, w = m.shape[1:]
    bg = np.asarray(spec.bg, np.float32)[:, None, None] / 127.5 - 1.0
    if spec.bg2 is not None:
        bg2 = np.asarray(spec.bg2, np.float32)[:, None, None] / 127.5 - 1.0
        t = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, None, :]
        bg = bg * (1 - t) + bg2 * t
    fg = np.asarray(spec.fg, np.float32)[:, None, None] / 127.5 - 1.0
    img = bg * (1 - m) + fg * m
    img = np.broadcast_to(img, (3, h, w)).astype(np.float32)
    return LabeledSample(np.clip(img, -1.0, 1.0), spec.text)


# ---------------------------------------------------------------- corpora

def random_text(rng: np.random.Generator, alphabet: str, min_len: int, max_len: int) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))


def _contrasting_colors(rng: np.random.Generator, min_contrast: float = 90.0):
    while True:
        fg = rng.integers(0, 256, 3)
        bg = rng.integers(0, 256, 3)
        if abs(fg.mean() - bg.mean()) >= min_contrast:
            return tuple(int(v) for v in fg), tuple(int(v) for v in bg)


def random_spec(
    rng: np.random.Generator,
    fonts: Sequence[str | Path],
    alphabet: str = TOY_ALPHABET,
    min_len: int = 3,
    max_len: int = 8,
    height: int = 32,
    text: str | None = None,
    gradient_p: float = 0.3,
    slant_max: float = 0.0,
    curvature_max: float = 0.0,
) -> RenderSpec:
    text = text or random_text(rng, alphabet, min_len, max_len)
    font = str(fonts[int(rng.integers(0, len(fonts)))])
    fg, bg = _contrasting_colors(rng)
    bg2 = None
    if rng.random() < gradient_p:
        shift = rng.integers(-40, 41, 3)
        bg2 = tuple(int(v) for v in np.clip(np.asarray(bg) + shift, 0, 255))
    slant = float(rng.uniform(-slant_max, slant_max)) if slant_max else 0.0
    curv = float(rng.uniform(0, curvature_max)) if curvature_max else 0.0
    return RenderSpec(text=text, font=font, height=height, fg=fg, bg=bg, bg2=bg2, slant=slant,
                      curvature=curv, min_width=2 * height + 1)


def image_digest(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img, dtype="<f4").tobytes()).hexdigest()


def render_corpus(
    n: int,
    fonts: Sequence[str | Path],
    seed: int = 0,
    alphabet: str = TOY_ALPHABET,
    min_len: int = 3,
    max_len: int = 8,
    height: int = 32,
    **spec_kw,
) -> tuple[list[LabeledSample], list[dict]]:
    """Render ``n`` random words; returns samples plus one manifest record per sample.

    Sample ``i`` depends only on ``(seed, i)`` so corpora are prefix-stable.
    """
    samples, records = [], []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        spec = random_spec(rng, fonts, alphabet, min_len, max_len, height, **spec_kw)
        s = render_word(spec)
        samples.append(s)
        records.append({"index": i, "seed": [seed, i], "text": s.text, "spec": spec_to_dict(spec),
                        "sha256": image_digest(s.image)})
    return samples, records


def spec_to_dict(spec: RenderSpec) -> dict:
    d = asdict(spec)
    d["font"] = Path(spec.font).name
    return d


def spec_from_dict(d: dict, font_dir: str | Path | None = None) -> RenderSpec:
    d = dict(d)
    fonts = find_fonts(font_dir, [d["font"]])
    if not fonts:
        raise RenderError(f"font {d['font']} not found")
    d["font"] = str(fonts[0])
    for key in ("fg", "bg", "bg2"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return RenderSpec(**d)


def manifest_digest(records: Sequence[dict]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps(r, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def content_canvas(text: str, font: str | Path, height: int = 32, **kw) -> np.ndarray:
    """Black text on a clean white canvas, as used for synthesis and editing content inputs."""
    kw.setdefault("min_width", 2 * height + 1)
    return render_word(RenderSpec(text=text, font=str(font), height=height, **kw)).image


def with_text(spec: RenderSpec, text: str) -> RenderSpec:
    return replace(spec, text=text)
