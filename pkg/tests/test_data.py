from collections import deque

import numpy as np
import pytest

from siman.data import default_fonts, render_corpus
from siman.data.augment import BLUR_OPS, COLOR_OPS, NOISE_OPS, AugmentConfig, apply_ops, augment, blur_postpass
from siman.data.imageops import load_png, resize_to_height, save_png
from siman.data.io import load_image_folder, read_labels, write_labels
from siman.data.patches import crop_patch_pair, filter_usable, is_usable, make_batch, stack_batch
from siman.data.render import (RenderError, RenderSpec, check_glyphs, content_canvas, manifest_digest,
                               render_word, spec_from_dict)
from siman.data.sketch import background_mask, edge_map, hysteresis, sketch_overlay

FONT = str(default_fonts()[0])


def blank(h, w, value=0.0):
    return np.full((3, h, w), value, np.float32)


# ---------------------------------------------------------------- filtering and cropping

@pytest.mark.parametrize("h,w,ok", [
    (31, 200, False),   # too short
    (32, 63, False),    # too narrow
    (32, 64, False),    # exactly twice the height
    (32, 65, True),
    (64, 128, False),   # normalises to 32 x 64
    (64, 132, True),    # normalises to 32 x 66
])
def test_usable_thresholds(h, w, ok):
    assert is_usable(blank(h, w)) == ok
    kept = filter_usable([blank(h, w)])
    assert len(kept) == int(ok)
    if ok:
        assert kept[0].shape[1] == 32


def test_crop_pair_abuts_and_offset_is_uniform():
    img = np.tile(np.arange(96, dtype=np.float32), (3, 32, 1))
    rng = np.random.default_rng(0)
    counts = np.zeros(33)
    sides = 0
    n = 6600
    for _ in range(n):
        p = crop_patch_pair(img, rng)
        left, right = (p.style, p.content) if p.style_left else (p.content, p.style)
        assert left.shape == right.shape == (3, 32, 32)
        assert left[0, 0, 0] == p.offset and right[0, 0, 0] == p.offset + 32
        counts[p.offset] += 1
        sides += p.style_left
    expected = n / 33
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 62.49  # chi-square, 32 dof, p = 0.001
    assert abs(sides / n - 0.5) < 3.3 * 0.5 / np.sqrt(n)


def test_crop_rejects_narrow_image():
    with pytest.raises(ValueError):
        crop_patch_pair(blank(32, 64), np.random.default_rng(0))


def test_make_batch_shapes_and_empty_pool():
    pool = [np.random.default_rng(i).uniform(-1, 1, (3, 32, 80)).astype(np.float32) for i in range(3)]
    s, c, a = stack_batch(make_batch(pool, 5, AugmentConfig(), np.random.default_rng(1)))
    assert s.shape == c.shape == a.shape == (5, 3, 32, 32)
    with pytest.raises(ValueError, match="empty"):
        make_batch([], 1, AugmentConfig(), np.random.default_rng(0))


# ---------------------------------------------------------------- augmentation

def test_disabled_augmentation_is_identity():
    img = np.random.default_rng(0).uniform(-1, 1, (3, 32, 32)).astype(np.float32)
    assert np.array_equal(augment(img, AugmentConfig.disabled(), np.random.default_rng(0)), img)


def test_invert_only():
    img = np.random.default_rng(0).uniform(-1, 1, (3, 8, 8)).astype(np.float32)
    cfg = AugmentConfig(invert_p=1.0, color_ops=(), blurring=False, sharpen_blend=False, random_noise=False)
    assert np.array_equal(augment(img, cfg, np.random.default_rng(0)), -img)


@pytest.mark.parametrize("op", COLOR_OPS + BLUR_OPS + NOISE_OPS + ("sharpen",))
def test_every_op_preserves_shape_and_range(op):
    img = np.random.default_rng(1).uniform(-1, 1, (3, 32, 32)).astype(np.float32)
    out = apply_ops(img, False, [op], AugmentConfig(), np.random.default_rng(2))
    assert out.shape == img.shape and out.dtype == np.float32
    assert out.min() >= -1 and out.max() <= 1


def test_gaussian_blur_impulse_response():
    # centre impulse on a zero image; the response must be the separable 3x3 kernel
    img = blank(15, 15, -1.0)
    img[:, 7, 7] = 1.0
    out = apply_ops(img, False, ["gaussian_blur"], AugmentConfig(blur_kernel=(3, 3)), np.random.default_rng(0))
    sigma = 0.8
    g = np.exp(-np.array([1.0, 0.0, 1.0]) / (2 * sigma ** 2))
    g /= g.sum()
    want = np.outer(g, g)
    got = (out[0, 6:9, 6:9].astype(np.float64) + 1) / 2
    assert np.abs(got - want).max() < 1e-6
    assert np.all(out[:, :5] == -1.0)


def test_unknown_op_names_are_rejected():
    with pytest.raises(ValueError):
        AugmentConfig(blur_ops=("defocus",))
    with pytest.raises(ValueError):
        AugmentConfig.from_dict({"elastic": True})


def test_blur_postpass_keeps_shape():
    img = np.random.default_rng(0).uniform(-1, 1, (3, 32, 70)).astype(np.float32)
    out = blur_postpass(img, np.random.default_rng(0), kernel=(5, 11))
    assert out.shape == img.shape


# ---------------------------------------------------------------- rendering

def test_render_corpus_is_deterministic_and_prefix_stable():
    a, ra = render_corpus(6, default_fonts(), seed=9)
    b, rb = render_corpus(6, default_fonts(), seed=9)
    c, rc = render_corpus(3, default_fonts(), seed=9)
    assert manifest_digest(ra) == manifest_digest(rb)
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))
    assert rc == ra[:3]
    assert manifest_digest(render_corpus(6, default_fonts(), seed=10)[1]) != manifest_digest(ra)
    assert all(is_usable(s.image) for s in a)


def test_spec_roundtrip_reproduces_image():
    samples, records = render_corpus(2, default_fonts(), seed=1)
    for s, r in zip(samples, records):
        assert np.array_equal(render_word(spec_from_dict(r["spec"])).image, s.image)


def test_missing_glyph_and_degenerate_specs():
    with pytest.raises(RenderError, match="U\\+6F22"):
        check_glyphs("A漢", FONT)
    with pytest.raises(RenderError):
        RenderSpec(text="", font=FONT)
    with pytest.raises(RenderError):
        RenderSpec(text="A", font=FONT, fg=(9, 9, 9), bg=(9, 9, 9))
    with pytest.raises(RenderError, match="too narrow"):
        render_word(RenderSpec(text="WIDEWORD", font=FONT, width=20))


def test_content_canvas_is_black_on_white():
    c = content_canvas("AB", FONT)
    assert c.shape[1] == 32 and c.shape[2] >= 65
    assert c.max() == 1.0 and c.min() < -0.9


def test_png_and_labels_roundtrip(tmp_path):
    img = content_canvas("XY", FONT)
    save_png(img, tmp_path / "a.png")
    assert np.abs(load_png(tmp_path / "a.png") - img).max() <= 1 / 127.5
    write_labels(tmp_path / "labels.tsv", [("a.png", "X\tY")])
    assert read_labels(tmp_path / "labels.tsv") == {"a.png": "X\tY"}
    items = load_image_folder(tmp_path)
    assert items[0]["text"] == "X\tY" and items[0]["image"].shape == img.shape
    (tmp_path / "labels.tsv").write_text("broken\n")
    with pytest.raises(ValueError):
        read_labels(tmp_path / "labels.tsv")


def test_resize_to_height_keeps_aspect():
    assert resize_to_height(blank(64, 200), 32).shape == (3, 32, 100)


# ---------------------------------------------------------------- sketches

def hysteresis_oracle(mag, lo, hi):
    h, w = mag.shape
    out = np.zeros_like(mag, dtype=bool)
    q = deque(zip(*np.nonzero(mag >= hi)))
    for p in q:
        out[p] = True
    while q:
        i, j = q.popleft()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w and not out[a, b] and mag[a, b] >= lo:
                    out[a, b] = True
                    q.append((a, b))
    return out


def test_hysteresis_matches_flood_fill():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mag = rng.random((20, 24)) ** 3
        assert np.array_equal(hysteresis(mag, 0.2, 0.7), hysteresis_oracle(mag, 0.2, 0.7))


def test_step_edge_gives_single_vertical_line():
    img = blank(16, 20, -1.0)
    img[:, :, 10:] = 1.0
    e = edge_map(img)
    cols = np.nonzero(e.any(axis=0))[0]
    assert len(cols) == 1 and cols[0] in (9, 10)
    assert e[:, cols[0]].all()
    assert not edge_map(blank(16, 20, 0.3)).any()


def test_sketch_only_touches_background():
    canvas = content_canvas("HELLO", FONT)
    style = render_corpus(1, default_fonts(), seed=4)[0][0].image
    out = sketch_overlay(canvas, style)
    bg = background_mask(canvas)
    assert np.array_equal(out[:, ~bg], canvas[:, ~bg])
    assert not np.array_equal(out, canvas)
