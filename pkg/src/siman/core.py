"""Similarity-aware normalization kernel.

All functions operate on the trailing ``C x H x W`` dims of a tensor; leading
dims (if any) are treated as independent samples. Nothing here holds state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

PAD_MODES = ("replicate", "reflect", "zero")


class StyleStats(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


@dataclass(frozen=True)
class NormConfig:
    epsilon: float = 1e-5
    neighborhood_pad: str = "replicate"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.neighborhood_pad not in PAD_MODES:
            raise ValueError(f"unknown pad mode {self.neighborhood_pad!r}, expected one of {PAD_MODES}")


DEFAULT_CFG = NormConfig()


def _check_map(x: torch.Tensor, name: str = "x") -> None:
    if x.dim() < 3:
        raise ValueError(f"{name} must have at least 3 dims (C, H, W), got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def safe_sqrt(v: torch.Tensor) -> torch.Tensor:
    """sqrt with exact zero at v == 0 and a finite (zero) gradient there."""
    pos = v > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, v, torch.ones_like(v))), torch.zeros_like(v))


def instance_norm(x: torch.Tensor, cfg: NormConfig = DEFAULT_CFG) -> torch.Tensor:
    """Remove per-channel mean and divide by sqrt(var + eps); population variance."""
    _check_map(x)
    # shifting by one sample keeps constant channels exactly zero
    d = x - x[..., :1, :1]
    dev = d - d.mean(dim=(-2, -1), keepdim=True)
    var = (dev ** 2).mean(dim=(-2, -1), keepdim=True)
    return dev / torch.sqrt(var + cfg.epsilon)


def _pad_neighborhood(x: torch.Tensor, mode: str) -> torch.Tensor:
    lead = x.shape[:-3]
    x4 = x.reshape(-1, *x.shape[-3:])
    if mode == "zero":
        out = F.pad(x4, (1, 1, 1, 1), mode="constant", value=0.0)
    elif mode == "replicate":
        out = F.pad(x4, (1, 1, 1, 1), mode="replicate")
    else:
        # reflection needs >= 2 samples along an axis; size-1 axes fall back to replicate
        h, w = x4.shape[-2:]
        pw = (1, 1, 0, 0) if w > 1 else (0, 0, 0, 0)
        ph = (0, 0, 1, 1) if h > 1 else (0, 0, 0, 0)
        out = F.pad(x4, pw, mode="reflect") if w > 1 else x4
        out = F.pad(out, ph, mode="reflect") if h > 1 else out
        if w == 1:
            out = F.pad(out, (1, 1, 0, 0), mode="replicate")
        if h == 1:
            out = F.pad(out, (0, 0, 1, 1), mode="replicate")
    return out.reshape(*lead, *out.shape[-3:])


def local_stats(x: torch.Tensor, cfg: NormConfig = DEFAULT_CFG) -> StyleStats:
    """Mean and population std over each 3x3 window (the position and its eight neighbours).

    Borders are padded with ``cfg.neighborhood_pad``; height-1 maps are thereby
    padded vertically as well.
    """
    _check_map(x)
    c, h, w = x.shape[-3:]
    xp = _pad_neighborhood(x, cfg.neighborhood_pad)
    xp4 = xp.reshape(-1, c, h + 2, w + 2)
    win = F.unfold(xp4, kernel_size=3).reshape(-1, c, 9, h, w)
    # statistics of offsets from the window centre: constant windows give mu == x, sigma == 0 exactly
    centre = x.reshape(-1, c, h, w)
    d = win - centre.unsqueeze(2)
    m = d.mean(dim=2)
    var = ((d - m.unsqueeze(2)) ** 2).mean(dim=2)
    mu = centre + m
    sigma = safe_sqrt(var)
    shape = x.shape
    return StyleStats(mu.reshape(shape), sigma.reshape(shape))


def attention_weights(K: torch.Tensor, Q: torch.Tensor) -> torch.Tensor:
    """Softmax(K^T Q / sqrt(C)) normalised over style (key) positions.

    Returns ``... x N_s x N_q``; every column is a distribution over keys.
    """
    if K.shape[-3] != Q.shape[-3]:
        raise ValueError(f"channel mismatch: K has {K.shape[-3]}, Q has {Q.shape[-3]}")
    c = K.shape[-3]
    k = K.flatten(-2)
    q = Q.flatten(-2)
    logits = k.transpose(-2, -1) @ q / math.sqrt(c)
    return torch.softmax(logits, dim=-2)


def _apply_attention(stats: StyleStats, A: torch.Tensor, q_hw: tuple[int, int]) -> StyleStats:
    c = stats.mu.shape[-3]
    lead = stats.mu.shape[:-3]
    mu = (stats.mu.flatten(-2) @ A).reshape(*lead, c, *q_hw)
    sigma = (stats.sigma.flatten(-2) @ A).reshape(*lead, c, *q_hw)
    return StyleStats(mu, sigma)


def similarity_rearrange(K: torch.Tensor, Q: torch.Tensor, V: StyleStats) -> tuple[StyleStats, torch.Tensor]:
    """Rearrange style stats ``V`` (laid out like ``K``) onto the positions of ``Q``."""
    if K.shape[-3] != Q.shape[-3]:
        raise ValueError(f"channel mismatch: K has {K.shape[-3]}, Q has {Q.shape[-3]}")
    if V.mu.shape != K.shape or V.sigma.shape != K.shape:
        raise ValueError(f"style stats shape {tuple(V.mu.shape)} does not match K {tuple(K.shape)}")
    A = attention_weights(K, Q)
    return _apply_attention(V, A, tuple(Q.shape[-2:])), A


def denormalize(Qn: torch.Tensor, stats: StyleStats) -> torch.Tensor:
    if Qn.shape != stats.mu.shape or Qn.shape != stats.sigma.shape:
        raise ValueError(f"shape mismatch: content {tuple(Qn.shape)} vs stats {tuple(stats.mu.shape)}")
    return Qn * stats.sigma + stats.mu


def siman_transfer(
    content_feat: torch.Tensor, style_feat: torch.Tensor, cfg: NormConfig = DEFAULT_CFG
) -> tuple[torch.Tensor, torch.Tensor]:
    """Re-style ``content_feat`` with local statistics of ``style_feat`` picked by content similarity.

    Returns the de-normalised feature map and the ``N_s x N_q`` attention map.
    """
    if content_feat.shape[-3] != style_feat.shape[-3]:
        raise ValueError(
            f"channel mismatch: content has {content_feat.shape[-3]}, style has {style_feat.shape[-3]}"
        )
    K = instance_norm(style_feat, cfg)
    Q = instance_norm(content_feat, cfg)
    V = local_stats(style_feat, cfg)
    stats, A = similarity_rearrange(K, Q, V)
    return denormalize(Q, stats), A


def global_stats(x: torch.Tensor) -> StyleStats:
    """Per-channel mean and population std, kept as broadcastable ``C x 1 x 1`` maps."""
    ref = x[..., :1, :1]
    m = (x - ref).mean(dim=(-2, -1), keepdim=True)
    var = ((x - ref - m) ** 2).mean(dim=(-2, -1), keepdim=True)
    return StyleStats(ref + m, safe_sqrt(var))


def adain(content_feat: torch.Tensor, style_feat: torch.Tensor, cfg: NormConfig = DEFAULT_CFG) -> torch.Tensor:
    """AdaIN baseline: instance-normalised content scaled/shifted by global style stats."""
    if content_feat.shape[-3] != style_feat.shape[-3] or content_feat.shape[:-3] != style_feat.shape[:-3]:
        raise ValueError(
            f"shape mismatch: content {tuple(content_feat.shape)} vs style {tuple(style_feat.shape)}"
        )
    _check_map(style_feat, "style_feat")
    g = global_stats(style_feat)
    return instance_norm(content_feat, cfg) * g.sigma + g.mu


def color_interpolate(
    Q: torch.Tensor, K: torch.Tensor, src: StyleStats, tgt: StyleStats, alpha: float
) -> torch.Tensor:
    """Blend the source stats with target stats rearranged onto Q, then de-normalise Q.

    ``Q``/``src`` come from the source image, ``K``/``tgt`` from the target image.
    """
    _check_alpha(alpha)
    rearranged, _ = similarity_rearrange(K, Q, tgt)
    mu = (1 - alpha) * src.mu + alpha * rearranged.mu
    sigma = (1 - alpha) * src.sigma + alpha * rearranged.sigma
    return denormalize(Q, StyleStats(mu, sigma))


def glyph_interpolate(Q: torch.Tensor, K: torch.Tensor, src: StyleStats, alpha: float) -> torch.Tensor:
    """Blend source content with the target glyph carried over into the source style.

    The target content ``K`` is re-styled with source stats via attention with
    query/key roles swapped; the source side is de-normalised with its own stats
    so both endpoints live in the same (styled) feature space.
    """
    _check_alpha(alpha)
    if Q.shape != K.shape:
        raise ValueError(f"glyph interpolation needs equal-shape maps, got {tuple(Q.shape)} and {tuple(K.shape)}")
    rearranged, _ = similarity_rearrange(Q, K, src)
    k_styled = denormalize(K, rearranged)
    q_styled = denormalize(Q, src)
    return (1 - alpha) * q_styled + alpha * k_styled
