"""Adversarial reconstruction pretraining of the encoder/decoder pair."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import core
from .checkpoint import Checkpoint, save_checkpoint
from .data.augment import AugmentConfig
from .data.io import append_jsonl, read_jsonl, write_jsonl
from .data.patches import PatchPair, make_batch, stack_batch
from .networks import ArchSpec, build_decoder, build_discriminator, build_encoder

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    iters: int = 2000
    lambda_l2: float = 10.0
    betas: tuple[float, float] = (0.5, 0.999)
    lr: float = 1e-4
    lr_end: float = 1e-5
    seed: int = 0
    ckpt_every: int = 0  # 0: only the final checkpoint
    grad_clip: float | None = None
    adversarial: bool = True
    normalization: str = "siman"  # or "adain" for the global-statistics baseline

    def __post_init__(self):
        if not self.lambda_l2 > 0:
            raise ValueError("lambda_l2 must be positive")
        if not (self.lr >= self.lr_end > 0):
            raise ValueError("learning rates must satisfy lr >= lr_end > 0")
        if self.batch_size < 1 or self.iters < 0:
            raise ValueError("batch_size must be >= 1 and iters >= 0")
        if self.normalization not in ("siman", "adain"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train fields: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class StepReport:
    iteration: int
    l2: float
    g_adv: float
    d_adv: float
    lr: float
    wall_time: float

    def losses(self) -> dict:
        return {"iteration": self.iteration, "l2": self.l2, "g_adv": self.g_adv, "d_adv": self.d_adv, "lr": self.lr}


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


# ---------------------------------------------------------------- losses

def l2_loss(rec: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared error, mean-reduced over pixels and batch."""
    if rec.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(rec.shape)} vs {tuple(target.shape)}")
    return ((rec - target) ** 2).mean()


def lsgan_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()


def lsgan_g(fake_scores: torch.Tensor) -> torch.Tensor:
    return ((fake_scores - 1) ** 2).mean()


def d_loss(D: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Discriminator objective; ``fake`` is detached so no gradient reaches the generator."""
    return lsgan_d(D(real), D(fake.detach()))


def g_adv_loss(D: nn.Module, fake: torch.Tensor) -> torch.Tensor:
    return lsgan_g(D(fake))


def lr_at(t: float, cfg: TrainConfig) -> float:
    """Linear decay from ``cfg.lr`` at t=0 to ``cfg.lr_end`` at t=iters."""
    if cfg.iters == 0:
        return cfg.lr
    frac = min(max(t / cfg.iters, 0.0), 1.0)
    return cfg.lr + (cfg.lr_end - cfg.lr) * frac


# ---------------------------------------------------------------- state

class Generator(nn.Module):
    """Encoder -> similarity-aware normalization -> decoder."""

    def __init__(self, spec: ArchSpec, normalization: str = "siman", norm_cfg: core.NormConfig = core.DEFAULT_CFG):
        super().__init__()
        self.encoder = build_encoder(spec)
        self.decoder = build_decoder(spec)
        self.normalization = normalization
        self.norm_cfg = norm_cfg

    def transfer(self, content_feat, style_feat):
        if self.normalization == "adain":
            return core.adain(content_feat, style_feat, self.norm_cfg), None
        return core.siman_transfer(content_feat, style_feat, self.norm_cfg)

    def forward(self, content: torch.Tensor, style: torch.Tensor, return_attention: bool = False):
        if content.shape[-2:] == style.shape[-2:]:
            feats = self.encoder(torch.cat([style, content]))
            f_style, f_content = feats[: len(style)], feats[len(style):]
        else:
            f_style, f_content = self.encoder(style), self.encoder(content)
        mixed, attn = self.transfer(f_content, f_style)
        rec = self.decoder(mixed)
        return (rec, attn) if return_attention else rec


class TrainState:
    def __init__(self, spec: ArchSpec, cfg: TrainConfig, aug: AugmentConfig | None = None):
        self.spec = spec
        self.cfg = cfg
        self.aug = aug or AugmentConfig()
        torch.manual_seed(cfg.seed)
        self.gen = Generator(spec, cfg.normalization)
        self.disc = build_discriminator(spec)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.rng = np.random.default_rng(cfg.seed)
        self.iteration = 0

    @property
    def encoder(self):
        return self.gen.encoder

    @property
    def decoder(self):
        return self.gen.decoder

    def modules(self) -> dict[str, nn.Module]:
        return {"encoder": self.gen.encoder, "decoder": self.gen.decoder, "discriminator": self.disc}

    def save(self, path, extra: dict | None = None) -> Path:
        meta = {"train": asdict(self.cfg), "augment": asdict(self.aug), **(extra or {})}
        return save_checkpoint(
            path, self.modules(), spec=json.loads(self.spec.to_json()), iteration=self.iteration,
            optimizers={"opt_g": self.opt_g, "opt_d": self.opt_d}, np_rng=self.rng, extra=meta,
        )

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None) -> "TrainState":
        ck = Checkpoint(path)
        spec = ArchSpec.from_dict(ck.spec)
        cfg = cfg or TrainConfig.from_dict(ck.extra["train"])
        aug = AugmentConfig.from_dict(ck.extra.get("augment", {}))
        state = cls(spec, cfg, aug)
        for name, mod in state.modules().items():
            ck.load_module(name, mod)
        ck.load_optimizer("opt_g", state.opt_g)
        ck.load_optimizer("opt_d", state.opt_d)
        state.rng = ck.np_rng()
        ck.restore_torch_rng()
        state.iteration = ck.iteration
        return state


def _tensors(batch: Sequence[PatchPair]):
    s, c, a = stack_batch(batch)
    return torch.from_numpy(s), torch.from_numpy(c), torch.from_numpy(a)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def train_step(state: TrainState, batch: Sequence[PatchPair]) -> StepReport:
    """One discriminator update followed by one encoder/decoder update."""
    t0 = time.perf_counter()
    cfg = state.cfg
    lr = lr_at(state.iteration, cfg)
    _set_lr(state.opt_g, lr)
    _set_lr(state.opt_d, lr)
    style, content, aug = _tensors(batch)
    state.gen.train()
    state.disc.train()

    rec = state.gen(aug, style)

    d_val = 0.0
    if cfg.adversarial:
        loss_d = d_loss(state.disc, style, rec)
        state.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        state.opt_d.step()
        d_val = loss_d.item()

    for p in state.disc.parameters():
        p.requires_grad_(False)
    try:
        l2 = l2_loss(rec, content)
        g_adv = g_adv_loss(state.disc, rec) if cfg.adversarial else torch.zeros(())
        loss_g = g_adv + cfg.lambda_l2 * l2
        state.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(state.gen.parameters(), cfg.grad_clip)
        values = {"l2": l2.item(), "g_adv": g_adv.item(), "d_adv": d_val}
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDiverged(f"non-finite loss at iteration {state.iteration}: {values}",
                                   {"iteration": state.iteration, "lr": lr, **values})
        state.opt_g.step()
    finally:
        for p in state.disc.parameters():
            p.requires_grad_(True)
    report = StepReport(state.iteration, values["l2"], values["g_adv"], values["d_adv"], lr,
                        time.perf_counter() - t0)
    state.iteration += 1
    return report


@torch.no_grad()
def evaluate_l2(gen: Generator, pairs: Sequence[PatchPair], batch_size: int = 64) -> float:
    """Mean reconstruction error of ``content`` from (``content_aug``, ``style``) in eval mode."""
    was = gen.training
    gen.eval()
    total, n = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        style, content, aug = _tensors(pairs[i:i + batch_size])
        rec = gen(aug, style)
        total += ((rec - content) ** 2).mean(dim=(1, 2, 3)).sum().item()
        n += len(style)
    gen.train(was)
    return total / max(n, 1)


def heldout_pairs(pool: Sequence[np.ndarray], n: int, aug: AugmentConfig, seed: int) -> list[PatchPair]:
    return make_batch(pool, n, aug, np.random.default_rng([seed, 7919]))


def pretrain(
    spec: ArchSpec,
    cfg: TrainConfig,
    pool: Sequence[np.ndarray],
    out_dir: str | Path,
    aug: AugmentConfig | None = None,
    resume: str | Path | None = None,
    eval_pairs: Sequence[PatchPair] | None = None,
    eval_every: int = 0,
) -> Path:
    """Run ``cfg.iters`` steps, checkpointing to ``out_dir``; returns the final checkpoint path.

    ``metrics.jsonl`` holds one StepReport per step without its wall time, so reruns
    compare byte-for-byte; wall times go to ``timing.jsonl``.
    """
    if not len(pool):
        raise ValueError("pretraining pool is empty after filtering")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    if resume is not None:
        state = TrainState.load(resume, cfg)
        for path in (metrics_path, timing_path):
            kept = [r for r in read_jsonl(path) if r["iteration"] < state.iteration] if path.exists() else []
            write_jsonl(path, kept)
    else:
        state = TrainState(spec, cfg, aug)
        write_jsonl(metrics_path, [])
        write_jsonl(timing_path, [])
        initial = state.save(out / "ckpt_000000.zip")
        if cfg.iters == 0:
            return initial
    while state.iteration < cfg.iters:
        batch = make_batch(pool, cfg.batch_size, state.aug, state.rng)
        try:
            report = train_step(state, batch)
        except TrainingDiverged as err:
            (out / "diverged.json").write_text(json.dumps(err.snapshot, indent=2))
            state.save(out / "diverged.zip")
            raise
        rec = report.losses()
        if eval_pairs is not None and eval_every and (state.iteration % eval_every == 0 or state.iteration == cfg.iters):
            rec["heldout_l2"] = evaluate_l2(state.gen, eval_pairs)
        append_jsonl(metrics_path, rec)
        append_jsonl(timing_path, {"iteration": report.iteration, "wall_time": report.wall_time})
        if cfg.ckpt_every and state.iteration % cfg.ckpt_every == 0 and state.iteration < cfg.iters:
            state.save(out / f"ckpt_{state.iteration:06d}.zip")
        if state.iteration % 100 == 0:
            log.info("iter %d l2 %.4f g_adv %.4f d_adv %.4f lr %.2e", state.iteration, report.l2, report.g_adv,
                     report.d_adv, report.lr)
    return state.save(out / "final.zip")


def load_generator(path, normalization: str | None = None) -> Generator:
    """Encoder/decoder pair from a pretraining checkpoint, in eval mode."""
    ck = Checkpoint(path)
    spec = ArchSpec.from_dict(ck.spec)
    train = ck.extra.get("train", {})
    gen = Generator(spec, normalization or train.get("normalization", "siman"))
    ck.load_module("encoder", gen.encoder)
    ck.load_module("decoder", gen.decoder)
    gen.eval()
    return gen
