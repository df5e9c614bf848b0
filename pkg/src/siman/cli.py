"""``siman`` command line: one binary, one config system, one manifest format."""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import __version__, apps
from .checkpoint import Checkpoint, state_digest
from .data.augment import AugmentConfig
from .data.imageops import load_png, save_png
from .data.io import load_image_folder, write_jsonl, write_labels
from .data.patches import crop_patch_pair, filter_usable, make_batch
from .data.render import (
    ALPHABET_94,
    TOY_ALPHABET,
    RenderError,
    check_glyphs,
    default_fonts,
    find_fonts,
    manifest_digest,
    random_text,
    render_corpus,
    standard_font,
)
from .networks import ArchSpec, build_encoder
from .recognition import (
    Alphabet,
    ProbeSpec,
    RecTrainConfig,
    build_probe,
    build_recognizer,
    evaluate,
    init_semi_supervised,
    train_recognizer,
    write_report,
)
from .trainer import TrainConfig, evaluate_l2, heldout_pairs, load_generator, pretrain

log = logging.getLogger("siman")

OUTPUT_ROOT_ENV = "SIMAN_OUTPUT_ROOT"
COMMANDS = ("pretrain", "probe", "finetune", "synthesize", "edit", "interpolate", "visualize-attention")


class ConfigError(ValueError):
    """Invalid configuration; reported with the offending field and exit code 2."""


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class DataConfig:
    source: str = "render"  # or "folder"
    n: int = 2000
    seed: int = 0
    fonts: tuple[str, ...] | None = None  # file names; None picks the default three
    font_dir: str | None = None
    alphabet: str = "toy"  # "toy" (A-Z, 0-9) or "full" (94 printable symbols)
    min_len: int = 3
    max_len: int = 8
    folder: str | None = None
    heldout: int = 128

    @property
    def symbols(self) -> str:
        return TOY_ALPHABET if self.alphabet == "toy" else ALPHABET_94


@dataclass(frozen=True)
class ProbeConfig:
    head: str = "fcn_ctc"
    hidden: int = 64
    input_width: int = 100
    frozen: bool = True
    optim: dict = field(default_factory=dict)
    labeled: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)


TOY_ARCH = {
    "family": "toy_conv",
    "widths": [16, 32, 32, 32],
    "strides": [[1, 1], [2, 2], [1, 1], [1, 1]],
    "disc_widths": [16, 32, 64, 64],
}

PRESETS = {
    "toy": {
        "seed": 0,
        "data": {"source": "render", "n": 2000, "seed": 0, "alphabet": "toy", "min_len": 3, "max_len": 8, "heldout": 128},
        "arch": TOY_ARCH,
        "train": {"batch_size": 16, "iters": 2000, "lr": 1e-3, "lr_end": 1e-4, "lambda_l2": 10.0, "betas": [0.5, 0.999]},
        "augment": {},
        "probe": {
            "head": "fcn_ctc", "hidden": 64, "input_width": 100, "frozen": True,
            "optim": {"iters": 1000, "batch_size": 16, "optimizer": "adam", "lr": 1e-3, "augment": True},
            "labeled": {"n": 100, "seed": 101},
            "test": {"n": 200, "seed": 202},
        },
        "task": {"depth": "Block3"},
    },
    "paper-synth": {
        "seed": 0,
        "data": {"source": "render", "n": 1000000, "seed": 0, "alphabet": "full", "min_len": 1, "max_len": 24, "heldout": 1024},
        "arch": {"family": "resnet29"},
        "train": {"batch_size": 256, "iters": 400000, "lr": 1e-4, "lr_end": 1e-5, "lambda_l2": 10.0, "betas": [0.5, 0.999]},
        "augment": {},
        "probe": {
            "head": "rnn2_ctc", "hidden": 256, "input_width": 100, "frozen": True,
            "optim": {"iters": 300000, "batch_size": 256, "optimizer": "adadelta", "lr": 1.0},
            "labeled": {"n": 10000, "seed": 101},
            "test": {"n": 3000, "seed": 202},
        },
        "task": {"depth": "Block3", "n_synth": 1000000, "blur_p": 0.5, "blur_kernel": [5, 11]},
    },
}

SECTIONS = ("preset", "command", "seed", "output_dir", "data", "arch", "train", "augment", "probe", "task")


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {unknown}")
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(d)
        return cls(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{section}: {err}") from None


@dataclass
class RunConfig:
    """Validated view of a run's config dict; ``raw`` is archived verbatim."""

    raw: dict
    command: str
    seed: int
    output_dir: str
    data: DataConfig
    arch: ArchSpec
    train: TrainConfig
    augment: AugmentConfig
    probe: ProbeConfig
    task: dict

    @classmethod
    def from_dict(cls, raw: dict, command: str) -> "RunConfig":
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown top-level field(s) {unknown}")
        data = dict(raw.get("data", {}))
        if data.get("fonts") is not None:
            data["fonts"] = tuple(data["fonts"])
        dc = _build(DataConfig, data, "data")
        if dc.source not in ("render", "folder"):
            raise ConfigError(f"data.source: expected 'render' or 'folder', got {dc.source!r}")
        if dc.alphabet not in ("toy", "full"):
            raise ConfigError(f"data.alphabet: expected 'toy' or 'full', got {dc.alphabet!r}")
        if dc.n < 1 or dc.min_len < 1 or dc.max_len < dc.min_len:
            raise ConfigError("data: need n >= 1 and 1 <= min_len <= max_len")
        arch = _build(ArchSpec, raw.get("arch", {}), "arch")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed: expected an integer")
        train = _build(TrainConfig, {"seed": seed, **raw.get("train", {})}, "train")
        aug = _build(AugmentConfig, raw.get("augment", {}), "augment")
        probe = _build(ProbeConfig, raw.get("probe", {}), "probe")
        try:
            ProbeSpec(head=probe.head, hidden=probe.hidden, input_width=probe.input_width)
            RecTrainConfig.from_dict(probe.optim)
        except ValueError as err:
            raise ConfigError(f"probe: {err}") from None
        out = raw.get("output_dir") or f"{command}-{config_hash(raw)[:10]}"
        return cls(raw, command, seed, out, dc, arch, train, aug, probe, dict(raw.get("task", {})))

    def probe_spec(self) -> ProbeSpec:
        return ProbeSpec(head=self.probe.head, hidden=self.probe.hidden, input_width=self.probe.input_width)

    def rec_train(self, seed: int | None = None) -> RecTrainConfig:
        d = dict(self.probe.optim)
        d["seed"] = self.seed if seed is None else seed
        return RecTrainConfig.from_dict(d)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def load_config(path: str | None, preset: str | None, overrides: dict) -> dict:
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    preset = preset or raw.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; available {sorted(PRESETS)}")
        raw = deep_merge(PRESETS[preset], raw)
        raw["preset"] = preset
    return deep_merge(raw, overrides)


def set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


# ---------------------------------------------------------------- data

def resolve_fonts(dc: DataConfig) -> list[Path]:
    if dc.font_dir is not None and not Path(dc.font_dir).is_dir():
        raise ConfigError(f"data.font_dir: {dc.font_dir} does not exist")
    if dc.fonts:
        fonts = find_fonts(dc.font_dir, list(dc.fonts))
        missing = sorted(set(dc.fonts) - {f.name for f in fonts})
        if missing:
            raise ConfigError(f"data.fonts: not found: {missing}")
    else:
        fonts = default_fonts(dc.font_dir)
    if not fonts:
        raise ConfigError("data.fonts: no usable font found")
    for f in fonts:
        try:
            check_glyphs(dc.symbols, str(f))
        except RenderError as err:
            raise ConfigError(f"data.fonts: {err}") from None
    return fonts


def load_dataset(dc: DataConfig, n: int | None = None, seed: int | None = None):
    """``(images, texts, input_record)`` for a render or folder data section."""
    if dc.source == "folder":
        if not dc.folder or not Path(dc.folder).is_dir():
            raise ConfigError(f"data.folder: {dc.folder!r} is not a directory")
        items = load_image_folder(dc.folder)
        if n is not None:
            items = items[:n]
        return [it["image"] for it in items], [it["text"] for it in items], {"folder": str(dc.folder), "n": len(items)}
    fonts = resolve_fonts(dc)
    samples, records = render_corpus(n or dc.n, fonts, seed=dc.seed if seed is None else seed, alphabet=dc.symbols,
                                     min_len=dc.min_len, max_len=dc.max_len)
    return ([s.image for s in samples], [s.text for s in samples],
            {"render_seed": dc.seed if seed is None else seed, "n": len(samples), "manifest_sha256": manifest_digest(records)})


def alphabet_for(dc: DataConfig) -> Alphabet:
    return Alphabet(dc.symbols)


# ---------------------------------------------------------------- run bookkeeping

def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        out = Path(cfg.output_dir)
        self.dir = out if out.is_absolute() else output_root() / out
        self.dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict = {}
        self.metrics: dict = {}
        (self.dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True))

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def finish(self) -> Path:
        artifacts = []
        for p in sorted(self.dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                artifacts.append({"path": str(p.relative_to(self.dir)), "sha256": file_digest(p)})
        manifest = {
            "command": self.cfg.command,
            "config_hash": config_hash(self.cfg.raw),
            "code_version": __version__,
            "torch_version": torch.__version__,
            "inputs": self.inputs,
            "artifacts": artifacts,
            "metrics": self.metrics,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _checkpoint(cfg: RunConfig) -> Path:
    ck = cfg.task.get("checkpoint")
    if not ck:
        raise ConfigError("task.checkpoint: required for this command")
    if not Path(ck).is_file():
        raise ConfigError(f"task.checkpoint: {ck} does not exist")
    return Path(ck)


def _png(cfg: RunConfig, key: str) -> np.ndarray:
    p = cfg.task.get(key)
    if not p or not Path(p).is_file():
        raise ConfigError(f"task.{key}: {p!r} is not an image file")
    return load_png(p)


def _font(cfg: RunConfig) -> Path:
    name = cfg.task.get("font")
    if name:
        found = find_fonts(cfg.data.font_dir, [name])
        if not found:
            raise ConfigError(f"task.font: {name} not found")
        return found[0]
    try:
        return standard_font(cfg.data.font_dir)
    except (RenderError, FileNotFoundError) as err:
        raise ConfigError(f"task.font: {err}") from None


# ---------------------------------------------------------------- commands

def cmd_pretrain(cfg: RunConfig, resume: str | None = None) -> Run:
    if cfg.data.source == "render":
        resolve_fonts(cfg.data)  # fail before any training step
    if resume and not Path(resume).is_file():
        raise ConfigError(f"--resume: {resume} does not exist")
    run = Run(cfg)
    images, _, rec = load_dataset(cfg.data)
    run.inputs["data"] = rec
    pool = filter_usable(images)
    if len(pool) <= cfg.data.heldout:
        raise ConfigError(f"data: only {len(pool)} usable images, need more than heldout={cfg.data.heldout}")
    train_pool, held = pool[: len(pool) - cfg.data.heldout], pool[len(pool) - cfg.data.heldout:]
    eval_pairs = heldout_pairs(held, cfg.data.heldout, cfg.augment, cfg.seed)
    ck_dir = run.path("checkpoints")
    final = pretrain(cfg.arch, cfg.train, train_pool, ck_dir, aug=cfg.augment, resume=resume)
    initial = load_generator(ck_dir / "ckpt_000000.zip") if (ck_dir / "ckpt_000000.zip").exists() else None
    run.metrics["heldout_l2_final"] = evaluate_l2(load_generator(final), eval_pairs)
    if initial is not None:
        run.metrics["heldout_l2_initial"] = evaluate_l2(initial, eval_pairs)
        run.metrics["heldout_l2_ratio"] = run.metrics["heldout_l2_final"] / run.metrics["heldout_l2_initial"]
    run.metrics["usable_images"] = len(pool)
    (run.dir / "summary.json").write_text(json.dumps(run.metrics, indent=2, sort_keys=True))
    run.finish()
    return run


def _labeled(cfg: RunConfig, which: str, n_override: int | None = None):
    d = {"n": 100, "seed": 101} if which == "labeled" else {"n": 200, "seed": 202}
    d.update(getattr(cfg.probe, which))
    n = n_override or d["n"]
    return load_dataset(cfg.data, n=n, seed=d["seed"])


def _arch_from_checkpoint(ck: Path) -> ArchSpec:
    return ArchSpec.from_dict(Checkpoint(ck).spec)


def cmd_probe(cfg: RunConfig) -> Run:
    ck = _checkpoint(cfg)
    arch = _arch_from_checkpoint(ck)
    if cfg.task.get("family") and cfg.task["family"] != arch.family:
        raise ConfigError(f"task.family: checkpoint is {arch.family}, probe expects {cfg.task['family']}")
    run = Run(cfg)
    tr_x, tr_y, tr_rec = _labeled(cfg, "labeled")
    te_x, te_y, te_rec = _labeled(cfg, "test")
    run.inputs.update(checkpoint=file_digest(ck), labeled=tr_rec, test=te_rec)
    torch.manual_seed(cfg.seed)
    enc = build_encoder(arch)
    Checkpoint(ck).load_module("encoder", enc)
    model = build_probe(cfg.probe_spec(), enc, frozen=cfg.probe.frozen, alphabet=alphabet_for(cfg.data))
    before = state_digest(model.encoder)
    train_recognizer(model, tr_x, tr_y, cfg.rec_train(), log_path=run.path("probe_losses.jsonl"))
    report = evaluate(model, te_x, te_y, dataset_id=cfg.task.get("dataset_id", "test"),
                      case_sensitive=cfg.task.get("case_sensitive", True))
    report["probe"] = asdict(cfg.probe_spec())
    report["frozen"] = cfg.probe.frozen
    report["encoder_sha256_before"] = before
    report["encoder_sha256_after"] = state_digest(model.encoder)
    write_report(report, run.path("report.json"), run.path("predictions.tsv"))
    run.metrics.update(word_acc=report["word_acc"], acc_ed1=report["acc_ed1"], n=report["n"])
    run.finish()
    return run


def finetune_once(cfg: RunConfig, arch: ArchSpec, ck: Path | None, depth: str, tr_x, tr_y, te_x, te_y, seed: int,
                  log_path: Path | None = None) -> dict:
    torch.manual_seed(seed)
    model = build_recognizer(arch, cfg.probe_spec(), alphabet_for(cfg.data))
    if ck is not None:
        init_semi_supervised(model, ck, depth)
    train_recognizer(model, tr_x, tr_y, cfg.rec_train(seed), log_path=log_path)
    return evaluate(model, te_x, te_y, case_sensitive=cfg.task.get("case_sensitive", True))


def cmd_finetune(cfg: RunConfig, paired: bool = False) -> Run:
    ck = _checkpoint(cfg)
    arch = _arch_from_checkpoint(ck)
    depth = cfg.task.get("depth", "Block3")
    names = build_encoder(arch).stage_names
    if depth != "full" and depth not in names:
        raise ConfigError(f"task.depth: {depth!r} not among {names + ['full']}")
    labeled = {"n": 100, "seed": 101}
    labeled.update(cfg.probe.labeled)
    subset = int(cfg.task.get("subset", labeled["n"]))
    if subset > labeled["n"]:
        raise ConfigError(f"task.subset: {subset} exceeds the labeled set size {labeled['n']}")
    run = Run(cfg)
    tr_x, tr_y, tr_rec = _labeled(cfg, "labeled")
    tr_x, tr_y = tr_x[:subset], tr_y[:subset]
    te_x, te_y, te_rec = _labeled(cfg, "test")
    run.inputs.update(checkpoint=file_digest(ck), labeled=tr_rec, test=te_rec, subset=subset)
    pre = finetune_once(cfg, arch, ck, depth, tr_x, tr_y, te_x, te_y, cfg.seed, run.path("finetune_losses.jsonl"))
    write_report(pre, run.path("report.json"), run.path("predictions.tsv"))
    run.metrics.update(word_acc=pre["word_acc"], acc_ed1=pre["acc_ed1"], depth=depth)
    if paired:
        base = finetune_once(cfg, arch, None, depth, tr_x, tr_y, te_x, te_y, cfg.seed, run.path("baseline_losses.jsonl"))
        write_report(base, run.path("baseline_report.json"), run.path("baseline_predictions.tsv"))
        delta = {"dataset": pre["dataset"], "word_acc_delta": pre["word_acc"] - base["word_acc"],
                 "acc_ed1_delta": pre["acc_ed1"] - base["acc_ed1"]}
        (run.dir / "delta.json").write_text(json.dumps(delta, indent=2, sort_keys=True))
        run.metrics.update(baseline_word_acc=base["word_acc"], word_acc_delta=delta["word_acc_delta"])
    run.finish()
    return run


def cmd_synthesize(cfg: RunConfig) -> Run:
    ck = _checkpoint(cfg)
    font = _font(cfg)
    n = int(cfg.task.get("n_synth", 16))
    run = Run(cfg)
    styles, _, style_rec = load_dataset(cfg.data, n=cfg.task.get("n_styles", cfg.data.n))
    rng = np.random.default_rng(cfg.seed)
    texts = cfg.task.get("texts") or [random_text(rng, cfg.data.symbols, cfg.data.min_len, cfg.data.max_len) for _ in range(n)]
    gen = load_generator(ck)
    out = apps.synthesize(gen, styles, texts, font, rng, sketch=cfg.task.get("sketch", True),
                          blur_p=float(cfg.task.get("blur_p", 0.0)), blur_kernel=tuple(cfg.task.get("blur_kernel", (5, 11))))
    rows = []
    for i, (img, text, k) in enumerate(out):
        name = f"{i:07d}.png"
        save_png(img, run.path("images", name))
        rows.append((name, text))
    write_labels(run.path("images", "labels.tsv"), rows)
    write_jsonl(run.path("synthesis.jsonl"), [{"file": r[0], "text": r[1], "style_index": o[2]} for r, o in zip(rows, out)])
    run.inputs.update(checkpoint=file_digest(ck), styles=style_rec, font=font.name, sampling="uniform with replacement")
    run.metrics["n"] = len(rows)
    run.finish()
    return run


def cmd_edit(cfg: RunConfig) -> Run:
    ck = _checkpoint(cfg)
    source = _png(cfg, "source")
    target = cfg.task.get("target")
    if target is None or target == "":
        raise ConfigError("task.target: a non-empty target text is required")
    font = _font(cfg)
    try:
        check_glyphs(target, str(font))
    except RenderError as err:
        raise ConfigError(f"task.target: {err}") from None
    size = cfg.task.get("resize")
    run = Run(cfg)
    out = apps.edit(load_generator(ck), source, target, font, tuple(size) if size else None)
    save_png(out, run.path("edited.png"))
    run.inputs.update(checkpoint=file_digest(ck), source=file_digest(Path(cfg.task["source"])), target=target, font=font.name)
    run.finish()
    return run


def cmd_interpolate(cfg: RunConfig) -> Run:
    ck = _checkpoint(cfg)
    a, b = _png(cfg, "image_a"), _png(cfg, "image_b")
    mode = cfg.task.get("mode", "color")
    steps = int(cfg.task.get("steps", 4))
    if mode not in ("color", "glyph"):
        raise ConfigError(f"task.mode: expected 'color' or 'glyph', got {mode!r}")
    if steps < 1:
        raise ConfigError("task.steps: must be >= 1")
    if mode == "glyph" and (cfg.task.get("text_a") is None or cfg.task.get("text_a") != cfg.task.get("text_b")):
        raise ConfigError("task.text_a/text_b: glyph mode needs the same string in both images")
    run = Run(cfg)
    frames = apps.interpolate(load_generator(ck), a, b, mode, steps, cfg.task.get("text_a"), cfg.task.get("text_b"))
    apps.save_frames(frames, run.path("frames"), mode)
    run.inputs.update(checkpoint=file_digest(ck), image_a=file_digest(Path(cfg.task["image_a"])),
                      image_b=file_digest(Path(cfg.task["image_b"])))
    run.metrics.update(frames=len(frames), alphas=[i / steps for i in range(steps + 1)])
    run.finish()
    return run


def cmd_visualize_attention(cfg: RunConfig) -> Run:
    ck = _checkpoint(cfg)
    gen = load_generator(ck)
    if cfg.task.get("image"):
        img = _png(cfg, "image")
        usable = filter_usable([img])
        if not usable:
            raise ConfigError("task.image: too small to crop a patch pair from")
        pair = crop_patch_pair(usable[0], np.random.default_rng(cfg.seed))
        style, content = pair.style, pair.content
    else:
        style, content = _png(cfg, "style"), _png(cfg, "content")
    queries = cfg.task.get("queries")
    if queries is None:
        _, hq, wq = gen.encoder.spec.encoder_output_shape(*apps.prepare(content, gen).shape[1:])
        queries = [[hq // 2, x] for x in range(wq)]
    run = Run(cfg)
    try:
        maps, summary = apps.attention_maps(gen, style, content, [tuple(q) for q in queries])
    except IndexError as err:
        raise ConfigError(f"task.queries: {err}") from None
    prepped = apps.prepare(style, gen)
    for (qy, qx), m in zip(queries, maps):
        save_png(apps.heatmap_overlay(prepped, m), run.path("heatmaps", f"q{qy:02d}_{qx:02d}.png"))
    save_png(prepped, run.path("style.png"))
    save_png(apps.prepare(content, gen), run.path("content.png"))
    (run.dir / "attention.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    run.inputs["checkpoint"] = file_digest(ck)
    run.metrics["queries"] = len(maps)
    run.finish()
    return run


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siman", description="Similarity-aware normalization toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--output-dir")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--checkpoint")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override any config field, e.g. --set task.steps=8")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "pretrain":
            sp.add_argument("--iters", type=int)
            sp.add_argument("--batch", type=int)
            sp.add_argument("--lambda", dest="lambda_l2", type=float)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--lr-end", type=float)
            sp.add_argument("--ckpt-every", type=int)
            sp.add_argument("--resume")
        if name == "finetune":
            sp.add_argument("--depth")
            sp.add_argument("--subset", type=int)
            sp.add_argument("--paired", action="store_true")
    return p


def overrides_from_args(args) -> dict:
    over: dict = {}
    for attr, key in (("iters", "train.iters"), ("batch", "train.batch_size"), ("lambda_l2", "train.lambda_l2"),
                      ("lr", "train.lr"), ("lr_end", "train.lr_end"), ("ckpt_every", "train.ckpt_every"),
                      ("checkpoint", "task.checkpoint"), ("depth", "task.depth"), ("subset", "task.subset"),
                      ("output_dir", "output_dir")):
        v = getattr(args, attr, None)
        if v is not None:
            set_path(over, key, v)
    if args.seed is not None:
        over["seed"] = args.seed
        set_path(over, "train.seed", args.seed)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, val = item.split("=", 1)
        try:
            val = json.loads(val)
        except json.JSONDecodeError:
            pass
        set_path(over, key, val)
    return over


def run_command(argv: list[str] | None = None) -> Run:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    raw = load_config(args.config, args.preset, overrides_from_args(args))
    raw.setdefault("command", args.command)
    cfg = RunConfig.from_dict(raw, args.command)
    if args.command == "pretrain":
        return cmd_pretrain(cfg, resume=args.resume)
    if args.command == "finetune":
        return cmd_finetune(cfg, paired=args.paired)
    handler = {
        "probe": cmd_probe,
        "synthesize": cmd_synthesize,
        "edit": cmd_edit,
        "interpolate": cmd_interpolate,
        "visualize-attention": cmd_visualize_attention,
    }[args.command]
    return handler(cfg)


def main(argv: list[str] | None = None) -> int:
    try:
        run = run_command(argv)
    except ConfigError as err:
        print(f"siman: config error: {err}", file=sys.stderr)
        return 2
    except SystemExit as err:  # argparse
        return int(err.code or 0) if isinstance(err.code, int) else 2
    except Exception as err:  # noqa: BLE001 - surface any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"siman: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    print(run.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
