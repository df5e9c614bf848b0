"""Recognizers and probes: CTC and attention objectives, decoding, metrics, semi-supervised init."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import Checkpoint
from .data.augment import AugmentConfig, augment as photometric
from .data.imageops import resize
from .data.render import ALPHABET_94, TOY_ALPHABET
from .networks import ArchSpec, Encoder, build_encoder, init_weights, stage_state

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- alphabet

class Alphabet:
    """Ordered symbols plus one special class at index 0 (CTC blank / attention end-of-sequence)."""

    special = 0

    def __init__(self, symbols: str | Sequence[str]):
        symbols = list(symbols)
        if not symbols:
            raise ValueError("alphabet is empty")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be unique")
        self.symbols = symbols
        self._index = {s: i + 1 for i, s in enumerate(symbols)}

    @classmethod
    def default(cls) -> "Alphabet":
        return cls(ALPHABET_94)

    @classmethod
    def toy(cls) -> "Alphabet":
        return cls(TOY_ALPHABET)

    @property
    def blank(self) -> int:
        return self.special

    @property
    def eos(self) -> int:
        return self.special

    def __len__(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as err:
            raise ValueError(f"symbol {err.args[0]!r} is not in the alphabet") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i - 1] for i in ids if i != self.special)

    def to_json(self) -> str:
        return "".join(self.symbols)


# ---------------------------------------------------------------- CTC

def collapse(path: Sequence[int], blank: int = 0) -> list[int]:
    """Merge repeats, then drop blanks."""
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def ctc_min_length(target: Sequence[int]) -> int:
    """Shortest path able to emit ``target``: one frame per symbol plus a blank between repeats."""
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


LOG_ZERO = -1e30


def ctc_nll(logits: torch.Tensor, targets: Sequence[Sequence[int]], blank: int = 0,
            lengths: Sequence[int] | None = None) -> torch.Tensor:
    """Per-sample ``-log p(target | logits)`` for ``B x T x A`` logits; +inf where infeasible.

    Standard forward recursion over the blank-augmented target, in log space.
    """
    if logits.dim() != 3:
        raise ValueError("expected B x T x A logits")
    B, T, A = logits.shape
    if len(targets) != B:
        raise ValueError(f"{B} logit sequences but {len(targets)} targets")
    lengths = [T] * B if lengths is None else list(lengths)
    lp = logits.log_softmax(-1)
    S = 2 * max((len(t) for t in targets), default=0) + 1
    ext = torch.full((B, S), blank, dtype=torch.long)
    valid = torch.zeros(B, S, dtype=torch.bool)
    skip = torch.zeros(B, S, dtype=torch.bool)
    for b, tgt in enumerate(targets):
        for k, c in enumerate(tgt):
            if not 0 <= c < A or c == blank:
                raise ValueError(f"target symbol {c} outside the alphabet (or equal to blank)")
            ext[b, 2 * k + 1] = c
        n = 2 * len(tgt) + 1
        valid[b, :n] = True
        for s in range(3, n, 2):
            skip[b, s] = ext[b, s] != ext[b, s - 2]
    neg = torch.tensor(LOG_ZERO, dtype=lp.dtype)  # finite, so unreachable cells keep clean gradients
    emit = lp.gather(2, ext[:, None, :].expand(B, T, S))  # B x T x S
    alpha = torch.full((B, S), LOG_ZERO, dtype=lp.dtype)
    alpha[:, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 1] = torch.where(valid[:, 1], emit[:, 0, 1], neg)
    ends = [2 * len(t) for t in targets]
    finals = [None] * B

    def read(a, b):
        e = ends[b]
        tail = a[b, e] if e == 0 else torch.logsumexp(a[b, e - 1:e + 1], 0)
        return -tail

    for b in range(B):
        if lengths[b] == 1:
            finals[b] = read(alpha, b)
    for t in range(1, T):
        a1 = F.pad(alpha, (1, 0), value=LOG_ZERO)[:, :S]
        a2 = F.pad(alpha, (2, 0), value=LOG_ZERO)[:, :S]
        a2 = torch.where(skip, a2, neg)
        alpha = torch.logsumexp(torch.stack([alpha, a1, a2]), 0) + emit[:, t]
        alpha = torch.where(valid, alpha, neg)
        for b in range(B):
            if lengths[b] == t + 1:
                finals[b] = read(alpha, b)
    res = torch.stack(finals)
    for b, tgt in enumerate(targets):
        if ctc_min_length(tgt) > lengths[b]:
            res = res.clone()
            res[b] = math.inf
    return res


class CTCResult(NamedTuple):
    loss: torch.Tensor
    feasible: bool


def ctc_loss(logits: torch.Tensor, target: str, alphabet: Alphabet) -> CTCResult:
    """Negative log-likelihood of ``target`` under ``T x |A|`` logits.

    A target that cannot fit in ``T`` frames yields ``CTCResult(inf, False)`` rather than raising.
    """
    ids = alphabet.encode(target)
    if logits.shape[-1] != len(alphabet):
        raise ValueError(f"logits have {logits.shape[-1]} classes, alphabet has {len(alphabet)}")
    if ctc_min_length(ids) > logits.shape[0]:
        return CTCResult(torch.tensor(math.inf, dtype=logits.dtype), False)
    return CTCResult(ctc_nll(logits[None], [ids], alphabet.blank)[0], True)


def ctc_batch_loss(logits: torch.Tensor, texts: Sequence[str], alphabet: Alphabet) -> torch.Tensor:
    """Mean CTC loss over the feasible samples of a batch (infeasible ones are dropped)."""
    nll = ctc_nll(logits, [alphabet.encode(t) for t in texts], alphabet.blank)
    ok = torch.isfinite(nll)
    if not ok.any():
        return logits.sum() * 0.0
    return nll[ok].mean()


def ctc_greedy_decode(logits: torch.Tensor, alphabet: Alphabet) -> str:
    """Best path: per-frame argmax, merge repeats, drop blanks."""
    return alphabet.decode(collapse(logits.argmax(-1).tolist(), alphabet.blank))


# ---------------------------------------------------------------- attention decoder

class AttentionDecoder(nn.Module):
    """Additive-attention GRU decoder.

    e = w^T tanh(W_s s + W_h h + b_e); alpha = softmax(e); g = alpha h;
    s' = GRU(s, [onehot(y_prev), g]); logits = W s' + b.
    The previous-symbol vocabulary has one extra entry, the start token.
    """

    def __init__(self, feat_dim: int, hidden: int, n_classes: int, att_dim: int | None = None):
        super().__init__()
        att_dim = att_dim or hidden
        self.n_classes = n_classes
        self.hidden = hidden
        self.W_s = nn.Linear(hidden, att_dim, bias=False)
        self.W_h = nn.Linear(feat_dim, att_dim)
        self.w = nn.Linear(att_dim, 1, bias=False)
        self.gru = nn.GRUCell(n_classes + 1 + feat_dim, hidden)
        self.out = nn.Linear(hidden, n_classes)

    @property
    def go(self) -> int:
        return self.n_classes

    def init_state(self, batch: int, like: torch.Tensor) -> torch.Tensor:
        return like.new_zeros(batch, self.hidden)

    def step(self, s_prev: torch.Tensor, y_prev: torch.Tensor, h: torch.Tensor, h_proj: torch.Tensor | None = None):
        """One decode step for ``B x hidden`` state, ``B`` previous symbols and ``B x N x D`` features."""
        if h.shape[1] < 1:
            raise ValueError("feature sequence is empty")
        if h_proj is None:
            h_proj = self.W_h(h)
        e = self.w(torch.tanh(self.W_s(s_prev)[:, None] + h_proj)).squeeze(-1)
        alpha = e.softmax(-1)
        g = torch.bmm(alpha[:, None], h).squeeze(1)
        y = F.one_hot(y_prev, self.n_classes + 1).to(h.dtype)
        s = self.gru(torch.cat([y, g], -1), s_prev)
        return s, self.out(s), alpha

    def forward(self, h: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits ``B x L x |A|`` for padded ``B x L`` targets (EOS included)."""
        B, L = targets.shape
        s = self.init_state(B, h)
        h_proj = self.W_h(h)
        prev = torch.full((B,), self.go, dtype=torch.long)
        steps = []
        for t in range(L):
            s, logits, _ = self.step(s, prev, h, h_proj)
            steps.append(logits)
            prev = targets[:, t].clamp(min=0)
        return torch.stack(steps, 1)

    @torch.no_grad()
    def greedy(self, h: torch.Tensor, max_len: int, eos: int = 0) -> list[list[int]]:
        B = h.shape[0]
        s = self.init_state(B, h)
        h_proj = self.W_h(h)
        prev = torch.full((B,), self.go, dtype=torch.long)
        out = [[] for _ in range(B)]
        done = torch.zeros(B, dtype=torch.bool)
        for _ in range(max_len + 1):
            s, logits, _ = self.step(s, prev, h, h_proj)
            prev = logits.argmax(-1)
            for b in range(B):
                if not done[b]:
                    if prev[b] == eos:
                        done[b] = True
                    else:
                        out[b].append(int(prev[b]))
            if done.all():
                break
        return out


def attention_decode_step(decoder: AttentionDecoder, s_prev, y_prev, h):
    return decoder.step(s_prev, y_prev, h)


def attention_targets(texts: Sequence[str], alphabet: Alphabet, pad: int = -100) -> torch.Tensor:
    """Padded ``B x (max_len + 1)`` index matrix with EOS appended to every target."""
    seqs = [alphabet.encode(t) + [alphabet.eos] for t in texts]
    L = max(len(s) for s in seqs)
    out = torch.full((len(seqs), L), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s)
    return out


def attention_loss(step_logits: torch.Tensor, targets: torch.Tensor, pad: int = -100) -> torch.Tensor:
    """Summed per-step NLL (EOS step included), averaged over the batch.

    ``step_logits`` is ``L x |A|`` (one sequence) or ``B x L x |A|``.
    """
    if step_logits.dim() == 2:
        step_logits, targets = step_logits[None], targets[None]
    A = step_logits.shape[-1]
    real = targets[targets != pad]
    if ((real < 0) | (real >= A)).any():
        raise ValueError("target symbol outside the alphabet")
    nll = F.cross_entropy(step_logits.reshape(-1, A), targets.reshape(-1), ignore_index=pad, reduction="sum")
    return nll / step_logits.shape[0]


# ---------------------------------------------------------------- metrics

def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def score(preds: Sequence[str], gts: Sequence[str], case_sensitive: bool = True) -> dict:
    """Word accuracy and accuracy within edit distance one, both in percent."""
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truths differ in length")
    n = len(gts)
    exact = ed1 = 0
    records = []
    for p, g in zip(preds, gts):
        pp, gg = (p, g) if case_sensitive else (p.lower(), g.lower())
        d = levenshtein(pp, gg)
        exact += d == 0
        ed1 += d <= 1
        records.append({"gt": g, "pred": p, "edit_distance": d})
    pct = lambda k: 100.0 * k / n if n else 0.0
    return {"n": n, "word_acc": pct(exact), "acc_ed1": pct(ed1), "records": records}


# ---------------------------------------------------------------- probes / recognizers

HEADS = ("fcn_ctc", "rnn1_ctc", "rnn2_ctc", "fcn_att", "rnn1_att", "rnn2_att")


@dataclass(frozen=True)
class ProbeSpec:
    head: str = "rnn2_ctc"
    hidden: int = 256
    input_width: int = 100

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.hidden <= 0:
            raise ValueError("hidden size must be positive")

    @property
    def rnn_layers(self) -> int:
        return {"fcn": 0, "rnn1": 1, "rnn2": 2}[self.head.split("_")[0]]

    @property
    def decoder(self) -> str:
        return self.head.split("_")[1]


def preprocess(images: Sequence[np.ndarray], height: int, width: int) -> torch.Tensor:
    """Resize ``3 x H x W`` images to a fixed ``height x width`` and stack."""
    out = [img if img.shape[1:] == (height, width) else resize(img, height, width) for img in images]
    return torch.from_numpy(np.stack(out).astype(np.float32))


class Recognizer(nn.Module):
    """Backbone encoder, feature-to-sequence map, optional BiLSTM stack, CTC or attention decoder."""

    def __init__(self, encoder: Encoder, spec: ProbeSpec, alphabet: Alphabet, frozen: bool = False):
        super().__init__()
        self.encoder = encoder
        self.spec = spec
        self.alphabet = alphabet
        self.frozen = frozen
        arch = encoder.spec
        c, h, w = arch.encoder_output_shape(arch.input_height, spec.input_width)
        if w < 1:
            raise ValueError(f"input width {spec.input_width} collapses to zero frames")
        self.frames = w
        feat = c * h  # height > 1 maps are flattened into the frame vector
        self.rnn = None
        if spec.rnn_layers:
            self.rnn = nn.LSTM(feat, spec.hidden, num_layers=spec.rnn_layers, bidirectional=True, batch_first=True)
            feat = 2 * spec.hidden
        if spec.decoder == "ctc":
            self.classifier = nn.Linear(feat, len(alphabet))
            self.attention = None
        else:
            self.classifier = None
            self.attention = AttentionDecoder(feat, spec.hidden, len(alphabet))
        init_weights(self)
        if frozen:
            for p in self.encoder.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.frozen:
            self.encoder.eval()  # frozen backbone keeps its BN statistics too
        return self

    def head_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("encoder.")]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        f = self.encoder(x)
        b, c, h, w = f.shape
        seq = f.permute(0, 3, 1, 2).reshape(b, w, c * h)
        if self.rnn is not None:
            seq, _ = self.rnn(seq)
        return seq

    def forward(self, x: torch.Tensor, targets: torch.Tensor | None = None) -> torch.Tensor:
        seq = self.features(x)
        if self.classifier is not None:
            return self.classifier(seq)
        if targets is None:
            raise ValueError("attention decoding needs teacher-forcing targets during training")
        return self.attention(seq, targets)

    def loss(self, x: torch.Tensor, texts: Sequence[str]) -> torch.Tensor:
        if self.classifier is not None:
            return ctc_batch_loss(self(x), texts, self.alphabet)
        tgt = attention_targets(texts, self.alphabet)
        return attention_loss(self(x, tgt), tgt)

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> list[str]:
        seq = self.features(x)
        if self.classifier is not None:
            logits = self.classifier(seq)
            return [ctc_greedy_decode(l, self.alphabet) for l in logits]
        return [self.alphabet.decode(ids) for ids in self.attention.greedy(seq, max_len=self.frames)]


def build_probe(spec: ProbeSpec, encoder: Encoder, frozen: bool = True, alphabet: Alphabet | None = None) -> Recognizer:
    if not isinstance(encoder, Encoder):
        raise TypeError("build_probe needs an Encoder built by networks.build_encoder")
    if encoder.spec.family == "vgg_style":
        raise ValueError("vgg_style encoders are for generation, not recognition probes")
    return Recognizer(encoder, spec, alphabet or Alphabet.default(), frozen=frozen)


def build_recognizer(arch: ArchSpec, spec: ProbeSpec, alphabet: Alphabet | None = None) -> Recognizer:
    return Recognizer(build_encoder(arch), spec, alphabet or Alphabet.default(), frozen=False)


def init_semi_supervised(rec: Recognizer, checkpoint: str | Path | Checkpoint, depth: str = "Block3") -> Recognizer:
    """Copy the pretrained backbone up to ``depth`` into ``rec``; everything stays trainable."""
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint(checkpoint)
    ck_arch = ArchSpec.from_dict(ck.spec)
    arch = rec.encoder.spec
    if ck_arch.family != arch.family:
        raise ValueError(f"checkpoint family {ck_arch.family} does not match recognizer backbone {arch.family}")
    names = rec.encoder.stage_names
    if depth != "full" and depth not in names:
        raise KeyError(f"stage {depth!r} not in backbone stages {names}")
    src = ck.module_state("encoder")
    wanted = stage_state(rec.encoder, depth)
    missing = [n for n in wanted if n not in src]
    if missing:
        raise ValueError(f"checkpoint lacks backbone tensors {missing[:3]}... (stage mismatch)")
    sd = rec.encoder.state_dict()
    for n in wanted:
        if src[n].shape != sd[n].shape:
            raise ValueError(f"shape mismatch for {n}: {tuple(src[n].shape)} vs {tuple(sd[n].shape)}")
        sd[n] = src[n].to(sd[n].dtype)
    rec.encoder.load_state_dict(sd)
    rec.frozen = False
    for p in rec.parameters():
        p.requires_grad_(True)
    return rec


# ---------------------------------------------------------------- training / evaluation

@dataclass(frozen=True)
class RecTrainConfig:
    iters: int = 1000
    batch_size: int = 32
    optimizer: str = "adadelta"  # "adam" for toy runs
    lr: float = 1.0
    seed: int = 0
    grad_clip: float = 5.0
    augment: bool = False  # photometric ops plus random horizontal padding
    max_pad: float = 0.15  # fraction of the image width, per side

    def __post_init__(self):
        if self.optimizer not in ("adadelta", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.iters < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("iters >= 0, batch_size >= 1 and lr > 0 required")

    @classmethod
    def from_dict(cls, d: dict) -> "RecTrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown recognizer training fields: {sorted(unknown)}")
        return cls(**d)


def jitter(img: np.ndarray, rng: np.random.Generator, max_pad: float) -> np.ndarray:
    """Photometric augmentation, then edge-replicated padding of random width on each side."""
    out = photometric(img, AugmentConfig(), rng)
    w = out.shape[2]
    left, right = (int(v) for v in rng.integers(0, int(max_pad * w) + 1, 2))
    return np.pad(out, ((0, 0), (0, 0), (left, right)), mode="edge")


def train_recognizer(rec: Recognizer, images: Sequence[np.ndarray], texts: Sequence[str], cfg: RecTrainConfig,
                     log_path: str | Path | None = None) -> list[float]:
    """Minibatch training with sampling without replacement per epoch; returns per-step losses."""
    if len(images) != len(texts) or not len(images):
        raise ValueError("need a non-empty labeled set with one text per image")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    arch = rec.encoder.spec
    x_all = None if cfg.augment else preprocess(images, arch.input_height, rec.spec.input_width)
    params = [p for p in rec.parameters() if p.requires_grad]
    opt = (torch.optim.Adadelta(params, lr=cfg.lr) if cfg.optimizer == "adadelta"
           else torch.optim.Adam(params, lr=cfg.lr))
    rec.train()
    losses, order = [], np.array([], dtype=int)
    for it in range(cfg.iters):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(images))])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size:]
        if cfg.augment:
            x = preprocess([jitter(images[i], rng, cfg.max_pad) for i in idx], arch.input_height, rec.spec.input_width)
        else:
            x = x_all[idx]
        loss = rec.loss(x, [texts[i] for i in idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        losses.append(loss.item())
    if log_path is not None:
        Path(log_path).write_text("".join(json.dumps({"iteration": i, "loss": l}) + "\n" for i, l in enumerate(losses)))
    rec.eval()
    return losses


@torch.no_grad()
def predict_images(rec: Recognizer, images: Sequence[np.ndarray], batch_size: int = 64) -> list[str]:
    was = rec.training
    rec.eval()
    arch = rec.encoder.spec
    preds = []
    for i in range(0, len(images), batch_size):
        preds += rec.predict(preprocess(images[i:i + batch_size], arch.input_height, rec.spec.input_width))
    rec.train(was)
    return preds


def evaluate(rec: Recognizer, images: Sequence[np.ndarray], texts: Sequence[str], dataset_id: str = "eval",
             case_sensitive: bool = True) -> dict:
    preds = predict_images(rec, images)
    report = score(preds, texts, case_sensitive)
    report["dataset"] = dataset_id
    report["case_sensitive"] = case_sensitive
    return report


def write_report(report: dict, json_path: str | Path, tsv_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    if tsv_path is not None:
        with open(tsv_path, "w", encoding="utf-8") as fh:
            for r in report["records"]:
                fh.write(f"{r['gt']}\t{r['pred']}\t{r['edit_distance']}\n")
