"""Checkpoint archive.

A checkpoint is one zip file holding

* ``meta.json``   -- arch spec, iteration counter, numpy RNG state, free-form config
* ``params.npz``  -- flat table ``<network>/<stage-qualified name>`` -> little-endian float32
* ``optim.npz`` / ``optim.json`` -- optimizer moment tensors (float32) and hyper-parameters
* ``rng_torch.npy`` -- torch CPU generator state

Writes go to a temp file first and are renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch
from torch import nn

FORMAT_VERSION = 1


def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def flat_state(modules: dict[str, nn.Module]) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    for prefix, mod in modules.items():
        for name, t in mod.state_dict().items():
            out[f"{prefix}/{name}"] = t.detach().cpu().numpy().astype("<f4")
    return out


def _optim_tables(optimizers: dict[str, torch.optim.Optimizer]):
    arrays, meta = {}, {}
    for name, opt in (optimizers or {}).items():
        sd = opt.state_dict()
        meta[name] = {"param_groups": sd["param_groups"], "state": {}}
        for idx, st in sd["state"].items():
            keys = {}
            for k, v in st.items():
                if torch.is_tensor(v):
                    arrays[f"{name}/{idx}/{k}"] = v.detach().cpu().numpy().astype("<f4")
                    keys[k] = "tensor"
                else:
                    keys[k] = v
            meta[name]["state"][str(idx)] = keys
    return arrays, meta


def save_checkpoint(
    path: str | Path,
    modules: dict[str, nn.Module],
    *,
    spec: dict | None = None,
    iteration: int = 0,
    optimizers: dict[str, torch.optim.Optimizer] | None = None,
    np_rng: np.random.Generator | None = None,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": spec,
        "iteration": int(iteration),
        "np_rng": np_rng.bit_generator.state if np_rng is not None else None,
        "extra": extra or {},
    }
    opt_arrays, opt_meta = _optim_tables(optimizers or {})
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
            zf.writestr("params.npz", _npz_bytes(flat_state(modules)))
            zf.writestr("optim.npz", _npz_bytes(opt_arrays))
            zf.writestr("optim.json", json.dumps(opt_meta, sort_keys=True))
            buf = io.BytesIO()
            np.save(buf, torch.get_rng_state().numpy())
            zf.writestr("rng_torch.npy", buf.getvalue())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


class Checkpoint:
    """Read-only view of a checkpoint archive."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with zipfile.ZipFile(self.path) as zf:
            self.meta = json.loads(zf.read("meta.json"))
            with np.load(io.BytesIO(zf.read("params.npz"))) as z:
                self.params = OrderedDict((k, z[k]) for k in z.files)
            with np.load(io.BytesIO(zf.read("optim.npz"))) as z:
                self._optim_arrays = {k: z[k] for k in z.files}
            self._optim_meta = json.loads(zf.read("optim.json"))
            self._torch_rng = np.load(io.BytesIO(zf.read("rng_torch.npy")))

    @property
    def iteration(self) -> int:
        return self.meta["iteration"]

    @property
    def spec(self) -> dict | None:
        return self.meta["spec"]

    @property
    def extra(self) -> dict:
        return self.meta.get("extra", {})

    def module_state(self, prefix: str) -> "OrderedDict[str, torch.Tensor]":
        p = prefix + "/"
        return OrderedDict((k[len(p):], torch.from_numpy(v.copy())) for k, v in self.params.items() if k.startswith(p))

    def load_module(self, prefix: str, module: nn.Module, strict: bool = True) -> None:
        state = self.module_state(prefix)
        if not state:
            raise KeyError(f"checkpoint {self.path} has no network {prefix!r}")
        ref = module.state_dict()
        cast = OrderedDict((k, v.to(ref[k].dtype) if k in ref else v) for k, v in state.items())
        module.load_state_dict(cast, strict=strict)

    def load_optimizer(self, name: str, opt: torch.optim.Optimizer) -> None:
        meta = self._optim_meta[name]
        state = {}
        for idx, keys in meta["state"].items():
            entry = {}
            for k, v in keys.items():
                entry[k] = torch.from_numpy(self._optim_arrays[f"{name}/{idx}/{k}"].copy()) if v == "tensor" else v
            state[int(idx)] = entry
        opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})

    def np_rng(self) -> np.random.Generator:
        g = np.random.default_rng()
        g.bit_generator.state = self.meta["np_rng"]
        return g

    def restore_torch_rng(self) -> None:
        torch.set_rng_state(torch.from_numpy(self._torch_rng.copy()))


def state_digest(module: nn.Module) -> str:
    """SHA-256 over a module's parameters and buffers, in name order."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def param_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
