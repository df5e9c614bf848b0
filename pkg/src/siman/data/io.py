"""Image-folder ingestion and JSON-lines manifests."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .imageops import load_png

LABELS_FILE = "labels.tsv"


def read_labels(path: str | Path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'filename<TAB>text'")
            name, text = line.split("\t", 1)
            labels[name] = text
    return labels


def write_labels(path: str | Path, rows: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, text in rows:
            fh.write(f"{name}\t{text}\n")


def load_image_folder(folder: str | Path) -> list[dict]:
    """PNG files in ``folder`` (sorted), each as ``{"path", "image", "text"}``; text is None without labels."""
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder {folder} does not exist")
    labels = read_labels(folder / LABELS_FILE) if (folder / LABELS_FILE).exists() else {}
    out = []
    for p in sorted(folder.glob("*.png")):
        out.append({"path": str(p), "image": load_png(p), "text": labels.get(p.name)})
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
