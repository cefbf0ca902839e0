"""File-contract IO: NPY v1.0 tensors and 8-column dataset manifests.

The bridge talks to the detection toolkit purely through files, so this
module implements the shared contract directly on numpy + csv rather
than importing the toolkit.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MANIFEST_COLUMNS = ("id", "split", "embedding", "dsc", "hd", "nsd", "logits", "stack")


class BridgeError(Exception):
    """Any bridge failure that should become a JSON error report."""


@dataclass(frozen=True)
class Record:
    id: str
    split: str
    embedding: Path
    dsc: str = ""
    hd: str = ""
    nsd: str = ""
    logits: str = ""
    stack: str = ""


def load_manifest(path: Path) -> list[Record]:
    base = path.parent
    records = []
    seen = set()
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise BridgeError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise BridgeError(f"{path}: missing manifest column(s) {', '.join(missing)}")
        for row in reader:
            cell = lambda col: (row.get(col) or "").strip()  # short rows yield None
            rid = cell("id")
            if not rid:
                raise BridgeError(f"{path}: empty id")
            if rid in seen:
                raise BridgeError(f"{path}: duplicate id {rid!r}")
            seen.add(rid)
            split = cell("split")
            if split not in ("train", "test"):
                raise BridgeError(f"{path}: id {rid!r} has split {split!r}")
            embedding = cell("embedding")
            if not embedding:
                raise BridgeError(f"{path}: id {rid!r} has no embedding path")
            records.append(
                Record(
                    id=rid,
                    split=split,
                    embedding=base / embedding,
                    dsc=cell("dsc"),
                    hd=cell("hd"),
                    nsd=cell("nsd"),
                    logits=cell("logits"),
                    stack=cell("stack"),
                )
            )
    if not records:
        raise BridgeError(f"{path}: manifest has no rows")
    return records


def load_embedding(record: Record) -> np.ndarray:
    try:
        arr = np.load(record.embedding)
    except (OSError, ValueError) as exc:
        raise BridgeError(f"id {record.id!r}: cannot read {record.embedding}: {exc}") from exc
    flat = np.asarray(arr, dtype=np.float64).reshape(-1)
    if not np.isfinite(flat).all():
        raise BridgeError(f"id {record.id!r}: embedding contains NaN/Inf")
    return flat


def write_embedding(vector: np.ndarray, path: Path) -> None:
    # np.save emits exactly the NPY v1.0 C-order <f8 layout the toolkit reads
    np.save(path, np.ascontiguousarray(np.asarray(vector, dtype=np.float64)))


def write_manifest(records: list[Record], path: Path) -> None:
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            rel = os.path.relpath(r.embedding.resolve(), base)
            writer.writerow([r.id, r.split, rel, r.dsc, r.hd, r.nsd, r.logits, r.stack])


def with_embedding(record: Record, path: Path) -> Record:
    return replace(record, embedding=path)
