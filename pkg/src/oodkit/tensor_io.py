"""Tensor and manifest IO.

Tensors are float64, C-order numpy arrays of rank 1..5 with all dimensions
positive. On disk they live in NPY v1.0 files (and nothing newer): magic
``\\x93NUMPY``, version bytes ``\\x01\\x00``, a 2-byte little-endian header
length, and an ASCII dict header padded with spaces to a 64-byte boundary
ending in ``\\n``. Only ``<f4`` and ``<f8`` payloads are accepted; float32
is widened to float64 on load so every downstream computation runs in
double precision.

Dataset manifests are CSV files with the fixed header
``id,split,embedding,dsc,hd,nsd,logits,stack``; an empty cell means the
field is absent. Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import ast
import csv
import os
import struct
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadValue,
    DuplicateId,
    FortranOrderUnsupported,
    InvalidShape,
    MissingColumn,
    NonFiniteValue,
    TruncatedPayload,
    UnsupportedDtype,
)

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_HEADER_ALIGN = 64
MAX_RANK = 5

MANIFEST_COLUMNS = ("id", "split", "embedding", "dsc", "hd", "nsd", "logits", "stack")
SPLITS = ("train", "test")


def _check_shape(shape: tuple[int, ...], where: str) -> None:
    if not 1 <= len(shape) <= MAX_RANK:
        raise InvalidShape(f"{where}: rank {len(shape)} outside 1..{MAX_RANK}")
    if any(not isinstance(d, int) or d < 1 for d in shape):
        raise InvalidShape(f"{where}: dimensions must be positive integers, got {shape}")


def _parse_header(header: bytes, path: Path) -> tuple[str, tuple[int, ...]]:
    try:
        meta = ast.literal_eval(header.decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise BadMagic(f"{path}: malformed NPY header") from exc
    if not isinstance(meta, dict) or not {"descr", "fortran_order", "shape"} <= set(meta):
        raise BadMagic(f"{path}: NPY header missing required keys")
    descr = meta["descr"]
    if descr not in ("<f4", "<f8"):
        raise UnsupportedDtype(f"{path}: dtype {descr!r} not supported (need <f4 or <f8)")
    if meta["fortran_order"] is not False:
        raise FortranOrderUnsupported(f"{path}: fortran_order must be False")
    shape = meta["shape"]
    if not isinstance(shape, tuple):
        raise BadMagic(f"{path}: NPY shape entry is not a tuple")
    _check_shape(shape, str(path))
    return descr, shape


def read_npy(path: str | Path, check_finite: bool = True) -> np.ndarray:
    """Read an NPY v1.0 file into a float64 C-order array.

    ``check_finite`` screens for NaN/Inf; keep it on for embeddings and
    switch it off for logits where -inf padding is legitimate.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:6] != _MAGIC or raw[6:8] != _VERSION:
        raise BadMagic(f"{path}: not an NPY v1.0 file")
    if len(raw) < 10:
        raise TruncatedPayload(f"{path}: file shorter than NPY preamble")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise TruncatedPayload(f"{path}: declared header extends past end of file")
    descr, shape = _parse_header(raw[10:header_end], path)

    itemsize = 4 if descr == "<f4" else 8
    count = int(np.prod(shape))
    expected = count * itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=descr).reshape(shape)
    arr = arr.astype(np.float64)  # copies, so the result owns its memory
    if check_finite and not np.isfinite(arr).all():
        raise NonFiniteValue(f"{path}: tensor contains NaN/Inf")
    return arr


def _build_header(shape: tuple[int, ...]) -> bytes:
    dict_str = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % (
        repr(tuple(shape)),
    )
    body = dict_str.encode("ascii")
    # pad with spaces so magic+version+len+header is a multiple of 64, '\n' last
    unpadded = len(_MAGIC) + len(_VERSION) + 2 + len(body) + 1
    pad = (-unpadded) % _HEADER_ALIGN
    body = body + b" " * pad + b"\n"
    return _MAGIC + _VERSION + struct.pack("<H", len(body)) + body


def write_npy(array: np.ndarray, path: str | Path) -> None:
    """Write a tensor as NPY v1.0 float64 little-endian C-order, atomically.

    Reading the file back reproduces the array bit-exactly.
    """
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    _check_shape(arr.shape, str(path))
    blob = _build_header(arr.shape) + arr.tobytes(order="C")
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".npy.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class ManifestRecord:
    """One image: embedding file plus optional metrics and score inputs."""

    id: str
    split: str
    embedding_path: Path
    dsc: float | None = None
    hd: float | None = None
    nsd: float | None = None
    logits_path: Path | None = None
    stack_path: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def split(self, name: str) -> tuple[ManifestRecord, ...]:
        return tuple(r for r in self.records if r.split == name)

    @property
    def train_records(self) -> tuple[ManifestRecord, ...]:
        return self.split("train")

    @property
    def test_records(self) -> tuple[ManifestRecord, ...]:
        return self.split("test")


def _parse_optional_float(
    value: str, column: str, row_id: str, lo: float | None, hi: float | None
) -> float | None:
    if value == "":
        return None
    try:
        num = float(value)
    except ValueError as exc:
        raise BadValue(f"row {row_id!r}: {column}={value!r} is not a number") from exc
    if lo is not None and num < lo or hi is not None and num > hi:
        raise BadValue(f"row {row_id!r}: {column}={num} outside allowed range")
    return num


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest CSV; paths are resolved against the CSV's directory."""
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        missing = [c for c in MANIFEST_COLUMNS if c not in fields]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            cell = lambda col: (row.get(col) or "").strip()  # short rows yield None
            rid = cell("id")
            if not rid:
                raise BadValue(f"{path}: empty id")
            if rid in seen:
                raise DuplicateId(f"{path}: duplicate id {rid!r}")
            seen.add(rid)
            split = cell("split")
            if split not in SPLITS:
                raise BadValue(f"row {rid!r}: split={split!r} not in {SPLITS}")
            embedding = cell("embedding")
            if not embedding:
                raise BadValue(f"row {rid!r}: embedding path is required")
            logits = cell("logits")
            stack = cell("stack")
            records.append(
                ManifestRecord(
                    id=rid,
                    split=split,
                    embedding_path=base / embedding,
                    dsc=_parse_optional_float(cell("dsc"), "dsc", rid, 0.0, 1.0),
                    hd=_parse_optional_float(cell("hd"), "hd", rid, 0.0, None),
                    nsd=_parse_optional_float(cell("nsd"), "nsd", rid, 0.0, 1.0),
                    logits_path=base / logits if logits else None,
                    stack_path=base / stack if stack else None,
                )
            )
    return DatasetManifest(records=tuple(records))


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest CSV with paths relative to the CSV's directory."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path | None) -> str:
        if p is None:
            return ""
        return os.path.relpath(Path(p).resolve(), base)

    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".csv.tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for r in manifest.records:
                writer.writerow(
                    [
                        r.id,
                        r.split,
                        rel(r.embedding_path),
                        _fmt(r.dsc),
                        _fmt(r.hd),
                        _fmt(r.nsd),
                        rel(r.logits_path),
                        rel(r.stack_path),
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def with_embedding(record: ManifestRecord, path: Path) -> ManifestRecord:
    """Copy of ``record`` pointing at a different embedding file."""
    return replace(record, embedding_path=path)
