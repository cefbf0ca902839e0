"""Segmentation quality metrics: Dice, exact maximum Hausdorff distance,
and Normalized Surface Dice.

Surfaces are voxel-based: a foreground voxel belongs to the surface when
any of its 6 face neighbors is background or out of bounds. Surface
distances are anisotropic Euclidean in millimetres, (index difference *
spacing) per axis, computed exactly over all surface-voxel pairs (blocked
for memory, which does not change min/max results).
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    EmptyMask,
    ShapeMismatch,
    SpacingMismatch,
    TruncatedPayload,
    UnsupportedDtype,
)

DEFAULT_NSD_TOLERANCE_MM = 2.0


@dataclass(frozen=True)
class BinaryMask:
    """Boolean [D, H, W] volume with voxel spacing (sz, sy, sx) in mm."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self) -> None:
        v = np.asarray(self.voxels, dtype=bool)
        if v.ndim != 3:
            raise ShapeMismatch(f"mask must be 3-D, got rank {v.ndim}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))


@dataclass(frozen=True)
class SegMetrics:
    dsc: float
    hd: float
    nsd: float


def _check_pair(a: BinaryMask, b: BinaryMask, check_spacing: bool = True) -> None:
    if a.voxels.shape != b.voxels.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.voxels.shape} vs {b.voxels.shape}")
    if check_spacing and a.spacing != b.spacing:
        raise SpacingMismatch(f"spacings differ: {a.spacing} vs {b.spacing}")


def dsc(a: BinaryMask, b: BinaryMask) -> float:
    """Dice overlap 2|A&B| / (|A|+|B|); both masks empty gives 1.0."""
    _check_pair(a, b, check_spacing=False)
    na = int(a.voxels.sum())
    nb = int(b.voxels.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.logical_and(a.voxels, b.voxels).sum())
    return 2.0 * inter / (na + nb)


def surface_voxels(mask: BinaryMask) -> np.ndarray:
    """Coordinates (M, 3) of foreground voxels with a background face neighbor.

    Out-of-bounds counts as background. Rows come out in C-scan
    (lexicographic) order.
    """
    fg = mask.voxels
    padded = np.pad(fg, 1, mode="constant", constant_values=False)
    interior = np.ones_like(fg)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return np.argwhere(fg & ~interior)


def _min_sq_dists(
    src: np.ndarray, dst: np.ndarray, spacing: tuple[float, float, float]
) -> np.ndarray:
    """For each src surface voxel, min squared mm-distance to dst voxels."""
    s = np.asarray(spacing, dtype=np.float64)
    src = src.astype(np.float64)
    dst = dst.astype(np.float64)
    out = np.empty(src.shape[0])
    block = max(1, 2_000_000 // max(1, dst.shape[0]))
    for start in range(0, src.shape[0], block):
        stop = min(start + block, src.shape[0])
        diff = (src[start:stop, None, :] - dst[None, :, :]) * s
        out[start:stop] = (diff * diff).sum(axis=2).min(axis=1)
    return out


def _surfaces(a: BinaryMask, b: BinaryMask) -> tuple[np.ndarray, np.ndarray]:
    _check_pair(a, b)
    sa = surface_voxels(a)
    sb = surface_voxels(b)
    if sa.shape[0] == 0 or sb.shape[0] == 0:
        raise EmptyMask("surface distance undefined for an empty mask")
    return sa, sb


def hausdorff(a: BinaryMask, b: BinaryMask) -> float:
    """Exact symmetric maximum Hausdorff distance between surfaces, in mm."""
    sa, sb = _surfaces(a, b)
    h_ab = _min_sq_dists(sa, sb, a.spacing).max()
    h_ba = _min_sq_dists(sb, sa, a.spacing).max()
    return float(np.sqrt(max(h_ab, h_ba)))


def nsd(a: BinaryMask, b: BinaryMask, tau_mm: float = DEFAULT_NSD_TOLERANCE_MM) -> float:
    """Symmetric Normalized Surface Dice at tolerance tau_mm."""
    if not tau_mm > 0:
        raise ValueError(f"tau_mm must be > 0, got {tau_mm}")
    sa, sb = _surfaces(a, b)
    d_ab = np.sqrt(_min_sq_dists(sa, sb, a.spacing))
    d_ba = np.sqrt(_min_sq_dists(sb, sa, a.spacing))
    within = int((d_ab <= tau_mm).sum()) + int((d_ba <= tau_mm).sum())
    return within / (sa.shape[0] + sb.shape[0])


def seg_metrics(a: BinaryMask, b: BinaryMask, tau_mm: float = DEFAULT_NSD_TOLERANCE_MM) -> SegMetrics:
    return SegMetrics(dsc=dsc(a, b), hd=hausdorff(a, b), nsd=nsd(a, b, tau_mm))


_MASK_DTYPES = {"|b1": "b1", "|u1": "u1", "|i1": "i1", "<f4": "<f4", "<f8": "<f8"}


def read_mask(path: str | Path, spacing: tuple[float, float, float]) -> BinaryMask:
    """Read a mask NPY (uint8/bool/float allowed); nonzero voxels are foreground."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:6] != b"\x93NUMPY" or raw[6:8] != b"\x01\x00":
        raise BadMagic(f"{path}: not an NPY v1.0 file")
    (header_len,) = struct.unpack("<H", raw[8:10])
    try:
        meta = ast.literal_eval(raw[10 : 10 + header_len].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise BadMagic(f"{path}: malformed NPY header") from exc
    descr = meta.get("descr")
    if descr not in _MASK_DTYPES:
        raise UnsupportedDtype(f"{path}: mask dtype {descr!r} not supported")
    if meta.get("fortran_order") is not False:
        raise BadMagic(f"{path}: fortran_order masks not supported")
    shape = meta["shape"]
    dtype = np.dtype(_MASK_DTYPES[descr])
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = raw[10 + header_len :]
    if len(payload) != expected:
        raise TruncatedPayload(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return BinaryMask(voxels=arr != 0, spacing=spacing)
