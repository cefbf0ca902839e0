"""Embedding dimensionality reduction: average pooling, patch-mean pooling,
and PCA over flattened, standardized features.

Pooling uses valid padding (partial windows discarded) and accumulates
window elements in row-major order, so results are bit-identical to a
nested-loop mean. PCA standardizes with the train population std
(zero-variance features map to 0), takes the top right singular vectors of
the standardized matrix, and fixes signs so each component's
largest-magnitude entry is positive.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NTooLarge, RankTooLow, ShapeMismatch, TooFewSamples, WindowTooLarge
from .tensor_io import read_npy, write_npy


@dataclass(frozen=True)
class PoolSpec:
    """Average-pooling window over the trailing 2 or 3 spatial axes."""

    dims: int
    kernel: int
    stride: int

    def __post_init__(self) -> None:
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be >= 1")


def avg_pool(tensor: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """Window-mean over the trailing ``spec.dims`` axes; leading axes untouched."""
    t = np.asarray(tensor, dtype=np.float64)
    d = spec.dims
    if t.ndim < d:
        raise RankTooLow(f"need >= {d} axes for pool{d}d, got rank {t.ndim}")
    j, s = spec.kernel, spec.stride
    spatial = t.shape[-d:]
    for length in spatial:
        if j > length:
            raise WindowTooLarge(f"kernel {j} exceeds axis length {length}")
    out_spatial = tuple((length - j) // s + 1 for length in spatial)
    out = np.zeros(t.shape[:-d] + out_spatial, dtype=np.float64)
    lead = (slice(None),) * (t.ndim - d)
    for offsets in itertools.product(range(j), repeat=d):
        window = tuple(
            slice(off, off + (n - 1) * s + 1, s)
            for off, n in zip(offsets, out_spatial)
        )
        out += t[lead + window]
    out /= float(j**d)
    return out


def patch_mean_pool(tensor: np.ndarray) -> np.ndarray:
    """Mean over axis 0 (the patch axis), removing it."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim < 2:
        raise RankTooLow(f"need rank >= 2, got {t.ndim}")
    out = np.zeros(t.shape[1:], dtype=np.float64)
    for i in range(t.shape[0]):
        out += t[i]
    out /= float(t.shape[0])
    return out


@dataclass(frozen=True)
class PcaModel:
    """Per-feature standardization plus an orthonormal projection basis."""

    n_components: int
    feature_mean: np.ndarray
    feature_std: np.ndarray
    components: np.ndarray  # (n, d), orthonormal rows
    explained_variance: np.ndarray  # (n,), nonincreasing
    n_train: int

    @property
    def dim(self) -> int:
        return self.feature_mean.shape[0]


def _standardize(flat: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    safe = np.where(std == 0.0, 1.0, std)
    z = (flat - mean) / safe
    if flat.ndim == 1:
        z[std == 0.0] = 0.0
    else:
        z[:, std == 0.0] = 0.0
    return z


def pca_fit(train: Sequence[np.ndarray], n: int) -> PcaModel:
    """Fit PCA on flattened train tensors.

    Standardization uses the train mean and population (divide-by-N) std;
    explained variances are singular values squared over N-1.
    """
    if len(train) < 2:
        raise TooFewSamples(f"PCA needs >= 2 train tensors, got {len(train)}")
    shapes = {np.asarray(t).shape for t in train}
    if len(shapes) != 1:
        raise ShapeMismatch(f"train tensors disagree in shape: {sorted(shapes)}")
    X = np.stack([np.asarray(t, dtype=np.float64).reshape(-1) for t in train])
    n_samples, d = X.shape
    max_n = min(n_samples - 1, d)
    if not 1 <= n <= max_n:
        raise NTooLarge(f"n={n} outside 1..min(N-1, d)={max_n}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    Z = _standardize(X, mean, std)
    _, sing, vt = np.linalg.svd(Z, full_matrices=False)
    components = vt[:n].copy()
    # deterministic sign: largest-|entry| of each component made positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    explained = (sing[:n] ** 2) / (n_samples - 1)
    return PcaModel(
        n_components=n,
        feature_mean=mean,
        feature_std=std,
        components=components,
        explained_variance=explained,
        n_train=n_samples,
    )


def pca_transform(model: PcaModel, tensor: np.ndarray) -> np.ndarray:
    """Project one tensor onto the fitted components; returns a length-n vector."""
    flat = np.asarray(tensor, dtype=np.float64).reshape(-1)
    if flat.shape[0] != model.dim:
        raise ShapeMismatch(f"flattened length {flat.shape[0]} != fitted d={model.dim}")
    z = _standardize(flat, model.feature_mean, model.feature_std)
    return model.components @ z


def save_pca(model: PcaModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_npy(model.feature_mean, directory / "mean.npy")
    write_npy(model.feature_std, directory / "std.npy")
    write_npy(model.components, directory / "components.npy")
    write_npy(model.explained_variance, directory / "explained_variance.npy")
    sidecar = {"n_components": model.n_components, "d": model.dim, "n_train": model.n_train}
    (directory / "model.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_pca(directory: str | Path) -> PcaModel:
    directory = Path(directory)
    sidecar = json.loads((directory / "model.json").read_text())
    return PcaModel(
        n_components=int(sidecar["n_components"]),
        feature_mean=read_npy(directory / "mean.npy"),
        feature_std=read_npy(directory / "std.npy"),
        components=read_npy(directory / "components.npy"),
        explained_variance=read_npy(directory / "explained_variance.npy"),
        n_train=int(sidecar["n_train"]),
    )
