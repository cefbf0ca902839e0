"""Distance-based OOD detectors.

Mahalanobis distance to a single Gaussian fitted by maximum likelihood
(covariance divided by N), with the inverse computed by Cholesky under
escalating diagonal jitter when the empirical covariance is singular.
KNN distance is the exact k-th smallest Euclidean distance to the stored
training vectors; no approximate index is used. Higher score = more OOD
for both detectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    KTooLarge,
    NonFiniteInput,
    SingularEvenWithJitter,
    TooFewSamples,
)
from .tensor_io import read_npy, write_npy

# multiples of tau = trace(cov)/m tried as diagonal loading, first success wins
_JITTER_SCALES = (0.0,) + tuple(10.0**e for e in range(-10, -1))


@dataclass(frozen=True)
class GaussianModel:
    """Fitted mean and regularized inverse covariance."""

    mean: np.ndarray
    precision: np.ndarray  # (m, m), symmetric positive-definite
    jitter_used: float
    n_train: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class KnnIndex:
    """Exact neighbor index: just the training matrix and k."""

    train_matrix: np.ndarray  # (N, m)
    k: int

    @property
    def n_train(self) -> int:
        return self.train_matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.train_matrix.shape[1]


def _as_matrix(train: object) -> np.ndarray:
    X = np.asarray(train, dtype=np.float64)
    if X.size == 0:
        raise TooFewSamples("no training vectors supplied")
    if X.ndim != 2:
        X = np.stack([np.asarray(row, dtype=np.float64).reshape(-1) for row in train])
    if not np.isfinite(X).all():
        raise NonFiniteInput("training vectors contain NaN/Inf")
    return np.ascontiguousarray(X)


def gaussian_fit(train: object) -> GaussianModel:
    """Fit mean and MLE covariance, then invert with escalating jitter."""
    X = _as_matrix(train)
    n, m = X.shape
    if n < 2:
        raise TooFewSamples(f"Gaussian fit needs >= 2 samples, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = (centered.T @ centered) / n
    tau = float(np.trace(cov)) / m
    eye = np.eye(m)
    for scale in _JITTER_SCALES:
        jitter = scale * tau
        try:
            chol = scipy.linalg.cho_factor(cov + jitter * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
        precision = scipy.linalg.cho_solve(chol, eye)
        precision = (precision + precision.T) / 2.0
        try:
            np.linalg.cholesky(precision)
        except np.linalg.LinAlgError:
            continue
        return GaussianModel(mean=mean, precision=precision, jitter_used=jitter, n_train=n)
    raise SingularEvenWithJitter(
        f"covariance ({m}x{m}, {n} samples) not invertible at any jitter level"
    )


def mahalanobis(model: GaussianModel, x: np.ndarray) -> float:
    """Distance sqrt((x-mean)^T precision (x-mean)); the OOD score."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape[0] != model.dim:
        raise DimensionMismatch(f"query length {v.shape[0]} != model dim {model.dim}")
    if not np.isfinite(v).all():
        raise NonFiniteInput("query contains NaN/Inf")
    d = v - model.mean
    dsq = float(d @ (model.precision @ d))
    return float(np.sqrt(max(dsq, 0.0)))


def mahalanobis_many(model: GaussianModel, X: np.ndarray) -> np.ndarray:
    """Row-wise mahalanobis(); kept as per-row calls so batch == single exactly."""
    X = np.asarray(X, dtype=np.float64)
    return np.array([mahalanobis(model, row) for row in X])


def knn_fit(train: object, k: int) -> KnnIndex:
    X = _as_matrix(train)
    n = X.shape[0]
    if n < 1:
        raise TooFewSamples("KNN needs at least one training vector")
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} outside 1..N={n}")
    return KnnIndex(train_matrix=X, k=k)


# Row block sized so the diff buffer stays cache-friendly at large m.
_BLOCK_ELEMENTS = 4_000_000


def _sq_dists_to_train(index: KnnIndex, v: np.ndarray, buf: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from one query to every training row.

    Blocked over training rows; each row's sum runs over the full feature
    axis in one np.sum call, so the result is independent of block size
    and bit-identical to an unblocked evaluation.
    """
    train = index.train_matrix
    n, m = train.shape
    rows_per_block = buf.shape[0]
    d2 = np.empty(n)
    for start in range(0, n, rows_per_block):
        stop = min(start + rows_per_block, n)
        diff = np.subtract(train[start:stop], v, out=buf[: stop - start])
        np.square(diff, out=diff)
        d2[start:stop] = diff.sum(axis=1)
    return d2


def _make_buffer(index: KnnIndex) -> np.ndarray:
    rows = max(1, min(index.n_train, _BLOCK_ELEMENTS // max(1, index.dim)))
    return np.empty((rows, index.dim))


def _check_query(index: KnnIndex, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != index.dim:
        raise DimensionMismatch(f"query length {v.shape[0]} != index dim {index.dim}")
    return v


def knn_score(index: KnnIndex, x: np.ndarray) -> float:
    """Euclidean distance to the k-th nearest training vector (k=1 is nearest)."""
    v = _check_query(index, x)
    d2 = _sq_dists_to_train(index, v, _make_buffer(index))
    kth = np.partition(d2, index.k - 1)[index.k - 1]
    return float(np.sqrt(kth))


def knn_score_many(index: KnnIndex, X: np.ndarray) -> np.ndarray:
    """knn_score for each row of X; one shared buffer, same results as single calls."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a (n_queries, dim) matrix, got rank {X.ndim}")
    buf = _make_buffer(index)
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        v = _check_query(index, X[i])
        d2 = _sq_dists_to_train(index, v, buf)
        out[i] = np.sqrt(np.partition(d2, index.k - 1)[index.k - 1])
    return out


def save_gaussian(model: GaussianModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_npy(model.mean, directory / "mean.npy")
    write_npy(model.precision, directory / "precision.npy")
    sidecar = {"dim": model.dim, "n_train": model.n_train, "jitter_used": model.jitter_used}
    (directory / "model.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_gaussian(directory: str | Path) -> GaussianModel:
    directory = Path(directory)
    sidecar = json.loads((directory / "model.json").read_text())
    return GaussianModel(
        mean=read_npy(directory / "mean.npy"),
        precision=read_npy(directory / "precision.npy"),
        jitter_used=float(sidecar["jitter_used"]),
        n_train=int(sidecar["n_train"]),
    )


def save_knn(index: KnnIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_npy(index.train_matrix, directory / "train.npy")
    sidecar = {"k": index.k, "n": index.n_train, "dim": index.dim}
    (directory / "model.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_knn(directory: str | Path) -> KnnIndex:
    directory = Path(directory)
    sidecar = json.loads((directory / "model.json").read_text())
    return KnnIndex(train_matrix=read_npy(directory / "train.npy"), k=int(sidecar["k"]))
