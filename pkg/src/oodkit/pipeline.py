"""End-to-end runs: reduce -> fit -> score -> label -> evaluate, repeated
per seed, plus the hyperparameter grid-search harness.

Every reduction and detector in this package is deterministic, so
repeated seeds produce identical reports and the cross-seed std collapses
to 0.00; the seed loop exists so stochastic external reductions (via the
reducer bridge) and wall-clock timing aggregate the same way. Wall-clock
seconds are measured around test scoring only; reduction time is tracked
separately.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .detectors import gaussian_fit, knn_fit, knn_score_many, mahalanobis_many
from .errors import BadValue, ConfigError, OodkitError, TooFewSamples
from .evaluation import (
    DetectionReport,
    LabelRule,
    ScoredImage,
    dsc_threshold,
    evaluate,
    label,
)
from .reduction import PcaModel, PoolSpec, avg_pool, patch_mean_pool, pca_fit, pca_transform
from .tensor_io import DatasetManifest, ManifestRecord, read_npy

REDUCTION_METHODS = ("none", "external", "pool2d", "pool3d", "patchmean", "pca")
DETECTOR_METHODS = ("mahalanobis", "knn")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ReductionConfig:
    method: str
    kernel: int | None = None
    stride: int | None = None
    n: int | None = None

    def __post_init__(self) -> None:
        if self.method not in REDUCTION_METHODS:
            raise ConfigError(f"reduction method {self.method!r} not in {REDUCTION_METHODS}")
        if self.method in ("pool2d", "pool3d") and (self.kernel is None or self.stride is None):
            raise ConfigError(f"{self.method} needs kernel and stride")
        if self.method == "pca" and self.n is None:
            raise ConfigError("pca needs n (number of components)")

    @property
    def name(self) -> str:
        if self.method in ("pool2d", "pool3d"):
            return f"Pool{self.method[-2].upper()}D({self.kernel},{self.stride})"
        if self.method == "pca":
            return f"PCA({self.n})"
        return {"none": "None", "external": "External", "patchmean": "PatchMean"}[self.method]


@dataclass(frozen=True)
class DetectorConfig:
    method: str
    k: int | None = None

    def __post_init__(self) -> None:
        if self.method not in DETECTOR_METHODS:
            raise ConfigError(f"detector method {self.method!r} not in {DETECTOR_METHODS}")
        if self.method == "knn" and self.k is None:
            raise ConfigError("knn needs k")

    @property
    def name(self) -> str:
        return "MD" if self.method == "mahalanobis" else f"KNN({self.k})"


@dataclass(frozen=True)
class RunConfig:
    train_manifest: Path
    test_manifest: Path
    out_dir: Path
    reduction: ReductionConfig
    detector: DetectorConfig
    labeling: LabelRule
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    nsd_tau_mm: float = 2.0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")


def _parse_labeling(doc: dict) -> LabelRule:
    mode = doc.get("mode", "auto")
    return LabelRule(mode=mode, threshold=doc.get("threshold"))


def parse_run_config(doc: dict, base_dir: Path) -> RunConfig:
    """Build a RunConfig from a parsed JSON document; paths resolve against base_dir."""
    try:
        io = doc["io"]
        red = doc.get("reduction", {"method": "none"})
        det = doc["detector"]
    except KeyError as exc:
        raise ConfigError(f"config missing section {exc}") from exc
    red_params = red.get("params", {})
    det_params = det.get("params", {})
    return RunConfig(
        train_manifest=base_dir / io["train_manifest"],
        test_manifest=base_dir / io["test_manifest"],
        out_dir=base_dir / io.get("out_dir", "out"),
        reduction=ReductionConfig(
            method=red["method"],
            kernel=red_params.get("kernel"),
            stride=red_params.get("stride"),
            n=red_params.get("n"),
        ),
        detector=DetectorConfig(method=det["method"], k=det_params.get("k")),
        labeling=_parse_labeling(doc.get("labeling", {})),
        seeds=tuple(doc.get("seeds", DEFAULT_SEEDS)),
        nsd_tau_mm=float(doc.get("nsd_tau_mm", 2.0)),
    )


def load_embeddings(records: Sequence[ManifestRecord]) -> list[np.ndarray]:
    missing = [r.id for r in records if not r.embedding_path.exists()]
    if missing:
        raise ConfigError(f"missing embedding files for ids: {', '.join(sorted(missing))}")
    return [read_npy(r.embedding_path) for r in records]


def reduce_tensors(
    train: list[np.ndarray],
    test: list[np.ndarray],
    config: ReductionConfig,
    seed: int = 0,
) -> tuple[list[np.ndarray], list[np.ndarray], PcaModel | None]:
    """Apply the configured reduction; PCA fits on train only.

    ``seed`` is accepted for interface symmetry with stochastic external
    reducers; every built-in method is deterministic.
    """
    del seed
    if config.method in ("none", "external"):
        return train, test, None
    if config.method in ("pool2d", "pool3d"):
        spec = PoolSpec(dims=int(config.method[-2]), kernel=config.kernel, stride=config.stride)
        return [avg_pool(t, spec) for t in train], [avg_pool(t, spec) for t in test], None
    if config.method == "patchmean":
        return [patch_mean_pool(t) for t in train], [patch_mean_pool(t) for t in test], None
    model = pca_fit(train, config.n)
    return (
        [pca_transform(model, t) for t in train],
        [pca_transform(model, t) for t in test],
        model,
    )


def _flatten(tensors: list[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(t, dtype=np.float64).reshape(-1) for t in tensors])


def score_vectors(
    train_vecs: np.ndarray, test_vecs: np.ndarray, config: DetectorConfig
) -> tuple[np.ndarray, float]:
    """Fit the detector and score the test vectors; returns (scores, scoring seconds)."""
    if config.method == "mahalanobis":
        model = gaussian_fit(train_vecs)
        start = time.perf_counter()
        scores = mahalanobis_many(model, test_vecs)
    else:
        index = knn_fit(train_vecs, config.k)
        start = time.perf_counter()
        scores = knn_score_many(index, test_vecs)
    return scores, time.perf_counter() - start


@dataclass(frozen=True)
class SeedResult:
    seed: int
    report: DetectionReport
    images: list[ScoredImage]
    is_ood: np.ndarray
    label_threshold: float
    reduce_seconds: float
    score_seconds: float


def run_seed(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    reduction: ReductionConfig,
    detector: DetectorConfig,
    labeling: LabelRule,
    seed: int,
    raw_train: list[np.ndarray] | None = None,
    raw_test: list[np.ndarray] | None = None,
) -> SeedResult:
    """One full detection run. Pass raw_train/raw_test to reuse loaded tensors."""
    train_recs = train_manifest.train_records
    test_recs = test_manifest.test_records
    if len(train_recs) < 1:
        raise TooFewSamples("need at least one train-split record")
    if len(test_recs) < 2:
        raise TooFewSamples("need at least two test-split records for evaluation")
    missing_dsc = [r.id for r in test_recs if r.dsc is None]
    if missing_dsc:
        raise BadValue(f"test records without dsc: {', '.join(missing_dsc)}")

    train = raw_train if raw_train is not None else load_embeddings(train_recs)
    test = raw_test if raw_test is not None else load_embeddings(test_recs)

    t0 = time.perf_counter()
    red_train, red_test, _ = reduce_tensors(train, test, reduction, seed)
    reduce_seconds = time.perf_counter() - t0

    scores, score_seconds = score_vectors(_flatten(red_train), _flatten(red_test), detector)

    per_image = score_seconds / len(test_recs)
    images = [
        ScoredImage(id=r.id, score=float(s), dsc=r.dsc, hd=r.hd, nsd=r.nsd, seconds=per_image)
        for r, s in zip(test_recs, scores)
    ]
    is_ood = label(images, labeling)
    threshold = dsc_threshold(np.array([im.dsc for im in images]), labeling)
    report = evaluate(images, is_ood, seconds=score_seconds)
    return SeedResult(
        seed=seed,
        report=report,
        images=images,
        is_ood=is_ood,
        label_threshold=threshold,
        reduce_seconds=reduce_seconds,
        score_seconds=score_seconds,
    )


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """(mean, sample std); std is 0.0 for a single value."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


@dataclass(frozen=True)
class GridEntry:
    reduction: ReductionConfig
    detector: DetectorConfig

    @property
    def name(self) -> str:
        return f"{self.reduction.name}+{self.detector.name}"


@dataclass(frozen=True)
class GridRow:
    """Aggregated result for one grid configuration (or its failure)."""

    name: str
    seed_reports: tuple[DetectionReport, ...] = ()
    auroc_mean: float | None = None
    auroc_std: float | None = None
    auprc_mean: float | None = None
    auprc_std: float | None = None
    fpr90_mean: float | None = None
    fpr90_std: float | None = None
    seconds_mean: float | None = None
    seconds_std: float | None = None
    error: str | None = None


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def expand_grid(doc: dict) -> list[GridEntry]:
    """Expand the grid document into concrete (reduction, detector) entries."""
    reductions: list[ReductionConfig] = []
    for spec in doc.get("reductions", [{"method": "none"}]):
        method = spec["method"]
        if method in ("pool2d", "pool3d"):
            pairs = spec.get("pairs")
            if pairs is None:
                pairs = [
                    (j, s)
                    for j in _as_list(spec["kernel"])
                    for s in _as_list(spec["stride"])
                ]
            for j, s in pairs:
                reductions.append(ReductionConfig(method=method, kernel=int(j), stride=int(s)))
        elif method == "pca":
            for n in _as_list(spec["n"]):
                reductions.append(ReductionConfig(method=method, n=int(n)))
        else:
            reductions.append(ReductionConfig(method=method))
    detectors: list[DetectorConfig] = []
    for spec in doc.get("detectors", [{"method": "mahalanobis"}]):
        if spec["method"] == "knn":
            for k in _as_list(spec["k"]):
                detectors.append(DetectorConfig(method="knn", k=int(k)))
        else:
            detectors.append(DetectorConfig(method=spec["method"]))
    return [GridEntry(reduction=r, detector=d) for r in reductions for d in detectors]


def _run_entry(
    entry: GridEntry,
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    labeling: LabelRule,
    seeds: Sequence[int],
    raw_train: list[np.ndarray],
    raw_test: list[np.ndarray],
) -> GridRow:
    try:
        results = [
            run_seed(
                train_manifest,
                test_manifest,
                entry.reduction,
                entry.detector,
                labeling,
                seed,
                raw_train=raw_train,
                raw_test=raw_test,
            )
            for seed in seeds
        ]
    except OodkitError as exc:
        return GridRow(name=entry.name, error=f"{type(exc).__name__}: {exc}")
    reports = tuple(r.report for r in results)
    auroc_m, auroc_s = aggregate([r.auroc for r in reports])
    auprc_m, auprc_s = aggregate([r.auprc for r in reports])
    fpr_m, fpr_s = aggregate([r.fpr90 for r in reports])
    sec_m, sec_s = aggregate([r.seconds for r in reports])
    return GridRow(
        name=entry.name,
        seed_reports=reports,
        auroc_mean=auroc_m,
        auroc_std=auroc_s,
        auprc_mean=auprc_m,
        auprc_std=auprc_s,
        fpr90_mean=fpr_m,
        fpr90_std=fpr_s,
        seconds_mean=sec_m,
        seconds_std=sec_s,
    )


def grid_search(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    entries: Sequence[GridEntry],
    labeling: LabelRule,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    threads: int = 1,
) -> list[GridRow]:
    """Run every entry x seed; failed entries are reported, not fatal.

    Rows are ranked by mean AUROC descending, ties broken by lower mean
    seconds then name; failed rows sort last.
    """
    raw_train = load_embeddings(train_manifest.train_records)
    raw_test = load_embeddings(test_manifest.test_records)
    args = (train_manifest, test_manifest, labeling, seeds, raw_train, raw_test)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda e: _run_entry(e, *args), entries))
    else:
        rows = [_run_entry(e, *args) for e in entries]

    def sort_key(row: GridRow):
        if row.error is not None:
            return (1, 0.0, 0.0, row.name)
        return (0, -row.auroc_mean, row.seconds_mean, row.name)

    return sorted(rows, key=sort_key)
