"""Detection-quality evaluation: ID/OOD labeling from DSC, threshold-free
ranking metrics, correlations, significance tests, and the downstream
rejection study.

OOD is always the positive class and scores are oriented so that higher =
more OOD. AUROC uses the Mann-Whitney rank formulation with average-rank
tie handling; AUPRC is average precision over distinct thresholds with
ties grouped; FPR@TPR picks the largest threshold whose TPR meets the
target (no ROC interpolation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special
import scipy.stats

from .errors import (
    BadValue,
    DegenerateLabels,
    EverythingRejected,
    LengthMismatch,
    NoImages,
    NoPositives,
    TooFewPoints,
    ZeroVariance,
)

DEFAULT_TPR_TARGET = 0.90
# score-vs-metric correlations are judged significant at this level
CORRELATION_ALPHA = 0.10


@dataclass(frozen=True)
class ScoredImage:
    """Per-image OOD score joined with its segmentation metrics."""

    id: str
    score: float
    dsc: float | None = None
    hd: float | None = None
    nsd: float | None = None
    seconds: float | None = None


@dataclass(frozen=True)
class LabelRule:
    """How DSC turns into an OOD label: is_ood = dsc < threshold.

    mode 'fixed' uses ``threshold``; 'median' uses the median test DSC;
    'auto' uses 0.95, falling back to 0.80 when fewer than two images
    reach 0.95.
    """

    mode: str = "auto"
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "median", "auto"):
            raise BadValue(f"labeling mode {self.mode!r} not in fixed/median/auto")
        if self.mode == "fixed":
            if self.threshold is None or not 0.0 < self.threshold < 1.0:
                raise BadValue(f"fixed threshold must be in (0, 1), got {self.threshold}")


AUTO_PRIMARY_THRESHOLD = 0.95
AUTO_FALLBACK_THRESHOLD = 0.80


def dsc_threshold(dscs: np.ndarray, rule: LabelRule) -> float:
    """Resolve the labeling rule to a concrete DSC threshold."""
    dscs = np.asarray(dscs, dtype=np.float64)
    if dscs.size == 0:
        raise NoImages("no images to label")
    if rule.mode == "fixed":
        return float(rule.threshold)
    if rule.mode == "median":
        return float(np.median(dscs))
    if int((dscs >= AUTO_PRIMARY_THRESHOLD).sum()) >= 2:
        return AUTO_PRIMARY_THRESHOLD
    return AUTO_FALLBACK_THRESHOLD


def label(images: list[ScoredImage], rule: LabelRule) -> np.ndarray:
    """Boolean is_ood per image; requires every image to carry a DSC."""
    if not images:
        raise NoImages("no images to label")
    missing = [im.id for im in images if im.dsc is None]
    if missing:
        raise BadValue(f"images without dsc cannot be labeled: {missing}")
    dscs = np.array([im.dsc for im in images], dtype=np.float64)
    return dscs < dsc_threshold(dscs, rule)


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise LengthMismatch("scores and labels must be equal-length 1-D arrays")
    if not labels.any() or labels.all():
        raise DegenerateLabels(
            f"need >= 1 positive and >= 1 negative, got {int(labels.sum())}/{labels.size} positive"
        )
    return scores, labels


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUROC with average-rank ties; OOD (True) is positive."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = scipy.stats.rankdata(scores)
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision over distinct thresholds (ties grouped)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise LengthMismatch("scores and labels must be equal-length 1-D arrays")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # last index of each tie group = the distinct-threshold operating points
    is_last = np.ones(scores.size, dtype=bool)
    is_last[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tp = tp[is_last]
    fp = fp[is_last]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def fpr_at_tpr(
    scores: np.ndarray, labels: np.ndarray, tpr_target: float = DEFAULT_TPR_TARGET
) -> tuple[float, float]:
    """(FPR, threshold) at the largest threshold with TPR >= tpr_target.

    'score >= threshold' predicts OOD.
    """
    if not 0.0 < tpr_target <= 1.0:
        raise BadValue(f"tpr_target must be in (0, 1], got {tpr_target}")
    scores, labels = _check_binary(scores, labels)
    pos_sorted = np.sort(scores[labels])
    n_pos = pos_sorted.size
    threshold = None
    for t in np.unique(scores)[::-1]:  # descending; TPR only grows as t drops
        tpr = (n_pos - np.searchsorted(pos_sorted, t, side="left")) / n_pos
        if tpr >= tpr_target:
            threshold = float(t)
            break
    assert threshold is not None  # t = min(scores) always reaches TPR = 1
    fpr = float((scores[~labels] >= threshold).mean())
    return fpr, threshold


def _student_t_sf(t: float, dof: int) -> float:
    """P(T >= t) for Student's t via the regularized incomplete beta."""
    x = dof / (dof + t * t)
    tail = 0.5 * scipy.special.betainc(dof / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Pearson r and its two-sided p-value from the exact t transform."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("x and y must be equal-length 1-D arrays")
    n = x.size
    if n < 3:
        raise TooFewPoints(f"need n >= 3, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise ZeroVariance("correlation undefined for constant input")
    r = float(xc @ yc) / denom
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    dof = n - 2
    t_sq = dof * r * r / (1.0 - r * r)
    p = scipy.special.betainc(dof / 2.0, 0.5, dof / (dof + t_sq))
    return r, float(p)


def paired_t_test(a: np.ndarray, b: np.ndarray, alternative: str = "two_sided") -> tuple[float, float]:
    """Paired t-test on a - b; alternative in {'less', 'greater', 'two_sided'}."""
    if alternative not in ("less", "greater", "two_sided"):
        raise BadValue(f"alternative {alternative!r} not in less/greater/two_sided")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("paired samples must be equal-length 1-D arrays")
    n = a.size
    if n < 2:
        raise TooFewPoints(f"need n >= 2, got {n}")
    d = a - b
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ZeroVariance("difference variance is zero")
    t = float(d.mean()) / (sd / math.sqrt(n))
    p_greater = _student_t_sf(t, n - 1)
    p_less = 1.0 - p_greater
    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = 2.0 * min(p_less, p_greater)
    return t, p


@dataclass(frozen=True)
class DetectionReport:
    """Detection metrics for one scored test set."""

    auroc: float
    auprc: float
    fpr90: float
    threshold_at_tpr90: float
    seconds: float
    n_id: int
    n_ood: int
    pcc_dsc: float | None = None
    pcc_dsc_p: float | None = None
    pcc_hd: float | None = None
    pcc_hd_p: float | None = None
    pcc_nsd: float | None = None
    pcc_nsd_p: float | None = None


@dataclass(frozen=True)
class RejectionReport:
    """Change in mean segmentation metrics after score-based rejection."""

    delta_dsc: float | None
    delta_hd: float | None
    delta_nsd: float | None
    n_rejected: int
    threshold: float


def _correlation(scores: np.ndarray, values: list[float | None]) -> tuple[float | None, float | None]:
    present = [i for i, v in enumerate(values) if v is not None]
    if len(present) < 3:
        return None, None
    x = scores[present]
    y = np.array([values[i] for i in present], dtype=np.float64)
    try:
        r, p = pearson(x, y)
    except ZeroVariance:
        return None, None
    return r, p


def evaluate(
    images: list[ScoredImage],
    is_ood: np.ndarray,
    seconds: float = 0.0,
    tpr_target: float = DEFAULT_TPR_TARGET,
) -> DetectionReport:
    """Assemble the full detection report for one run."""
    if not images:
        raise NoImages("no scored images")
    scores = np.array([im.score for im in images], dtype=np.float64)
    is_ood = np.asarray(is_ood, dtype=bool)
    fpr, threshold = fpr_at_tpr(scores, is_ood, tpr_target)
    pcc_dsc, p_dsc = _correlation(scores, [im.dsc for im in images])
    pcc_hd, p_hd = _correlation(scores, [im.hd for im in images])
    pcc_nsd, p_nsd = _correlation(scores, [im.nsd for im in images])
    return DetectionReport(
        auroc=auroc(scores, is_ood),
        auprc=auprc(scores, is_ood),
        fpr90=fpr,
        threshold_at_tpr90=threshold,
        seconds=seconds,
        n_id=int((~is_ood).sum()),
        n_ood=int(is_ood.sum()),
        pcc_dsc=pcc_dsc,
        pcc_dsc_p=p_dsc,
        pcc_hd=pcc_hd,
        pcc_hd_p=p_hd,
        pcc_nsd=pcc_nsd,
        pcc_nsd_p=p_nsd,
    )


def _mean_present(values: list[float | None], keep: np.ndarray) -> tuple[float | None, float | None]:
    """(mean over kept images with the metric, mean over all images with it)."""
    has = np.array([v is not None for v in values])
    if not has.any():
        return None, None
    all_vals = np.array([v for v in values if v is not None], dtype=np.float64)
    kept_idx = has & keep
    if not kept_idx.any():
        return None, float(all_vals.mean())
    kept_vals = np.array(
        [v for v, k in zip(values, keep) if v is not None and k], dtype=np.float64
    )
    return float(kept_vals.mean()), float(all_vals.mean())


def reject_at_tpr(
    images: list[ScoredImage],
    is_ood: np.ndarray,
    tpr_target: float = DEFAULT_TPR_TARGET,
) -> RejectionReport:
    """Reject images scoring >= the TPR-target threshold; report metric deltas.

    Each delta is mean(metric over retained) - mean(metric over all),
    computed over the images that carry the metric.
    """
    if not images:
        raise NoImages("no scored images")
    scores = np.array([im.score for im in images], dtype=np.float64)
    is_ood = np.asarray(is_ood, dtype=bool)
    _, threshold = fpr_at_tpr(scores, is_ood, tpr_target)
    rejected = scores >= threshold
    retained = ~rejected
    if not retained.any():
        raise EverythingRejected(f"threshold {threshold} rejected all {len(images)} images")

    deltas: dict[str, float | None] = {}
    for name in ("dsc", "hd", "nsd"):
        kept_mean, all_mean = _mean_present([getattr(im, name) for im in images], retained)
        deltas[name] = None if kept_mean is None else kept_mean - all_mean
    return RejectionReport(
        delta_dsc=deltas["dsc"],
        delta_hd=deltas["hd"],
        delta_nsd=deltas["nsd"],
        n_rejected=int(rejected.sum()),
        threshold=threshold,
    )
