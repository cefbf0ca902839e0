"""Output-based OOD scores computed from voxel-wise model outputs.

A logit map is a [C, D, H, W] tensor with the class logits stacked on axis
0 (C >= 2); a prediction stack is an [S, D, H, W] tensor of S probability
maps in [0, 1]. All three scorers aggregate per-voxel quantities with a
plain mean over voxels and are oriented so that higher = more OOD.

-inf logits (masked voxels) are tolerated: exp(-inf) contributes 0 to the
softmax and logsumexp.
"""

from __future__ import annotations

import numpy as np

from .errors import BadValue, ShapeMismatch


def _check_logits(logits: np.ndarray) -> np.ndarray:
    t = np.asarray(logits, dtype=np.float64)
    if t.ndim != 4:
        raise ShapeMismatch(f"logit map must be [C, D, H, W], got rank {t.ndim}")
    if t.shape[0] < 2:
        raise ShapeMismatch(f"need >= 2 classes, got C={t.shape[0]}")
    return t


def _check_temperature(temperature: float) -> float:
    if not temperature > 0:
        raise BadValue(f"temperature must be > 0, got {temperature}")
    return float(temperature)


def msp_score(logits: np.ndarray, temperature: float = 1.0) -> float:
    """1 - mean over voxels of the max softmax probability.

    temperature=1 is plain maximum softmax probability; larger values
    reproduce temperature scaling.
    """
    t = _check_logits(logits)
    temp = _check_temperature(temperature)
    scaled = t / temp
    scaled = scaled - scaled.max(axis=0)  # stabilized softmax
    e = np.exp(scaled)
    max_prob = e.max(axis=0) / e.sum(axis=0)
    return float(1.0 - max_prob.mean())


def energy_score(logits: np.ndarray, temperature: float = 1.0) -> float:
    """Mean over voxels of -T*log(sum_i exp(f_i / T)), max-subtracted for stability."""
    t = _check_logits(logits)
    temp = _check_temperature(temperature)
    top = t.max(axis=0)
    lse = np.log(np.exp((t - top) / temp).sum(axis=0))
    energy = -top - temp * lse
    return float(energy.mean())


def uncertainty_score(stack: np.ndarray) -> float:
    """Mean over voxels of the population std across the S prediction maps.

    Serves both MC-dropout passes and ensemble members.
    """
    t = np.asarray(stack, dtype=np.float64)
    if t.ndim != 4:
        raise ShapeMismatch(f"prediction stack must be [S, D, H, W], got rank {t.ndim}")
    if t.shape[0] < 2:
        raise ShapeMismatch(f"need >= 2 prediction maps, got S={t.shape[0]}")
    if t.min() < -1e-9 or t.max() > 1.0 + 1e-9:
        raise BadValue("prediction stack values must lie in [0, 1]")
    # a per-voxel constant shift leaves the std across maps unchanged;
    # anchoring on the first map makes an identical stack an exact 0
    return float((t - t[0]).std(axis=0).mean())
