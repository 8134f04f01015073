"""IoU, mean IoU and relative-improvement arithmetic."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import ClassId, DimensionMismatch, FramescopeError, MaskSet


class EmptyEvaluation(FramescopeError, ValueError):
    pass


class ZeroBaseline(FramescopeError, ZeroDivisionError):
    pass


@dataclass(frozen=True)
class ClassIoU:
    cls: ClassId
    iou: float | None  # None when no image had a defined IoU
    support: int


def iou(pred: np.ndarray, truth: np.ndarray) -> float | None:
    """Intersection over union of two binary planes; ``None`` if both are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"plane shapes differ: {pred.shape} vs {truth.shape}")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return None
    return np.count_nonzero(pred & truth) / union


def mean_iou(
    predictions: Sequence[MaskSet],
    truths: Sequence[MaskSet],
    classes: Iterable[ClassId] = tuple(ClassId),
) -> tuple[dict[ClassId, ClassIoU], float]:
    """Per-class mean of per-image IoUs, then the mean over classes with support.

    Image/class pairs where both prediction and truth are empty are skipped
    and do not count towards that class's support.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must be aligned")
    per_class = {}
    for cls_id in classes:
        vals = [v for p, t in zip(predictions, truths) if (v := iou(p[cls_id], t[cls_id])) is not None]
        per_class[cls_id] = ClassIoU(cls_id, float(np.mean(vals)) if vals else None, len(vals))
    supported = [c.iou for c in per_class.values() if c.support > 0]
    if not supported:
        raise EmptyEvaluation("no class has a defined IoU on any image")
    return per_class, float(np.mean(supported))


def improvement_pct(baseline: float, treatment: float) -> float:
    if baseline <= 0:
        raise ZeroBaseline(f"baseline must be positive, got {baseline}")
    return (treatment - baseline) / baseline * 100.0


def mean_improvement(pairs: Iterable[tuple[float, float]]) -> float:
    vals = [improvement_pct(b, t) for b, t in pairs]
    if not vals:
        raise ValueError("need at least one (baseline, treatment) pair")
    return float(np.mean(vals))
