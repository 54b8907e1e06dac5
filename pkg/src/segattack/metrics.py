"""Segmentation quality metrics: APSR, mIoU, and their deltas.

APSR (attack pixel success rate) is the fraction of pixels whose
predicted class differs from the ground truth — on a clean image this is
exactly 1 minus pixel accuracy.

mIoU accumulates one global confusion matrix over the whole evaluation
set and averages per-class IoU over the classes that appear in either
the truth or the prediction; classes absent from both are excluded from
the mean rather than counted as 0 or 1.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

__all__ = ["apsr", "confusion_matrix", "miou", "delta_miou"]

ArrayLike = Union[np.ndarray, Sequence[np.ndarray]]


def apsr(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of pixels predicted differently from ``truth``.

    ``pred`` may be an (H, W) label map or a (C, H, W) probability map
    (argmax is taken, ties resolved toward the lowest class index).
    """
    pred = np.asarray(pred)
    if pred.ndim == 3:
        pred = pred.argmax(axis=0)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth "
                         f"{truth.shape}")
    return float(np.mean(pred != truth))


def _as_list(x: ArrayLike) -> list:
    if isinstance(x, np.ndarray):
        return [x]
    return list(x)


def confusion_matrix(preds: ArrayLike, truths: ArrayLike,
                     num_classes: int) -> np.ndarray:
    """Global (num_classes, num_classes) count matrix, truth on rows."""
    cm = np.zeros((num_classes, num_classes), np.int64)
    preds, truths = _as_list(preds), _as_list(truths)
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ValueError("no images")
    for p, t in zip(preds, truths):
        p, t = np.asarray(p).ravel(), np.asarray(t).ravel()
        if p.shape != t.shape:
            raise ValueError("prediction/truth shape mismatch")
        if p.min() < 0 or p.max() >= num_classes or t.min() < 0 \
                or t.max() >= num_classes:
            raise ValueError(f"labels outside [0, {num_classes})")
        np.add.at(cm, (t, p), 1)
    return cm


def miou(preds: ArrayLike, truths: ArrayLike, num_classes: int) -> float:
    """Mean per-class IoU over one global confusion matrix.

    IoU_c = TP / (TP + FP + FN).  Classes with no pixels in either truth
    or prediction anywhere in the set are left out of the mean.
    """
    cm = confusion_matrix(preds, truths, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    if not present.any():
        raise ValueError("no classes present")
    return float((tp[present] / (tp + fp + fn)[present]).mean())


def delta_miou(clean_miou: float, perturbed_miou: float) -> float:
    """mIoU drop caused by an attack: clean minus perturbed."""
    return clean_miou - perturbed_miou
