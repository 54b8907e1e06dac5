"""Per-pixel uncertainty measures on softmax probability maps.

All four measures map a (C, H, W) probability map to an (H, W) float map:

* ``M``    — margin: top-1 minus second-highest probability
* ``D``    — max-min difference: top-1 minus lowest probability
* ``Mbar`` — mean margin: average gap between top-1 and every other class
* ``E``    — Shannon entropy in nats, with the 0 * log 0 = 0 convention

M, D and Mbar live in [0, 1] and *shrink* as a pixel gets less certain;
E lives in [0, log C] and grows.  ``weight_map`` folds that difference
away: it returns exp(1 - value) for the margin family and exp(value) for
entropy, so uncertain pixels always get the larger weight.  Weights are
plain numpy arrays meant to be used as constants (no gradient flows
through them).

The entropy here is the literal unnormalized sum; dividing by log C
would shrink the dynamic range of the resulting weights from [1, C] to
[1, e].  See the README note on conventions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .autodiff import DomainError, Tape, Tensor, softmax

__all__ = ["UncertaintyMap", "MEASURES", "margin", "max_min_diff",
           "mean_margin", "entropy", "weight_map", "boundary_distance"]

MEASURES = ("M", "D", "Mbar", "E")


@dataclass
class UncertaintyMap:
    values: np.ndarray  # (H, W) float64
    measure: str

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")


def _check_probs(p: np.ndarray, min_classes: int = 2) -> np.ndarray:
    p = np.asarray(p, np.float64)
    if p.ndim != 3:
        raise DomainError(f"expected (C, H, W) probabilities, got shape "
                          f"{p.shape}")
    if p.shape[0] < min_classes:
        raise DomainError(f"need at least {min_classes} classes, got "
                          f"{p.shape[0]}")
    if p.min() < -1e-6:
        raise DomainError(f"negative probability {p.min()}")
    sums = p.sum(axis=0)
    if np.abs(sums - 1.0).max() > 1e-3:
        raise DomainError("channel probabilities do not sum to 1 "
                          f"(worst deviation {np.abs(sums - 1.0).max():.2e})")
    return p


def margin(p: np.ndarray) -> UncertaintyMap:
    p = _check_probs(p)
    top2 = np.sort(p, axis=0)[-2:]
    return UncertaintyMap(top2[1] - top2[0], "M")


def max_min_diff(p: np.ndarray) -> UncertaintyMap:
    p = _check_probs(p)
    return UncertaintyMap(p.max(axis=0) - p.min(axis=0), "D")


def mean_margin(p: np.ndarray) -> UncertaintyMap:
    # mean over y != yhat of (p_max - p_y); with probabilities summing to 1
    # this collapses to (C * p_max - 1) / (C - 1)
    p = _check_probs(p)
    c = p.shape[0]
    return UncertaintyMap((c * p.max(axis=0) - 1.0) / (c - 1.0), "Mbar")


def entropy(p: np.ndarray) -> UncertaintyMap:
    p = _check_probs(p, min_classes=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return UncertaintyMap(-terms.sum(axis=0), "E")


def weight_map(u: UncertaintyMap) -> np.ndarray:
    """Per-pixel loss weights e^{U}: U = value for E, 1 - value otherwise."""
    if u.measure == "E":
        return np.exp(u.values)
    return np.exp(1.0 - u.values)


def boundary_distance(model, image: np.ndarray, pixel: Tuple[int, int],
                      target_class: int) -> float:
    """First-order estimate of the input-space distance from ``image`` to
    the decision boundary between the predicted class and ``target_class``
    at one pixel: (p_top - p_target) / ||grad of that difference||_2.

    Diagnostic only — attacks never call this.  A saturated pixel whose
    probability gap has vanishing gradient reports ``inf`` (the boundary
    is unreachable to first order); a tied pixel reports 0.
    """
    tape = Tape()
    xv = tape.var(image, dtype=np.float64)
    probs = softmax(model.forward(xv))
    pmap = probs.numpy()
    i, j = pixel
    top = int(pmap[:, i, j].argmax())
    if target_class == top:
        raise ValueError(
            f"target_class {target_class} is already the prediction at "
            f"pixel {pixel}")
    if not 0 <= target_class < pmap.shape[0]:
        raise ValueError(f"target_class {target_class} out of range")
    gap = float(pmap[top, i, j] - pmap[target_class, i, j])
    if gap <= 0.0:
        return 0.0
    selector = np.zeros(pmap.shape)
    selector[top, i, j] = 1.0
    selector[target_class, i, j] = -1.0
    tape.backward((probs * Tensor(selector, dtype=np.float64)).sum())
    norm = float(np.sqrt((xv.grad.astype(np.float64) ** 2).sum()))
    if norm <= 1e-12:
        return float("inf")
    return gap / norm
