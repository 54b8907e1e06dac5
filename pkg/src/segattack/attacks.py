"""Untargeted pixel-wise attacks with pluggable loss weighting.

Four attack families share one iterate engine:

* ``fgsm``         — one step of size eps along the gradient sign
* ``ifgsm``        — n steps of size alpha, clipped to the eps-ball
                     around the clean image intersected with [0, 255]
* ``pgd``          — ifgsm started from a random point inside the
                     eps-ball, best of ``restarts`` runs by final APSR
* ``subset_ifgsm`` — ifgsm with the gradient zeroed outside a random
                     pixel mask before the sign step; the loss itself
                     still sees every pixel

Images, eps and alpha all live in [0, 255] pixel units.  The loss is
mean per-pixel cross-entropy, optionally reweighted per pixel:
``*_weighted`` schemes multiply by e^{U} for an uncertainty measure U,
``zero_out`` drops pixels that are already misclassified with
probability >= tau.  Weights are recomputed from the current iterate at
every step (set ``reweight_per_iter=False`` to freeze them at the clean
image) and are constants with respect to the gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import Tape, Tensor, cross_entropy
from .metrics import apsr
from .model import SegModel
from .prng import SplitMix64, derive_seed
from .uncertainty import (entropy, margin, max_min_diff, mean_margin,
                          weight_map)

__all__ = ["AttackConfig", "AttackResult", "ConfigError", "FAMILIES",
           "SCHEMES", "PGD_PRESETS", "kurakin_iterations", "scheme_weights",
           "weighted_loss", "run_attack", "fgsm", "ifgsm", "pgd",
           "subset_ifgsm"]

FAMILIES = ("fgsm", "ifgsm", "pgd", "subset_ifgsm")
SCHEMES = ("plain", "entropy_weighted", "margin_weighted", "maxmin_weighted",
           "meanmargin_weighted", "zero_out")

_PGD_INIT_TAG = 303
_MASK_TAG = 404


class ConfigError(ValueError):
    pass


def kurakin_iterations(eps: float) -> int:
    """Iteration budget n = min{eps + 4, floor(1.25 eps)}, at least 1."""
    return max(1, min(int(eps) + 4, int(np.floor(1.25 * eps))))


@dataclass(frozen=True)
class AttackConfig:
    family: str = "ifgsm"
    eps: float = 8.0
    alpha: float = 2.0  # == 2.5 * eps / n at the default eps=8, n=10 budget
    iterations: Optional[int] = None   # None -> 1 for fgsm, schedule otherwise
    restarts: int = 1
    loss_scheme: str = "plain"
    tau: float = 0.75
    rho: float = 1.0
    mask_seed: int = 0
    seed: int = 0
    reweight_per_iter: bool = True

    def validate(self) -> "AttackConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.loss_scheme not in SCHEMES:
            raise ConfigError(f"unknown loss scheme {self.loss_scheme!r}")
        # eps = 0 is allowed (it makes every attack the identity), which
        # is useful for sanity checks; eps < 0 is not.
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")
        return self

    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        if self.family == "fgsm":
            return 1
        return kurakin_iterations(self.eps)

    def to_dict(self) -> Dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = "" if v is None else str(v)
        return out

    @classmethod
    def from_dict(cls, d: Dict[str, str]) -> "AttackConfig":
        kwargs = {}
        casts = {"eps": float, "alpha": float, "tau": float, "rho": float,
                 "iterations": int, "restarts": int, "mask_seed": int,
                 "seed": int}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.name == "iterations":
                kwargs[f.name] = None if raw in ("", "None", "auto") \
                    else int(raw)
            elif f.name == "reweight_per_iter":
                if raw not in ("True", "False", "true", "false", "1", "0"):
                    raise ConfigError(f"bad boolean {raw!r} for "
                                      f"reweight_per_iter")
                kwargs[f.name] = raw in ("True", "true", "1")
            elif f.name in casts:
                try:
                    kwargs[f.name] = casts[f.name](raw)
                except ValueError:
                    raise ConfigError(
                        f"bad value {raw!r} for {f.name}") from None
            else:
                kwargs[f.name] = raw
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown attack config keys {sorted(unknown)}")
        return cls(**kwargs).validate()


# Canned PGD settings so experiment configs can stay short.
# Their units are ambiguous; both readings are provided and neither is
# claimed to be canonical (see README).  `pgd_default` is the setting
# actually tuned for this toy stack.
PGD_PRESETS: Dict[str, AttackConfig] = {
    "pgd_default": AttackConfig(family="pgd", eps=8.0, alpha=1.0,
                                iterations=40, restarts=1),
    # the widely used eps=1, alpha=1/30, n=40 recipe, under both readings
    # of its units: eps measured in pixels, or eps as a fraction of the
    # [0, 255] range
    "pgd_eps1_pixel": AttackConfig(family="pgd", eps=1.0, alpha=1.0 / 30.0,
                                   iterations=40, restarts=1),
    "pgd_eps1_scaled": AttackConfig(family="pgd", eps=255.0,
                                    alpha=255.0 / 30.0, iterations=40,
                                    restarts=1),
}


@dataclass
class AttackResult:
    adversarial: np.ndarray      # (3, H, W) float32 in [0, 255]
    perturbation: np.ndarray     # adversarial - clean
    apsr_trace: List[float]      # APSR after 0..n steps (index 0 = start)
    final_probs: np.ndarray      # (C, H, W) float32
    duration: float              # wall-clock seconds
    config: AttackConfig = field(repr=False)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def scheme_weights(scheme: str, probs: np.ndarray, labels: np.ndarray,
                   tau: float) -> Optional[np.ndarray]:
    """Per-pixel (H, W) float32 loss weights for one scheme, or None for
    plain.  ``probs`` must be the softmax output of the CURRENT iterate."""
    if scheme == "plain":
        return None
    if scheme == "entropy_weighted":
        w = weight_map(entropy(probs))
    elif scheme == "margin_weighted":
        w = weight_map(margin(probs))
    elif scheme == "maxmin_weighted":
        w = weight_map(max_min_diff(probs))
    elif scheme == "meanmargin_weighted":
        w = weight_map(mean_margin(probs))
    elif scheme == "zero_out":
        # keep a pixel unless it is already misclassified with
        # probability at least tau
        pred = probs.argmax(axis=0)
        keep = (pred == labels) | (probs.max(axis=0) < tau)
        w = keep.astype(np.float64)
    else:
        raise ConfigError(f"unknown loss scheme {scheme!r}")
    return w.astype(np.float32)


def weighted_loss(logits: Tensor, labels: np.ndarray, scheme: str,
                  tau: float = 0.75,
                  weights: Optional[np.ndarray] = None
                  ) -> Tuple[Tensor, np.ndarray, Optional[np.ndarray]]:
    """Scalar attack loss on the tape of ``logits``.

    Returns (loss, probs, weights): probs is the softmax of the logits
    as a plain array, weights the (H, W) map actually applied (None for
    plain).  Passing ``weights`` explicitly reuses a frozen map instead
    of recomputing from probs.  Weights enter as constants: no gradient
    flows through them, only through the per-pixel cross-entropy.
    """
    ce = cross_entropy(logits, labels)
    probs = _softmax_np(logits.numpy())
    if scheme == "plain":
        return ce.mean(), probs, None
    if weights is None:
        weights = scheme_weights(scheme, probs, labels, tau)
    return (ce * Tensor(weights)).mean(), probs, weights


def _attack_once(model: SegModel, image: np.ndarray, labels: np.ndarray,
                 cfg: AttackConfig, n: int, x0: np.ndarray,
                 step_mask: Optional[np.ndarray]
                 ) -> Tuple[np.ndarray, List[float], np.ndarray]:
    """Core iterate loop shared by every family."""
    lo = np.maximum(image - cfg.eps, 0.0).astype(np.float32)
    hi = np.minimum(image + cfg.eps, 255.0).astype(np.float32)
    x = np.clip(x0, lo, hi).astype(np.float32)
    trace: List[float] = []
    frozen_weights: Optional[np.ndarray] = None
    for t in range(n):
        tape = Tape()
        xv = tape.var(x)
        logits = model.forward(xv)
        loss, probs, weights = weighted_loss(
            logits, labels, cfg.loss_scheme, cfg.tau, weights=frozen_weights)
        if not cfg.reweight_per_iter and frozen_weights is None:
            frozen_weights = weights
        trace.append(apsr(probs, labels))
        tape.backward(loss)
        step = (cfg.alpha * np.sign(xv.grad)).astype(np.float32)
        if step_mask is not None:
            step *= step_mask
        x = np.clip(x + step, lo, hi).astype(np.float32)
    final_logits = model.forward(Tensor(x))
    final_probs = _softmax_np(final_logits.numpy()).astype(np.float32)
    trace.append(apsr(final_probs, labels))
    return x, trace, final_probs


def _subset_mask(cfg: AttackConfig, h: int, w: int) -> np.ndarray:
    k = int(round(cfg.rho * h * w))
    if k < 1:
        raise ConfigError(
            f"rho={cfg.rho} selects no pixels on a {h}x{w} image")
    order = SplitMix64(derive_seed(cfg.mask_seed, _MASK_TAG)).permutation(h * w)
    mask = np.zeros(h * w, np.float32)
    mask[order[:k]] = 1.0
    return mask.reshape(1, h, w)


def run_attack(model: SegModel, image: np.ndarray, labels: np.ndarray,
               cfg: AttackConfig) -> AttackResult:
    """Dispatch on ``cfg.family``; see the family helpers below."""
    cfg.validate()
    image = np.asarray(image, np.float32)
    if image.ndim != 3:
        raise ConfigError(f"expected a single (C, H, W) image, got shape "
                          f"{image.shape}")
    labels = np.asarray(labels)
    start = time.perf_counter()
    n = cfg.resolved_iterations()

    if cfg.family == "fgsm":
        # fgsm's single step has size eps by definition; alpha is ignored
        one = replace(cfg, alpha=max(cfg.eps, np.finfo(np.float32).tiny))
        x, trace, probs = _attack_once(model, image, labels, one, 1, image,
                                       None)
    elif cfg.family == "ifgsm":
        x, trace, probs = _attack_once(model, image, labels, cfg, n, image,
                                       None)
    elif cfg.family == "subset_ifgsm":
        mask = _subset_mask(cfg, image.shape[1], image.shape[2])
        x, trace, probs = _attack_once(model, image, labels, cfg, n, image,
                                       mask)
    else:  # pgd
        best = None
        for r in range(cfg.restarts):
            rng = SplitMix64(derive_seed(cfg.seed, _PGD_INIT_TAG, r))
            noise = rng.fill_uniform(image.shape, -cfg.eps, cfg.eps)
            x0 = (image + noise).astype(np.float32)
            out = _attack_once(model, image, labels, cfg, n, x0, None)
            if best is None or out[1][-1] > best[1][-1]:
                best = out
        x, trace, probs = best

    return AttackResult(adversarial=x, perturbation=x - image,
                        apsr_trace=trace, final_probs=probs,
                        duration=time.perf_counter() - start, config=cfg)


def _family_entry(family: str):
    def entry(model: SegModel, image: np.ndarray, labels: np.ndarray,
              cfg: AttackConfig) -> AttackResult:
        if cfg.family != family:
            raise ConfigError(
                f"config family {cfg.family!r} does not match {family!r}")
        return run_attack(model, image, labels, cfg)
    entry.__name__ = family
    entry.__qualname__ = family
    entry.__doc__ = f"Run a {family} attack; cfg.family must be {family!r}."
    return entry


fgsm = _family_entry("fgsm")
ifgsm = _family_entry("ifgsm")
pgd = _family_entry("pgd")
subset_ifgsm = _family_entry("subset_ifgsm")
