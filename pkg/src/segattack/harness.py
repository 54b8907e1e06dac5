"""Experiment orchestration: run attacks over a validation split, compute
APSR / mIoU aggregates, measure per-frame runtime, and emit CSV reports
plus PPM overlays.

Report layout
-------------
``per_image.csv``   one row per (attack config, image)
``summary.csv``     one row per attack config with set-level aggregates
overlay PPMs        clean prediction, adversarial prediction, and a
                    perturbation heatmap for the first k images

Every CSV starts with ``#`` comment lines embedding the checkpoint hash
and the full attack configs, so a report is traceable to exactly what
produced it.  All values except the timing columns are deterministic for
a fixed (checkpoint, manifest, config, seed).

Image-level parallelism uses a thread pool (numpy's matmul releases the
GIL); results are reduced in image order regardless of completion order.
"""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import AttackConfig, AttackResult, run_attack
from .data import CLASS_COLORS, LabeledImage, Manifest, load_manifest, load_split
from .metrics import apsr, delta_miou, miou
from .model import SegModel, load_checkpoint, predict
from .netpbm import write_ppm

__all__ = ["ImageRow", "ConfigSummary", "EvalReport", "sha256_file",
           "config_label", "load_experiment_inputs", "run_experiment",
           "evaluate_clean", "measure_comparison", "bench",
           "COMPARISON_SCHEMES"]

COMPARISON_SCHEMES = ("plain", "margin_weighted", "maxmin_weighted",
                      "meanmargin_weighted", "entropy_weighted")


@dataclass
class ImageRow:
    config_label: str
    image_id: str
    clean_apsr: float
    adv_apsr: float
    seconds: float


@dataclass
class ConfigSummary:
    config_label: str
    config: AttackConfig
    n_images: int
    mean_clean_apsr: float
    mean_adv_apsr: float
    clean_miou: float
    adv_miou: float
    delta_miou: float
    mean_seconds: float


@dataclass
class EvalReport:
    rows: List[ImageRow] = field(default_factory=list)
    summaries: List[ConfigSummary] = field(default_factory=list)
    provenance: Dict[str, str] = field(default_factory=dict)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_label(cfg: AttackConfig, index: Optional[int] = None) -> str:
    label = f"{cfg.family}_eps{cfg.eps:g}_{cfg.loss_scheme}"
    if cfg.family == "subset_ifgsm":
        label += f"_rho{cfg.rho:g}"
    if index is not None:
        label = f"c{index}_{label}"
    return label


def load_experiment_inputs(checkpoint_path: str, manifest_path: str,
                           split: str = "val"
                           ) -> Tuple[SegModel, List[LabeledImage], Manifest]:
    """Load and cross-check everything an experiment needs, failing fast
    before any attack runs."""
    model = load_checkpoint(checkpoint_path)
    manifest = load_manifest(manifest_path)
    if model.num_classes != manifest.num_classes:
        raise ValueError(
            f"checkpoint has {model.num_classes} classes but manifest "
            f"declares {manifest.num_classes}")
    images = load_split(manifest, split)
    if not images:
        raise ValueError(f"manifest {manifest_path} has no {split!r} images")
    return model, images, manifest


def _map_images(fn, images: Sequence[LabeledImage], jobs: int):
    if jobs <= 1:
        return [fn(im) for im in images]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, images))


def _provenance_lines(provenance: Dict[str, str],
                      configs: Sequence[Tuple[str, AttackConfig]]) -> List[str]:
    lines = [f"# {k}={provenance[k]}" for k in sorted(provenance)]
    for label, cfg in configs:
        kv = " ".join(f"{k}={v}" for k, v in sorted(cfg.to_dict().items()))
        lines.append(f"# config {label}: {kv}")
    return lines


def _write_csv(path: str, comment_lines: List[str], header: List[str],
               rows: List[List]) -> None:
    with open(path, "w", newline="") as fh:
        for line in comment_lines:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _class_overlay(labels: np.ndarray) -> np.ndarray:
    return CLASS_COLORS[labels].transpose(2, 0, 1)


def _heatmap(perturbation: np.ndarray, eps: float) -> np.ndarray:
    mag = np.abs(perturbation).mean(axis=0)
    scaled = np.clip(mag * (255.0 / max(eps, 1e-12)), 0.0, 255.0)
    return np.broadcast_to(np.rint(scaled), (3,) + scaled.shape)


def run_experiment(model: SegModel, images: Sequence[LabeledImage],
                   configs: Sequence[AttackConfig], out_dir: str, *,
                   jobs: int = 1, overlays: int = 2,
                   provenance: Optional[Dict[str, str]] = None) -> EvalReport:
    """Attack every image with every config; write reports into out_dir."""
    if not images:
        raise ValueError("no images to attack")
    labelled = [(config_label(c.validate(), i), c)
                for i, c in enumerate(configs)]
    if not labelled:
        raise ValueError("no attack configs")
    os.makedirs(out_dir, exist_ok=True)

    clean_preds = [predict(model, im.image).labels for im in images]
    truths = [im.labels for im in images]
    report = EvalReport(provenance=dict(provenance or {}))

    for label, cfg in labelled:
        results: List[AttackResult] = _map_images(
            lambda im: run_attack(model, im.image, im.labels, cfg),
            images, jobs)
        adv_preds = [r.final_probs.argmax(axis=0) for r in results]
        for im, cp, res in zip(images, clean_preds, results):
            report.rows.append(ImageRow(
                label, im.id, apsr(cp, im.labels),
                apsr(res.final_probs, im.labels), res.duration))
        clean_m = miou(clean_preds, truths, model.num_classes)
        adv_m = miou(adv_preds, truths, model.num_classes)
        picked = report.rows[-len(images):]
        report.summaries.append(ConfigSummary(
            label, cfg, len(images),
            float(np.mean([r.clean_apsr for r in picked])),
            float(np.mean([r.adv_apsr for r in picked])),
            clean_m, adv_m, delta_miou(clean_m, adv_m),
            float(np.mean([r.seconds for r in picked]))))
        for im, cp, ap, res in list(zip(images, clean_preds, adv_preds,
                                        results))[:overlays]:
            stem = os.path.join(out_dir, f"{label}_{im.id}")
            write_ppm(f"{stem}_clean.ppm", _class_overlay(cp))
            write_ppm(f"{stem}_adv.ppm", _class_overlay(ap))
            write_ppm(f"{stem}_pert.ppm",
                      _heatmap(res.perturbation, cfg.eps))

    comments = _provenance_lines(report.provenance, labelled)
    _write_csv(os.path.join(out_dir, "per_image.csv"), comments,
               ["config_label", "image_id", "clean_apsr", "adv_apsr",
                "seconds"],
               [[r.config_label, r.image_id, r.clean_apsr, r.adv_apsr,
                 r.seconds] for r in report.rows])
    _write_csv(os.path.join(out_dir, "summary.csv"), comments,
               ["config_label", "n_images", "mean_clean_apsr",
                "mean_adv_apsr", "clean_miou", "adv_miou", "delta_miou",
                "mean_seconds"],
               [[s.config_label, s.n_images, s.mean_clean_apsr,
                 s.mean_adv_apsr, s.clean_miou, s.adv_miou, s.delta_miou,
                 s.mean_seconds] for s in report.summaries])
    return report


def evaluate_clean(model: SegModel, images: Sequence[LabeledImage],
                   out_dir: str, *, jobs: int = 1,
                   provenance: Optional[Dict[str, str]] = None
                   ) -> Dict[str, float]:
    """Clean-model quality report: per-image accuracy/APSR plus mIoU."""
    if not images:
        raise ValueError("no images to evaluate")
    os.makedirs(out_dir, exist_ok=True)
    preds = _map_images(lambda im: predict(model, im.image).labels,
                        images, jobs)
    rows = []
    for im, p in zip(images, preds):
        err = apsr(p, im.labels)
        rows.append([im.id, 1.0 - err, err])
    summary = {
        "n_images": float(len(images)),
        "pixel_accuracy": float(np.mean([r[1] for r in rows])),
        "clean_apsr": float(np.mean([r[2] for r in rows])),
        "miou": miou(preds, [im.labels for im in images], model.num_classes),
    }
    comments = [f"# {k}={provenance[k]}" for k in sorted(provenance or {})]
    _write_csv(os.path.join(out_dir, "clean_per_image.csv"), comments,
               ["image_id", "pixel_accuracy", "apsr"], rows)
    _write_csv(os.path.join(out_dir, "clean_summary.csv"), comments,
               list(summary),
               [[summary[k] for k in summary]])
    return summary


def measure_comparison(model: SegModel, images: Sequence[LabeledImage],
                       base: AttackConfig, out_dir: str, *, jobs: int = 1,
                       provenance: Optional[Dict[str, str]] = None
                       ) -> EvalReport:
    """Plain baseline plus all four uncertainty weightings of one attack.

    Emits ``measures.csv`` with one row per scheme and a soft
    (pass/warn, never fatal) check that entropy weighting does at least
    as well as margin weighting.
    """
    configs = [replace(base, loss_scheme=s) for s in COMPARISON_SCHEMES]
    report = run_experiment(model, images, configs, out_dir, jobs=jobs,
                            overlays=0, provenance=provenance)
    by_scheme = {s.config.loss_scheme: s for s in report.summaries}
    soft = ("pass" if by_scheme["entropy_weighted"].mean_adv_apsr
            >= by_scheme["margin_weighted"].mean_adv_apsr else "warn")
    comments = _provenance_lines(report.provenance,
                                 [(s.config_label, s.config)
                                  for s in report.summaries])
    comments.append(f"# soft_check entropy_apsr_ge_margin_apsr={soft}")
    _write_csv(os.path.join(out_dir, "measures.csv"), comments,
               ["scheme", "mean_adv_apsr", "clean_miou", "adv_miou",
                "delta_miou"],
               [[s.config.loss_scheme, s.mean_adv_apsr, s.clean_miou,
                 s.adv_miou, s.delta_miou] for s in report.summaries])
    return report


def bench(model: SegModel, images: Sequence[LabeledImage],
          base: AttackConfig, out_dir: str, *,
          schemes: Sequence[str] = ("plain", "entropy_weighted", "zero_out"),
          provenance: Optional[Dict[str, str]] = None) -> Dict[str, float]:
    """Mean seconds/frame per loss scheme, plus overhead ratio vs plain.

    Always runs single-threaded so per-frame wall clock is meaningful.
    """
    if "plain" not in schemes:
        schemes = ("plain",) + tuple(schemes)
    os.makedirs(out_dir, exist_ok=True)
    seconds: Dict[str, float] = {}
    apsr_by: Dict[str, float] = {}
    for scheme in schemes:
        cfg = replace(base, loss_scheme=scheme).validate()
        results = [run_attack(model, im.image, im.labels, cfg)
                   for im in images]
        seconds[scheme] = float(np.mean([r.duration for r in results]))
        apsr_by[scheme] = float(np.mean(
            [apsr(r.final_probs, im.labels)
             for im, r in zip(images, results)]))
    comments = _provenance_lines(
        dict(provenance or {}),
        [(config_label(replace(base, loss_scheme=s)),
          replace(base, loss_scheme=s)) for s in schemes])
    _write_csv(os.path.join(out_dir, "bench.csv"), comments,
               ["scheme", "mean_seconds", "ratio_to_plain", "mean_adv_apsr"],
               [[s, seconds[s], seconds[s] / seconds["plain"], apsr_by[s]]
                for s in schemes])
    return seconds
