"""Command-line front end.

Verbs: ``generate-data``, ``train``, ``attack``, ``evaluate``,
``compare-measures``, ``bench``.  Each reads a plain-text key=value
config (where applicable) and writes its outputs into ``--out``; there is
no hidden state between invocations.  ``--seed`` overrides the config's
seed so sweeps can share one config file.

Every report embeds the SHA-256 of the checkpoint and config that
produced it.  Repeated runs with identical inputs reproduce all
non-timing outputs byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

from .attacks import AttackConfig, ConfigError
from .configfile import ConfigFileError, read_config, take_keys
from .data import DatasetSpec, generate, save_dataset
from .harness import (bench, config_label, evaluate_clean,
                      load_experiment_inputs, measure_comparison,
                      run_experiment, sha256_file)
from .model import ModelConfig, SegModel, save_checkpoint, train
from .data import load_manifest, load_split

_DATA_KEYS = ("num_classes", "height", "width", "train_size", "val_size",
              "shapes_min", "shapes_max", "noise_amplitude", "color_jitter",
              "seed")
_TRAIN_KEYS = ("hidden", "kernel", "epochs", "lr", "momentum", "batch_size",
               "seed", "init_seed")
_ATTACK_EXTRA_KEYS = ("max_images", "overlays")


def _int(cfg: Dict[str, str], key: str, default: int) -> int:
    try:
        return int(cfg.get(key, default))
    except ValueError:
        raise ConfigFileError(f"bad integer {cfg[key]!r} for {key}") from None


def _float(cfg: Dict[str, str], key: str, default: float) -> float:
    try:
        return float(cfg.get(key, default))
    except ValueError:
        raise ConfigFileError(f"bad number {cfg[key]!r} for {key}") from None


def _load_config(path: Optional[str]) -> Dict[str, str]:
    return read_config(path) if path else {}


def _dataset_spec(cfg: Dict[str, str], seed: Optional[int]) -> DatasetSpec:
    take_keys(cfg, _DATA_KEYS, "generate-data config")
    defaults = DatasetSpec()
    spec = DatasetSpec(
        num_classes=_int(cfg, "num_classes", defaults.num_classes),
        height=_int(cfg, "height", defaults.height),
        width=_int(cfg, "width", defaults.width),
        train_size=_int(cfg, "train_size", defaults.train_size),
        val_size=_int(cfg, "val_size", defaults.val_size),
        shapes_min=_int(cfg, "shapes_min", defaults.shapes_min),
        shapes_max=_int(cfg, "shapes_max", defaults.shapes_max),
        noise_amplitude=_float(cfg, "noise_amplitude",
                               defaults.noise_amplitude),
        color_jitter=_float(cfg, "color_jitter", defaults.color_jitter),
        seed=seed if seed is not None else _int(cfg, "seed", defaults.seed))
    return spec.validate()


def _provenance(args, config_path: Optional[str] = None) -> Dict[str, str]:
    prov: Dict[str, str] = {}
    if getattr(args, "checkpoint", None):
        prov["checkpoint"] = os.path.basename(args.checkpoint)
        prov["checkpoint_sha256"] = sha256_file(args.checkpoint)
    if config_path:
        prov["config"] = os.path.basename(config_path)
        prov["config_sha256"] = sha256_file(config_path)
    if getattr(args, "manifest", None):
        prov["manifest"] = os.path.basename(args.manifest)
    return prov


def _cmd_generate_data(args) -> int:
    spec = _dataset_spec(_load_config(args.config), args.seed)
    dataset = generate(spec)
    manifest = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.train)} train + {len(dataset.val)} val "
          f"images ({spec.height}x{spec.width}, {spec.num_classes} classes)")
    print(f"manifest: {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    take_keys(cfg, _TRAIN_KEYS, "train config")
    manifest = load_manifest(args.manifest)
    images = load_split(manifest, "train")
    if not images:
        raise ValueError(f"{args.manifest} has no train images")
    hidden = tuple(int(h) for h in cfg.get("hidden", "16,32,32").split(",")
                   if h.strip())
    model = SegModel(
        ModelConfig(num_classes=manifest.num_classes, hidden=hidden,
                    kernel=_int(cfg, "kernel", 3)),
        manifest.mean, manifest.scale,
        init_seed=_int(cfg, "init_seed", 0))
    seed = args.seed if args.seed is not None else _int(cfg, "seed", 0)
    result = train(model, images,
                   epochs=_int(cfg, "epochs", 30),
                   lr=_float(cfg, "lr", 1e-3),
                   momentum=_float(cfg, "momentum", 0.9),
                   batch_size=_int(cfg, "batch_size", 8),
                   seed=seed, verbose=not args.quiet)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    save_checkpoint(ckpt, model)
    log = os.path.join(args.out, "train_log.csv")
    with open(log, "w") as fh:
        fh.write(f"# manifest={os.path.basename(args.manifest)}\n")
        fh.write(f"# checkpoint_sha256={sha256_file(ckpt)}\n")
        fh.write(f"# seed={seed}\n")
        fh.write("epoch,loss\n")
        for i, loss in enumerate(result.epoch_losses):
            fh.write(f"{i},{loss!r}\n")
    print(f"final loss {result.epoch_losses[-1]:.5f} after "
          f"{len(result.epoch_losses)} epochs")
    print(f"checkpoint: {ckpt}")
    return 0


def _attack_setup(args):
    cfg_text = _load_config(args.config)
    extra = {k: cfg_text.pop(k) for k in list(cfg_text)
             if k in _ATTACK_EXTRA_KEYS}
    attack_cfg = AttackConfig.from_dict(cfg_text)
    if args.seed is not None:
        from dataclasses import replace
        attack_cfg = replace(attack_cfg, seed=args.seed)
    model, images, _ = load_experiment_inputs(args.checkpoint, args.manifest)
    max_images = int(extra.get("max_images", 0))
    if max_images > 0:
        images = images[:max_images]
    overlays = int(extra.get("overlays", 2))
    return model, images, attack_cfg, overlays


def _cmd_attack(args) -> int:
    model, images, cfg, overlays = _attack_setup(args)
    report = run_experiment(model, images, [cfg], args.out, jobs=args.jobs,
                            overlays=overlays,
                            provenance=_provenance(args, args.config))
    s = report.summaries[0]
    print(f"{s.config_label}: APSR {s.mean_clean_apsr:.4f} -> "
          f"{s.mean_adv_apsr:.4f}, mIoU {s.clean_miou:.4f} -> "
          f"{s.adv_miou:.4f} (delta {s.delta_miou:.4f}), "
          f"{s.mean_seconds * 1e3:.1f} ms/frame")
    print(f"reports in {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    model, images, _ = load_experiment_inputs(args.checkpoint, args.manifest)
    summary = evaluate_clean(model, images, args.out, jobs=args.jobs,
                             provenance=_provenance(args))
    print(f"pixel accuracy {summary['pixel_accuracy']:.4f}  "
          f"mIoU {summary['miou']:.4f}  clean APSR "
          f"{summary['clean_apsr']:.4f} over {int(summary['n_images'])} "
          f"images")
    return 0


def _cmd_compare_measures(args) -> int:
    model, images, cfg, _ = _attack_setup(args)
    report = measure_comparison(model, images, cfg, args.out, jobs=args.jobs,
                                provenance=_provenance(args, args.config))
    for s in report.summaries:
        print(f"{s.config.loss_scheme:22s} APSR {s.mean_adv_apsr:.4f}  "
              f"delta mIoU {s.delta_miou:.4f}")
    print(f"reports in {args.out}")
    return 0


def _cmd_bench(args) -> int:
    model, images, cfg, _ = _attack_setup(args)
    seconds = bench(model, images, cfg, args.out,
                    provenance=_provenance(args, args.config))
    for scheme, sec in seconds.items():
        print(f"{scheme:22s} {sec * 1e3:8.2f} ms/frame "
              f"({sec / seconds['plain']:.3f}x plain)")
    print(f"reports in {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segattack",
        description="Uncertainty-weighted adversarial attacks on a toy "
                    "segmentation model.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *, config=False, checkpoint=False, manifest=False,
            jobs=False, seed=True):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        if config:
            required = name in ("attack", "compare-measures", "bench")
            p.add_argument("--config", required=required,
                           help="plain-text key=value config file")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="model checkpoint file")
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="dataset manifest file")
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config's seed")
        if jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="image-level worker threads")
        return p

    add("generate-data", _cmd_generate_data, config=True)
    t = add("train", _cmd_train, config=True, manifest=True)
    t.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch loss lines")
    add("attack", _cmd_attack, config=True, checkpoint=True, manifest=True,
        jobs=True)
    add("evaluate", _cmd_evaluate, checkpoint=True, manifest=True, jobs=True,
        seed=False)
    add("compare-measures", _cmd_compare_measures, config=True,
        checkpoint=True, manifest=True, jobs=True)
    add("bench", _cmd_bench, config=True, checkpoint=True, manifest=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
