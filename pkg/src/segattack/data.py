"""Deterministic synthetic segmentation data: dense mosaics of small
colored shapes on a noisy background.

Every image is a pure function of (spec seed, split, index): geometry,
colors and pixel noise all come from derived splitmix64 streams, so the
same spec regenerates the same dataset bit for bit on any platform.  The
default spec packs many small, mutually occluding shapes into each
scene, so most local windows straddle several classes — like the
cluttered street scenes segmentation models are usually evaluated on —
and jitter plus noise keep a trained model genuinely uncertain near
boundaries.

Class 0 is background; classes 1..C-1 draw circles, rectangles and
triangles in rotation (class k uses shape kind (k-1) mod 3).  Shapes drawn
later occlude earlier ones in both the image and the label map.  Final
images are rounded to whole [0, 255] values so that PPM files round-trip
exactly and training from disk equals training from memory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .prng import SplitMix64, derive_seed

__all__ = ["DatasetSpec", "LabeledImage", "ShapesDataset", "Manifest",
           "generate", "save_dataset", "load_manifest", "load_split"]

# base colors per class; jitter and noise spread each into a cloud
CLASS_COLORS = np.array([
    (70, 70, 70),     # 0 background
    (200, 80, 80),    # 1 circle
    (80, 190, 80),    # 2 rectangle
    (90, 90, 210),    # 3 triangle
    (205, 205, 80),   # 4
    (195, 90, 195),   # 5
    (80, 195, 195),   # 6
    (225, 150, 70),   # 7
], np.float64)

_SPLIT_TAGS = {"train": 1, "val": 2}


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 4
    height: int = 64
    width: int = 64
    train_size: int = 500
    val_size: int = 100
    shapes_min: int = 18
    shapes_max: int = 30
    noise_amplitude: float = 30.0
    color_jitter: float = 55.0
    seed: int = 7

    def validate(self) -> "DatasetSpec":
        if not 2 <= self.num_classes <= 8:
            raise ValueError(f"num_classes must be in [2, 8], got {self.num_classes}")
        if self.height < 16 or self.width < 16:
            raise ValueError(
                f"image size must be at least 16x16, got {self.height}x{self.width}")
        if not 1 <= self.shapes_min <= self.shapes_max:
            raise ValueError(
                f"bad shapes range [{self.shapes_min}, {self.shapes_max}]")
        if self.noise_amplitude < 0 or self.color_jitter < 0:
            raise ValueError("noise_amplitude and color_jitter must be >= 0")
        if self.train_size < 0 or self.val_size < 0:
            raise ValueError("split sizes must be >= 0")
        return self


@dataclass
class LabeledImage:
    image: np.ndarray   # (3, H, W) float32, whole values in [0, 255]
    labels: np.ndarray  # (H, W) int64, values < num_classes
    id: str


@dataclass
class ShapesDataset:
    spec: DatasetSpec
    train: List[LabeledImage]
    val: List[LabeledImage]
    mean: np.ndarray   # per-channel mean of the train split, float64 (3,)
    scale: np.ndarray  # per-channel std of the train split, float64 (3,)


def _draw_shape(rng: SplitMix64, cls: int, h: int, w: int) -> np.ndarray:
    """Boolean mask for one random shape whose kind is set by its class."""
    kind = (cls - 1) % 3
    yy, xx = np.mgrid[0:h, 0:w]
    cy = rng.next_int(2, h - 3)
    cx = rng.next_int(2, w - 3)
    # small relative to the frame so the default shape count yields scenes
    # where most windows straddle several classes rather than one big blob
    lo = max(3, min(h, w) // 16)
    hi = max(lo + 1, min(h, w) // 8)
    if kind == 0:  # circle
        r = rng.next_int(lo, hi)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == 1:  # axis-aligned rectangle
        hh = rng.next_int(lo, hi)
        hw = rng.next_int(lo, hi)
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    # triangle: three vertices roughly 120 degrees apart around the center
    verts = []
    for k in range(3):
        ang = 2.0 * np.pi * k / 3.0 + rng.fill_uniform(1, -0.5, 0.5)[0]
        rad = rng.next_int(lo + 1, hi + 2)
        verts.append((cy + rad * np.sin(ang), cx + rad * np.cos(ang)))
    mask = np.ones((h, w), bool)
    for k in range(3):
        (ay, ax_), (by, bx) = verts[k], verts[(k + 1) % 3]
        (oy, ox) = verts[(k + 2) % 3]
        side = (bx - ax_) * (yy - ay) - (by - ay) * (xx - ax_)
        ref = (bx - ax_) * (oy - ay) - (by - ay) * (ox - ax_)
        mask &= (side * ref) >= 0
    return mask


def _render(spec: DatasetSpec, split: str, index: int) -> LabeledImage:
    rng = SplitMix64(derive_seed(spec.seed, _SPLIT_TAGS[split], index))
    h, w = spec.height, spec.width
    image = np.empty((3, h, w), np.float64)
    bg = CLASS_COLORS[0] + rng.fill_uniform(3, -spec.color_jitter, spec.color_jitter)
    image[:] = bg.reshape(3, 1, 1)
    labels = np.zeros((h, w), np.int64)

    n_shapes = rng.next_int(spec.shapes_min, spec.shapes_max)
    for _ in range(n_shapes):
        cls = rng.next_int(1, spec.num_classes - 1)
        color = CLASS_COLORS[cls] + rng.fill_uniform(
            3, -spec.color_jitter, spec.color_jitter)
        mask = _draw_shape(rng, cls, h, w)
        image[:, mask] = color.reshape(3, 1)
        labels[mask] = cls

    if spec.noise_amplitude > 0:
        image += rng.fill_uniform(
            (3, h, w), -spec.noise_amplitude, spec.noise_amplitude)
    image = np.rint(np.clip(image, 0.0, 255.0)).astype(np.float32)
    return LabeledImage(image, labels, f"{split}_{index:04d}")


def generate(spec: DatasetSpec) -> ShapesDataset:
    """Generate both splits plus the train-split normalization constants."""
    spec.validate()
    train = [_render(spec, "train", i) for i in range(spec.train_size)]
    val = [_render(spec, "val", i) for i in range(spec.val_size)]
    if train:
        stack = np.stack([im.image for im in train]).astype(np.float64)
        mean = stack.mean(axis=(0, 2, 3))
        scale = np.maximum(stack.std(axis=(0, 2, 3)), 1.0)
    else:
        mean = np.zeros(3)
        scale = np.ones(3)
    return ShapesDataset(spec, train, val, mean, scale)


# -- manifest / on-disk layout ------------------------------------------


@dataclass
class Manifest:
    path: str
    num_classes: int
    height: int
    width: int
    mean: np.ndarray
    scale: np.ndarray
    entries: List[Tuple[str, str, str, str]] = field(default_factory=list)
    # entries hold (split, id, image path, label path) relative to the manifest


def save_dataset(dataset: ShapesDataset, out_dir: str) -> str:
    """Write PPM/PGM files plus a manifest; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    lines = [
        "# segattack dataset manifest v1",
        f"num_classes={dataset.spec.num_classes}",
        f"height={dataset.spec.height}",
        f"width={dataset.spec.width}",
    ]
    for name, values in (("mean", dataset.mean), ("scale", dataset.scale)):
        for ch, v in zip("rgb", values):
            lines.append(f"{name}_{ch}={float(v)!r}")
    for split, images in (("train", dataset.train), ("val", dataset.val)):
        for im in images:
            img_rel = f"images/{im.id}.ppm"
            lab_rel = f"labels/{im.id}.pgm"
            write_ppm(os.path.join(out_dir, img_rel), im.image)
            write_pgm(os.path.join(out_dir, lab_rel), im.labels)
            lines.append(f"{split} {im.id} {img_rel} {lab_rel}")
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path


def load_manifest(path: str) -> Manifest:
    header = {}
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line and " " not in line:
                key, value = line.split("=", 1)
                header[key] = value
            else:
                parts = line.split()
                if len(parts) != 4 or parts[0] not in _SPLIT_TAGS:
                    raise ValueError(f"{path}: bad manifest line {line!r}")
                entries.append(tuple(parts))
    try:
        mean = np.array([float(header[f"mean_{c}"]) for c in "rgb"])
        scale = np.array([float(header[f"scale_{c}"]) for c in "rgb"])
        man = Manifest(path, int(header["num_classes"]), int(header["height"]),
                       int(header["width"]), mean, scale, entries)
    except KeyError as missing:
        raise ValueError(f"{path}: manifest missing key {missing}") from None
    return man


def load_split(manifest: Manifest, split: str) -> List[LabeledImage]:
    if split not in _SPLIT_TAGS:
        raise ValueError(f"unknown split {split!r}")
    base = os.path.dirname(os.path.abspath(manifest.path))
    out = []
    for sp, im_id, img_rel, lab_rel in manifest.entries:
        if sp != split:
            continue
        image = read_ppm(os.path.join(base, img_rel))
        labels = read_pgm(os.path.join(base, lab_rel))
        if labels.max() >= manifest.num_classes:
            raise ValueError(
                f"{im_id}: label {labels.max()} exceeds num_classes "
                f"{manifest.num_classes}")
        out.append(LabeledImage(image, labels, im_id))
    return out
