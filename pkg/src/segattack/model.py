"""Small fully-convolutional segmentation network with its own trainer and
checkpoint format.

The net is deliberately tiny: a stack of stride-1 3x3 convolutions with
ReLU in between, ending in per-pixel class logits at input resolution.
Input normalization (per-channel mean/scale measured on the training
split) happens inside ``forward`` so gradients with respect to *raw*
[0, 255] pixels — which is what attack code differentiates — come out in
the right units.

Checkpoints are a single little-endian binary file carrying architecture,
normalization constants, a little training metadata, and length-prefixed
named float32 tensors.  ``load_checkpoint`` rejects anything it does not
fully understand rather than guessing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (ShapeError, Tape, Tensor, bias_add, conv2d,
                       cross_entropy, softmax)
from .data import LabeledImage
from .prng import SplitMix64, derive_seed

__all__ = ["ModelConfig", "SegModel", "Prediction", "TrainResult",
           "CheckpointError", "train", "predict", "save_checkpoint",
           "load_checkpoint"]

_MAGIC = b"SGAT"
_VERSION = 1
_INIT_TAG = 101
_SHUFFLE_TAG = 202


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 4
    hidden: Tuple[int, ...] = (16, 32, 32)
    kernel: int = 3

    def validate(self) -> "ModelConfig":
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need in_channels >= 1 and num_classes >= 2")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"bad hidden widths {self.hidden}")
        return self

    @property
    def channel_sizes(self) -> Tuple[int, ...]:
        return (self.in_channels,) + tuple(self.hidden) + (self.num_classes,)


class SegModel:
    """Parameter container + differentiable forward pass."""

    def __init__(self, config: ModelConfig, mean: Sequence[float],
                 scale: Sequence[float], init_seed: int = 0):
        self.config = config.validate()
        self.mean = np.asarray(mean, np.float64).reshape(config.in_channels)
        self.scale = np.asarray(scale, np.float64).reshape(config.in_channels)
        if (self.scale <= 0).any():
            raise ValueError("scale entries must be positive")
        self.params: List[np.ndarray] = []          # w0, b0, w1, b1, ...
        sizes = config.channel_sizes
        for i, (cin, cout) in enumerate(zip(sizes[:-1], sizes[1:])):
            rng = SplitMix64(derive_seed(init_seed, _INIT_TAG, i))
            std = np.sqrt(2.0 / (config.kernel * config.kernel * cin))
            w = rng.fill_normal((cout, cin, config.kernel, config.kernel),
                                0.0, std).astype(np.float32)
            self.params.append(w)
            self.params.append(np.zeros(cout, np.float32))
        # metadata carried into checkpoints
        self.epochs_trained = 0
        self.final_loss = float("nan")
        self.train_seed = 0

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def param_names(self) -> List[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"conv{i}.weight", f"conv{i}.bias"]
        return names

    def forward(self, x: Tensor,
                params: Optional[List[Tensor]] = None) -> Tensor:
        """Raw pixels in, per-pixel logits out.

        ``params``, when given, must be taped tensors wrapping this model's
        arrays in order — that is how the trainer gets weight gradients.
        Otherwise the stored arrays are used as constants.
        """
        caxis = 0 if x.data.ndim == 3 else 1
        if x.data.ndim not in (3, 4) or x.shape[caxis] != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels}-channel input, got "
                f"shape {tuple(x.shape)}")
        if params is None:
            params = [Tensor(p) for p in self.params]
        elif len(params) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} param tensors, got {len(params)}")

        neg_mean = Tensor(-self.mean)
        inv = (1.0 / self.scale).reshape(
            (self.config.in_channels, 1, 1) if caxis == 0
            else (1, self.config.in_channels, 1, 1))
        inv_full = Tensor(np.broadcast_to(inv.astype(np.float32), x.shape))
        h = bias_add(x, neg_mean) * inv_full
        for i in range(self.n_layers):
            h = bias_add(conv2d(h, params[2 * i]), params[2 * i + 1])
            if i < self.n_layers - 1:
                h = h.relu()
        return h


@dataclass
class Prediction:
    probs: np.ndarray    # (C, H, W) float32, channels sum to 1
    labels: np.ndarray   # (H, W) int64 argmax (ties -> lowest class index)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=0)


def predict(model: SegModel, image: np.ndarray) -> Prediction:
    """Tape-free forward pass on a single (3, H, W) image."""
    logits = model.forward(Tensor(image, dtype=np.float32))
    probs = softmax(logits).numpy()
    return Prediction(probs, probs.argmax(axis=0).astype(np.int64))


@dataclass
class TrainResult:
    epoch_losses: List[float] = field(default_factory=list)
    seed: int = 0


def train(model: SegModel, images: Sequence[LabeledImage], *,
          epochs: int = 30, lr: float = 1e-3, momentum: float = 0.9,
          batch_size: int = 8, seed: int = 0,
          verbose: bool = False) -> TrainResult:
    """Minibatch SGD with momentum on mean per-pixel cross-entropy.

    Mutates ``model.params`` in place and is fully deterministic for a
    given (model, images, seed).  Raises ``RuntimeError`` the moment the
    loss stops being finite instead of silently producing a NaN model.
    """
    if not images:
        raise ValueError("no training images")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    x_all = np.stack([im.image for im in images]).astype(np.float32)
    y_all = np.stack([im.labels for im in images])
    if y_all.max() >= model.num_classes:
        raise ValueError(
            f"label {y_all.max()} out of range for {model.num_classes} classes")
    n = len(images)
    velocity = [np.zeros_like(p) for p in model.params]
    result = TrainResult(seed=seed)
    for epoch in range(epochs):
        order = SplitMix64(derive_seed(seed, _SHUFFLE_TAG, epoch)).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            tape = Tape()
            params = [tape.var(p) for p in model.params]
            logits = model.forward(Tensor(x_all[idx]), params)
            loss = cross_entropy(logits, y_all[idx]).mean()
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: loss={value} at epoch {epoch} "
                    f"batch {start // batch_size} (lr={lr})")
            tape.backward(loss)
            for p, v, pt in zip(model.params, velocity, params):
                v *= momentum
                v += pt.grad
                p -= lr * v
            loss_sum += value * len(idx)
        result.epoch_losses.append(loss_sum / n)
        if verbose:
            print(f"epoch {epoch + 1:3d}/{epochs}  "
                  f"loss {result.epoch_losses[-1]:.5f}")
    model.epochs_trained += epochs
    model.final_loss = result.epoch_losses[-1]
    model.train_seed = seed
    return result


# -- checkpoint I/O -----------------------------------------------------


def save_checkpoint(path: str, model: SegModel) -> None:
    cfg = model.config
    parts = [_MAGIC, struct.pack("<I", _VERSION)]
    parts.append(struct.pack("<4I", cfg.in_channels, cfg.num_classes,
                             cfg.kernel, len(cfg.hidden)))
    parts.append(struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden))
    parts.append(struct.pack("<3d", *model.mean))
    parts.append(struct.pack("<3d", *model.scale))
    parts.append(struct.pack("<IdQ", model.epochs_trained,
                             model.final_loss, model.train_seed))
    parts.append(struct.pack("<I", len(model.params)))
    for name, arr in zip(model.param_names(), model.params):
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, np.float32)
                     .astype("<f4").tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset "
                f"{self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> SegModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != _MAGIC:
        raise CheckpointError(f"{path}: not a segattack checkpoint")
    (version,) = r.unpack("<I")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cin, ncls, kernel, nh = r.unpack("<4I")
    hidden = r.unpack(f"<{nh}I")
    mean = r.unpack("<3d")
    scale = r.unpack("<3d")
    epochs, final_loss, train_seed = r.unpack("<IdQ")
    model = SegModel(ModelConfig(cin, ncls, hidden, kernel), mean, scale)
    (count,) = r.unpack("<I")
    if count != len(model.params):
        raise CheckpointError(
            f"{path}: {count} tensors but architecture needs "
            f"{len(model.params)}")
    for slot, want_name in enumerate(model.param_names()):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        if name != want_name:
            raise CheckpointError(
                f"{path}: tensor {slot} named {name!r}, expected "
                f"{want_name!r}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if shape != model.params[slot].shape:
            raise CheckpointError(
                f"{path}: {name} has shape {shape}, expected "
                f"{model.params[slot].shape}")
        data = np.frombuffer(r.take(4 * int(np.prod(shape))), "<f4")
        model.params[slot] = data.reshape(shape).astype(np.float32)
    if r.pos != len(r.blob):
        raise CheckpointError(
            f"{path}: {len(r.blob) - r.pos} trailing bytes after tensors")
    model.epochs_trained = epochs
    model.final_loss = final_loss
    model.train_seed = train_seed
    return model
