"""Reverse-mode automatic differentiation on dense numpy tensors.

Define-by-run: every operation on tensors that belong to a :class:`Tape`
appends a record (inputs, output, backward rule) to that tape, and
:meth:`Tape.backward` replays the records once in reverse order.  Tensors
without a tape are constants; they can be mixed freely into taped
expressions and never receive gradients.

Storage is float32 by default.  Every op upcasts to float64 internally and
rounds the result back to the storage dtype, so reductions and convolution
inner loops accumulate in 64 bits.  Building the whole graph from float64
tensors (as :func:`gradient_check` does) keeps full double precision end to
end.

Subgradient conventions, fixed so tests are deterministic: sign has zero
gradient everywhere; clamp passes the gradient where lo <= x <= hi and
blocks it outside; relu passes for x > 0.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "conv2d",
    "bias_add",
    "softmax",
    "cross_entropy",
    "stop_gradient",
    "gradient_check",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes; message names the op and shapes."""


class DomainError(ValueError):
    """Input outside an op's documented domain (e.g. log of x <= 0)."""


def _promote(*tensors: "Tensor") -> np.dtype:
    if any(t.data.dtype == np.float64 for t in tensors):
        return np.dtype(np.float64)
    return np.dtype(np.float32)


def _find_tape(op: str, tensors: Sequence["Tensor"]) -> Optional["Tape"]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError(f"{op}: inputs belong to two different tapes")
    return tape


class Tensor:
    """A dense float array, optionally attached to a tape.

    Attributes:
        data: numpy array (float32 or float64).
        grad: same-shape gradient array, populated by backward, else None.
        tape: owning Tape, or None for constants.
        node_id: position on the tape, or None for constants.
    """

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional["Tape"] = None
        self.node_id: Optional[int] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def detach_(self) -> "Tensor":
        """Drop tape affiliation and gradient, turning this into a constant."""
        self.tape = None
        self.node_id = None
        self.grad = None
        return self

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, {tag})"

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        return _binary("add", self, other, lambda a, b: a + b,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary("sub", self, other, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary("sub", _as_tensor(other, self), self, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary("mul", self, other, lambda a, b: a * b,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- elementwise functions -------------------------------------------

    def log(self) -> "Tensor":
        if not np.all(self.data > 0):
            bad = int(np.argmax(~(self.data > 0)))
            raise DomainError(
                f"log: input must be strictly positive, element {bad} is "
                f"{self.data.reshape(-1)[bad]!r}")
        return _unary("log", self, np.log, lambda g, x64, y64: g / x64)

    def exp(self) -> "Tensor":
        return _unary("exp", self, np.exp, lambda g, x64, y64: g * y64)

    def relu(self) -> "Tensor":
        return _unary("relu", self, lambda x: np.maximum(x, 0.0),
                      lambda g, x64, y64: g * (x64 > 0))

    def sign(self) -> "Tensor":
        # gradient defined as identically zero
        return _unary("sign", self, np.sign, None)

    def clamp(self, lo: float, hi: float) -> "Tensor":
        if not lo <= hi:
            raise ValueError(f"clamp: lo={lo} must not exceed hi={hi}")
        return _unary("clamp", self, lambda x: np.clip(x, lo, hi),
                      lambda g, x64, y64: g * ((x64 >= lo) & (x64 <= hi)))

    # -- reductions ------------------------------------------------------

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return _reduce("sum", self, axis, scale=False)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return _reduce("mean", self, axis, scale=True)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, np.float64), like.shape),
                  dtype=like.dtype)


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so inputs always precede the
    ops that consume them; backward() walks the list once in reverse.
    A tape is single-threaded; build one tape per image/loss evaluation.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._leaves: list[Tensor] = []
        self._next_id = 0
        self._freed = False

    def var(self, data, dtype=np.float32) -> Tensor:
        """Create a leaf tensor that will receive a gradient."""
        t = Tensor(data, dtype=dtype)
        self._attach(t)
        self._leaves.append(t)
        return t

    def watch(self, t: Tensor) -> Tensor:
        """Adopt a tensor as a leaf of this tape, clearing any stale grad.

        Re-watching a tensor that sat on an earlier tape moves it here; a
        tensor is a leaf of at most one tape at a time.
        """
        t.grad = None
        self._attach(t)
        self._leaves.append(t)
        return t

    def _attach(self, t: Tensor):
        t.tape = self
        t.node_id = self._next_id
        self._next_id += 1

    def _record(self, op, inputs, output, backward_fn):
        if self._freed:
            raise ValueError(
                "cannot record on a tape whose graph was freed; build a "
                "new Tape per forward pass")
        self._attach(output)
        self._records.append(_Record(op, inputs, output, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, root: Tensor, free_graph: bool = True):
        """Populate grads of every contributing tensor with d(root)/d(element).

        root must be a scalar (shape () or (1,)) recorded on this tape.
        Gradients accumulate into .grad buffers; leaves that receive no
        contribution (e.g. behind sign) end up with explicit zeros.

        By default the op records (and the float64 intermediates their
        closures pin) are dropped afterwards, so loops that build one tape
        per step release memory promptly instead of waiting on the cycle
        collector.  Pass free_graph=False to keep the graph inspectable;
        grads survive either way.
        """
        if self._freed:
            raise ValueError("backward: tape graph was already freed")
        if root.tape is not self:
            raise ValueError("backward: root does not belong to this tape")
        if root.data.size != 1:
            raise ValueError(
                f"backward: root must be scalar, got shape {tuple(root.shape)}")
        root.grad = np.ones_like(root.data)
        for rec in reversed(self._records):
            if rec.output.grad is None:
                continue
            if rec.backward_fn is not None:
                rec.backward_fn(rec.output.grad.astype(np.float64, copy=False))
        for leaf in self._leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        if free_graph:
            self.free()

    def free(self):
        """Discard op records and the leaf registry.

        Intermediate tensors become unreachable as soon as the caller
        drops them (no lingering record closures, no reference cycles
        through this tape).  Safe to call more than once."""
        self._records.clear()
        self._leaves.clear()
        self._freed = True

    def validate(self) -> bool:
        """Check the topological invariant: inputs precede their op."""
        for rec in self._records:
            for t in rec.inputs:
                if t.node_id is not None and t.node_id >= rec.output.node_id:
                    return False
        return True


def _accumulate(t: Tensor, delta: np.ndarray):
    if t.node_id is None:
        return  # constant
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta.astype(t.data.dtype, copy=False)


def _unary(op, x: Tensor, fwd, bwd) -> Tensor:
    tape = x.tape
    x64 = x.data.astype(np.float64, copy=False)
    y64 = fwd(x64)
    out = Tensor(y64, dtype=_promote(x))
    if tape is not None:
        if bwd is None:
            tape._record(op, (x,), out, None)
        else:
            def backward_fn(g):
                _accumulate(x, bwd(g, x64, y64))
            tape._record(op, (x,), out, backward_fn)
    return out


def _binary(op, a: Tensor, b, fwd, bwd_a, bwd_b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    tape = _find_tape(op, (a, b))
    a64 = a.data.astype(np.float64, copy=False)
    b64 = b.data.astype(np.float64, copy=False)
    out = Tensor(fwd(a64, b64), dtype=_promote(a, b))
    if tape is not None:
        def backward_fn(g):
            _accumulate(a, bwd_a(g, a64, b64))
            _accumulate(b, bwd_b(g, a64, b64))
        tape._record(op, (a, b), out, backward_fn)
    return out


def _reduce(op, x: Tensor, axis, scale: bool) -> Tensor:
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {tuple(x.shape)}")
    tape = x.tape
    x64 = x.data.astype(np.float64, copy=False)
    y64 = x64.mean(axis=axis) if scale else x64.sum(axis=axis)
    out = Tensor(y64, dtype=_promote(x))
    if tape is not None:
        n = x.data.size if axis is None else x.data.shape[axis]
        factor = 1.0 / n if scale else 1.0

        def backward_fn(g):
            if axis is None:
                gx = np.broadcast_to(g, x.data.shape) * factor
            else:
                gx = np.broadcast_to(np.expand_dims(g, axis), x.data.shape) * factor
            _accumulate(x, gx)
        tape._record(op, (x,), out, backward_fn)
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero to any gradient."""
    tape = x.tape
    out = Tensor(x.data.copy(), dtype=x.data.dtype)
    if tape is not None:
        tape._record("stop_gradient", (x,), out, None)
    return out


# -- spatial ops ---------------------------------------------------------


def _channel_axis(op, x: Tensor) -> int:
    if x.data.ndim == 3:
        return 0
    if x.data.ndim == 4:
        return 1
    raise ShapeError(f"{op}: expected (C,H,W) or (N,C,H,W), got {tuple(x.shape)}")


def conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Stride-1 cross-correlation with zero padding preserving spatial size.

    x: (C_in, H, W) or (N, C_in, H, W); weight: (C_out, C_in, kh, kw) with
    odd kernel sides.  Accumulation is float64 (one BLAS matmul per kernel
    offset); the padded input is rebuilt in backward rather than stored.
    """
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-d, got {tuple(weight.shape)}")
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be 3-d or 4-d, got {tuple(x.shape)}")
    co, ci_w, kh, kw = weight.shape
    ci = x.shape[1] if batched else x.shape[0]
    if ci != ci_w:
        raise ShapeError(
            f"conv2d: input channels {tuple(x.shape)} do not match weight {tuple(weight.shape)}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    tape = _find_tape("conv2d", (x, weight))

    x4 = x.data if batched else x.data[None]
    n, _, h, w = x4.shape
    ph, pw = kh // 2, kw // 2

    def padded(arr4):
        out = np.zeros((ci, n, h + 2 * ph, w + 2 * pw), np.float64)
        out[:, :, ph:ph + h, pw:pw + w] = arr4.transpose(1, 0, 2, 3)
        return out

    w64 = weight.data.astype(np.float64)
    xpad = padded(x4)
    acc = np.zeros((co, n, h, w), np.float64)
    for i in range(kh):
        for j in range(kw):
            win = np.ascontiguousarray(
                xpad[:, :, i:i + h, j:j + w]).reshape(ci, n * h * w)
            kij = np.ascontiguousarray(w64[:, :, i, j])
            acc += (kij @ win).reshape(co, n, h, w)
    out64 = acc.transpose(1, 0, 2, 3)
    out = Tensor(out64 if batched else out64[0], dtype=_promote(x, weight))

    if tape is not None:
        def backward_fn(g):
            g4 = g if batched else g[None]
            gflat = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(co, n * h * w)
            xp = padded(x.data if batched else x.data[None])
            if x.node_id is not None:
                gxpad = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        kij = np.ascontiguousarray(w64[:, :, i, j])
                        gxpad[:, :, i:i + h, j:j + w] += (
                            kij.T @ gflat).reshape(ci, n, h, w)
                gx = gxpad[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3)
                _accumulate(x, gx if batched else gx[0])
            if weight.node_id is not None:
                gw = np.empty((co, ci, kh, kw), np.float64)
                for i in range(kh):
                    for j in range(kw):
                        win = np.ascontiguousarray(
                            xp[:, :, i:i + h, j:j + w]).reshape(ci, n * h * w)
                        gw[:, :, i, j] = gflat @ win.T
                _accumulate(weight, gw)
        tape._record("conv2d", (x, weight), out, backward_fn)
    return out


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias: bias shape (C,) broadcast over pixels."""
    ax = _channel_axis("bias_add", x)
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[ax]:
        raise ShapeError(
            f"bias_add: bias {tuple(bias.shape)} does not match input {tuple(x.shape)}")
    tape = _find_tape("bias_add", (x, bias))
    shape = [1] * x.data.ndim
    shape[ax] = bias.shape[0]
    out = Tensor(x.data.astype(np.float64, copy=False)
                 + bias.data.astype(np.float64).reshape(shape),
                 dtype=_promote(x, bias))
    if tape is not None:
        other_axes = tuple(i for i in range(x.data.ndim) if i != ax)

        def backward_fn(g):
            _accumulate(x, g)
            _accumulate(bias, g.sum(axis=other_axes))
        tape._record("bias_add", (x, bias), out, backward_fn)
    return out


def softmax(x: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis of (C,H,W) or (N,C,H,W)."""
    ax = _channel_axis("softmax", x)
    tape = x.tape
    x64 = x.data.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    p64 = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(p64, dtype=_promote(x))
    if tape is not None:
        def backward_fn(g):
            inner = (g * p64).sum(axis=ax, keepdims=True)
            _accumulate(x, p64 * (g - inner))
        tape._record("softmax", (x,), out, backward_fn)
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-pixel cross-entropy against integer labels (one-hot targets).

    logits: (C,H,W) or (N,C,H,W); labels: matching (H,W) or (N,H,W) int map.
    Returns the per-pixel loss map, computed stably via log-sum-exp; the
    backward rule is softmax(logits) minus one-hot.
    """
    ax = _channel_axis("cross_entropy", logits)
    labels = np.asarray(labels)
    expect = logits.shape[:ax] + logits.shape[ax + 1:]
    if labels.shape != expect:
        raise ShapeError(
            f"cross_entropy: labels {tuple(labels.shape)} do not match logits "
            f"{tuple(logits.shape)}")
    c = logits.shape[ax]
    if labels.min() < 0 or labels.max() >= c:
        raise DomainError(
            f"cross_entropy: labels must lie in [0, {c}), got range "
            f"[{labels.min()}, {labels.max()}]")
    tape = logits.tape
    x64 = logits.data.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    logp = shifted - lse
    true_logp = np.take_along_axis(logp, np.expand_dims(labels, ax), axis=ax)
    ce64 = -np.squeeze(true_logp, axis=ax)
    out = Tensor(ce64, dtype=_promote(logits))
    if tape is not None:
        p64 = np.exp(logp)

        def backward_fn(g):
            delta = p64.copy()
            idx = np.expand_dims(labels, ax)
            np.put_along_axis(
                delta, idx, np.take_along_axis(delta, idx, axis=ax) - 1.0, axis=ax)
            _accumulate(logits, delta * np.expand_dims(g, ax))
        tape._record("cross_entropy", (logits,), out, backward_fn)
    return out


# -- validation harness --------------------------------------------------


def gradient_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-3,
                   skip: Optional[np.ndarray] = None) -> float:
    """Compare the taped gradient of a scalar function against central
    finite differences.

    Everything runs in float64.  Returns the max over elements of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).  Elements where
    ``skip`` is True (e.g. known subgradient discontinuities) are excluded.
    """
    if h <= 0:
        raise ValueError(f"gradient_check: h must be positive, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, np.float64)
    tape = Tape()
    xv = tape.var(base, dtype=np.float64)
    root = f(xv)
    if root.data.size != 1:
        raise ValueError("gradient_check: f must return a scalar")
    tape.backward(root)
    analytic = xv.grad.reshape(-1)

    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    skip_flat = (np.zeros(flat.size, bool) if skip is None
                 else np.asarray(skip, bool).reshape(-1))
    for i in range(flat.size):
        if skip_flat[i]:
            continue
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = f(Tensor(plus.reshape(base.shape), dtype=np.float64)).item()
        fm = f(Tensor(minus.reshape(base.shape), dtype=np.float64)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(
                f"gradient_check: non-finite evaluation at element {i}")
        numeric[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    rel[skip_flat] = 0.0
    return float(rel.max())
