"""Tour of the autodiff core: tapes, tensors, and gradient checking.

The library ships its own small reverse-mode engine instead of pulling in
a deep-learning framework: attacks need exactly one thing from autodiff —
gradients of a scalar loss with respect to input pixels — and a
define-by-run tape over numpy arrays keeps that transparent and
dependency-free.
"""

import numpy as np

from segattack import Tape, Tensor, conv2d, cross_entropy, gradient_check, softmax


def scalar_chain():
    print("== a tiny chain rule example ==")
    tape = Tape()
    x = tape.var(np.array([1.0, 2.0, 3.0]))
    # y = sum(x * x): dy/dx = 2x
    y = (x * x).sum()
    tape.backward(y)
    print(f"  y = {y.item():.1f}")
    print(f"  dy/dx = {x.grad}  (expect 2x = [2, 4, 6])")


def convolution_gradients():
    print("== gradients through a convolution ==")
    image = np.linspace(0.0, 1.0, 2 * 5 * 5, dtype=np.float32).reshape(2, 5, 5)
    # distinct per-class filters, otherwise the logits would tie everywhere
    weight = np.sin(np.arange(3 * 2 * 3 * 3, dtype=np.float32)) \
        .reshape(3, 2, 3, 3) * 0.3
    labels = np.zeros((5, 5), np.int64)

    tape = Tape()
    x = tape.var(image)
    logits = conv2d(x, Tensor(weight))
    loss = cross_entropy(logits, labels).mean()
    tape.backward(loss)
    print(f"  loss = {loss.item():.4f}")
    print(f"  input gradient shape {x.grad.shape}, "
          f"mean |g| = {np.abs(x.grad).mean():.2e}")

    probs = softmax(logits).numpy()
    print(f"  softmax channel sums all 1: "
          f"{np.allclose(probs.sum(axis=0), 1.0)}")


def finite_difference_check():
    print("== finite-difference validation ==")
    weight = np.cos(np.arange(2 * 2 * 3 * 3, dtype=np.float32)) \
        .reshape(2, 2, 3, 3) * 0.2
    labels = np.ones((4, 4), np.int64)

    def f(t):
        return cross_entropy(conv2d(t, Tensor(weight)), labels).mean()

    x0 = np.linspace(-1, 1, 2 * 4 * 4).reshape(2, 4, 4)
    err = gradient_check(f, x0, h=1e-5)
    print(f"  max relative error vs central differences: {err:.2e}")


if __name__ == "__main__":
    scalar_chain()
    convolution_gradients()
    finite_difference_check()
