"""Minimal reverse-mode differentiation over numpy arrays.

Just enough machinery for the selection head's training graph: linear layers,
3x3 convolutions (via unfold), tanh, masked temperature softmax, bilinear
resampling, disc-mean pooling, and the two losses. Every op's vector-Jacobian
product is checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .errors import InvalidArgumentError, NumericError


class Var:
    """A node in the computation graph; `grad` is filled by `backward`."""

    __slots__ = ("value", "grad", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)


def param(value) -> Var:
    return Var(np.array(value, dtype=np.float64))


def constant(value) -> Var:
    return Var(value)


def backward(root: Var):
    """Accumulate gradients of `root` (a scalar) into every reachable node."""
    if root.value.shape != ():
        raise InvalidArgumentError("backward expects a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        for parent, vjp in zip(node.parents, node.vjps):
            parent.grad = parent.grad + vjp(node.grad)


def add(a: Var, b: Var) -> Var:
    return Var(a.value + b.value, (a, b), (lambda g: g, lambda g: g))


def mul(a: Var, b: Var) -> Var:
    return Var(a.value * b.value, (a, b), (lambda g: g * b.value, lambda g: g * a.value))


def add_bias(x: Var, b: Var) -> Var:
    """x (..., C) + b (C,)."""
    axes = tuple(range(x.value.ndim - 1))
    return Var(x.value + b.value, (x, b), (lambda g: g, lambda g: g.sum(axis=axes)))


def scale(x: Var, s: Var) -> Var:
    """Scalar s times array x."""
    return Var(
        x.value * s.value,
        (x, s),
        (lambda g: g * s.value, lambda g: np.asarray((g * x.value).sum())),
    )


def affine_const(x: Var, scale_arr: np.ndarray, shift_arr: np.ndarray) -> Var:
    """Elementwise x * scale + shift with constant (non-learned) coefficients."""
    return Var(x.value * scale_arr + shift_arr, (x,), (lambda g: g * scale_arr,))


def linear(x: Var, w: Var, b: Var | None = None) -> Var:
    """x (n, din) @ w (din, dout) + optional bias (dout,)."""
    out = x.value @ w.value
    if b is None:
        return Var(out, (x, w), (lambda g: g @ w.value.T, lambda g: x.value.T @ g))
    return Var(
        out + b.value,
        (x, w, b),
        (lambda g: g @ w.value.T, lambda g: x.value.T @ g, lambda g: g.sum(axis=0)),
    )


def vecmat(s: Var, m: Var) -> Var:
    """s (N,) @ m (N, C) -> (C,)."""
    return Var(s.value @ m.value, (s, m), (lambda g: m.value @ g, lambda g: np.outer(s.value, g)))


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return Var(t, (x,), (lambda g: g * (1.0 - t * t),))


def mean_hw(x: Var) -> Var:
    """Spatial mean of an (H, W, C) map -> (C,)."""
    h, w, _ = x.value.shape
    inv = 1.0 / (h * w)
    return Var(x.value.mean(axis=(0, 1)), (x,), (lambda g: np.broadcast_to(g * inv, x.value.shape).copy(),))


def reshape(x: Var, shape) -> Var:
    orig = x.value.shape
    return Var(x.value.reshape(shape), (x,), (lambda g: g.reshape(orig),))


def unfold3x3(x: Var) -> Var:
    """Same-padded 3x3 patch extraction: (H, W, C) -> (H*W, 9*C)."""
    h, w, c = x.value.shape
    padded = np.pad(x.value, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((h * w, 9 * c), dtype=np.float64)
    for k, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
        cols[:, k * c : (k + 1) * c] = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w].reshape(h * w, c)

    def vjp(g):
        grad_pad = np.zeros_like(padded)
        for k, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
            grad_pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] += g[:, k * c : (k + 1) * c].reshape(h, w, c)
        return grad_pad[1:-1, 1:-1]

    return Var(cols, (x,), (vjp,))


def resize_bilinear(x: Var, out_h: int, out_w: int) -> Var:
    in_h, in_w = x.value.shape[:2]
    return Var(
        numerics.resize_array(x.value, out_h, out_w),
        (x,),
        (lambda g: numerics.resize_array_adjoint(g, in_h, in_w),),
    )


def disc_means(x: Var, discs) -> Var:
    """Mean feature over each pixel disc: (H, W, C) with N discs -> (N, C).

    `discs` is a sequence of (rows, cols) integer index arrays, one per keypoint.
    """
    c = x.value.shape[2]
    out = np.empty((len(discs), c), dtype=np.float64)
    for i, (rows, cols) in enumerate(discs):
        out[i] = x.value[rows, cols].mean(axis=0)

    def vjp(g):
        grad = np.zeros_like(x.value)
        for i, (rows, cols) in enumerate(discs):
            np.add.at(grad, (rows, cols), g[i] / len(rows))
        return grad

    return Var(out, (x,), (vjp,))


def masked_softmax(x: Var, present: np.ndarray, temperature: float) -> Var:
    """Softmax of x/temperature over entries where `present`; absent entries emit 0."""
    if temperature <= 0:
        raise InvalidArgumentError("temperature must be positive")
    if not present.any():
        raise InvalidArgumentError("softmax needs at least one present entry")
    z = x.value / temperature
    z_masked = np.where(present, z, -np.inf)
    z_max = z_masked.max()
    expz = np.where(present, np.exp(z_masked - z_max), 0.0)
    s = expz / expz.sum()

    def vjp(g):
        inner = (g * s).sum()
        return (s * (g - inner)) / temperature

    return Var(s, (x,), (vjp,))


def cosine_loss_against(b: Var, target: np.ndarray) -> Var:
    """1 - cos(target, b) with `target` held constant."""
    value, grad_b = cosine_distance_and_grad(target, b.value)
    return Var(np.asarray(value), (b,), (lambda g: g * grad_b,))


def cosine_distance_and_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Closed-form 1 - cos(a, b) and its gradient with respect to b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine distance undefined for zero-norm vectors")
    cos = float(a @ b) / (na * nb)
    grad_b = cos * b / (nb * nb) - a / (na * nb)
    return 1.0 - cos, grad_b


def cross_entropy(scores: Var, label: int) -> Var:
    value, grad = softmax_cross_entropy_and_grad(scores.value, label)
    return Var(np.asarray(value), (scores,), (lambda g: g * grad,))


def softmax_cross_entropy_and_grad(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable softmax cross-entropy and its gradient with respect to the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 2:
        raise InvalidArgumentError("scores must be a vector with at least 2 classes")
    if not 0 <= label < scores.shape[0]:
        raise InvalidArgumentError(f"label {label} out of range for {scores.shape[0]} classes")
    shifted = scores - scores.max()
    logsumexp = float(np.log(np.exp(shifted).sum()))
    probs = np.exp(shifted - logsumexp)
    loss = logsumexp - float(shifted[label])
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad
