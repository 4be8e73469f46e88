"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations needed by the HA02 network are provided. Every op accepts
optional leading batch dimensions; parameters are never batched, so their
gradients are reduced over the batch.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

LAYER_NORM_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A node of the computation graph.

    Parameters
    ----------
    values : array_like
        Node values. Kept in the given floating dtype.
    requires_grad : bool
        Whether gradients should flow to this node.
    parents : tuple of Tensor
        Inputs this node was computed from.
    backward_fn : callable, optional
        Maps the upstream gradient to one gradient per parent (None allowed).
    """

    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        self.values = values
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __getitem__(self, index):
        return take(self, index)


class Param(Tensor):
    """A learnable tensor with a stable identifier and a component tag."""

    __slots__ = ("name", "_component")

    def __init__(self, name: str, values, component: str):
        super().__init__(values, requires_grad=True)
        if component not in ("encoder", "decoder"):
            raise ValueError(f"unknown component {component!r}")
        self.name = name
        self._component = component

    @property
    def component(self) -> str:
        return self._component

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape}, component={self.component!r})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, parents, backward_fn, op):
    requires = any(p.requires_grad for p in parents)
    return Tensor(values, requires, parents if requires else (), backward_fn if requires else None, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.values * factor, (a,), lambda g: (g * factor,), "scale")


def take(a, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    out = a.values[index]

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] = g
        return (full,)

    return _make(out, (a,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swap_last(a) -> Tensor:
    """Transpose of the trailing two axes."""
    a = as_tensor(a)
    return _make(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


# ---------------------------------------------------------------------------
# numerical ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the trailing two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.values, b.values)

    def backward(g):
        da = np.matmul(g, np.swapaxes(b.values, -1, -2))
        db = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _make(out, (a, b), backward, "matmul")


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.values)):
        raise FloatingPointError("softmax_rows: non-finite input")
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), backward, "softmax")


def layer_norm(a, scale_: Tensor, offset: Tensor, axis: int = 0, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize along ``axis`` independently for every other index.

    ``scale_`` and ``offset`` have length ``a.shape[axis]`` and are applied
    per position along that axis.
    """
    a, scale_, offset = as_tensor(a), as_tensor(scale_), as_tensor(offset)
    axis = axis % a.ndim
    n = a.shape[axis]
    if scale_.shape != (n,) or offset.shape != (n,):
        raise DimensionError(
            f"layer_norm: affine shapes {scale_.shape}/{offset.shape} do not match axis length {n}"
        )
    bshape = [1] * a.ndim
    bshape[axis] = n
    gamma = scale_.values.reshape(bshape)
    beta = offset.values.reshape(bshape)

    mu = a.values.mean(axis=axis, keepdims=True)
    xc = a.values - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma * xhat + beta
    other = tuple(i for i in range(a.ndim) if i != axis)

    def backward(g):
        dgamma = (g * xhat).sum(axis=other)
        dbeta = g.sum(axis=other)
        gh = g * gamma
        dx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (a, scale_, offset), backward, "layer_norm")


def conv2d_same(x, kernels, bias) -> Tensor:
    """2x2 cross-correlation, zero padded by one row at the bottom and one column at the right.

    ``x`` is ``[..., h, w, cin]``, ``kernels`` is ``[2, 2, cin, cout]``, ``bias`` is ``[cout]``.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 4 or kernels.shape[:2] != (2, 2):
        raise DimensionError(f"conv2d_same: kernel must be 2x2xCinxCout, got {kernels.shape}")
    if x.ndim < 3 or x.shape[-1] != kernels.shape[2]:
        raise DimensionError(f"conv2d_same: input channels of {x.shape} do not match kernel {kernels.shape}")
    if bias.shape != (kernels.shape[3],):
        raise DimensionError(f"conv2d_same: bias {bias.shape} does not match kernel {kernels.shape}")
    h, w = x.shape[-3], x.shape[-2]
    cin, cout = kernels.shape[2], kernels.shape[3]
    K = kernels.values
    # work in [w, c, ..., h] so the long row axis is contiguous
    xt = np.moveaxis(x.values, (-2, -1), (0, 1))
    xp = np.zeros((w + 1, cin) + xt.shape[2:-1] + (h + 1,), dtype=np.result_type(x.values, K))
    xp[:w, ..., :h] = xt
    taps = [(di, dj) for di in range(2) for dj in range(2)]
    out_t = np.empty((cout, w) + xt.shape[2:], dtype=xp.dtype)
    for o in range(cout):
        out_t[o] = bias.values[o]
        for di, dj in taps:
            for c in range(cin):
                out_t[o] += K[di, dj, c, o] * xp[dj:dj + w, c, ..., di:di + h]
    out = np.moveaxis(out_t, (0, 1), (-1, -2))

    def backward(g):
        gt = np.moveaxis(g, (-1, -2), (0, 1))
        dxp = np.zeros_like(xp)
        dK = np.empty_like(K)
        for di, dj in taps:
            for c in range(cin):
                patch = xp[dj:dj + w, c, ..., di:di + h]
                for o in range(cout):
                    dK[di, dj, c, o] = np.vdot(patch, gt[o])
                    dxp[dj:dj + w, c, ..., di:di + h] += K[di, dj, c, o] * gt[o]
        dx = np.moveaxis(dxp[:w, ..., :h], (0, 1), (-2, -1))
        dbias = gt.reshape(cout, -1).sum(axis=1)
        return dx, dK, dbias

    return _make(out, (x, kernels, bias), backward, "conv2d")


def gelu(a) -> Tensor:
    """Exact GeLU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.values
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), backward, "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return _make(np.where(mask, a.values, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def activation(a, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(a)
    if kind == "relu":
        return relu(a)
    raise ValueError(f"unknown activation {kind!r}")


def dense_axis0(x, W, b, axis: int = 0) -> Tensor:
    """Fully connected map along ``axis``, weights shared over all other axes.

    ``out[:, j...] = W @ x[:, j...] + b`` with ``W`` of shape ``[n, m]``.
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    axis = axis % x.ndim
    m = x.shape[axis]
    if W.ndim != 2 or W.shape[1] != m or b.shape != (W.shape[0],):
        raise DimensionError(f"dense: weight {W.shape}/bias {b.shape} incompatible with input {x.shape} on axis {axis}")
    n = W.shape[0]
    xm = np.moveaxis(x.values, axis, 0)
    rest = xm.shape[1:]
    X2 = xm.reshape(m, -1)
    Y2 = W.values @ X2 + b.values[:, None]
    out = np.moveaxis(Y2.reshape((n,) + rest), 0, axis)

    def backward(g):
        G2 = np.moveaxis(g, axis, 0).reshape(n, -1)
        dW = G2 @ X2.T
        db = G2.sum(axis=1)
        dX = (W.values.T @ G2).reshape((m,) + rest)
        return np.moveaxis(dX, 0, axis), dW, db

    return _make(out, (x, W, b), backward, "dense")


def huber(pred, label, delta: float = 1.0) -> Tensor:
    """Mean Huber loss over all elements."""
    pred, label = as_tensor(pred), as_tensor(label)
    if pred.shape != label.shape:
        raise DimensionError(f"huber: shape mismatch {pred.shape} vs {label.shape}")
    a = pred.values - label.values
    absa = np.abs(a)
    quad = absa <= delta
    per = np.where(quad, 0.5 * a * a, delta * (absa - 0.5 * delta))
    n = a.size
    out = np.asarray(per.sum() / n, dtype=pred.dtype)

    def backward(g):
        d = np.where(quad, a, delta * np.sign(a)) * (g / n)
        return d, -d

    return _make(out, (pred, label), backward, "huber")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.values.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable learnable leaf.

    Intermediate gradients live only for the duration of the call, so calling
    twice on the same graph doubles leaf gradients and nothing else.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-4,
    n_probes: int = 64,
    max_coords: int = 64,
    seed: int = 0,
    atol: float = 1e-10,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Tensors with at most ``max_coords`` elements are checked coordinate by
    coordinate; larger ones with ``n_probes`` random directional probes.
    ``f`` must rebuild its graph from the current parameter values on each call.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)

    def fval():
        return f().values.item()

    worst = 0.0
    for p, grad in zip(params, analytic):
        base = p.values.copy()
        if p.values.size <= max_coords:
            directions = []
            for i in range(p.values.size):
                d = np.zeros_like(base)
                d.flat[i] = 1.0
                directions.append(d)
        else:
            directions = []
            for _ in range(n_probes):
                d = rng.standard_normal(base.shape)
                directions.append((d / np.linalg.norm(d)).astype(base.dtype))
        for d in directions:
            p.values = base + step * d
            fp = fval()
            p.values = base - step * d
            fm = fval()
            p.values = base
            num = (fp - fm) / (2 * step)
            ana = float((grad * d).sum())
            denom = max(abs(num), abs(ana), atol)
            worst = max(worst, abs(num - ana) / denom if abs(num - ana) > atol else 0.0)
        p.values = base
    for p in params:
        p.zero_grad()
    return worst
