"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray and records the operations applied to
it on a tape (the implicit DAG formed by parent links).  Calling
:meth:`Tensor.backward` on a scalar result walks the graph in reverse
topological order and accumulates vector-Jacobian products into the
``grad`` field of every tensor created with ``requires_grad=True``.

The op set is deliberately small: exactly what a transformer over point
neighborhoods needs.  Fused primitives (layer_norm, softmax, gelu,
masked BCE) keep the graph shallow and the arithmetic fast on one core.
All ops are dtype-generic; float32 is the production path and float64
is used by verification code.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "matmul", "tsum", "reshape",
    "swapaxes", "concat", "gather_rows", "take_cols", "sqrt", "texp",
    "tsin", "tcos", "tanh", "sigmoid", "gelu", "layer_norm", "softmax",
    "masked_bce_mean", "finite_difference_gradient",
]


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate gradients of this tensor w.r.t. every graph leaf.

        ``grad`` seeds the output gradient; defaults to ones, which for
        a scalar output is the ordinary derivative seed.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in node._vjp(g):
                if not _needs_grad(parent):
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg
                else:
                    acc += pg

    # Operator sugar.  Scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._parents != ()


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.dtype != like.data.dtype:
        arr = arr.astype(like.data.dtype)
    return Tensor(arr)


def _result(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _wrap(a) if isinstance(a, Tensor) else _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    data = a.data + b.data

    def vjp(g):
        return ((a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(g, b.data.shape)))

    return _result(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _wrap(a) if isinstance(a, Tensor) else _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    data = a.data - b.data

    def vjp(g):
        return ((a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(-g, b.data.shape)))

    return _result(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _wrap(a) if isinstance(a, Tensor) else _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    data = a.data * b.data

    def vjp(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _result(data, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _wrap(a) if isinstance(a, Tensor) else _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    data = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * data / b.data
        return ((a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape)))

    return _result(data, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires tensors with ndim >= 2")
    data = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape)))

    return _result(data, (a, b), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return _result(data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def vjp(g):
        return ((a, g.reshape(a.data.shape)),)

    return _result(data, (a,), vjp)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _wrap(a)
    data = np.swapaxes(a.data, ax1, ax2)

    def vjp(g):
        return ((a, np.swapaxes(g, ax1, ax2)),)

    return _result(data, (a,), vjp)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple((p, piece) for p, piece in zip(parts, pieces))

    return _result(data, tuple(parts), vjp)


def gather_rows(a, index) -> Tensor:
    """Index axis 0 with an integer array; rows may repeat.

    Backward scatter-adds, so gradients of shared rows accumulate.
    """
    a = _wrap(a)
    index = np.asarray(index)
    data = a.data[index]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return ((a, ga),)

    return _result(data, (a,), vjp)


def take_cols(a, cols) -> Tensor:
    """Pick one column per row of a 2-D tensor; returns shape (N, 1)."""
    a = _wrap(a)
    cols = np.asarray(cols).reshape(-1, 1)
    rows = np.arange(a.data.shape[0])[:, None]
    data = a.data[rows, cols]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return ((a, ga),)

    return _result(data, (a,), vjp)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    data = np.sqrt(a.data)

    def vjp(g):
        return ((a, g * (0.5 / data)),)

    return _result(data, (a,), vjp)


def texp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def vjp(g):
        return ((a, g * data),)

    return _result(data, (a,), vjp)


def tsin(a) -> Tensor:
    a = _wrap(a)
    data = np.sin(a.data)

    def vjp(g):
        return ((a, g * np.cos(a.data)),)

    return _result(data, (a,), vjp)


def tcos(a) -> Tensor:
    a = _wrap(a)
    data = np.cos(a.data)

    def vjp(g):
        return ((a, -g * np.sin(a.data)),)

    return _result(data, (a,), vjp)


def tanh(a) -> Tensor:
    a = _wrap(a)
    data = np.tanh(a.data)

    def vjp(g):
        return ((a, g * (1.0 - data * data)),)

    return _result(data, (a,), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails: exp only of non-positive arguments.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    data = _sigmoid(a.data)

    def vjp(g):
        return ((a, g * data * (1.0 - data)),)

    return _result(data, (a,), vjp)


_GELU_A = 0.7978845608028654  # sqrt(2/pi)
_GELU_B = 0.044715


def gelu(a) -> Tensor:
    """GELU with the tanh form; smooth and cheap on one core."""
    a = _wrap(a)
    x = a.data
    u = _GELU_A * (x + _GELU_B * x * x * x)
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_A * (1.0 + 3.0 * _GELU_B * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        return ((a, g * local),)

    return _result(data, (a,), vjp)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine pair."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        return ((a, gx), (gamma, ggamma), (beta, gbeta))

    return _result(data, (a, gamma, beta), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((a, data * (g - dot)),)

    return _result(data, (a,), vjp)


def masked_bce_mean(logits, labels, mask, denom: float) -> Tensor:
    """Binary cross-entropy from logits, masked, divided by ``denom``.

    Masked entries contribute zero to the numerator while ``denom``
    stays fixed, so partial sums over disjoint chunks of a batch add up
    to the full-batch value exactly.
    """
    a = _wrap(logits)
    y = np.asarray(labels, dtype=a.data.dtype)
    m = np.asarray(mask, dtype=a.data.dtype)
    z = a.data
    bce = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray((bce * m).sum() / denom, dtype=a.data.dtype)

    def vjp(g):
        gz = g * (_sigmoid(z) - y) * m / np.asarray(denom, dtype=z.dtype)
        return ((a, gz),)

    return _result(data, (a,), vjp)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    Probes every entry independently; intended for verification against
    analytic gradients, not for production use.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
