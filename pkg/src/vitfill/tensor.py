"""Dense tensors with reverse-mode differentiation (NumPy backend).

A :class:`Tensor` wraps an ``ndarray`` and, when produced by a differentiable
operation, remembers its parents plus a closure mapping the output gradient to
one gradient per parent. :func:`backward` linearises that graph into a
:class:`GradTape` and sweeps it once in reverse.

Arrays keep the dtype of their inputs. Training runs in float32; the gradient
checks run the very same code in float64 so central differences are meaningful.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "ContractError",
    "Tensor",
    "GradTape",
    "tensor",
    "parameter",
    "backward",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "conv2d",
    "relu",
    "gelu",
    "add",
    "sub",
    "mul",
    "scale",
    "clip",
    "concat",
    "reshape",
    "transpose",
    "sum_all",
    "square",
    "LN_EPS",
]

LN_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: BackwardFn | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def tensor(data, dtype=np.float32, requires_grad=False, name=None) -> Tensor:
    """Build a leaf tensor, rejecting non-finite values."""
    arr = np.array(data, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor data must be finite")
    return Tensor(arr, requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _node(data: np.ndarray, parents: Iterable[Tensor], fn: BackwardFn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None
    # Only the larger operand may define the result; smaller ones broadcast into it.
    if out != a.shape and out != b.shape:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with trailing-axis broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)

    def fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), fn)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = a.data.dtype.type(s)
    return _node(a.data * s, (a,), lambda g: (g * s,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = _as_tensor(a)
    x = a.data
    c = x.dtype.type(_GELU_C)
    inner = c * (x + x.dtype.type(0.044715) * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def fn(g):
        dinner = c * (1 + x.dtype.type(3 * 0.044715) * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _node(out.astype(x.dtype), (a,), fn)


def clip(a, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Clamp with a pass-through gradient strictly inside ``[lo, hi]``."""
    a = _as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- structural


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(ref, other)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: shapes {tuple(ref)} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, fn)


def sum_all(a) -> Tensor:
    """Scalar sum, accumulated in float64."""
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)
    return _node(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes differ for shapes {a.shape} and {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), fn)


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis with max subtraction; denominators in float64."""
    a = _as_tensor(a)
    x = a.data
    shifted = (x - x.max(axis=-1, keepdims=True)).astype(np.float64)
    e = np.exp(shifted)
    p = (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype)

    def fn(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _node(p, (a,), fn)


def layer_norm(a, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalise each row of the last axis, then apply ``gamma``/``beta``."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: affine shapes {gamma.shape}, {beta.shape} do not match feature size {d}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.dtype)
    out = xhat * gamma.data + beta.data

    def fn(g):
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gbeta = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        ga = None
        if a.requires_grad:
            gx = g * gamma.data
            ga = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            ga = ga.astype(x.dtype)
        return ga, ggamma, gbeta

    return _node(out.astype(x.dtype), (a, gamma, beta), fn)


def conv2d(x, w, b) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1.

    ``x`` is ``C_in x H x W`` or batched ``B x C_in x H x W``; ``w`` is
    ``C_out x C_in x 3 x 3``. Lowered to one matrix product via im2col.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel must be C_out x C_in x 3 x 3, got {w.shape}")
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be C x H x W or B x C x H x W, got {x.shape}")
    cout, cin = w.shape[:2]
    if x.shape[-3] != cin:
        raise DimensionError(f"conv2d: input shape {x.shape} has {x.shape[-3]} channels, kernel {w.shape} expects {cin}")
    if b.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match kernel {w.shape}")

    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, _, h, wd = xd.shape
    xp = np.pad(xd.transpose(0, 2, 3, 1), ((0, 0), (1, 1), (1, 1), (0, 0)))
    # (n, h, w, cin, 3, 3) -> rows of length cin*9 in (cin, ky, kx) order
    cols = np.ascontiguousarray(sliding_window_view(xp, (3, 3), axis=(1, 2))).reshape(n * h * wd, cin * 9)
    wmat = w.data.reshape(cout, cin * 9)
    out = cols @ wmat.T
    out += b.data
    out = out.reshape(n, h, wd, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out if batched else out[0])

    def fn(g):
        g4 = g if batched else g[None]
        gflat = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = (gflat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gflat.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gflat @ wmat).reshape(n, h, wd, cin, 3, 3)
            gxp = np.zeros((n, h + 2, wd + 2, cin), dtype=g.dtype)
            for ky in range(3):
                for kx in range(3):
                    gxp[:, ky : ky + h, kx : kx + wd, :] += dcols[..., ky, kx]
            gx = np.ascontiguousarray(gxp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2))
            if not batched:
                gx = gx[0]
        return gx, gw, gb

    return _node(out, (x, w, b), fn)


# ---------------------------------------------------------------- reverse sweep


class GradTape:
    """Topologically ordered record of every node reachable from a loss.

    ``nodes`` lists parents before children, so the reverse sweep touches each
    recorded node exactly once.
    """

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def backward(loss: Tensor, tape: GradTape | None = None) -> dict[Tensor, np.ndarray]:
    """Return ``d loss / d leaf`` for every grad-requiring leaf under ``loss``.

    The gradients are also stored on each leaf's ``.grad`` (overwriting).
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if tape is None:
        tape = GradTape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            result[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return result
