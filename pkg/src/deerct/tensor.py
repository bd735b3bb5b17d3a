"""Minimal reverse-mode automatic differentiation.

Eager execution: every operator computes its value immediately and, when any
input requires a gradient, records a node carrying the vector-Jacobian product
closure.  ``backward`` replays the reachable nodes in exact reverse execution
order (nodes carry a global sequence number).

Storage is a numpy array.  float32 is the default; float64 arrays are kept as
float64 so gradient certification can run in double precision.

Subgradient convention: ``relu`` and ``abs`` use 0 at the kink.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from . import _kernels

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("seq", "name", "inputs", "vjp")

    def __init__(self, name: str, inputs: tuple["Tensor", ...], vjp: Callable):
        self.seq = next(_seq)
        self.name = name
        self.inputs = inputs
        self.vjp = vjp

    def __repr__(self):
        return f"Node({self.name}, seq={self.seq})"


class Tensor:
    """n-dimensional array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # -- introspection ---------------------------------------------------
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

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- arithmetic sugar ------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _record(name: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    t = Tensor(out, dtype=out.dtype)
    if grad_enabled() and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        t._node = Node(name, tuple(inputs), vjp)
    return t


class Graph:
    """Operations reachable from an output, in execution order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [out]
        while stack:
            t = stack.pop()
            n = t._node
            if n is None or id(n) in seen:
                continue
            seen.add(id(n))
            nodes.append(n)
            stack.extend(i for i in n.inputs if i.requires_grad)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ValueError("backward called on a tensor with no recorded operations")
    graph = Graph.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss._node): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype)
            if gi.shape != inp.shape:
                raise RuntimeError(f"{node.name}: gradient shape {gi.shape} != input shape {inp.shape}")
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp._node)
                pending[key] = gi if key not in pending else pending[key] + gi


# ---------------------------------------------------------------------------
# elementwise

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _check_broadcast(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: cannot combine shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def tabs(x: Tensor) -> Tensor:
    return _record("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)
    return _record("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# reductions and shape

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _record("sum", out, (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return div(tsum(x, axis, keepdims), float(count))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != ax):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _record("concat", out, tensors, lambda g: tuple(np.split(g, sizes, axis=ax)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _record("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def crop2d(x: Tensor, border: int) -> Tensor:
    """Remove ``border`` pixels from each side of the last two axes."""
    if border == 0:
        return x
    h, w = x.shape[-2:]
    if 2 * border >= min(h, w):
        raise ValueError(f"crop2d: border {border} too large for {h}x{w}")
    out = x.data[..., border:h - border, border:w - border]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., border:h - border, border:w - border] = g
        return (full,)

    return _record("crop2d", np.ascontiguousarray(out), (x,), vjp)


def pad2d(x: Tensor, border: int) -> Tensor:
    """Zero-pad ``border`` pixels on each side of the last two axes."""
    if border == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(border, border), (border, border)]
    return _record("pad2d", np.pad(x.data, width), (x,),
                   lambda g: (np.ascontiguousarray(g[..., border:-border, border:-border]),))


# ---------------------------------------------------------------------------
# convolutions (NCHW; weights FCkk for conv, CFkk for transposed conv)

def _conv_check(name, x, w, w_in_axis):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"{name}: expected 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[w_in_axis]:
        raise ValueError(f"{name}: input has {x.shape[1]} channels but weight expects {w.shape[w_in_axis]}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _conv_check("conv2d", x, w, 1)
    if x.shape[2] + 2 * padding < w.shape[2] or x.shape[3] + 2 * padding < w.shape[3]:
        raise ValueError(f"conv2d: input {x.shape[2:]} smaller than kernel {w.shape[2:]}")
    out = _kernels.conv2d(x.data, w.data, None if b is None else b.data, stride, padding)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = _kernels.conv2d_grad_input(x.shape, w.data, g, stride, padding) if x.requires_grad else None
        gw = _kernels.conv2d_grad_weight(x.data, w.shape, g, stride, padding) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record("conv2d", out, inputs, vjp)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _conv_check("conv_transpose2d", x, w, 0)
    out = _kernels.conv_transpose2d(x.data, w.data, None if b is None else b.data, stride, padding)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = _kernels.conv_transpose2d_grad_input(w.data, g, stride, padding) if x.requires_grad else None
        gw = _kernels.conv_transpose2d_grad_weight(x.data, w.shape, g, stride, padding) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record("conv_transpose2d", out, inputs, vjp)


# ---------------------------------------------------------------------------
# tomography-specific operators

def pointwise_linear(q: Tensor, w: Tensor) -> Tensor:
    """Map every sinogram sample to a line: ``out[b,v,d,:] = q[b,v,d] * w[v,d,:]``.

    ``w`` is either view-dependent, shape (V, D, N), or shared, shape (N,).
    There is no bias.
    """
    if q.ndim != 3:
        raise ValueError(f"pointwise_linear: sinogram batch must be (B, V, D), got {q.shape}")
    if w.ndim == 3:
        if w.shape[:2] != q.shape[1:]:
            raise ValueError(f"pointwise_linear: weights {w.shape[:2]} do not match sinogram {q.shape[1:]}")
        wb = w.data[None]
    elif w.ndim == 1:
        wb = w.data[None, None, None, :]
    else:
        raise ValueError(f"pointwise_linear: weight must be (V, D, N) or (N,), got {w.shape}")
    out = q.data[..., None] * wb

    def vjp(g):
        gq = (g * wb).sum(axis=-1) if q.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = (g * q.data[..., None]).sum(axis=0)
            if w.ndim == 1:
                gw = gw.sum(axis=(0, 1))
        return gq, gw

    return _record("pointwise_linear", out, (q, w), vjp)


def linear_map(x: Tensor, op) -> Tensor:
    """Apply a fixed sparse linear operator to the trailing axes of ``x``.

    ``op`` exposes ``matrix`` (scipy sparse, out x in), ``in_shape`` and
    ``out_shape``.  The vector-Jacobian product is the transpose.
    """
    k = len(op.in_shape)
    if tuple(x.shape[-k:]) != tuple(op.in_shape):
        raise ValueError(f"{op.name}: trailing shape {x.shape[-k:]} != operator input {op.in_shape}")
    lead = x.shape[:-k]
    flat = x.data.reshape(-1, int(np.prod(op.in_shape)))
    m = op.matrix_as(x.dtype)
    out = np.asarray((m @ flat.T).T).reshape(lead + tuple(op.out_shape))

    def vjp(g):
        gflat = g.reshape(-1, int(np.prod(op.out_shape)))
        return (np.asarray((m.T @ gflat.T).T).reshape(x.shape),)

    return _record(op.name, out, (x,), vjp)


def rotate(x: Tensor, angle: float) -> Tensor:
    """Rotate square images (trailing two axes) by ``angle`` radians, bilinear, zeros outside."""
    from .interp import rotation_operator

    return linear_map(x, rotation_operator(x.shape[-1], float(angle)))


def fourier_filter(x: Tensor, response: np.ndarray) -> Tensor:
    """Filter rows (last axis) by multiplication in the Fourier domain.

    Rows are zero-padded to ``len(response)`` before the FFT and cropped back.
    """
    n = x.shape[-1]
    length = len(response)
    if length < n:
        raise ValueError(f"fourier_filter: response length {length} shorter than row length {n}")
    h = np.asarray(response)

    def apply(a, resp):
        spec = np.fft.fft(a, n=length, axis=-1) * resp
        return np.real(np.fft.ifft(spec, axis=-1))[..., :n].astype(x.dtype)

    return _record("fourier_filter", apply(x.data, h), (x,), lambda g: (apply(g, np.conj(h)),))


abs = tabs  # noqa: A001  -- public name mirrors the operator set
sum = tsum  # noqa: A001
