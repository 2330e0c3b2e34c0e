"""Dense tensors with reverse-mode automatic differentiation.

Every primitive computes its forward value with numpy and, when any input
requires a gradient, records its parents together with a closure mapping
the output gradient to one gradient per parent.  ``backward`` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-12

_state = {"dtype": np.float32, "grad_enabled": True}


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        desc = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {desc}")


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (``np.float64`` for grad checks)."""
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        want = dtype or _state["dtype"]
        if arr.dtype != want:
            arr = arr.astype(want)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- operators -----------------------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def max(self, axis=None):
        return tmax(self, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    track = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise / broadcasting ------------------------------------------

def _check_broadcast(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    # bias-add over the trailing axis only
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    raise ShapeError(name, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _binary_operands(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.data.dtype.type if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.data.dtype.type)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    """Natural log with the argument clamped at ``LOG_CLAMP``."""
    xd = x.data
    clamped = np.maximum(xd, LOG_CLAMP)

    def backward(g):
        return (np.where(xd > LOG_CLAMP, g / clamped, 0.0).astype(xd.dtype),)

    return _make(np.log(clamped), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted)."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- linear algebra and shape ops ----------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for (m,k)@(k,n), (k,)@(k,n) and (m,k)@(k,)."""
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or (ad.ndim == 1 and bd.ndim == 1):
        raise ShapeError("matmul", ad.shape, bd.shape)
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError("matmul", ad.shape, bd.shape)

    def backward(g):
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    return _make(x.data.T, (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _make(y, (x,), lambda g: (g.reshape(src),))


def index(x: Tensor, idx) -> Tensor:
    """Basic slicing/integer indexing (no advanced index arrays)."""
    src = x.shape
    dtype = x.data.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError("stack", ref, t.shape)
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(x: Tensor, axis=None) -> Tensor:
    src = x.shape
    y = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _make(np.asarray(y), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def tmax(x: Tensor, axis=None) -> Tensor:
    """Max reduction; the gradient goes to the first maximal element."""
    xd = x.data
    if axis is None:
        flat = int(np.argmax(xd))

        def backward(g):
            out = np.zeros_like(xd)
            out.reshape(-1)[flat] = g
            return (out,)

        return _make(np.asarray(xd.reshape(-1)[flat]), (x,), backward)

    arg = np.expand_dims(np.argmax(xd, axis=axis), axis)
    y = np.take_along_axis(xd, arg, axis=axis)

    def backward(g):
        out = np.zeros_like(xd)
        np.put_along_axis(out, arg, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(np.squeeze(y, axis=axis), (x,), backward)


def embedding(table: Tensor, idx: int) -> Tensor:
    """Row lookup ``table[idx]`` for a single integer id."""
    if not 0 <= idx < table.shape[0]:
        raise IndexError(f"embedding: id {idx} outside [0, {table.shape[0]})")
    src = table.shape
    dtype = table.data.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        full[idx] = g
        return (full,)

    return _make(table.data[idx].copy(), (table,), backward)


# -- convolution and pooling ---------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded, stride-1 convolution: x (C_in, L), w (C_out, C_in, k)."""
    if x.ndim != 2 or w.ndim != 3 or x.shape[0] != w.shape[1] or w.shape[2] % 2 == 0:
        raise ShapeError("conv1d", x.shape, w.shape)
    k = w.shape[2]
    pad = k // 2
    L = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    wd = w.data
    y = np.zeros((wd.shape[0], L), dtype=x.data.dtype)
    for i in range(k):
        y += wd[:, :, i] @ xp[:, i:i + L]
    parents = (x, w)
    if b is not None:
        if b.shape != (wd.shape[0],):
            raise ShapeError("conv1d", w.shape, b.shape)
        y += b.data[:, None]
        parents = (x, w, b)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(k):
            gxp[:, i:i + L] += wd[:, :, i].T @ g
            gw[:, :, i] = g @ xp[:, i:i + L].T
        grads = (gxp[:, pad:pad + L], gw)
        if b is not None:
            grads += (g.sum(axis=1),)
        return grads

    return _make(y, parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded, stride-1 convolution: x (C_in, H, W), w (C_out, C_in, kh, kw)."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1] or w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeError("conv2d", x.shape, w.shape)
    cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    wd = w.data
    y = np.zeros((cout, H * W), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            y += wd[:, :, i, j] @ xp[:, i:i + H, j:j + W].reshape(cin, -1)
    parents = (x, w)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError("conv2d", w.shape, b.shape)
        y += b.data[:, None]
        parents = (x, w, b)

    def backward(g):
        g2 = g.reshape(cout, -1)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + H, j:j + W] += (wd[:, :, i, j].T @ g2).reshape(cin, H, W)
                gw[:, :, i, j] = g2 @ xp[:, i:i + H, j:j + W].reshape(cin, -1).T
        grads = (gxp[:, ph:ph + H, pw:pw + W], gw)
        if b is not None:
            grads += (g2.sum(axis=1),)
        return grads

    return _make(y.reshape(cout, H, W), parents, backward)


def avgpool(x: Tensor, window: tuple[int, ...]) -> Tensor:
    """Average pooling over the trailing ``len(window)`` axes, stride = window.

    ``window=(2,)`` on (C, L) is the 1x2 pool; ``window=(2, 2)`` on (C, H, W)
    is the 2x2 pool.
    """
    nd = len(window)
    lead = x.shape[: x.ndim - nd]
    tail = x.shape[x.ndim - nd:]
    if len(tail) != nd or any(s % k for s, k in zip(tail, window)):
        raise ShapeError("avgpool", x.shape, window)
    split = list(lead)
    for s, k in zip(tail, window):
        split += [s // k, k]
    red = tuple(len(lead) + 2 * i + 1 for i in range(nd))
    scale = 1.0 / float(np.prod(window))
    y = x.data.reshape(split).mean(axis=red)
    src = x.shape

    def backward(g):
        gx = np.expand_dims(g, red) * scale
        return (np.broadcast_to(gx, split).reshape(src).copy(),)

    return _make(y.astype(x.data.dtype), (x,), backward)


# -- differentiation -----------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
