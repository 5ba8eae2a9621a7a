"""Dense float64 tensors with a reverse-mode tape.

Every op records its parents and a closure that pushes the output gradient
back into them. ``Tensor.backward`` walks the graph in reverse topological
order and then frees it, so a graph can be differentiated exactly once.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class MacCounter:
    """Tallies multiply-accumulates performed by ``matmul`` while active."""

    def __init__(self) -> None:
        self.total = 0
        self.log: list[tuple[str, int]] = []
        self._tags: list[str] = []

    def add(self, n: int) -> None:
        self.total += n
        self.log.append(("/".join(self._tags), n))

    @contextlib.contextmanager
    def tag(self, name: str):
        self._tags.append(name)
        try:
            yield
        finally:
            self._tags.pop()

    def by_tag(self, depth: int = 1) -> dict[str, int]:
        out: dict[str, int] = {}
        for tag, n in self.log:
            key = "/".join(tag.split("/")[:depth])
            out[key] = out.get(key, 0) + n
        return out


def _active_counter() -> MacCounter | None:
    return getattr(_state, "counter", None)


@contextlib.contextmanager
def count_macs():
    """Instrument every matmul executed in the block.

    >>> with count_macs() as c:
    ...     _ = Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 4)))
    >>> c.total
    24
    """
    prev = _active_counter()
    counter = MacCounter()
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = prev


@contextlib.contextmanager
def mac_tag(name: str):
    counter = _active_counter()
    if counter is None:
        yield
        return
    with counter.tag(name):
        yield


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(idx) -> bool:
    """True when ``idx`` cannot address one element twice (no index arrays)."""
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is None or i is Ellipsis or isinstance(i, (slice, int, np.integer)) for i in items)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"],
              backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @staticmethod
    def zeros(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    # -- properties ----------------------------------------------------------

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
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``grad`` and free the graph."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        for node in topo:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b), lambda g: (
            (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._make(-a.data, (a,), lambda g: ((a, -g),))

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data - b.data, (a, b), lambda g: (
            (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b), lambda g: (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor._make(out, (a, b), lambda g: (
            (a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)))

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, p: float) -> "Tensor":
        a = self
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        return Tensor._make(a.data ** p, (a,), lambda g: (
            (a, g * p * a.data ** (p - 1)),))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, as_tensor(other))

    # -- unary ---------------------------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: ((a, g * out),))

    def log(self) -> "Tensor":
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)
        return Tensor._make(out, (a,), lambda g: ((a, g * 0.5 / out),))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))

    def sigmoid(self) -> "Tensor":
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor._make(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor._make(a.data * mask, (a,), lambda g: ((a, g * mask),))

    def abs(self) -> "Tensor":
        a = self
        sign = np.sign(a.data)
        return Tensor._make(np.abs(a.data), (a,), lambda g: ((a, g * sign),))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return ((a, np.broadcast_to(g, a.shape)),)

        return Tensor._make(np.asarray(out, dtype=DTYPE), (a,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(np.prod([self.shape[i] for i in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ---------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(a.shape)),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: ((a, g.transpose(inv)),))

    def swapaxes(self, i: int, j: int) -> "Tensor":
        a = self
        return Tensor._make(np.swapaxes(a.data, i, j), (a,), lambda g: ((a, np.swapaxes(g, i, j)),))

    def __getitem__(self, idx) -> "Tensor":
        a = self
        basic = _is_basic_index(idx)

        def back(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return ((a, full),)

        return Tensor._make(np.array(a.data[idx], dtype=DTYPE), (a,), back)


# -- free functions ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; counted when instrumented."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    counter = _active_counter()
    if counter is not None:
        m, k = a.shape[-2:]
        n = b.shape[-1]
        batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
        counter.add(batch * m * k * n)

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ((a, ga), (b, gb))

    return Tensor._make(out, (a, b), back)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        res = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            res.append((t, g[tuple(sl)]))
        return res

    return Tensor._make(out, ts, back)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) if axis >= 0
                   else t.reshape(t.shape[:t.ndim + 1 + axis] + (1,) + t.shape[t.ndim + 1 + axis:])
                   for t in ts], axis=axis)


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return Tensor._make(np.where(cond, a.data, b.data), (a, b), lambda g: (
        (a, _unbroadcast(np.where(cond, g, 0.0), a.shape)),
        (b, _unbroadcast(np.where(cond, 0.0, g), b.shape))))


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data >= b.data, a, b)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data <= b.data, a, b)


def pad2d(x: Tensor, p: int) -> Tensor:
    """Zero-pad the last two axes by ``p`` on every side."""
    widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    h, w = x.shape[-2:]
    return Tensor._make(np.pad(x.data, widths), (x,), lambda g: ((x, g[..., p:p + h, p:p + w]),))
