"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is built define-by-run: every op wires a backward closure onto
its output, and ``backward`` replays the closures in reverse topological
order. The op set is exactly what the GCN agents, the discrete channel,
and the losses need; there is no general broadcasting machinery beyond
that (leading batch axes on matmul, and sum-to-shape on the elementwise
binaries).

Gradients on leaf tensors (no parents) accumulate additively across
backward calls; gradients on interior nodes are owned by each backward
pass and reset when it starts.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Invert numpy broadcasting: reduce grad back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense array plus its slot in the computation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return _binary(self, other, "add")

    def __radd__(self, other) -> "Tensor":
        return _binary(self, other, "add")

    def __sub__(self, other) -> "Tensor":
        return _binary(self, other, "sub")

    def __mul__(self, other) -> "Tensor":
        return _binary(self, other, "mul")

    def __rmul__(self, other) -> "Tensor":
        return _binary(self, other, "mul")

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- unary ---------------------------------------------------------

    def relu(self) -> "Tensor":
        out = _make(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(out.grad * (self.data > 0.0))
            out._backward = back
        return out

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = _make(y, (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(out.grad * (1.0 - y * y))
            out._backward = back
        return out

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = _make(y, (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(out.grad * y)
            out._backward = back
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log requires strictly positive entries")
        out = _make(np.log(self.data), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(out.grad / self.data)
            out._backward = back
        return out

    # -- shape ---------------------------------------------------------

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(shape)
        out = _make(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(out.grad.reshape(self.data.shape))
            out._backward = back
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    self._accum(_expand_reduced(out.grad, self.data.shape, axis, keepdims))
            out._backward = back
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        out = _make(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    g = _expand_reduced(out.grad, self.data.shape, axis, keepdims)
                    self._accum(g / count)
            out._backward = back
        return out

    def amax(self, axis: int, keepdims: bool = False) -> "Tensor":
        m = self.data.max(axis=axis, keepdims=True)
        out = _make(m if keepdims else np.squeeze(m, axis=axis), (self,))
        if out.requires_grad:
            def back():
                if self.requires_grad:
                    mask = (self.data == m).astype(np.float64)
                    mask /= mask.sum(axis=axis, keepdims=True)  # split ties evenly
                    g = _expand_reduced(out.grad, self.data.shape, axis, keepdims)
                    self._accum(g * mask)
            out._backward = back
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis=axis)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        return log_softmax(self, axis=axis)

    def backward(self) -> None:
        backward(self)


def _make(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _expand_reduced(grad, shape, axis, keepdims) -> np.ndarray:
    """Broadcast the grad of a reduction back to the input shape."""
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis=axis)
    return np.broadcast_to(grad, shape).copy()


def _binary(a: Tensor, b, kind: str) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None
    if kind == "add":
        data = a.data + b.data
    elif kind == "sub":
        data = a.data - b.data
    else:
        data = a.data * b.data
    out = _make(data, (a, b))
    if out.requires_grad:
        def back():
            g = out.grad
            if kind == "mul":
                if a.requires_grad:
                    a._accum(_sum_to_shape(g * b.data, a.shape))
                if b.requires_grad:
                    b._accum(_sum_to_shape(g * a.data, b.shape))
            else:
                if a.requires_grad:
                    a._accum(_sum_to_shape(g, a.shape))
                if b.requires_grad:
                    sign = -1.0 if kind == "sub" else 1.0
                    b._accum(_sum_to_shape(sign * g, b.shape))
        out._backward = back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Backward: dA = dC @ B^T, dB = A^T @ dC (summed over broadcast axes).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
    out = _make(data, (a, b))
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                da = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accum(_sum_to_shape(da, a.shape))
            if b.requires_grad:
                db = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accum(_sum_to_shape(db, b.shape))
        out._backward = back
    return out


def _ordered_expsum(e: np.ndarray, axis: int) -> np.ndarray:
    # Summing in value order makes the reduction invariant to input
    # permutations along `axis` (candidate reordering must not perturb
    # receiver outputs by even an ulp).
    return np.sort(e, axis=axis).sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis` (max-subtracted)."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / _ordered_expsum(e, axis)
    out = _make(y, (x,))
    if out.requires_grad:
        def back():
            g = out.grad
            if x.requires_grad:
                x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = back
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """log(softmax(x)) computed without forming the softmax."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    ls = (x.data - m) - np.log(_ordered_expsum(e, axis))
    out = _make(ls, (x,))
    if out.requires_grad:
        def back():
            g = out.grad
            if x.requires_grad:
                x._accum(g - np.exp(ls) * g.sum(axis=axis, keepdims=True))
        out._backward = back
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the row axis (second-to-last): (n, d) -> (d,)."""
    if x.ndim < 2:
        raise ShapeError(f"mean_rows needs a >=2-d tensor, got shape {x.shape}")
    if x.shape[-2] == 0:
        raise ShapeError("mean_rows over zero rows (empty graph)")
    return x.mean(axis=-2)


def straight_through_onehot(y: Tensor, axis: int = -1) -> Tensor:
    """Forward: one-hot argmax of y. Backward: identity (gradient of y)."""
    idx = np.argmax(y.data, axis=axis)
    hard = np.zeros_like(y.data)
    np.put_along_axis(hard, np.expand_dims(idx, axis), 1.0, axis)
    out = _make(hard, (y,))
    if out.requires_grad:
        def back():
            if y.requires_grad:
                y._accum(out.grad)
        out._backward = back
    return out


def backward(loss: Tensor) -> None:
    """Fill gradients of everything that contributed to a scalar loss."""
    if loss.data.ndim != 0:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    # Interior grads belong to this pass; leaf grads accumulate across passes.
    for t in order:
        if t._parents:
            t.grad = np.zeros_like(t.data)
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t._backward is not None:
            t._backward()


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    seen.add(id(root))
    while stack:
        node, i = stack.pop()
        if i < len(node._parents):
            stack.append((node, i + 1))
            child = node._parents[i]
            if id(child) not in seen:
                seen.add(id(child))
                stack.append((child, 0))
        else:
            order.append(node)
    return order


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
