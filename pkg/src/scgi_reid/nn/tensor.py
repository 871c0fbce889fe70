"""Reverse-mode automatic differentiation on numpy arrays.

Every differentiable value is a :class:`Tensor` wrapping an ndarray.
Operations build a DAG; calling ``backward()`` on a scalar walks the graph
once in reverse topological order and accumulates gradients into every
tensor with ``requires_grad`` set.

The float width of newly created tensors is controlled by the module-wide
default dtype: float32 for training, float64 when finite-difference
oracles need the extra precision.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from ..errors import ContractError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_SEQ = itertools.count()

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def default_dtype() -> np.dtype:
    """Return the dtype used for newly created tensors."""
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt.kind != "f":
        raise ContractError(f"default dtype must be a float type, got {dt}")
    _DEFAULT_DTYPE = dt


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default float width."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf", name=None):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.name = name
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward
        self._seq = next(_SEQ)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        """A view of the same data with the graph severed."""
        return Tensor(self.data, requires_grad=False, op="detach")

    # -- graph construction helpers ------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value, op="const")

    # -- arithmetic -----------------------------------------------------------

    def __neg__(self):
        return _make([self], -self.data, lambda g: (-g,), "neg")

    def __add__(self, other):
        other = self._lift(other)
        return _make(
            [self, other],
            self.data + other.data,
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return _make(
            [self, other],
            self.data - other.data,
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
            "sub",
        )

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        return _make(
            [self, other],
            self.data * other.data,
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        return _make(
            [self, other],
            self.data / other.data,
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only scalar exponents are supported")
        e = float(exponent)
        return _make(
            [self],
            self.data**e,
            lambda g: (g * e * self.data ** (e - 1.0),),
            "pow",
        )

    def __matmul__(self, other):
        other = self._lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul operands must have at least 2 dimensions")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = self.data @ other.data

        def bw(g):
            ga = _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape)
            gb = _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape)
            return ga, gb

        return _make([self, other], out, bw, "matmul")

    # -- elementwise functions --------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _make([self], out, lambda g: (g * out,), "exp")

    def log(self):
        return _make([self], np.log(self.data), lambda g: (g / self.data,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return _make([self], out, lambda g: (g * 0.5 / out,), "sqrt")

    def relu(self):
        mask = self.data > 0
        return _make([self], np.where(mask, self.data, 0.0), lambda g: (g * mask,), "relu")

    def gelu(self):
        x = self.data
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = x * cdf

        def bw(g):
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            return (g * (cdf + x * pdf),)

        return _make([self], out, bw, "gelu")

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return _make([self], out, bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def max(self, axis=None, keepdims: bool = False):
        out = self.data.max(axis=axis, keepdims=keepdims)

        def bw(g):
            full = out if (axis is None or keepdims) else np.expand_dims(out, axis)
            mask = self.data == full
            counts = mask.sum(axis=axis, keepdims=True)
            gg = g if (axis is None or keepdims) else np.expand_dims(g, axis)
            return (mask * (gg / counts),)

        return _make([self], out, bw, "max")

    def min(self, axis=None, keepdims: bool = False):
        return -(-self).max(axis=axis, keepdims=keepdims)

    # -- shape manipulation ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _make([self], self.data.reshape(shape), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return _make([self], self.data.transpose(axes), lambda g: (g.transpose(inverse),), "transpose")

    @property
    def mT(self):
        """Swap the last two axes."""
        perm = list(range(self.ndim))
        perm[-2], perm[-1] = perm[-1], perm[-2]
        return self.transpose(*perm)

    def __getitem__(self, key):
        out = self.data[key]

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return (full,)

        return _make([self], out, bw, "getitem")

    # -- autodiff -------------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        Raises:
            ContractError: if this tensor is not a scalar, or if no
                gradient-requiring tensor is reachable from it.
        """
        if self.size != 1:
            raise ContractError(f"backward() requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")

        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _make(parents: Sequence[Tensor], data: np.ndarray, backward, op: str) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=tuple(parents),
        _backward=backward if requires else None,
        op=op,
    )


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


# -- free functions -------------------------------------------------------------------


def as_tensor(value) -> Tensor:
    return Tensor._lift(value)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(parts, out, bw, "concat")


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; the workhorse of embedding lookup."""
    indices = np.asarray(indices)
    out = table.data[indices]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    return _make([table], out, bw, "take_rows")


def select_positions(x: Tensor, positions: np.ndarray) -> Tensor:
    """Pick one position per batch row: ``out[b] = x[b, positions[b]]``."""
    positions = np.asarray(positions)
    if x.ndim < 2 or positions.shape != (x.shape[0],):
        raise ShapeError(f"select_positions: got x {x.shape} and positions {positions.shape}")
    batch = np.arange(x.shape[0])
    out = x.data[batch, positions]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (batch, positions), g)
        return (full,)

    return _make([x], out, bw, "select_positions")


def softmax(x: Tensor, axis: int = -1, mask_bias: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; ``mask_bias`` is added to the logits."""
    if mask_bias is not None:
        x = x + Tensor(mask_bias, op="mask")
    shifted = x - x.max(axis=axis, keepdims=True).detach()
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.max(axis=axis, keepdims=True).detach()
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()
    return x / norm


def first_nonfinite(root: Tensor) -> str | None:
    """Name the earliest-created non-finite tensor in ``root``'s graph, if any."""
    seen: set[int] = set()
    stack = [root]
    worst: Tensor | None = None
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not np.isfinite(node.data).all() and (worst is None or node._seq < worst._seq):
            worst = node
        stack.extend(node._parents)
    if worst is None:
        return None
    return worst.name or worst.op
