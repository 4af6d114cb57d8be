"""Minimal reverse-mode autodiff on dense float64 numpy arrays.

A :class:`DiffTensor` wraps a value array plus a same-shape gradient
accumulator and remembers how it was produced, so calling ``backward()`` on a
scalar result fills the ``grad`` of every tensor it depends on.  Gradients
accumulate with ``+=``; call :meth:`ParamRegistry.zero_grads` before each
optimizer step.  Values are treated as immutable once a tensor participates
in a graph; only the ``grad`` slot mutates.

Everything is dense and double precision.  Graph construction and backward
are single-threaded per graph; independent graphs are independent.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, ValidationError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class DiffTensor:
    """Node in a reverse-mode computation graph: value, grad slot, parent links."""

    __slots__ = ("values", "requires_grad", "name", "_grad", "_parents", "_backward")

    def __init__(
        self,
        values,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["DiffTensor", ...] = (),
        _backward: Callable[[Array], None] | None = None,
    ):
        self.values = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad: Array | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def grad(self) -> Array:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        g = _as_array(g)
        if g.shape != self.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match value {self.shape}")
        self._grad = g

    def zero_grad(self) -> None:
        self._grad = None

    def _accumulate(self, g: Array) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += g

    def backward(self, seed: Array | None = None) -> None:
        """Propagate gradients from this tensor to everything it depends on.

        Without ``seed`` the tensor must be scalar-shaped; the seed defaults
        to 1.  Forward values are left untouched.
        """
        if seed is None:
            if self.size != 1:
                raise DimensionError(
                    f"backward() without seed needs a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.values)
        else:
            seed = _as_array(seed)
            if seed.shape != self.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} does not match tensor shape {self.shape}"
                )
        if self.requires_grad:
            self._accumulate(seed)
        for node in reversed(_topo_order(self)):
            # a node may have received nothing if all its consumers were
            # pruned as grad-free; skip rather than propagate zeros
            if node._backward is None or node._grad is None:
                continue
            node._backward(node._grad)

    def __repr__(self) -> str:  # pragma: no cover
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _topo_order(root: DiffTensor) -> list[DiffTensor]:
    """Iterative DFS post-order; recursion would overflow on long recurrences."""
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def constant(values, name: str | None = None) -> DiffTensor:
    return DiffTensor(values, requires_grad=False, name=name)


def parameter(values, name: str | None = None) -> DiffTensor:
    return DiffTensor(values, requires_grad=True, name=name)


def _wrap(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else constant(x)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(values, parents, backward, name=None) -> DiffTensor:
    needs = any(p.requires_grad for p in parents)
    return DiffTensor(
        values,
        requires_grad=needs,
        name=name,
        _parents=tuple(parents) if needs else (),
        _backward=backward if needs else None,
    )


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out, (a, b), backward)


def sub(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values - b.values
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(out, (a, b), backward)


def mul(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _node(out, (a, b), backward)


def matmul(a, b) -> DiffTensor:
    """Matrix product with broadcastable leading batch dimensions."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions do not broadcast: {a.shape} x {b.shape}")
    out = np.matmul(a.values, b.values)

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _node(out, (a, b), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def tanh(x) -> DiffTensor:
    x = _wrap(x)
    out = np.tanh(x.values)

    def backward(g: Array) -> None:
        x._accumulate(g * (1.0 - out * out))

    return _node(out, (x,), backward)


def sigmoid(x) -> DiffTensor:
    x = _wrap(x)
    # split by sign to stay stable for large |x|
    v = x.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g: Array) -> None:
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), backward)


def relu(x) -> DiffTensor:
    x = _wrap(x)
    out = np.maximum(x.values, 0.0)

    def backward(g: Array) -> None:
        x._accumulate(g * (x.values > 0))

    return _node(out, (x,), backward)


def absolute(x) -> DiffTensor:
    x = _wrap(x)
    out = np.abs(x.values)

    def backward(g: Array) -> None:
        # subgradient 0 at exactly zero
        x._accumulate(g * np.sign(x.values))

    return _node(out, (x,), backward)


_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "abs": absolute}
_ELEMENTWISE_BINARY = {"mul": mul, "add": add, "sub": sub}


def elementwise(kind: str, *operands) -> DiffTensor:
    """Dispatch a pointwise op by name: tanh|sigmoid|relu|abs|mul|add|sub."""
    if kind in _ELEMENTWISE_UNARY:
        if len(operands) != 1:
            raise ValidationError(f"elementwise {kind!r} takes one operand")
        return _ELEMENTWISE_UNARY[kind](*operands)
    if kind in _ELEMENTWISE_BINARY:
        if len(operands) != 2:
            raise ValidationError(f"elementwise {kind!r} takes two operands")
        return _ELEMENTWISE_BINARY[kind](*operands)
    raise ValidationError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# softmax / reductions


def softmax_lastdim(x) -> DiffTensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = _wrap(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim: empty last dimension in shape {x.shape}")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - inner))

    return _node(out, (x,), backward)


def _check_axis(x: DiffTensor, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise DimensionError(f"axis {ax} invalid for shape {x.shape}")


def reduce_sum(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = _wrap(x)
    _check_axis(x, axis)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        gg = g if axis is None or keepdims else np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(gg, x.shape).copy())

    return _node(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = _wrap(x)
    _check_axis(x, axis)
    out = x.values.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.values.size // out.size if out.size else 1

    def backward(g: Array) -> None:
        share = g / count
        gg = share if axis is None or keepdims else np.expand_dims(share, axis)
        x._accumulate(np.broadcast_to(gg, x.shape).copy())

    return _node(out, (x,), backward)


def reduce(kind: str, x, axis=None, keepdims: bool = False) -> DiffTensor:
    if kind == "sum":
        return reduce_sum(x, axis=axis, keepdims=keepdims)
    if kind == "mean":
        return reduce_mean(x, axis=axis, keepdims=keepdims)
    raise ValidationError(f"unknown reduce kind {kind!r}")


# ---------------------------------------------------------------------------
# shape surgery


def concat_lastdim(xs: Sequence) -> DiffTensor:
    xs = [_wrap(x) for x in xs]
    if not xs:
        raise DimensionError("concat_lastdim: empty input list")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise DimensionError(
                f"concat_lastdim: leading dims differ: {xs[0].shape} vs {x.shape}"
            )
    out = np.concatenate([x.values for x in xs], axis=-1)
    extents = [x.shape[-1] for x in xs]

    def backward(g: Array) -> None:
        offset = 0
        for x, w in zip(xs, extents):
            if x.requires_grad:
                x._accumulate(g[..., offset : offset + w])
            offset += w

    return _node(out, tuple(xs), backward)


def slice_lastdim(x, start: int, stop: int) -> DiffTensor:
    x = _wrap(x)
    if not (0 <= start <= stop <= x.shape[-1]):
        raise DimensionError(f"slice_lastdim [{start}:{stop}] out of range for {x.shape}")
    out = x.values[..., start:stop]

    def backward(g: Array) -> None:
        full = np.zeros_like(x.values)
        full[..., start:stop] = g
        x._accumulate(full)

    return _node(out, (x,), backward)


def stack(xs: Sequence, axis: int = 0) -> DiffTensor:
    xs = [_wrap(x) for x in xs]
    if not xs:
        raise DimensionError("stack: empty input list")
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise DimensionError(f"stack: shapes differ: {shape} vs {x.shape}")
    out = np.stack([x.values for x in xs], axis=axis)

    def backward(g: Array) -> None:
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accumulate(np.take(g, i, axis=axis))

    return _node(out, tuple(xs), backward)


def reshape(x, shape: tuple) -> DiffTensor:
    x = _wrap(x)
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def backward(g: Array) -> None:
        x._accumulate(g.reshape(x.shape))

    return _node(out, (x,), backward)


def transpose_last2(x) -> DiffTensor:
    x = _wrap(x)
    if x.ndim < 2:
        raise DimensionError(f"transpose_last2 needs >=2-d input, got {x.shape}")
    out = np.swapaxes(x.values, -1, -2)

    def backward(g: Array) -> None:
        x._accumulate(np.swapaxes(g, -1, -2))

    return _node(out, (x,), backward)


def normalize_rows(x) -> DiffTensor:
    """Row-normalize the trailing square matrix: each row divided by its sum.

    Rows summing to zero stay zero (the inverse-degree entry is treated as
    zero); their subgradient is zero as well.
    """
    x = _wrap(x)
    if x.ndim < 2:
        raise DimensionError(f"normalize_rows needs a matrix, got {x.shape}")
    deg = x.values.sum(axis=-1, keepdims=True)
    safe = np.where(deg > 0, deg, 1.0)
    out = np.where(deg > 0, x.values / safe, 0.0)

    def backward(g: Array) -> None:
        inner = (g * out).sum(axis=-1, keepdims=True)
        gx = np.where(deg > 0, (g - inner) / safe, 0.0)
        x._accumulate(gx)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# parameters


class ParamRegistry:
    """Ordered, uniquely named collection of learnable tensors."""

    def __init__(self) -> None:
        self._entries: dict[str, DiffTensor] = {}

    def register(self, name: str, values) -> DiffTensor:
        if name in self._entries:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = values if isinstance(values, DiffTensor) else parameter(values, name=name)
        t.requires_grad = True
        t.name = name
        self._entries[name] = t
        return t

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> DiffTensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[tuple[str, DiffTensor]]:
        return iter(self._entries.items())

    def names(self) -> list[str]:
        return list(self._entries)

    def tensors(self) -> list[DiffTensor]:
        return list(self._entries.values())

    def n_elements(self) -> int:
        return sum(t.size for t in self._entries.values())

    def zero_grads(self) -> None:
        for t in self._entries.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, Array]:
        return {name: t.values.copy() for name, t in self._entries.items()}

    def load_state(self, state: dict[str, Array]) -> None:
        missing = set(self._entries) - set(state)
        extra = set(state) - set(self._entries)
        if missing or extra:
            raise ValidationError(
                f"parameter state mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self._entries.items():
            arr = _as_array(state[name])
            if arr.shape != t.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {arr.shape} != expected {t.shape}"
                )
            t.values = arr.copy()
