"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built eagerly: every op returns a new Tensor that references its
inputs together with a closure mapping the output gradient to input
gradients. backward() walks the graph once in reverse topological order,
accumulates into leaf .grad buffers, and then the graph is garbage collected
along with the loss tensor. No tape persists across steps.

Strictness rules: all values are 64-bit floats; operands must be shape
compatible, and the only implicit broadcast is scalar-times-tensor. Bias
rows, masks and the like go through explicit ops (add_bias, mul_vec,
add_const, ...) so an accidental shape mismatch is always a hard error.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class AutodiffError(Exception):
    """Base class for graph construction and propagation errors."""


class ShapeError(AutodiffError):
    """Operands have incompatible shapes or dtypes."""


class NonFiniteError(AutodiffError):
    """A NaN or Inf was produced where only finite values are allowed."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_f64(data) -> np.ndarray:
    # order="C" rather than ascontiguousarray: the latter promotes 0-d to 1-d.
    return np.asarray(data, dtype=np.float64, order="C")


def _require_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """A dense float64 array that may participate in an autodiff graph.

    Leaves are tensors created directly from data; .grad accumulates across
    backward() calls until zero_grad(). Interior nodes never store grads.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, validate: bool = True):
        self.data = _as_f64(data)
        if validate:
            _require_finite(self.data, "tensor data")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of the same values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False, validate=False)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self) -> "Tensor":
        _require_finite(self.data, f"tensor from op '{self.op}'")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # Operator sugar; scalar-times-tensor is the only implicit broadcast.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, *, rng: np.random.Generator | None = None, std: float | None = None) -> Tensor:
    """Leaf tensor with requires_grad. If rng and std are given, `data` is a
    shape and values are drawn from a truncated normal (cut at two sigma)."""
    if rng is not None:
        if std is None:
            raise ValueError("std required when sampling a parameter")
        shape = tuple(data)
        vals = rng.normal(0.0, std, size=shape)
        bad = np.abs(vals) > 2.0 * std
        while np.any(bad):
            vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
            bad = np.abs(vals) > 2.0 * std
        return Tensor(vals, requires_grad=True, validate=False)
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to `shape` after a numpy-style broadcast."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def backward(g: np.ndarray):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "mul", (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, "scale", (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data + s, "add_scalar", (a,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b a vector over the last axis, broadcast over leading dims."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: x {x.shape} vs bias {b.shape}")

    def backward(g: np.ndarray):
        gx = g if x.requires_grad else None
        gb = g.reshape(-1, b.shape[0]).sum(axis=0) if b.requires_grad else None
        return gx, gb

    return _make(x.data + b.data, "add_bias", (x, b), backward)


def mul_vec(x: Tensor, v: Tensor) -> Tensor:
    """x * v with v a vector over the last axis, broadcast over leading dims."""
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError(f"mul_vec: x {x.shape} vs vector {v.shape}")

    def backward(g: np.ndarray):
        gx = g * v.data if x.requires_grad else None
        gv = (g * x.data).reshape(-1, v.shape[0]).sum(axis=0) if v.requires_grad else None
        return gx, gv

    return _make(x.data * v.data, "mul_vec", (x, v), backward)


def add_const(x: Tensor, c) -> Tensor:
    """x + c for a non-differentiable array broadcastable to x's shape."""
    c = _as_f64(c)
    out = x.data + c
    if out.shape != x.shape:
        raise ShapeError(f"add_const: constant {c.shape} grows x {x.shape}")
    return _make(out, "add_const", (x,), lambda g: (g,))


def mul_const(x: Tensor, c) -> Tensor:
    """x * c for a non-differentiable array broadcastable to x's shape."""
    c = _as_f64(c)
    out = x.data * c
    if out.shape != x.shape:
        raise ShapeError(f"mul_const: constant {c.shape} grows x {x.shape}")
    return _make(out, "mul_const", (x,), lambda g: (g * c,))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {x.ndim}")
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), "transpose", (x,),
                 lambda g: (g.transpose(inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from exc
    orig = x.shape
    return _make(out, "reshape", (x,), lambda g: (g.reshape(orig),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from exc
    orig = x.shape
    return _make(out, "broadcast_to", (x,), lambda g: (_unbroadcast(g, orig),))


def concatenate(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concatenate: empty input list")
    axis = axis % parts[0].ndim
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        pieces = np.split(g, splits, axis=axis)
        return tuple(pieces[i] if parts[i].requires_grad else None for i in range(len(parts)))

    return _make(out, "concatenate", tuple(parts), backward)


def gather(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Select rows/entries along one axis by a 1-D integer index array."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise ShapeError(f"gather: index out of range for axis {axis} of {x.shape}")
    out = np.take(x.data, idx, axis=axis)

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _make(out, "gather", (x,), backward)


# ---------------------------------------------------------------------------
# Nonlinearities and reductions
# ---------------------------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    _require_finite(out, "exp output")
    return _make(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    _require_finite(out, "log output")
    return _make(out, "log", (x,), lambda g: (g / x.data,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-shift stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, "softmax", (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + a x^3)))."""
    x2 = x.data * x.data
    t = np.tanh(GELU_C * (x.data + GELU_A * x2 * x.data))
    out = 0.5 * x.data * (1.0 + t)

    def backward(g: np.ndarray):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _make(out, "gelu", (x,), backward)


def layernorm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (x.data - mu) / s
    _require_finite(y, "layernorm output")

    def backward(g: np.ndarray):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gym) / s,)

    return _make(y, "layernorm", (x,), backward)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale the last axis to unit Euclidean norm."""
    r = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(r == 0.0):
        raise NonFiniteError("l2_normalize: zero-norm row")
    y = x.data / r

    def backward(g: np.ndarray):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / r,)

    return _make(y, "l2_normalize", (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.asarray(x.data.sum()), "sum_all", (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _make(np.asarray(x.data.mean()), "mean_all", (x,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    out = x.data.sum(axis=axis)

    def backward(g: np.ndarray):
        return (np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis),)

    return _make(out, "sum_axis", (x,), backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g: np.ndarray):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _make(out, "mean_axis", (x,), backward)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc

    def backward(g: np.ndarray):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities: (N, d) x (M, d) -> (N, M)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_similarity: {a.shape} vs {b.shape}")
    return matmul(l2_normalize(a), transpose(l2_normalize(b), (1, 0)))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(leaf) to every requires_grad leaf under `loss`.

    Returns {leaf: grad}; grads also accumulate into leaf.grad so repeated
    calls without zero_grad() sum their contributions.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    _require_finite(loss.data, "loss")
    if not loss.requires_grad:
        return {}

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    # Gradient buffers are stored "borrowed" until a second contribution
    # arrives; closures may hand the same array to several parents (add,
    # sub), so in-place accumulation must never touch a borrowed buffer.
    grads: dict[int, list] = {id(loss): [np.ones((), dtype=np.float64), True]}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        entry = grads.pop(id(node), None)
        if entry is None:
            continue
        g = entry[0]
        if node._backward is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                leaf_grads[node] = node.grad
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(
                    f"internal: grad shape {pg.shape} != parent shape {p.shape} in op '{node.op}'")
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = [pg, False]
            elif acc[1]:
                acc[0] += pg
            else:
                acc[0] = acc[0] + pg
                acc[1] = True

    for leaf, g in leaf_grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("NaN/Inf gradient reached a leaf during backward")
    return leaf_grads


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
