"""Small n-dimensional array type with a reverse-mode gradient tape.

Everything is backed by numpy. Values are float32 by default; ``precision``
switches the working dtype (gradient checks run in float64 so that central
differences are not swamped by rounding).
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.float32


class NumericsError(ValueError):
    """Base class for errors raised by array operations."""


class ShapeError(NumericsError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class IndexRangeError(NumericsError):
    def __init__(self, op: str, index: int, bound: int):
        self.op, self.index, self.bound = op, index, bound
        super().__init__(f"{op}: index {index} out of range [0, {bound})")


class TapeError(RuntimeError):
    pass


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


class Tensor:
    """Array plus optional participation in the gradient tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return mul(self, -1.0)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return permute(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    t = Tensor(out)
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    if np.any(b.data == 0):
        raise NumericsError("div: zero divisor")
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericsError("log: non-positive input")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def silu(a) -> Tensor:
    """x * sigmoid(x), composed from primitives."""
    a = as_tensor(a)
    return div(a, add(exp(mul(a, -1.0)), 1.0))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading dimensions (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(out, (a, b), back)


def permute(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return permute(a, axes)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(a, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into pieces of the given sizes."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError("split", a.shape, tuple(sizes))
    outs = []
    start = 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + n)
        idx = tuple(idx)

        def back(g, idx=idx):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[idx] = g
            return (full,)
        outs.append(_make(a.data[idx], (a,), back))
        start += n
    return outs


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    # accumulate in float64, store in the working dtype
    out = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(_DTYPE)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)
    return _make(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    out = (a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64) / n).astype(_DTYPE)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, a.shape) / n).astype(a.data.dtype),)
    return _make(out, (a,), back)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _make(out, (a,), back)


def rms_norm(a, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) over the last axis (no mean subtraction)."""
    a = as_tensor(a)
    x = a.data
    inv = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    out = x * inv
    n = x.shape[-1]

    def back(g):
        dot = (g * x).sum(axis=-1, keepdims=True)
        return (inv * g - (inv ** 3) * x * dot / n,)
    return _make(out, (a,), back)


def embedding(table, ids) -> Tensor:
    """Gather rows of ``table`` by integer ``ids`` (any shape)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, ids.shape)
    bad = (ids < 0) | (ids >= table.shape[0])
    if bad.any():
        raise IndexRangeError("embedding", int(ids[bad].flat[0]), table.shape[0])

    def back(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)
    return _make(table.data[ids], (table,), back)


# ---------------------------------------------------------------- tape

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse sweep from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` get their ``.grad`` accumulated and
    are returned in the map. The tape is released afterwards; calling this
    twice on the same graph raises ``TapeError``.
    """
    if loss.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    if loss._consumed:
        raise TapeError("backward already ran on this graph; rebuild it with a new forward pass")
    grads = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    leaves: dict[int, Tensor] = {}
    order = _topo(loss)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad and g is not None:
                node.grad = g if node.grad is None else node.grad + g
                leaves[id(node)] = node
            elif node.requires_grad:
                leaves[id(node)] = node
            continue
        if g is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            pg = pg.astype(p.data.dtype, copy=False)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for node in order:
        if node._backward is not None:
            node._consumed = True
            node._backward = None
            node._parents = ()
    out = {}
    for leaf in leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape, dtype=leaf.data.dtype)
        out[leaf] = Tensor(leaf.grad)
    return out


def grad(f: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """Value and gradient of scalar ``f`` at ``inputs`` (fresh leaves each call)."""
    leaves = [Tensor(np.array(x, dtype=_DTYPE), requires_grad=True) for x in inputs]
    out = f(*leaves)
    backward(out)
    return float(out.data), [leaf.grad for leaf in leaves]


def fd_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-3,
             dtype=np.float64, order: int = 2, coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps Tensors to a scalar Tensor. The comparison is evaluated in
    ``dtype`` (float64 by default). ``order`` picks the 2-point (default) or
    4-point central stencil; ``coords`` checks that many seeded random
    coordinates per input instead of all of them.
    """
    if not 0 < eps <= 1e-1:
        raise ValueError(f"eps must lie in (0, 0.1], got {eps}")
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    stencil = [(1, 0.5), (-1, -0.5)] if order == 2 else [(2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12)]
    pick = np.random.default_rng(seed)
    with precision(dtype):
        xs = [np.array(x, dtype=dtype) for x in inputs]

        def value(arrays):
            return float(f(*[Tensor(a) for a in arrays]).data)

        v1, v2 = value(xs), value(xs)
        if v1 != v2:
            raise NumericsError("fd_check: function is not deterministic")
        _, analytic = grad(f, xs)
        worst = 0.0
        for k, x in enumerate(xs):
            flat = x.reshape(-1)
            ga = analytic[k].reshape(-1)
            idx = range(flat.size)
            if coords is not None and coords < flat.size:
                idx = np.sort(pick.choice(flat.size, coords, replace=False))
            for i in idx:
                old = flat[i]
                num = 0.0
                for step, weight in stencil:
                    flat[i] = old + step * eps
                    num += weight * value(xs)
                flat[i] = old
                num /= eps
                worst = max(worst, abs(ga[i] - num) / (abs(num) + 1e-8))
    return worst


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
               lr: float = 1e-4, weight_decay: float = 0.01, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    """In-place AdamW update with decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.step_count += 1
    n = state.step_count
    c1 = 1.0 - beta1 ** n
    c2 = 1.0 - beta2 ** n
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"adamw_step[{name}]", p.shape, g.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        upd = (m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p.data
        p.data = (p.data - lr * upd).astype(p.data.dtype)
    return state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so the global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = (grads[k] * s).astype(grads[k].dtype)
    return total


# ---------------------------------------------------------------- serialization

def save_arrays(path_prefix: str | Path, arrays: dict[str, np.ndarray]) -> tuple[Path, Path]:
    """Write ``<prefix>.manifest`` (name, shape, byte offset) and ``<prefix>.bin``.

    The blob holds little-endian float32 values back to back.
    """
    prefix = Path(path_prefix)
    lines = []
    offset = 0
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype="<f4")  # tobytes() is C order; keeps 0-d shapes
            shape = "x".join(str(s) for s in a.shape) or "scalar"
            lines.append(f"{name}\t{shape}\t{offset}")
            fh.write(a.tobytes())
            offset += a.nbytes
    prefix.with_suffix(".manifest").write_text("\n".join(lines) + "\n")
    return prefix.with_suffix(".manifest"), prefix.with_suffix(".bin")


def load_arrays(path_prefix: str | Path) -> dict[str, np.ndarray]:
    prefix = Path(path_prefix)
    blob = prefix.with_suffix(".bin").read_bytes()
    out = {}
    for line in prefix.with_suffix(".manifest").read_text().splitlines():
        if not line.strip():
            continue
        try:
            name, shape_s, off_s = line.split("\t")
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split("x"))
            off = int(off_s)
        except ValueError:
            raise NumericsError(f"corrupt manifest line: {line!r}") from None
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(blob):
            raise NumericsError(f"blob too short for {name}")
        out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
    return out


def parameters_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}

