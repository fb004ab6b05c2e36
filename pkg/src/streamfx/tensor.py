"""Dense tensors with reverse-mode differentiation on a flat numpy store.

Single precision is the project-wide default; tests that rely on finite
differences build their parameters in float64. Graphs are recorded
implicitly through parent links and replayed in reverse topological order,
one training step per graph. No broadcasting beyond scalar-tensor and
bias-add; use ``expand``/``reshape`` to line shapes up explicitly.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "forward_op",
    "topo_order",
    "finite_difference_gradient",
    "add", "mul", "scale", "sub", "matmul", "reshape", "transpose",
    "concat", "slice_axis", "softmax", "layer_norm", "gelu",
    "sum_all", "mean_all", "masked_fill", "gather_rows", "expand",
    "attention",
]

MASK_FILL = -1e9  # large-negative sentinel for disallowed attention scores

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; names both shapes."""


# per-thread so concurrent inference sessions cannot clobber each other's mode
_GRAD_MODE = threading.local()


@contextmanager
def no_grad():
    """Disable graph recording (inference / data preparation)."""
    prev = grad_enabled()
    _GRAD_MODE.enabled = False
    try:
        yield
    finally:
        _GRAD_MODE.enabled = prev


def grad_enabled() -> bool:
    return getattr(_GRAD_MODE, "enabled", True)


class Tensor:
    """Immutable dense tensor; records its producing op when grad is on.

    ``tainted`` is a provenance flag: it marks values derived from
    ground-truth targets and is propagated through every op, so rollout
    code can assert that supervision data never leaks into model inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "tainted",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, tainted: bool = False):
        # plain python data defaults to float32; only explicit float64
        # ndarrays keep double precision (finite-difference test mode)
        if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = ""
        self.tainted = bool(tainted)
        self._parents = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, op: str, parents, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        out.tainted = any(p.tainted for p in parents)
        record = grad_enabled() and any(p.requires_grad for p in parents)
        if record:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # ---- basic protocol ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view that blocks gradient flow; taint is provenance and sticks."""
        return Tensor(self.data, requires_grad=False, tainted=self.tainted)

    def mark_tainted(self) -> "Tensor":
        self.tainted = True
        return self

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self.op or 'leaf'!r}, grad={self.requires_grad})"

    # ---- autodiff ----------------------------------------------------------

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar; accumulates into ``.grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = topo_order(self)
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else scale_add(self, float(other))

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def topo_order(root: Tensor):
    """Operation records reachable from ``root``, inputs before outputs."""
    order, seen, stack = [], set(), [(root, False)]
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


# ---- op implementations -----------------------------------------------------


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a trailing bias of shape ``a.shape[-1:]``."""
    a, b = as_tensor(a), as_tensor(b)
    bias = b.data.ndim == 1 and a.data.ndim > 1 and a.shape[-1:] == b.shape
    if not bias:
        _check_same_shape("add", a, b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g)

    return Tensor._from_op(out, "add", (a, b), backward)


def scale_add(a: Tensor, c: float) -> Tensor:
    out = a.data + a.data.dtype.type(c)

    def backward(g):
        a._accum(g)

    return Tensor._from_op(out, "scale_add", (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return Tensor._from_op(out, "mul", (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * a.data.dtype.type(c)

    def backward(g):
        a._accum(g * c)

    return Tensor._from_op(out, "scale", (a,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics (last two axes contract)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ _swap_last(b.data)
            a._accum(_sum_to(ga, a.shape))
        if b.requires_grad:
            gb = _swap_last(a.data) @ g
            b._accum(_sum_to(gb, b.shape))

    return Tensor._from_op(out, "matmul", (a, b), backward)


def _swap_last(x: np.ndarray) -> np.ndarray:
    if x.ndim < 2:
        return x
    return np.swapaxes(x, -1, -2)


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce broadcast batch axes of a matmul gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if gs != s)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    old = a.shape

    def backward(g):
        a._accum(g.reshape(old))

    return Tensor._from_op(out, "reshape", (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accum(np.transpose(g, inv))

    return Tensor._from_op(out, "transpose", (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor._from_op(out, "concat", tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accum(full)

    return Tensor._from_op(out, "slice", (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    x = a.data
    p = np.exp(x - x.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        a._accum(p * (g - inner))

    return Tensor._from_op(p, "softmax", (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},), got {gamma.shape}/{beta.shape}")
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            a._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor._from_op(out, "layer_norm", (a, gamma, beta), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth, finite-difference friendly)."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        a._accum(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return Tensor._from_op(out, "gelu", (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum(dtype=a.dtype).reshape(())

    def backward(g):
        a._accum(np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    return Tensor._from_op(out, "sum", (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def masked_fill(a: Tensor, mask: np.ndarray, value: float = MASK_FILL) -> Tensor:
    """Keep entries where ``mask`` is true, else replace with ``value``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_fill: mask shape {mask.shape} != data shape {a.shape}")
    out = np.where(mask, a.data, a.data.dtype.type(value))

    def backward(g):
        a._accum(np.where(mask, g, 0.0))

    return Tensor._from_op(out, "masked_fill", (a,), backward)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Row lookup (embedding); backward scatter-adds into the table."""
    idx = np.asarray(idx, dtype=np.int64)
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accum(full)

    return Tensor._from_op(out, "gather_rows", (table,), backward)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes up to ``shape`` (the one sanctioned broadcast)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != a.data.ndim or any(
            s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeError(f"expand: cannot expand {a.shape} to {shape}")
    out = np.broadcast_to(a.data, shape).copy()
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)

    def backward(g):
        a._accum(g.sum(axis=axes, keepdims=True) if axes else g)

    return Tensor._from_op(out, "expand", (a,), backward)


# ---- fused attention ---------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over ``[batch, heads, L, dh]`` stacks.

    Memory-lean: probabilities are recomputed in the backward pass instead
    of being saved, so no L x L activation outlives the forward call.
    ``mask`` is a boolean ``[Lq, Lk]`` allowed-matrix shared across batch and
    heads; ``None`` means full attention.
    """
    for name, t in (("q", q), ("k", k), ("v", v)):
        if t.data.ndim != 4:
            raise ShapeError(f"attention: {name} must be [batch, heads, L, dh], got {t.shape}")
    B, h, Lq, dh = q.shape
    if k.shape[:2] != (B, h) or v.shape != k.shape or k.shape[3] != dh:
        raise ShapeError(f"attention: q {q.shape} vs k {k.shape} vs v {v.shape}")
    Lk = k.shape[2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (Lq, Lk):
            raise ShapeError(f"attention: mask shape {mask.shape} != ({Lq}, {Lk})")
    inv_sqrt = 1.0 / math.sqrt(dh)
    fill = q.data.dtype.type(MASK_FILL)

    def probs(b):
        s = (q.data[b] @ _swap_last(k.data[b])) * inv_sqrt
        if mask is not None:
            s = np.where(mask, s, fill)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        return s

    out = np.empty((B, h, Lq, dh), dtype=q.data.dtype)
    for b in range(B):
        out[b] = probs(b) @ v.data[b]

    def backward(g):
        gq = np.empty_like(q.data) if q.requires_grad else None
        gk = np.empty_like(k.data) if k.requires_grad else None
        gv = np.empty_like(v.data) if v.requires_grad else None
        for b in range(B):
            p = probs(b)
            if gv is not None:
                gv[b] = _swap_last(p) @ g[b]
            dp = g[b] @ _swap_last(v.data[b])
            ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
            if mask is not None:
                ds = np.where(mask, ds, 0.0)
            if gq is not None:
                gq[b] = (ds @ k.data[b]) * inv_sqrt
            if gk is not None:
                gk[b] = (_swap_last(ds) @ q.data[b]) * inv_sqrt
        if gq is not None:
            q._accum(gq)
        if gk is not None:
            k._accum(gk)
        if gv is not None:
            v._accum(gv)

    return Tensor._from_op(out, "attention", (q, k, v), backward)


# ---- generic dispatch + verification oracle ----------------------------------

_FORWARD_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "slice": slice_axis,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "sum": sum_all,
    "mean": mean_all,
    "masked_fill": masked_fill,
    "gather_rows": gather_rows,
    "expand": expand,
    "attention": attention,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by kind name (test surface over the op table)."""
    try:
        fn = _FORWARD_OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(_FORWARD_OPS)}") from None
    return fn(*inputs, **kwargs)


def op_kinds():
    return sorted(_FORWARD_OPS)


def finite_difference_gradient(f, point: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``point``.

    Independent of the autodiff path; used as the verification oracle.
    """
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"finite_difference_gradient: non-finite f at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
