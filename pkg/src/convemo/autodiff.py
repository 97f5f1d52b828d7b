"""Reverse-mode automatic differentiation over dense float64 arrays.

Values are stored in numpy arrays; gradients are obtained by recording every
operation on a :class:`Tape` and replaying the record in reverse. Inside a
``with Tape() as tape:`` block, any op whose inputs require gradients is
recorded; outside of a tape, the same ops are plain numpy computations and
are safe to call from multiple threads (the active-tape stack is
thread-local). Parameters are leaf tensors created with ``is_param=True``;
after ``tape.backward(loss)`` each reachable parameter holds its accumulated
gradient in ``.grad`` and untouched parameters read back as zeros via
``grad_array()``.

All ops validate their output for NaN/Inf and raise :class:`NonFiniteError`
naming the offending op, so divergence is caught at the op boundary.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "ShapeMismatchError",
    "NonFiniteError",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "concat_rows",
    "slice2d",
    "softmax_rows",
    "tanh",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "clamp_min",
    "total_sum",
    "mean",
    "row_sum",
    "row_mean",
    "sum_sq",
    "cosine_sim",
    "rowwise_cosine",
    "zero_grads",
    "finite_diff_check",
    "extended_precision",
    "COSINE_EPS",
]

# Global guard used by every cosine-similarity computation.
COSINE_EPS = 1e-8


class AutodiffError(Exception):
    """Base class for tensor and tape failures."""


class ShapeMismatchError(AutodiffError):
    """Operands with incompatible shapes; names both shapes and the op."""

    def __init__(self, op, shape_a, shape_b=None, detail=""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b) if shape_b is not None else None
        msg = f"{op}: incompatible shape {self.shape_a}"
        if self.shape_b is not None:
            msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(AutodiffError):
    """NaN or Inf detected at an op boundary."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: non-finite values encountered")


_LOCAL = threading.local()


def _tape_stack():
    try:
        return _LOCAL.tapes
    except AttributeError:
        _LOCAL.tapes = []
        return _LOCAL.tapes


def active_tape():
    """The innermost open Tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def _active_dtype():
    return getattr(_LOCAL, "dtype", np.float64)


@contextmanager
def extended_precision():
    """Evaluate ops in extended precision on this thread.

    Used by the finite-difference oracle's numeric side: the quantization
    noise of a float64 loss value (~1 ulp) divided by 2h would swamp small
    gradients, so perturbed forward passes run in long double. Values are
    still cast from the float64 parameter storage, so the checked function
    is the same mathematical map evaluated more precisely.
    """
    prev = _active_dtype()
    _LOCAL.dtype = np.longdouble
    try:
        yield
    finally:
        _LOCAL.dtype = prev


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "grad", "is_param", "name", "_parents", "_requires")

    def __init__(self, data, *, is_param=False, name=None):
        arr = np.asarray(data, dtype=_active_dtype())
        if arr.size and not np.isfinite(arr).all():
            raise NonFiniteError("tensor")
        self.data = arr
        self.grad = None
        self.is_param = bool(is_param)
        self.name = name
        self._parents = ()
        self._requires = bool(is_param)

    @classmethod
    def _wrap(cls, arr):
        # Internal fast path: arr already validated float64.
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.is_param = False
        t.name = None
        t._parents = ()
        t._requires = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatchError("item", self.shape, detail="expected a scalar")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def zero_grad(self):
        self.grad = None

    def grad_array(self):
        """Accumulated gradient; zeros when this leaf was never reached."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    # Operator sugar; all routed through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, param={self.is_param}{tag})"


class Tape:
    """Ordered record of tracked ops; creation order is topological.

    ``backward(root)`` sweeps the record in reverse, accumulating exactly one
    gradient per reachable leaf. Intermediate grads are cleared at the start
    of each sweep; parameter grads are left to accumulate so that the
    backward of a sum of losses equals the sum of backwards.
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, root):
        if not isinstance(root, Tensor) or root.data.size != 1:
            shape = getattr(root, "shape", ())
            raise ShapeMismatchError("backward", shape, detail="root must be a scalar tensor")
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            g = node.grad
            if g is None or not node._parents:
                continue
            for parent, grad_fn in node._parents:
                contrib = grad_fn(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


def constant(value, name=None):
    """Untracked tensor; gradients never flow into it."""
    return Tensor(value, name=name)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, out_data, parents):
    out_data = np.asarray(out_data, dtype=_active_dtype())
    if out_data.size and not np.isfinite(out_data).all():
        raise NonFiniteError(op)
    out = Tensor._wrap(out_data)
    tape = active_tape()
    if tape is not None:
        live = tuple((p, fn) for p, fn in parents if p._requires)
        if live:
            out._parents = live
            out._requires = True
            tape._nodes.append(out)
    return out


def _unbroadcast(g, shape):
    """Sum g over axes that were broadcast relative to shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(ax for ax, s in enumerate(shape) if s == 1 and g.shape[ax] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _lift(a), _lift(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None
    sa, sb = a.data.shape, b.data.shape
    return _record("add", out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    a, b = _lift(a), _lift(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeMismatchError("sub", a.shape, b.shape) from None
    sa, sb = a.data.shape, b.data.shape
    return _record("sub", out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(-g, sb))])


def mul(a, b):
    a, b = _lift(a), _lift(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None
    da, db = a.data, b.data
    return _record(
        "mul",
        out,
        [(a, lambda g: _unbroadcast(g * db, da.shape)), (b, lambda g: _unbroadcast(g * da, db.shape))],
    )


def div(a, b):
    a, b = _lift(a), _lift(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeMismatchError("div", a.shape, b.shape) from None
    da, db = a.data, b.data
    return _record(
        "div",
        out,
        [
            (a, lambda g: _unbroadcast(g / db, da.shape)),
            (b, lambda g: _unbroadcast(-g * da / (db * db), db.shape)),
        ],
    )


def scale(a, c):
    a = _lift(a)
    c = float(c)
    return _record("scale", a.data * c, [(a, lambda g: g * c)])


def add_scalar(a, c):
    a = _lift(a)
    return _record("add_scalar", a.data + float(c), [(a, lambda g: g)])


def neg(a):
    return scale(a, -1.0)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape, detail="expected two matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    da, db = a.data, b.data
    return _record("matmul", da @ db, [(a, lambda g: g @ db.T), (b, lambda g: da.T @ g)])


def transpose(a):
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeMismatchError("transpose", a.shape, detail="expected a matrix")
    return _record("transpose", a.data.T.copy(), [(a, lambda g: g.T)])


def reshape(a, shape):
    a = _lift(a)
    orig = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError("reshape", a.shape, detail=f"cannot reshape to {shape}") from None
    return _record("reshape", out.copy(), [(a, lambda g: g.reshape(orig))])


def concat(tensors):
    """Concatenate along the last axis."""
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeMismatchError("concat", (), detail="empty input list")
    try:
        out = np.concatenate([t.data for t in ts], axis=-1)
    except ValueError:
        raise ShapeMismatchError("concat", ts[0].shape, ts[-1].shape) from None
    parents = []
    offset = 0
    for t in ts:
        w = t.data.shape[-1]
        parents.append((t, lambda g, o=offset, w=w: g[..., o : o + w]))
        offset += w
    return _record("concat", out, parents)


def concat_rows(tensors):
    """Stack matrices along axis 0."""
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeMismatchError("concat_rows", (), detail="empty input list")
    try:
        out = np.concatenate([np.atleast_2d(t.data) for t in ts], axis=0)
    except ValueError:
        raise ShapeMismatchError("concat_rows", ts[0].shape, ts[-1].shape) from None
    parents = []
    offset = 0
    for t in ts:
        d2 = np.atleast_2d(t.data)
        h = d2.shape[0]
        shape = t.data.shape
        parents.append((t, lambda g, o=offset, h=h, s=shape: g[o : o + h].reshape(s)))
        offset += h
    return _record("concat_rows", out, parents)


def slice2d(a, row_start, row_stop, col_start, col_stop):
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeMismatchError("slice2d", a.shape, detail="expected a matrix")
    n, m = a.shape
    if not (0 <= row_start <= row_stop <= n and 0 <= col_start <= col_stop <= m):
        raise ShapeMismatchError(
            "slice2d", a.shape, detail=f"window [{row_start}:{row_stop}, {col_start}:{col_stop}] out of bounds"
        )
    out = a.data[row_start:row_stop, col_start:col_stop].copy()
    src_shape = a.data.shape

    def back(g):
        z = np.zeros(src_shape)
        z[row_start:row_stop, col_start:col_stop] = g
        return z

    return _record("slice2d", out, [(a, back)])


def softmax_rows(a):
    """Softmax along the last axis; strictly positive rows summing to 1."""
    a = _lift(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (g - dot) * s

    return _record("softmax_rows", s, [(a, back)])


def tanh(a):
    a = _lift(a)
    y = np.tanh(a.data)
    return _record("tanh", y, [(a, lambda g: g * (1.0 - y * y))])


def relu(a):
    a = _lift(a)
    d = a.data
    return _record("relu", np.maximum(d, 0.0), [(a, lambda g: g * (d > 0.0))])


def sigmoid(a):
    a = _lift(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", y, [(a, lambda g: g * y * (1.0 - y))])


def exp(a):
    a = _lift(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _record("exp", y, [(a, lambda g: g * y)])


def log(a):
    a = _lift(a)
    d = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(d)
    return _record("log", y, [(a, lambda g: g / d)])


def sqrt(a):
    """Elementwise square root; callers clamp away from 0 before use."""
    a = _lift(a)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(a.data)
    return _record("sqrt", y, [(a, lambda g: g * 0.5 / y)])


def absolute(a):
    a = _lift(a)
    d = a.data
    return _record("absolute", np.abs(d), [(a, lambda g: g * np.sign(d))])


def clamp_min(a, floor):
    a = _lift(a)
    floor = float(floor)
    d = a.data
    return _record("clamp_min", np.maximum(d, floor), [(a, lambda g: g * (d > floor))])


def total_sum(a):
    a = _lift(a)
    shape = a.data.shape
    out = np.asarray(a.data.sum())
    return _record("total_sum", out, [(a, lambda g: np.broadcast_to(g, shape))])


def mean(a):
    a = _lift(a)
    shape = a.data.shape
    n = a.data.size
    out = np.asarray(a.data.mean())
    return _record("mean", out, [(a, lambda g: np.broadcast_to(g / n, shape))])


def row_sum(a):
    """Sum along the last axis, keepdims."""
    a = _lift(a)
    shape = a.data.shape
    out = a.data.sum(axis=-1, keepdims=True)
    return _record("row_sum", out, [(a, lambda g: np.broadcast_to(g, shape))])


def row_mean(a):
    a = _lift(a)
    shape = a.data.shape
    w = shape[-1]
    out = a.data.mean(axis=-1, keepdims=True)
    return _record("row_mean", out, [(a, lambda g: np.broadcast_to(g / w, shape))])


def sum_sq(a):
    """Squared L2 norm over all elements."""
    a = _lift(a)
    d = a.data
    out = np.asarray(np.sum(d * d))
    return _record("sum_sq", out, [(a, lambda g: 2.0 * d * g)])


def cosine_sim(u, v, eps=COSINE_EPS):
    """Cosine similarity of two vectors with a zero-norm guard.

    Computes u.v / (max(|u|, eps) * max(|v|, eps)); the guard is applied to
    the squared norms before the square root so the gradient stays finite
    for zero vectors.
    """
    u, v = _lift(u), _lift(v)
    if u.size != v.size:
        raise ShapeMismatchError("cosine_sim", u.shape, v.shape)
    dot = total_sum(mul(u, v))
    nu = sqrt(clamp_min(sum_sq(u), eps * eps))
    nv = sqrt(clamp_min(sum_sq(v), eps * eps))
    return div(dot, mul(nu, nv))


def rowwise_cosine(a, b, eps=COSINE_EPS):
    """Per-row cosine similarity of two equal-shape matrices, as an (N, 1) column."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("rowwise_cosine", a.shape, b.shape)
    dots = row_sum(mul(a, b))
    na = sqrt(clamp_min(row_sum(mul(a, a)), eps * eps))
    nb = sqrt(clamp_min(row_sum(mul(b, b)), eps * eps))
    return div(dots, mul(na, nb))


def zero_grads(params):
    for p in params:
        p.zero_grad()


def finite_diff_check(loss_fn, params, h=1e-6, n_samples=200, seed=0):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` must be a deterministic, tape-free forward computation
    returning a scalar Tensor. The analytic pass runs once under a fresh
    Tape in float64; the numeric pass perturbs a seeded random subsample of
    at most ``n_samples`` scalar parameters in place by +-h (rounded to the
    nearest representable float64 points, dividing by the actual step) and
    re-evaluates the loss in extended precision outside any tape. Relative
    error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    total = sum(p.size for p in params)
    if total == 0:
        return 0.0

    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn()
    if loss.size != 1:
        raise ShapeMismatchError("finite_diff_check", loss.shape, detail="loss must be scalar")
    tape.backward(loss)
    analytic = [p.grad_array().copy() for p in params]
    zero_grads(params)

    rng = np.random.default_rng(seed)
    k = min(int(n_samples), total)
    flat_indices = rng.choice(total, size=k, replace=False)

    bounds = np.cumsum([p.size for p in params])
    worst = 0.0
    with extended_precision():
        for flat in sorted(int(i) for i in flat_indices):
            pi = int(np.searchsorted(bounds, flat, side="right"))
            local = flat - (bounds[pi - 1] if pi > 0 else 0)
            p = params[pi]
            orig = p.data.flat[local]
            p.data.flat[local] = orig + h
            x_plus = np.longdouble(p.data.flat[local])
            f_plus = np.longdouble(loss_fn().data.reshape(()))
            p.data.flat[local] = orig - h
            x_minus = np.longdouble(p.data.flat[local])
            f_minus = np.longdouble(loss_fn().data.reshape(()))
            p.data.flat[local] = orig
            numeric = float((f_plus - f_minus) / (x_plus - x_minus))
            a = analytic[pi].flat[local]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, float(err))
    return worst
