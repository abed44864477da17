"""Dense float64 tensors with reverse-mode differentiation.

A Tensor wraps a numpy float64 array plus the bookkeeping needed to replay
the recorded operations backward: parent references and a gradient rule per
op. Gradients accumulate additively into ``.grad`` (plain ndarrays) when
``backward()`` walks the graph in reverse topological order.

Every forward op checks its output for NaN/Inf and raises NumericError
instead of propagating garbage. Ops broadcast like numpy; gradients are
summed back down to each operand's shape.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    # fast accept: the sum of squares is finite only when every element is,
    # and since squares are non-negative no inf-inf cancellation can hide a
    # bad one; the BLAS dot also never trips numpy's FP warnings on the
    # failure path, squares of huge finite values can overflow, so a
    # non-finite result falls through to the exact elementwise check
    v = data.ravel()
    if math.isfinite(float(np.dot(v, v))):
        return
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in output of '{op}'")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """float64 array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        # Iterative topological sort; recursion would overflow on long tapes.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operator sugar -------------------------------------------------

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
        if isinstance(other, Tensor) or isinstance(other, np.ndarray):
            raise TypeError("tensor division only supports python scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward_fn = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# -- elementwise and linear algebra --------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, "mul", (a, b), backward)


def power(a, p) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(a.data**p, "pow", (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with stacked-batch broadcasting; operands must be >= 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))

    return _make(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(np.maximum(a.data, 0.0), "relu", (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow becomes inf, caught by the finite check
        out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, "exp", (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, "log", (a,), backward)


# -- reductions and shape ops ---------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(np.asarray(out_data, dtype=np.float64), "sum", (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old_shape = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return _make(a.data.reshape(shape), "reshape", (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.swapaxes(ax1, ax2))

    return _make(np.ascontiguousarray(a.data.swapaxes(ax1, ax2)), "swapaxes", (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, "concat", tuple(tensors), backward)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(np.ascontiguousarray(a.data[idx]), "slice", (a,), backward)


def gather(table, ids) -> Tensor:
    """Row lookup: table (V, E), ids int array of any shape -> (*ids.shape, E)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.shape[0]):
        raise IndexError("gather ids out of range")

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            table._accumulate(acc)

    return _make(table.data[ids], "gather", (table,), backward)


# -- softmax and normalization ---------------------------------------------


def masked_softmax(logits, mask=None, allow_empty_rows: bool = False) -> Tensor:
    """Softmax over the last axis, restricted to entries where mask is True.

    Masked entries get probability exactly 0; they are excluded from the
    normalizing sum rather than given a large negative logit. Computed with
    max-subtraction. Rows with no permitted entry raise NumericError unless
    allow_empty_rows, in which case they come out all-zero.
    """
    a = as_tensor(logits)
    if mask is None:
        bmask = np.ones(a.shape, dtype=bool)
    else:
        bmask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    row_has = bmask.any(axis=-1)
    if not row_has.all() and not allow_empty_rows:
        raise NumericError("softmax over fully masked input")

    with np.errstate(invalid="ignore"):
        shifted = np.where(bmask, a.data, -np.inf)
        mx = shifted.max(axis=-1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        z = np.exp(shifted - mx)  # masked entries: exp(-inf) == 0 exactly
    denom = z.sum(axis=-1, keepdims=True)
    probs = z / np.where(denom > 0.0, denom, 1.0)

    def backward(g):
        if a.requires_grad:
            inner = (probs * g).sum(axis=-1, keepdims=True)
            a._accumulate(probs * (g - inner))

    return _make(probs, "masked_softmax", (a,), backward)


def softmax(logits, mask=None) -> Tensor:
    """Probability vector over the last axis; masked entries exactly 0."""
    return masked_softmax(logits, mask=mask, allow_empty_rows=False)


def layer_norm_core(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0, population variance 1 (no affine)."""
    a = as_tensor(x)
    n = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv

    def backward(g):
        if not a.requires_grad:
            return
        gbar = g.mean(axis=-1, keepdims=True)
        gx = (g * xc).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gbar - xc * inv * inv * gx))

    return _make(out_data, "layer_norm", (a,), backward)


# -- verification oracle ----------------------------------------------------


def gradient_check(fn, tensors, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    fn re-evaluates the forward pass from the tensors' current .data and
    returns a scalar Tensor. Relative error uses max(|a|, |b|, 1e-8) as the
    denominator, coordinate-wise over every tensor in `tensors`.
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError("gradient_check needs a scalar function")
    if not math.isfinite(float(out.data)):
        raise NumericError("gradient_check: function value is not finite")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    for t, an in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = float(fn().data)
            flat[i] = orig - eps
            with no_grad():
                fm = float(fn().data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("gradient_check: non-finite probe value")
            num = (fp - fm) / (2.0 * eps)
            rel = abs(an_flat[i] - num) / max(abs(an_flat[i]), abs(num), 1e-8)
            if rel > worst:
                worst = rel
    return worst
