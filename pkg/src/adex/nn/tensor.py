"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray and records the primitive operation that
produced it (parent references plus a vector-Jacobian closure). ``backward``
topologically sorts the subgraph reachable from a scalar output and
accumulates gradients into the leaf tensors marked ``requires_grad``.

The module-level functions (``exp``, ``log``, ``logsumexp``, ...) dispatch on
their argument type: ndarrays and scalars go straight to numpy/scipy, Tensors
are traced. This lets model formulas be written once and used both for traced
training objectives and for fast untraced evaluation.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

__all__ = [
    "logaddexp",
    "no_grad",
    "Tensor",
    "GraphError",
    "ShapeError",
    "astensor",
    "is_tensor",
    "backward",
    "toposort",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "log1p",
    "expm1",
    "sqrt",
    "relu",
    "softplus",
    "sigmoid",
    "clip",
    "normal_cdf",
    "log1mexp",
    "tsum",
    "tmean",
    "logsumexp",
    "concat",
    "stack",
    "reshape",
    "permute_along_axis",
    "repeat_rows",
    "where_mask",
]

LOG2 = float(np.log(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class GraphError(ValueError):
    """Contract violation in graph construction or backward."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager: ops inside return plain arrays, recording nothing."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _tracing(*xs) -> bool:
    return _GRAD_ENABLED[0] and any(isinstance(x, Tensor) for x in xs)


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def _needs(x) -> bool:
    return isinstance(x, Tensor) and x._needs


def _like(out, ref):
    """Cast ``out`` to the dtype of ``ref`` (scipy ufuncs promote to f64)."""
    dt = ref.dtype if isinstance(ref, np.ndarray) else None
    if dt is not None and out.dtype != dt:
        return out.astype(dt)
    return out


class Tensor:
    """A node in the computation graph holding an ndarray value.

    Leaves created with ``requires_grad=True`` receive gradients in ``.grad``
    after ``backward``. Interior nodes are produced by the ops below; their
    parents always precede them in topological order (the graph is acyclic by
    construction since nodes are immutable once created).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_needs")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp
        self._needs = self.requires_grad or any(_needs(p) for p in _parents)

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant copy: same values, no graph history."""
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        tag = self.name or ("leaf" if self.requires_grad else "node")
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # -- operator sugar ----------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, expo):
        return power(self, expo)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def astensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def toposort(out: Tensor) -> list[Tensor]:
    """Reachable subgraph in topological order (parents before children)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
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
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``out`` must be scalar. Gradients add onto existing ``.grad`` so callers
    batching manually must reset leaves between steps.
    """
    if not isinstance(out, Tensor):
        raise GraphError("backward expects a Tensor output")
    if out.data.size != 1:
        raise GraphError(f"backward requires a scalar output, got shape {out.data.shape}")
    order = toposort(out)
    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not _needs(parent):
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, vjp_a, vjp_b):
    ad, bd = _data(a), _data(b)
    out = fwd(ad, bd)
    if not _tracing(a, b):
        return out

    def vjp(g):
        ga = _unbroadcast(vjp_a(g, ad, bd, out), np.shape(ad)) if _needs(a) else None
        gb = _unbroadcast(vjp_b(g, ad, bd, out), np.shape(bd)) if _needs(b) else None
        return (ga, gb)

    parents = tuple(p for p in (a, b) if isinstance(p, Tensor))
    if len(parents) == 2:
        return Tensor(out, _parents=(a, b), _vjp=vjp)
    # single-tensor operand: route the matching slot
    if isinstance(a, Tensor):
        return Tensor(out, _parents=(a,), _vjp=lambda g: (vjp(g)[0],))
    return Tensor(out, _parents=(b,), _vjp=lambda g: (vjp(g)[1],))


def _unary(x, fwd, vjp_fn):
    xd = _data(x)
    out = fwd(xd)
    if not _tracing(x):
        return out
    return Tensor(out, _parents=(x,), _vjp=lambda g: (vjp_fn(g, xd, out),))


# -- arithmetic -------------------------------------------------------------

def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y)


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, o: -g)


def power(x, expo):
    if isinstance(expo, Tensor):
        raise GraphError("power supports constant exponents only")
    e = float(expo)
    return _unary(x, lambda v: v ** e, lambda g, v, o: g * e * v ** (e - 1.0))


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if np.ndim(ad) != 2 or np.ndim(bd) != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {np.shape(ad)} @ {np.shape(bd)}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    if not _tracing(a, b):
        return out

    def vjp(g):
        ga = g @ bd.T if _needs(a) else None
        gb = ad.T @ g if _needs(b) else None
        return (ga, gb)

    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return Tensor(out, _parents=(a, b), _vjp=vjp)
    if isinstance(a, Tensor):
        return Tensor(out, _parents=(a,), _vjp=lambda g: (vjp(g)[0],))
    return Tensor(out, _parents=(b,), _vjp=lambda g: (vjp(g)[1],))


# -- elementwise ------------------------------------------------------------

def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v)


def log1p(x):
    return _unary(x, np.log1p, lambda g, v, o: g / (1.0 + v))


def expm1(x):
    return _unary(x, np.expm1, lambda g, v, o: g * (o + 1.0))


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, o: g / (2.0 * o))


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, o: g * (v > 0))


def softplus(x):
    # log(1 + e^x) as log1p(e^-|x|) + max(x, 0): stable and ufunc-cheap
    return _unary(x, lambda v: np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0),
                  lambda g, v, o: g * _like(_sp.expit(v), v))


def sigmoid(x):
    return _unary(x, lambda v: _like(_sp.expit(v), np.asarray(v)),
                  lambda g, v, o: g * o * (1.0 - o))


def clip(x, lo, hi):
    return _unary(x, lambda v: np.clip(v, lo, hi),
                  lambda g, v, o: g * ((v >= lo) & (v <= hi)))


def normal_cdf(x):
    """Standard normal CDF Phi(x); gradient is the standard normal pdf."""
    xd = _data(x)
    out = _like(_sp.ndtr(xd), np.asarray(xd))
    if not _tracing(x):
        return out
    return Tensor(out, _parents=(x,),
                  _vjp=lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * np.square(xd)),))


def log1mexp(x):
    """log(1 - exp(-x)) for x > 0, switching forms at log 2 for stability.

    Returns -inf at x = 0. The gradient 1/expm1(x) is only used on the traced
    path, where callers guarantee x > 0.
    """

    def fwd(v):
        v = np.asarray(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            small = np.log(-np.expm1(-v))
            large = np.log1p(-np.exp(-v))
        return np.where(v <= LOG2, small, large)

    def vjp(g, v, o):
        with np.errstate(over="ignore"):
            denom = np.expm1(v)
        out = np.zeros_like(g)
        np.divide(g, denom, out=out, where=denom != 0)
        return out

    return _unary(x, fwd, vjp)


def logaddexp(a, b):
    """Pairwise log-sum-exp; tolerates -inf operands."""

    def vjp_side(g, own, out):
        with np.errstate(invalid="ignore"):
            w = np.exp(own - out)
        return g * np.where(np.isneginf(out), 0.0, w)

    return _binary(a, b, np.logaddexp,
                   lambda g, x, y, o: vjp_side(g, x, o),
                   lambda g, x, y, o: vjp_side(g, y, o))


def where_mask(mask, x, fill):
    """Select ``x`` where ``mask`` else the constant ``fill`` (no grad there)."""
    m = np.asarray(_data(mask), dtype=bool)
    return _unary(x, lambda v: np.where(m, v, fill),
                  lambda g, v, o: _unbroadcast(g * m, np.shape(v)))


# -- reductions -------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    xd = _data(x)
    out = np.sum(xd, axis=axis, keepdims=keepdims)
    if not _tracing(x):
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, xd.shape).copy(),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def tmean(x, axis=None, keepdims=False):
    xd = _data(x)
    n = xd.size if axis is None else xd.shape[axis]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(n))


def logsumexp(x, axis=None, keepdims=False):
    """log(sum(exp(x))): overflow-safe, tolerates -inf entries.

    An all-(-inf) reduction yields -inf. Empty inputs are a contract error.
    """
    xd = np.asarray(_data(x))
    if xd.size == 0:
        raise GraphError("logsumexp of an empty collection")
    with np.errstate(invalid="ignore"):
        out = _like(_sp.logsumexp(xd, axis=axis, keepdims=keepdims), xd)
    if not _tracing(x):
        return out

    def vjp(g):
        ok = out if keepdims or axis is None else np.expand_dims(out, axis)
        gk = g if keepdims or axis is None else np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(xd - ok)
        w = np.where(np.isneginf(ok), 0.0, w)
        return (np.broadcast_to(gk, xd.shape) * w,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


# -- shape ops ----------------------------------------------------------------

def reshape(x, shape):
    xd = _data(x)
    out = np.reshape(xd, shape)
    if not _tracing(x):
        return out
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g.reshape(xd.shape),))


def take(x, idx):
    """Basic (non-repeating) indexing with int/slice/ellipsis tuples."""
    xd = _data(x)
    out = xd[idx]
    if not _tracing(x):
        return out

    def vjp(g):
        gp = np.zeros_like(xd)
        gp[idx] = g
        return (gp,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def concat(parts, axis=0):
    parts = tuple(parts)
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    if not _tracing(*parts):
        return out
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(parts), _vjp=vjp)


def stack(parts, axis=0):
    parts = tuple(parts)
    datas = [_data(p) for p in parts]
    out = np.stack(datas, axis=axis)
    if not _tracing(*parts):
        return out

    def vjp(g):
        gm = np.moveaxis(g, axis, 0)
        return tuple(gm[i] for i in range(len(parts)))

    return Tensor(out, _parents=tuple(parts), _vjp=vjp)


def permute_along_axis(x, order, axis):
    """Gather with a permutation index (per-slice reordering along ``axis``).

    ``order`` must be a permutation on that axis for every slice; the VJP
    scatters by the inverse permutation.
    """
    xd = _data(x)
    idx = np.asarray(order)
    if idx.ndim != xd.ndim:
        idx = np.expand_dims(idx, -1)
    idxb = np.broadcast_to(idx, xd.shape)
    out = np.take_along_axis(xd, idxb, axis=axis)
    if not _tracing(x):
        return out
    inv = np.argsort(idx, axis=axis)
    invb = np.broadcast_to(inv, xd.shape)

    def vjp(g):
        return (np.take_along_axis(g, invb, axis=axis),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def repeat_rows(x, k):
    """Repeat each leading-axis row k times: [r0,r0,..,r1,r1,..]."""
    xd = _data(x)
    out = np.repeat(xd, k, axis=0)
    if not _tracing(x):
        return out

    def vjp(g):
        return (g.reshape((xd.shape[0], k) + xd.shape[1:]).sum(axis=1),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def repeat_cols(x, k):
    """Repeat each second-axis column k times: [c0,c0,..,c1,c1,..]."""
    xd = _data(x)
    out = np.repeat(xd, k, axis=1)
    if not _tracing(x):
        return out

    def vjp(g):
        return (g.reshape(xd.shape[:1] + (xd.shape[1], k) + xd.shape[2:]).sum(axis=2),)

    return Tensor(out, _parents=(x,), _vjp=vjp)
