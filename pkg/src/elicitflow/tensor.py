"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` together with an optional gradient
buffer and a backward closure. Building an expression records a graph;
calling :meth:`Tensor.backward` on a scalar result walks that graph once in
reverse topological order, accumulating gradients into every reachable leaf
with ``requires_grad=True``.

Constants short-circuit: a node whose inputs all have ``requires_grad=False``
records no parents and no closure, so purely numeric pipelines pay no graph
overhead.

Broadcasting follows numpy rules; gradients flowing back through a broadcast
are summed over the expanded axes so shapes always match the leaf.
"""

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "apply_elementwise",
    "reduce",
    "matmul",
    "sort_with_gradient",
    "index_select",
    "concat",
    "reshape",
    "pairwise_distance",
    "softmax_expectation",
    "ELEMENTWISE_OPS",
    "REDUCE_OPS",
]


class ShapeError(ValueError):
    """Raised when operand shapes cannot combine or backward() is misused."""


class DomainError(ValueError):
    """Raised when an op receives a value outside its mathematical domain."""


def _domain_check(op, ok_mask, data):
    if not np.all(ok_mask):
        idx = int(np.argmin(ok_mask.ravel()))
        bad = data.ravel()[idx]
        raise DomainError(f"{op}: invalid value {bad!r} at flat index {idx}")


class Tensor:
    """Dense float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        parents = tuple(p for p in parents if p.requires_grad or p._parents)
        if parents:
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

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
        return float(self.data)

    def detach(self):
        """A constant view of this tensor's value, cut from the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return apply_elementwise("add", self, _coerce(other))

    def __radd__(self, other):
        return apply_elementwise("add", _coerce(other), self)

    def __sub__(self, other):
        return apply_elementwise("sub", self, _coerce(other))

    def __rsub__(self, other):
        return apply_elementwise("sub", _coerce(other), self)

    def __mul__(self, other):
        return apply_elementwise("mul", self, _coerce(other))

    def __rmul__(self, other):
        return apply_elementwise("mul", _coerce(other), self)

    def __truediv__(self, other):
        return apply_elementwise("div", self, _coerce(other))

    def __rtruediv__(self, other):
        return apply_elementwise("div", _coerce(other), self)

    def __neg__(self):
        return apply_elementwise("negate", self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    # -- backward pass ----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        Only defined for scalar outputs; repeated calls keep adding into the
        same buffers, so callers seed a fresh step with ``zero_grad``.
        """
        if self.data.ndim != 0:
            raise ShapeError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        if not (self.requires_grad or self._parents):
            return

        order = []
        seen = set()
        stack = [(self, False)]
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

        grads = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in node._backward(g):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _coerce(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _binary(op, a, b, fwd, dfa, dfb):
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        out = []
        if a.requires_grad or a._parents:
            out.append((a, _unbroadcast(dfa(g, a.data, b.data, data), a.shape)))
        if b.requires_grad or b._parents:
            out.append((b, _unbroadcast(dfb(g, a.data, b.data, data), b.shape)))
        return out

    return Tensor._from_op(data, (a, b), backward)


def _unary(op, a, fwd, dfa):
    data = fwd(a.data)

    def backward(g):
        return [(a, dfa(g, a.data, data))]

    return Tensor._from_op(data, (a,), backward)


def _op_add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def _op_sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def _op_mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def _op_div(a, b):
    _domain_check("div", b.data != 0.0, b.data)
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * o / y,
    )


def _op_exp(a):
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def _op_log(a):
    _domain_check("log", a.data > 0.0, a.data)
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def _op_sigmoid(a):
    return _unary("sigmoid", a, _sigmoid, lambda g, x, o: g * o * (1.0 - o))


def _op_relu(a):
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda g, x, o: g * (x > 0.0))


def _op_softplus(a):
    return _unary("softplus", a, _softplus, lambda g, x, o: g * _sigmoid(x))


def _op_atan(a):
    return _unary("atan", a, np.arctan, lambda g, x, o: g / (1.0 + x * x))


def _op_square(a):
    return _unary("square", a, np.square, lambda g, x, o: g * 2.0 * x)


def _op_sqrt(a):
    _domain_check("sqrt", a.data >= 0.0, a.data)

    def grad(g, x, o):
        safe = np.where(o > 0.0, o, 1.0)
        return np.where(o > 0.0, g / (2.0 * safe), 0.0)

    return _unary("sqrt", a, np.sqrt, grad)


def _op_negate(a):
    return _unary("negate", a, np.negative, lambda g, x, o: -g)


ELEMENTWISE_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
    "exp": _op_exp,
    "log": _op_log,
    "sigmoid": _op_sigmoid,
    "relu": _op_relu,
    "softplus": _op_softplus,
    "atan": _op_atan,
    "square": _op_square,
    "sqrt": _op_sqrt,
    "negate": _op_negate,
}

_BINARY = {"add", "sub", "mul", "div"}


def apply_elementwise(op, *args):
    """Apply the named elementwise op; binary ops broadcast numpy-style."""
    if op not in ELEMENTWISE_OPS:
        raise KeyError(f"unknown elementwise op {op!r}")
    want = 2 if op in _BINARY else 1
    if len(args) != want:
        raise ShapeError(f"{op} expects {want} operand(s), got {len(args)}")
    return ELEMENTWISE_OPS[op](*(_coerce(a) for a in args))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product of 1-D/2-D operands with the usual gradient rules."""
    a = _coerce(a)
    b = _coerce(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul requires operands with at least 1 dimension")
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        xa, xb = a.data, b.data
        ga = g
        gb = g
        if xa.ndim == 1 and xb.ndim == 1:
            ga = g * xb
            gb = g * xa
        elif xa.ndim == 1:
            ga = xb @ g
            gb = np.outer(xa, g)
        elif xb.ndim == 1:
            ga = np.outer(g, xb)
            gb = xa.T @ g
        else:
            ga = g @ xb.T
            gb = xa.T @ g
        out = []
        if a.requires_grad or a._parents:
            out.append((a, ga))
        if b.requires_grad or b._parents:
            out.append((b, gb))
        return out

    return Tensor._from_op(data, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
    return tuple(ax % ndim for ax in axis)


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _red_sum(a, axis, keepdims):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return [(a, _expand(g, a.shape, axis, keepdims).copy())]

    return Tensor._from_op(data, (a,), backward)


def _red_mean(a, axis, keepdims):
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in axis]))
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        return [(a, _expand(g, a.shape, axis, keepdims) / count)]

    return Tensor._from_op(data, (a,), backward)


def _red_variance(a, axis, keepdims):
    # population variance: mean of squared deviations from the mean
    mean = _red_mean(a, axis, True)
    dev = apply_elementwise("sub", a, mean)
    sq = apply_elementwise("square", dev)
    return _red_mean(sq, axis, keepdims)


def _red_std(a, axis, keepdims):
    return apply_elementwise("sqrt", _red_variance(a, axis, keepdims))


REDUCE_OPS = {
    "sum": _red_sum,
    "mean": _red_mean,
    "variance": _red_variance,
    "std": _red_std,
}


def reduce(op, a, axis=None, keepdims=False):
    """Reduce along ``axis`` (None = all). variance/std use the population
    convention (divide by N, no Bessel correction)."""
    if op not in REDUCE_OPS:
        raise KeyError(f"unknown reduce op {op!r}")
    a = _coerce(a)
    axis = _norm_axis(axis, a.ndim)
    return REDUCE_OPS[op](a, axis, keepdims)


# ---------------------------------------------------------------------------
# sorting with a frozen permutation
# ---------------------------------------------------------------------------

def sort_with_gradient(a, axis=-1):
    """Sort ascending along ``axis``; backward routes gradients through the
    permutation recorded at forward time (stable order for ties)."""
    a = _coerce(a)
    if a.ndim == 0:
        raise ShapeError("sort_with_gradient requires at least 1 dimension")
    ax = axis % a.ndim
    perm = np.argsort(a.data, axis=ax, kind="stable")
    data = np.take_along_axis(a.data, perm, axis=ax)

    def backward(g):
        ga = np.empty_like(g)
        np.put_along_axis(ga, perm, g, axis=ax)
        return [(a, ga)]

    return Tensor._from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def index_select(a, indices, axis=0):
    """Gather rows (or the given axis) by integer index; repeats allowed."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % max(a.ndim, 1)
    if a.ndim == 0:
        raise ShapeError("index_select requires at least 1 dimension")
    data = np.take(a.data, idx, axis=ax)

    def backward(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return [(a, ga)]

    return Tensor._from_op(data, (a,), backward)


def concat(tensors, axis=0):
    """Concatenate along ``axis``; backward splits the gradient back."""
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ShapeError("concat requires at least one tensor")
    ax = axis % ts[0].ndim
    try:
        data = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, bounds, axis=ax)
        return [
            (t, piece)
            for t, piece in zip(ts, pieces)
            if t.requires_grad or t._parents
        ]

    return Tensor._from_op(data, ts, backward)


def reshape(a, shape):
    a = _coerce(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc

    def backward(g):
        return [(a, g.reshape(a.shape))]

    return Tensor._from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# fused kernels (numba-accelerated when available)
# ---------------------------------------------------------------------------

def pairwise_distance(a, b):
    """Euclidean distance matrix between row sets a[n,d] and b[m,d].

    At coincident points the distance is 0 and the subgradient is taken as 0,
    so energy-kernel losses stay finite even when samples collide.
    """
    a = _coerce(a)
    b = _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"pairwise_distance expects [n,d] and [m,d], got {a.shape} and {b.shape}"
        )
    data = kernels.pairwise_dist(a.data, b.data)

    def backward(g):
        ga, gb = kernels.pairwise_dist_bwd(g, a.data, b.data, data)
        out = []
        if a.requires_grad or a._parents:
            out.append((a, ga))
        if b.requires_grad or b._parents:
            out.append((b, gb))
        return out

    return Tensor._from_op(data, (a, b), backward)


def softmax_expectation(logits, values, tau):
    """Expectation of ``values`` under softmax(logits / tau), rowwise.

    ``logits`` is [n, c] and differentiable; ``values`` is a fixed [c] grid.
    Backward is the fused softmax-expectation rule
    d/d(logit_j) = (w_j / tau) * (value_j - y).
    """
    logits = _coerce(logits)
    vals = np.asarray(values, dtype=np.float64)
    if logits.ndim != 2 or vals.ndim != 1 or logits.shape[1] != vals.shape[0]:
        raise ShapeError(
            f"softmax_expectation expects logits [n,c] and values [c], "
            f"got {logits.shape} and {vals.shape}"
        )
    if tau <= 0.0:
        raise DomainError(f"softmax_expectation: tau must be positive, got {tau}")
    w, y = kernels.softmax_expectation_fwd(logits.data, vals, float(tau))

    def backward(g):
        return [(logits, kernels.softmax_expectation_bwd(g, w, vals, y, float(tau)))]

    return Tensor._from_op(y, (logits,), backward)
