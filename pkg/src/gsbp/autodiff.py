"""Reverse-mode automatic differentiation on an explicit tape, plus dual numbers.

The engine differentiates scalar computation graphs built from a small set of
primitives (add, mul, tanh, exp, log, power, sum, max, and the bookkeeping ops
they need: reshape, broadcast, getitem/scatter, matmul, concat). A node may
hold a numpy array instead of a single float, in which case it represents that
many independent scalar graphs evaluated in lockstep; the semantics per node
stay scalar and backward sweeps use a fixed summation order, so results are
deterministic for fixed inputs.

Three differentiation modes compose:

* ``backward(root, wrt)`` - plain reverse mode over recorded nodes.
* ``backward(..., create_graph=True)`` - the sweep's arithmetic is itself
  recorded, so gradients are nodes and can be differentiated again (used for
  second derivatives inside PDE residuals and for parameter gradients through
  them).
* ``Dual`` values - forward-mode pairs (primal, tangent). Node values may be
  duals: running a reverse sweep over dual-valued nodes is forward-over-reverse
  and yields Hessian rows (``hessian`` below).

Non-finite intermediates abort immediately with the offending node's provenance
instead of propagating NaNs.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "AutodiffError",
    "Dual",
    "Node",
    "Tape",
    "add",
    "amax",
    "asum",
    "backward",
    "concat",
    "div",
    "exp",
    "grad",
    "hessian",
    "identity",
    "leaf",
    "log",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "param_grad",
    "power",
    "sigmoid",
    "softplus",
    "sqrt",
    "sub",
    "swap_last",
    "tanh",
    "value_of",
]


class AutodiffError(RuntimeError):
    """Non-finite intermediate, or a malformed use of the tape."""


# ---------------------------------------------------------------------------
# tape and nodes


class Tape:
    """Append-only record of primitive operations, in topological order."""

    __slots__ = ("nodes", "check_finite")

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)


_TAPES: list[Tape] = []


def _active_tape() -> Tape:
    if not _TAPES:
        raise AutodiffError("no active Tape; wrap the computation in `with Tape():`")
    return _TAPES[-1]


def _is_finite_value(v) -> bool:
    if isinstance(v, Dual):
        return _is_finite_value(v.primal) and _is_finite_value(v.tangent)
    if isinstance(v, np.ndarray):
        # one pass; nan/inf both poison the sum
        return math.isfinite(float(v.sum()))
    return math.isfinite(float(v))


class Node:
    """One recorded primitive: an operation, its value, and its parents."""

    __slots__ = ("tape", "index", "op", "value", "parents", "extra")

    def __init__(self, op, value, parents=(), extra=None):
        tape = _active_tape()
        if tape.check_finite and not _is_finite_value(value):
            raise AutodiffError(
                f"non-finite value in node {len(tape.nodes)} (op '{op}', "
                f"parent ops {[p.op for p in parents if isinstance(p, Node)]})"
            )
        self.tape = tape
        self.index = len(tape.nodes)
        self.op = op
        self.value = value
        self.parents = parents
        self.extra = extra
        tape.nodes.append(self)

    @property
    def shape(self):
        return _shape_of(self.value)

    def __repr__(self):
        return f"Node({self.op}#{self.index}, shape={self.shape})"

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return _getitem(self, idx)


class Dual:
    """Forward-mode value: arithmetic obeys the chain rule exactly."""

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __getitem__(self, idx):
        return Dual(self.primal[idx], self.tangent[idx])


def leaf(value):
    """Record an input node (gradients can be collected at leaves)."""
    return Node("leaf", value)


def value_of(x):
    """Raw numeric content of a node/dual/array (primal part for duals)."""
    if isinstance(x, Node):
        return value_of(x.value)
    if isinstance(x, Dual):
        return value_of(x.primal)
    return x


def _shape_of(v):
    if isinstance(v, Dual):
        return _shape_of(v.primal)
    return np.shape(v)


def _shape(x):
    return x.shape if isinstance(x, Node) else _shape_of(x)


def _raw(x):
    return x.value if isinstance(x, Node) else x


# ---------------------------------------------------------------------------
# generic operations
#
# Dispatch order: Node (graph tier) -> Dual (value tier) -> numpy. Node values
# may themselves be duals; the graph tier recomputes through these same
# functions on raw values, so dual-valued tapes work transparently.


def add(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return Node("add", add(_raw(a), _raw(b)), (a, b))
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual) and isinstance(b, Dual):
            return Dual(add(a.primal, b.primal), add(a.tangent, b.tangent))
        if isinstance(a, Dual):
            return Dual(add(a.primal, b), a.tangent)
        return Dual(add(a, b.primal), b.tangent)
    return np.add(a, b)


def sub(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return Node("sub", sub(_raw(a), _raw(b)), (a, b))
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual) and isinstance(b, Dual):
            return Dual(sub(a.primal, b.primal), sub(a.tangent, b.tangent))
        if isinstance(a, Dual):
            return Dual(sub(a.primal, b), a.tangent)
        return Dual(sub(a, b.primal), neg(b.tangent))
    return np.subtract(a, b)


def neg(a):
    if isinstance(a, Node):
        return Node("neg", neg(a.value), (a,))
    if isinstance(a, Dual):
        return Dual(neg(a.primal), neg(a.tangent))
    return np.negative(a)


def mul(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return Node("mul", mul(_raw(a), _raw(b)), (a, b))
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual) and isinstance(b, Dual):
            return Dual(
                mul(a.primal, b.primal),
                add(mul(a.tangent, b.primal), mul(a.primal, b.tangent)),
            )
        if isinstance(a, Dual):
            return Dual(mul(a.primal, b), mul(a.tangent, b))
        return Dual(mul(a, b.primal), mul(a, b.tangent))
    return np.multiply(a, b)


def div(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return Node("div", div(_raw(a), _raw(b)), (a, b))
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual) and isinstance(b, Dual):
            q = div(a.primal, b.primal)
            return Dual(q, div(sub(a.tangent, mul(q, b.tangent)), b.primal))
        if isinstance(a, Dual):
            return Dual(div(a.primal, b), div(a.tangent, b))
        q = div(a, b.primal)
        return Dual(q, neg(div(mul(q, b.tangent), b.primal)))
    return np.divide(a, b)


def power(a, c):
    """a**c for a constant real exponent c."""
    c = float(c)
    if isinstance(a, Node):
        return Node("pow", power(a.value, c), (a,), extra=c)
    if isinstance(a, Dual):
        return Dual(power(a.primal, c), mul(mul(c, power(a.primal, c - 1.0)), a.tangent))
    return np.power(a, c)


def tanh(a):
    if isinstance(a, Node):
        return Node("tanh", tanh(a.value), (a,))
    if isinstance(a, Dual):
        y = tanh(a.primal)
        return Dual(y, mul(sub(1.0, mul(y, y)), a.tangent))
    return np.tanh(a)


def exp(a):
    if isinstance(a, Node):
        return Node("exp", exp(a.value), (a,))
    if isinstance(a, Dual):
        y = exp(a.primal)
        return Dual(y, mul(y, a.tangent))
    return np.exp(a)


def log(a):
    if isinstance(a, Node):
        return Node("log", log(a.value), (a,))
    if isinstance(a, Dual):
        return Dual(log(a.primal), div(a.tangent, a.primal))
    return np.log(a)


def sqrt(a):
    if isinstance(a, Node):
        return Node("sqrt", sqrt(a.value), (a,))
    if isinstance(a, Dual):
        y = sqrt(a.primal)
        return Dual(y, div(a.tangent, mul(2.0, y)))
    return np.sqrt(a)


def softplus(a):
    """log(1 + e^a), overflow-safe; derivative is the logistic sigmoid."""
    if isinstance(a, Node):
        return Node("softplus", softplus(a.value), (a,))
    if isinstance(a, Dual):
        return Dual(softplus(a.primal), mul(sigmoid(a.primal), a.tangent))
    return np.logaddexp(0.0, a)


def sigmoid(a):
    # via tanh: stable for large |a| in every tier
    return mul(0.5, add(tanh(mul(0.5, a)), 1.0))


def identity(a):
    """Pass-through node; its adjoint reads off a partial derivative."""
    if isinstance(a, Node):
        return Node("id", a.value, (a,))
    return a


def asum(a, axis=None, keepdims=False):
    """Summation primitive (the tape's `sum`)."""
    if isinstance(a, Node):
        return Node("sum", asum(a.value, axis, keepdims), (a,), extra=(axis, keepdims))
    if isinstance(a, Dual):
        return Dual(asum(a.primal, axis, keepdims), asum(a.tangent, axis, keepdims))
    return np.sum(a, axis=axis, keepdims=keepdims)


def amax(a, axis=None, keepdims=False):
    """Maximum primitive (the tape's `max`); ties route to the first argmax."""
    if isinstance(a, Node):
        return Node("max", amax(a.value, axis, keepdims), (a,), extra=(axis, keepdims))
    if isinstance(a, Dual):
        p = np.asarray(a.primal)
        if axis is None:
            idx = np.unravel_index(np.argmax(p), p.shape) if p.ndim else ()
            tp = np.asarray(a.tangent)[idx] if p.ndim else a.tangent
            if keepdims and p.ndim:
                return Dual(
                    np.max(p, keepdims=True), np.reshape(tp, (1,) * p.ndim)
                )
            return Dual(p[idx] if p.ndim else a.primal, tp)
        idx = np.expand_dims(np.argmax(p, axis=axis), axis)
        pm = np.take_along_axis(p, idx, axis)
        tm = np.take_along_axis(np.asarray(a.tangent), idx, axis)
        if not keepdims:
            pm, tm = np.squeeze(pm, axis), np.squeeze(tm, axis)
        return Dual(pm, tm)
    return np.max(a, axis=axis, keepdims=keepdims)


def _broadcast(a, shape):
    if isinstance(a, Node):
        return Node("broadcast", _broadcast(a.value, shape), (a,), extra=shape)
    if isinstance(a, Dual):
        return Dual(_broadcast(a.primal, shape), _broadcast(a.tangent, shape))
    return np.broadcast_to(a, shape)


def reshape(a, shape):
    if isinstance(a, Node):
        return Node("reshape", reshape(a.value, shape), (a,), extra=shape)
    if isinstance(a, Dual):
        return Dual(reshape(a.primal, shape), reshape(a.tangent, shape))
    return np.reshape(a, shape)


def _getitem(a, idx):
    if isinstance(a, Node):
        return Node("getitem", _getitem(a.value, idx), (a,), extra=idx)
    if isinstance(a, Dual):
        return Dual(a.primal[idx], a.tangent[idx])
    return a[idx]


def _scatter(src, idx, shape):
    if isinstance(src, Node):
        return Node("scatter", _scatter(src.value, idx, shape), (src,), extra=(idx, shape))
    if isinstance(src, Dual):
        return Dual(_scatter(src.primal, idx, shape), _scatter(src.tangent, idx, shape))
    out = np.zeros(shape)
    np.add.at(out, idx, src)
    return out


def matmul(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return Node("matmul", matmul(_raw(a), _raw(b)), (a, b))
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual) and isinstance(b, Dual):
            return Dual(
                matmul(a.primal, b.primal),
                add(matmul(a.tangent, b.primal), matmul(a.primal, b.tangent)),
            )
        if isinstance(a, Dual):
            return Dual(matmul(a.primal, b), matmul(a.tangent, b))
        return Dual(matmul(a, b.primal), matmul(a, b.tangent))
    return np.matmul(a, b)


def swap_last(a):
    """Transpose the last two axes."""
    if isinstance(a, Node):
        return Node("swapaxes", swap_last(a.value), (a,))
    if isinstance(a, Dual):
        return Dual(swap_last(a.primal), swap_last(a.tangent))
    return np.swapaxes(a, -1, -2)


def concat(parts, axis=-1):
    if axis != -1:
        raise AutodiffError("concat supports axis=-1 only")
    if any(isinstance(p, Node) for p in parts):
        sizes = tuple(_shape(p)[-1] for p in parts)
        return Node(
            "concat", concat([_raw(p) for p in parts]), tuple(parts), extra=sizes
        )
    if any(isinstance(p, Dual) for p in parts):
        parts = [p if isinstance(p, Dual) else Dual(p, np.zeros(_shape(p))) for p in parts]
        return Dual(concat([p.primal for p in parts]), concat([p.tangent for p in parts]))
    return np.concatenate([np.asarray(p) for p in parts], axis=-1)


def mean(a, axis=None, keepdims=False):
    n = np.prod(_shape(a), dtype=float) if axis is None else float(
        np.prod([_shape(a)[ax] for ax in np.atleast_1d(axis)])
    )
    return div(asum(a, axis, keepdims), n)


def logsumexp(a, axis=-1, keepdims=False):
    """Overflow-safe log-sum-exp; the shift is a detached constant."""
    m = np.max(value_of(a), axis=axis, keepdims=True)
    out = add(log(asum(exp(sub(a, m)), axis, keepdims=True)), m)
    if not keepdims:
        shape = list(_shape(out))
        del shape[axis]
        out = reshape(out, tuple(shape))
    return out


# ---------------------------------------------------------------------------
# backward sweep


def _unbroadcast(g, shape):
    gshape = _shape(g)
    if gshape == tuple(shape):
        return g
    extra = len(gshape) - len(shape)
    if extra > 0:
        g = asum(g, axis=tuple(range(extra)))
        gshape = gshape[extra:]
    axes = tuple(
        i for i, (gd, td) in enumerate(zip(gshape, shape)) if td == 1 and gd != 1
    )
    if axes:
        g = asum(g, axis=axes, keepdims=True)
    if _shape(g) != tuple(shape):  # scalar adjoint against a sized-1 target
        g = reshape(g, shape)
    return g


def _keepdims_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    out = list(shape)
    for ax in np.atleast_1d(axis):
        out[int(ax)] = 1
    return tuple(out)


def _bw_add(node, g, graph):
    a, b = node.parents
    return [(a, _unbroadcast(g, _shape(a))), (b, _unbroadcast(g, _shape(b)))]


def _bw_sub(node, g, graph):
    a, b = node.parents
    return [(a, _unbroadcast(g, _shape(a))), (b, _unbroadcast(neg(g), _shape(b)))]


def _bw_neg(node, g, graph):
    return [(node.parents[0], neg(g))]


def _v(p, graph):
    if graph:
        return p
    return p.value if isinstance(p, Node) else p


def _bw_mul(node, g, graph):
    a, b = node.parents
    return [
        (a, _unbroadcast(mul(g, _v(b, graph)), _shape(a))),
        (b, _unbroadcast(mul(g, _v(a, graph)), _shape(b))),
    ]


def _bw_div(node, g, graph):
    a, b = node.parents
    bv = _v(b, graph)
    ga = div(g, bv)
    gb = neg(mul(ga, _v(node, graph)))
    return [(a, _unbroadcast(ga, _shape(a))), (b, _unbroadcast(gb, _shape(b)))]


def _bw_pow(node, g, graph):
    (a,) = node.parents
    c = node.extra
    return [(a, mul(mul(g, c), power(_v(a, graph), c - 1.0)))]


def _bw_tanh(node, g, graph):
    (a,) = node.parents
    y = _v(node, graph)
    return [(a, mul(g, sub(1.0, mul(y, y))))]


def _bw_exp(node, g, graph):
    (a,) = node.parents
    return [(a, mul(g, _v(node, graph)))]


def _bw_log(node, g, graph):
    (a,) = node.parents
    return [(a, div(g, _v(a, graph)))]


def _bw_sqrt(node, g, graph):
    (a,) = node.parents
    return [(a, div(g, mul(2.0, _v(node, graph))))]


def _bw_softplus(node, g, graph):
    (a,) = node.parents
    return [(a, mul(g, sigmoid(_v(a, graph))))]


def _bw_id(node, g, graph):
    return [(node.parents[0], g)]


def _bw_sum(node, g, graph):
    (a,) = node.parents
    axis, keepdims = node.extra
    ashape = _shape(a)
    if not keepdims and ashape:
        g = reshape(g, _keepdims_shape(ashape, axis))
    return [(a, _broadcast(g, ashape))]


def _bw_max(node, g, graph):
    (a,) = node.parents
    axis, keepdims = node.extra
    av = np.asarray(value_of(a))
    if axis is None:
        mask = np.zeros(av.shape)
        mask[np.unravel_index(np.argmax(av), av.shape)] = 1.0
    else:
        mask = np.zeros(av.shape)
        np.put_along_axis(mask, np.expand_dims(np.argmax(av, axis=axis), axis), 1.0, axis)
    if not keepdims and av.ndim:
        g = reshape(g, _keepdims_shape(av.shape, axis))
    return [(a, mul(_broadcast(g, av.shape), mask))]


def _bw_broadcast(node, g, graph):
    (a,) = node.parents
    return [(a, _unbroadcast(g, _shape(a)))]


def _bw_reshape(node, g, graph):
    (a,) = node.parents
    return [(a, reshape(g, _shape(a)))]


def _bw_getitem(node, g, graph):
    (a,) = node.parents
    return [(a, _scatter(g, node.extra, _shape(a)))]


def _bw_scatter(node, g, graph):
    (a,) = node.parents
    idx, _ = node.extra
    return [(a, _getitem(g, idx))]


def _bw_matmul(node, g, graph):
    a, b = node.parents
    ga = _unbroadcast(matmul(g, swap_last(_v(b, graph))), _shape(a))
    gb = _unbroadcast(matmul(swap_last(_v(a, graph)), g), _shape(b))
    return [(a, ga), (b, gb)]


def _bw_swapaxes(node, g, graph):
    return [(node.parents[0], swap_last(g))]


def _bw_concat(node, g, graph):
    sizes = node.extra
    out, start = [], 0
    for p, s in zip(node.parents, sizes):
        out.append((p, _getitem(g, (Ellipsis, slice(start, start + s)))))
        start += s
    return out


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "neg": _bw_neg,
    "mul": _bw_mul,
    "div": _bw_div,
    "pow": _bw_pow,
    "tanh": _bw_tanh,
    "exp": _bw_exp,
    "log": _bw_log,
    "sqrt": _bw_sqrt,
    "softplus": _bw_softplus,
    "id": _bw_id,
    "sum": _bw_sum,
    "max": _bw_max,
    "broadcast": _bw_broadcast,
    "reshape": _bw_reshape,
    "getitem": _bw_getitem,
    "scatter": _bw_scatter,
    "matmul": _bw_matmul,
    "swapaxes": _bw_swapaxes,
    "concat": _bw_concat,
}


def _zero_like(x):
    v = x.value if isinstance(x, Node) else x
    if isinstance(v, Dual):
        return Dual(_zero_like(v.primal), _zero_like(v.tangent))
    if isinstance(v, np.ndarray):
        return np.zeros(v.shape)
    return 0.0


def backward(root, wrt, create_graph=False, seed=1.0):
    """Reverse sweep from `root`; returns adjoints for each node in `wrt`.

    With create_graph=True the adjoints are themselves nodes, so they can be
    differentiated again. The adjoint of an interior node is the partial
    derivative of root w.r.t. that node holding its ancestors fixed (see
    `identity` for the standard trick this enables).
    """
    if not isinstance(root, Node):
        raise AutodiffError("backward root must be a Node")
    nodes = root.tape.nodes
    adj = {root.index: seed}
    want = {}
    for pos, w in enumerate(wrt):
        want.setdefault(w.index, []).append(pos)
    results = [None] * len(wrt)
    for i in range(root.index, -1, -1):
        g = adj.pop(i, None)
        if g is None:
            continue
        if i in want:
            for pos in want[i]:
                results[pos] = g
        node = nodes[i]
        rule = _BACKWARD.get(node.op)
        if rule is None:
            continue
        for p, contrib in rule(node, g, create_graph):
            if isinstance(p, Node):
                j = p.index
                prev = adj.get(j)
                adj[j] = contrib if prev is None else add(prev, contrib)
    for pos, r in enumerate(results):
        if r is None:
            results[pos] = _zero_like(wrt[pos])
    return results


# ---------------------------------------------------------------------------
# user-facing derivative operators


def grad(fn, point):
    """Exact reverse-mode gradient of a scalar function at `point`.

    `fn` receives a list of leaf nodes (one per coordinate) and must return a
    scalar node built from supported primitives.
    """
    point = [float(p) for p in point]
    if not all(math.isfinite(p) for p in point):
        raise AutodiffError("grad: point must be finite")
    with Tape():
        xs = [leaf(p) for p in point]
        y = fn(xs)
        gs = backward(y, xs)
    return np.array([float(value_of(g)) for g in gs])


def hessian(fn, point, symmetrize=True):
    """Hessian by forward-over-reverse: n dual-valued forward passes, each
    followed by a reverse sweep whose arithmetic runs on dual numbers; the
    tangent part of the adjoints is one Hessian row."""
    point = [float(p) for p in point]
    if not all(math.isfinite(p) for p in point):
        raise AutodiffError("hessian: point must be finite")
    n = len(point)
    H = np.empty((n, n))
    for k in range(n):
        with Tape():
            xs = [leaf(Dual(point[i], 1.0 if i == k else 0.0)) for i in range(n)]
            y = fn(xs)
            gs = backward(y, xs, seed=Dual(1.0, 0.0))
        row = []
        for g in gs:
            gv = g.value if isinstance(g, Node) else g
            row.append(float(value_of(gv.tangent)) if isinstance(gv, Dual) else 0.0)
        H[k, :] = row
    if n:
        asym = float(np.max(np.abs(H - H.T)))
        if asym >= 1e-10 * (1.0 + float(np.max(np.abs(H)))):
            raise AutodiffError(f"hessian asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (H + H.T) if symmetrize else H


def param_grad(residual, theta):
    """Gradient of `residual(theta_node)` over a flat parameter vector.

    The residual may internally run `backward(..., create_graph=True)` to build
    nested derivative expressions; everything lands on one tape, so the final
    sweep differentiates through them.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise AutodiffError("param_grad: theta must be finite")
    with Tape():
        th = leaf(theta)
        r = residual(th)
        if not isinstance(r, Node):
            raise AutodiffError("param_grad: residual must return a Node")
        (g,) = backward(r, [th])
    g = np.asarray(value_of(g), dtype=float)
    if g.shape != theta.shape:
        g = np.broadcast_to(g, theta.shape).copy()
    return g
