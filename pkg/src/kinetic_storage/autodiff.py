"""Small differentiation engine: reverse mode on a tape, forward mode via dual values.

``Var`` nodes hold numpy arrays (a 0-d array is a scalar) and are appended to
the active :class:`Tape` as they are created, so the tape is already in
topological order and the backward sweep visits each node once.

``DualValue`` carries a primal and ``k`` tangent directions stacked on a
leading axis.  Primal and tangent may themselves be ``Var`` nodes, which makes
input derivatives ordinary tape nodes: a loss built from them can be
differentiated with respect to parameters (forward-over-reverse).

The module-level functions (:func:`sin`, :func:`exp`, ...) dispatch on their
argument, so the same model code runs on plain arrays, on tape nodes and on
dual values.
"""
from __future__ import annotations

import numpy as np

from .errors import DetachedNode

_active_tapes: list = []


class Tape:
    """Append-only record of operations.  Use as a context manager."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> "Var":
        return Var(np.array(value, dtype=float), (), self)

    def gradient(self, loss: "Var", leaves) -> list:
        """d(loss)/d(leaf) for every leaf; unreachable leaves get zeros."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise DetachedNode("loss is not a node of this tape")
        if loss.value.size != 1:
            raise ValueError("gradient needs a scalar loss")
        for leaf in leaves:
            if not isinstance(leaf, Var) or leaf.tape is not self:
                raise DetachedNode("parameter leaf is not a node of this tape")
        wanted = {leaf.index for leaf in leaves}
        found = {}
        pending = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[:loss.index + 1]):
            g = pending.pop(node.index, None)
            if g is None:
                continue
            if node.index in wanted:
                found[node.index] = g
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = pending.get(parent.index)
                pending[parent.index] = contrib if prev is None else prev + contrib
        return [found.get(leaf.index, np.zeros_like(leaf.value)) for leaf in leaves]


def _current_tape():
    if not _active_tapes:
        raise DetachedNode("no active tape")
    return _active_tapes[-1]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _value(x):
    return x.value if isinstance(x, Var) else x


class Var:
    __slots__ = ("value", "parents", "tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, parents=(), tape=None):
        self.value = value
        self.parents = parents
        self.tape = tape if tape is not None else _current_tape()
        self.index = len(self.tape.nodes)
        self.tape.nodes.append(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    @staticmethod
    def _make(value, parents):
        tape = parents[0][0].tape
        for p, _ in parents[1:]:
            if p.tape is not tape:
                raise DetachedNode("operands belong to different tapes")
        return Var(np.asarray(value), tuple(parents), tape)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        ov = _value(other)
        parents = [(self, lambda g, s=self.shape: _unbroadcast(g, s))]
        if isinstance(other, Var):
            parents.append((other, lambda g, s=other.shape: _unbroadcast(g, s)))
        return Var._make(self.value + ov, parents)

    __radd__ = __add__

    def __neg__(self):
        return Var._make(-self.value, [(self, lambda g: -g)])

    def __sub__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return self + (-other if isinstance(other, Var) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        ov = _value(other)
        sv = self.value
        parents = [(self, lambda g, s=self.shape: _unbroadcast(g * ov, s))]
        if isinstance(other, Var):
            parents.append((other, lambda g, s=other.shape: _unbroadcast(g * sv, s)))
        return Var._make(sv * ov, parents)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        if isinstance(other, Var):
            return self * reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, Var):
            return exp(log(self) * p)
        p = float(p)
        x = self.value
        if p == 2.0:
            return Var._make(x * x, [(self, lambda g: 2.0 * g * x)])
        return Var._make(x ** p, [(self, lambda g: g * p * x ** (p - 1.0))])

    def __matmul__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            if _is_basic_index(idx):
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return out

        return Var._make(self.value[idx], [(self, vjp)])

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape
        return Var._make(self.value.reshape(shape), [(self, lambda g: g.reshape(old))])

    @property
    def T(self):
        return transpose(self)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer, type(Ellipsis), type(None))) for i in items)


# primitives on Var --------------------------------------------------------

def reciprocal(x):
    if not isinstance(x, Var):
        return 1.0 / np.asarray(x, dtype=float)
    r = 1.0 / x.value
    return Var._make(r, [(x, lambda g: -g * r * r)])


def matmul(a, b):
    av, bv = _value(a), _value(b)
    out = np.matmul(av, bv)
    parents = []
    if isinstance(a, Var):
        def vja(g, av=av, bv=bv):
            if bv.ndim == 1:
                return _unbroadcast(g[..., None] * bv, av.shape)
            if av.ndim == 1:
                return _unbroadcast(np.matmul(g[..., None, :], np.swapaxes(bv, -1, -2))[..., 0, :], av.shape)
            return _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        parents.append((a, vja))
    if isinstance(b, Var):
        def vjb(g, av=av, bv=bv):
            if bv.ndim == 1:
                return (av * g[..., None]).reshape(-1, av.shape[-1]).sum(axis=0)
            if av.ndim == 1:
                return _unbroadcast(av[:, None] * g[..., None, :], bv.shape)
            if bv.ndim == 2:
                # fold all batch axes into the contraction
                return av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        parents.append((b, vjb))
    if not parents:
        return out
    return Var._make(out, parents)


def vsum(x, axis=None, keepdims=False):
    if isinstance(x, DualValue):
        return DualValue(vsum(x.primal, axis, keepdims),
                         vsum(x.tangent, _shift_axis(axis), keepdims))
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var._make(np.sum(x.value, axis=axis, keepdims=keepdims), [(x, vjp)])


def vmean(x, axis=None, keepdims=False):
    if isinstance(x, DualValue):
        return DualValue(vmean(x.primal, axis, keepdims),
                         vmean(x.tangent, _shift_axis(axis), keepdims))
    if not isinstance(x, Var):
        return np.mean(x, axis=axis, keepdims=keepdims)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return vsum(x, axis, keepdims) * (1.0 / n)


def transpose(x):
    if not isinstance(x, Var):
        return np.swapaxes(x, -1, -2)
    return Var._make(np.swapaxes(x.value, -1, -2), [(x, lambda g: np.swapaxes(g, -1, -2))])


def concatenate(items, axis=0):
    if not any(isinstance(i, Var) for i in items):
        return np.concatenate(items, axis=axis)
    vals = [np.asarray(_value(i)) for i in items]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    out = np.concatenate(vals, axis=axis)
    parents = []
    for k, item in enumerate(items):
        if isinstance(item, Var):
            parents.append((item, lambda g, k=k: np.split(g, bounds, axis=axis)[k]))
    return Var._make(out, parents)


def stack(items, axis=0):
    return concatenate([expand_dims(i, axis) for i in items], axis=axis)


def expand_dims(x, axis):
    if isinstance(x, Var):
        return Var._make(np.expand_dims(x.value, axis), [(x, lambda g: np.squeeze(g, axis))])
    return np.expand_dims(x, axis)


def _unary(x, f, df):
    """Apply ``f`` with derivative ``df(x_value, f_value)``."""
    if isinstance(x, DualValue):
        p = _unary(x.primal, f, df)
        return DualValue(p, x.tangent * _derivative_node(x.primal, p, df))
    if isinstance(x, Var):
        y = f(x.value)
        xv = x.value
        return Var._make(y, [(x, lambda g: g * df(xv, y))])
    return f(np.asarray(x, dtype=float))


def _derivative_node(x, fx, df):
    # derivative as a tape node when x is a node, so tangents stay differentiable
    if isinstance(x, Var):
        return _DERIV_NODES[df](x, fx)
    return df(np.asarray(x, dtype=float), fx)


def sin(x):
    if isinstance(x, DualValue):
        s, c = sincos(x.primal)
        return DualValue(s, x.tangent * c)
    return _unary(x, np.sin, _dsin)


def cos(x):
    if isinstance(x, DualValue):
        s, c = sincos(x.primal)
        return DualValue(c, -(x.tangent * s))
    return _unary(x, np.cos, _dcos)


def sincos(x):
    """(sin x, cos x) sharing one evaluation; both are tape nodes for a node ``x``."""
    if not isinstance(x, Var):
        x = np.asarray(x, dtype=float)
        return np.sin(x), np.cos(x)
    s, c = np.sin(x.value), np.cos(x.value)
    return Var._make(s, [(x, lambda g: g * c)]), Var._make(c, [(x, lambda g: -g * s)])


def exp(x):
    return _unary(x, np.exp, _dexp)


def log(x):
    return _unary(x, np.log, _dlog)


def sqrt(x):
    return _unary(x, np.sqrt, _dsqrt)


def tanh(x):
    return _unary(x, np.tanh, _dtanh)


def square(x):
    return x * x


def abs(x):  # noqa: A001 - mirrors numpy naming
    """|x| with derivative sign(x); 0 is used at the kink."""
    return _unary(x, np.abs, _dabs)


def maximum(x, c):
    """max(x, c) for a constant threshold ``c``; ties send the derivative to ``x``."""
    c = np.asarray(_value(c), dtype=float)
    if isinstance(x, DualValue):
        mask = (_value(x.primal) >= c).astype(float)
        return DualValue(maximum(x.primal, c), x.tangent * mask)
    if isinstance(x, Var):
        mask = (x.value >= c).astype(float)
        return Var._make(np.maximum(x.value, c), [(x, lambda g: _unbroadcast(g * mask, x.shape))])
    return np.maximum(x, c)


def minimum(x, c):
    return -maximum(-x, -np.asarray(_value(c)))


def _dsin(x, y):
    return np.cos(x)


def _dcos(x, y):
    return -np.sin(x)


def _dexp(x, y):
    return y


def _dlog(x, y):
    return 1.0 / x


def _dsqrt(x, y):
    return 0.5 / y


def _dtanh(x, y):
    return 1.0 - y * y


def _dabs(x, y):
    return np.sign(x)


_DERIV_NODES = {
    _dsin: lambda x, fx: cos(x),
    _dcos: lambda x, fx: -sin(x),
    _dexp: lambda x, fx: fx,
    _dlog: lambda x, fx: reciprocal(x),
    _dsqrt: lambda x, fx: reciprocal(fx) * 0.5,
    _dtanh: lambda x, fx: 1.0 - fx * fx,
    _dabs: lambda x, fx: np.sign(x.value),
}


def _shift_axis(axis):
    if axis is None:
        return None
    if isinstance(axis, tuple):
        return tuple(a + 1 if a >= 0 else a for a in axis)
    return axis + 1 if axis >= 0 else axis


class DualValue:
    """Primal value with ``k`` tangent directions stacked on axis 0 of ``tangent``."""

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent):
        self.primal = primal
        self.tangent = tangent

    @classmethod
    def seed(cls, x, directions, scales=None):
        """Seed unit tangents ``e_j * scale_j`` along the last axis of ``x``."""
        xv = np.asarray(_value(x), dtype=float)
        k = len(directions)
        t = np.zeros((k,) + xv.shape)
        for j, d in enumerate(directions):
            t[j, ..., d] = 1.0 if scales is None else scales[j]
        return cls(x, t)

    @property
    def k(self):
        return _value(self.tangent).shape[0]

    def __repr__(self):
        return f"DualValue(primal={self.primal!r}, k={self.k})"

    def __add__(self, other):
        if isinstance(other, DualValue):
            return DualValue(self.primal + other.primal, self.tangent + other.tangent)
        return DualValue(self.primal + other, self.tangent)

    __radd__ = __add__

    def __neg__(self):
        return DualValue(-self.primal, -self.tangent)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DualValue):
            return DualValue(self.primal * other.primal,
                             self.tangent * other.primal + other.tangent * self.primal)
        return DualValue(self.primal * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualValue):
            return self * other ** -1.0
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return (self ** -1.0) * other

    def __pow__(self, p):
        p = float(p)
        if p == 2.0:
            return self * self
        return DualValue(self.primal ** p, self.tangent * (self.primal ** (p - 1.0) * p))

    def __matmul__(self, w):
        return DualValue(self.primal @ w, self.tangent @ w)

    def __getitem__(self, idx):
        items = idx if isinstance(idx, tuple) else (idx,)
        return DualValue(self.primal[idx], self.tangent[(slice(None),) + items])

    def sum(self, axis=None, keepdims=False):
        if axis is None:
            # reduce everything but the direction axis
            axis = tuple(range(np.ndim(_value(self.primal))))
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            axis = tuple(range(np.ndim(_value(self.primal))))
        return vmean(self, axis, keepdims)


def grad_params(loss: Var, parameter_leaves) -> list:
    """Reverse-mode gradient of a scalar tape node with respect to parameter leaves."""
    if not isinstance(loss, Var):
        raise DetachedNode("loss is not a tape node")
    return loss.tape.gradient(loss, parameter_leaves)


def input_jacobian(fn, x, directions, scales=None):
    """Evaluate ``fn`` on ``x`` seeded along ``directions``.

    Returns ``(value, derivatives)`` where ``derivatives[j]`` is the directional
    derivative along coordinate ``directions[j]`` (times ``scales[j]`` if
    given).  When ``fn`` builds tape nodes the derivatives are tape nodes too.
    """
    out = fn(DualValue.seed(x, directions, scales))
    if not isinstance(out, DualValue):
        # fn ignored its input: derivatives vanish
        shape = (len(directions),) + np.shape(_value(out))
        return out, np.zeros(shape)
    return out.primal, out.tangent


def value_and_grad(fn, *params):
    """Convenience wrapper: evaluate ``fn(*leaves)`` on a fresh tape and return (value, grads)."""
    with Tape() as tape:
        leaves = [tape.variable(p) for p in params]
        loss = fn(*leaves)
        grads = tape.gradient(loss, leaves)
    return float(loss.value), grads
