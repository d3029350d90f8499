"""Differentiation engine for scalar networks.

Two layers work together:

* :class:`Dual` carries a value together with ``k`` tangent directions and
  propagates them forward through the network (forward mode over the input).
* :class:`Tape` records every array operation performed on :class:`Var`
  objects and replays the record backwards (reverse mode over parameters).

Because the tangent propagation is itself made of taped operations, the
parameter gradient of a loss that contains ``|grad_x v|^2`` comes out of a
single backward sweep (forward-over-reverse).

Every primitive dispatches on its arguments: plain ``numpy`` arrays are
evaluated eagerly and never touch the tape, so the same network and loss code
serves training (taped) and evaluation (untaped).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericFailure

_ACTIVE: list["Tape"] = []


class Var:
    """An array-valued node on the active tape."""

    __slots__ = ("value", "parents", "vjp", "grad")
    # make ``ndarray <op> Var`` defer to the Var reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


class Tape:
    """Ordered record of taped operations.

    Use as a context manager; arrays passed through :meth:`watch` become
    differentiable leaves. Nodes are appended in creation order, which is a
    valid topological order, so the backward sweep is a plain reverse scan.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def watch(self, array) -> Var:
        leaf = Var(np.array(array, dtype=np.float64))
        self.nodes.append(leaf)
        return leaf

    def gradient(self, output: Var, sources):
        """Return d(output)/d(source) for each source; clears the tape."""
        if not isinstance(output, Var):
            # output does not depend on any watched leaf
            grads = [np.zeros_like(s.value) for s in sources]
            self.clear()
            return grads
        if output.value.size != 1:
            raise ValueError("gradient() needs a scalar output")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        grads = [
            np.zeros_like(s.value) if s.grad is None else np.array(s.grad, dtype=np.float64)
            for s in sources
        ]
        self.clear()
        return grads

    def clear(self):
        for node in self.nodes:
            node.grad = None
        self.nodes = []


def _node(value, parents, vjp):
    if not _ACTIVE:
        raise RuntimeError("Var operation outside an active Tape")
    out = Var(value, parents, vjp)
    _ACTIVE[-1].nodes.append(out)
    return out


def _val(x):
    return x.value if isinstance(x, Var) else x


def _parent(x):
    return x if isinstance(x, Var) else None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (_parent(a), _parent(b)),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (_parent(a), _parent(b)),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (_parent(a), _parent(b)),
                 lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (_parent(a), _parent(b)),
                 lambda g: (_unbroadcast(g / bv, sa), _unbroadcast(-g * out / bv, sb)))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, p):
    av = _val(a)
    out = av ** p
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * p * av ** (p - 1),))


def sqrt(a):
    out = np.sqrt(_val(a))
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def sq_relu(z):
    """sigma(t) = max(t, 0)^2."""
    r = np.maximum(_val(z), 0.0)
    out = r * r
    if not isinstance(z, Var):
        return out
    return _node(out, (z,), lambda g: (g * 2.0 * r,))


def sq_relu_grad(z):
    """sigma'(t) = 2 max(t, 0); its derivative is taken as 0 at t = 0."""
    zv = _val(z)
    out = 2.0 * np.maximum(zv, 0.0)
    if not isinstance(z, Var):
        return out
    step = 2.0 * (zv > 0.0)
    return _node(out, (z,), lambda g: (g * step,))


# -- structural --------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` with ``b`` a matrix or a vector (the weight side)."""
    av, bv = _val(a), _val(b)
    out = av @ bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out

    def vjp(g):
        if bv.ndim == 1:
            ga = np.multiply.outer(g, bv) if isinstance(a, Var) else None
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1) if isinstance(b, Var) else None
            return ga, gb
        if bv.ndim == 2:
            ga = g @ bv.T if isinstance(a, Var) else None
            gb = None
            if isinstance(b, Var):
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        raise NotImplementedError("matmul only supports a matrix or vector right operand")

    return _node(out, (_parent(a), _parent(b)), vjp)


def transpose(a):
    if not isinstance(a, Var):
        return a.T
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    orig = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def getitem(a, idx):
    if not isinstance(a, Var):
        return a[idx]
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] += g
        return (full,)

    return _node(a.value[idx], (a,), vjp)


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def reduce_sum(a, axis=None):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.value.shape
    return _node(np.sum(a.value, axis=axis), (a,),
                 lambda g: (_expand_reduced(g, shape, axis),))


def reduce_mean(a, axis=None):
    if not isinstance(a, Var):
        return np.mean(a, axis=axis)
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]
    return _node(np.mean(a.value, axis=axis), (a,),
                 lambda g: (_expand_reduced(g / count, shape, axis),))


def value_of(x):
    """Plain ndarray behind ``x`` (Var or array)."""
    return _val(x)


# -- fused layer primitives ----------------------------------------------------
#
# A "stack" holds a value and its k tangents in one array of shape
# (1 + k, n, width): row 0 is the value, rows 1.. the tangents. Layers then
# cost one matmul for value and tangents together.

def stacked_affine(S, W, b=None):
    """Row 0 -> W s + b, tangent rows -> W t."""
    Sv, Wv = _val(S), _val(W)
    out = Sv @ Wv.T
    if b is not None:
        out[0] += _val(b)
    if not (isinstance(S, Var) or isinstance(W, Var) or isinstance(b, Var)):
        return out

    def vjp(g):
        gS = g @ Wv if isinstance(S, Var) else None
        gW = None
        if isinstance(W, Var):
            gW = g.reshape(-1, g.shape[-1]).T @ Sv.reshape(-1, Sv.shape[-1])
        gb = g[0].sum(axis=0) if isinstance(b, Var) else None
        return gS, gW, gb

    return _node(out, (_parent(S), _parent(W), _parent(b)), vjp)


def stacked_sq_relu(S):
    """Row 0 -> sigma(z), tangent rows -> sigma'(z) t."""
    Sv = _val(S)
    slope = 2.0 * np.maximum(Sv[0], 0.0)
    out = slope * Sv
    out[0] *= 0.5
    if not isinstance(S, Var):
        return out

    def vjp(g):
        gS = slope * g
        if len(g) > 1:
            curvature = (Sv[1:] * g[1:]).sum(axis=0)
            gS[0] += np.where(slope > 0.0, 2.0 * curvature, 0.0)
        return (gS,)

    return _node(out, (S,), vjp)


# -- forward mode over the input ----------------------------------------------

class Dual:
    """A value with ``k`` tangent directions.

    ``value`` has shape ``S``; ``tangent`` has shape ``(k,) + S``. Both may be
    plain arrays or taped :class:`Var` objects.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    @classmethod
    def seed(cls, x, directions=None):
        """Lift input points ``x`` of shape (n, d).

        ``directions`` is (k, d); defaults to the d canonical directions, which
        makes the output tangent the input gradient.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = x.shape[-1]
        if directions is None:
            directions = np.eye(d)
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if directions.shape[-1] != d:
            raise ConfigError(
                f"direction length {directions.shape[-1]} does not match input dimension {d}")
        tangent = np.broadcast_to(directions[:, None, :], (directions.shape[0],) + x.shape)
        return cls(x, np.array(tangent))

    @property
    def n_directions(self):
        return _val(self.tangent).shape[0]

    def component(self, i):
        return Dual(self.value[..., i], self.tangent[..., i])

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        return Dual(self.value - other, self.tangent)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.tangent)

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value,
                        self.tangent * other.value + self.value * other.tangent)
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.value / other.value
            return Dual(q, (self.tangent - q * other.tangent) / other.value)
        return Dual(self.value / other, self.tangent / other)


def dual_sq_relu(x: Dual) -> Dual:
    return Dual(sq_relu(x.value), sq_relu_grad(x.value) * x.tangent)


def dual_affine(x: Dual, W, b=None) -> Dual:
    """x -> W x + b applied along the last axis."""
    Wt = transpose(W)
    value = matmul(x.value, Wt)
    if b is not None:
        value = add(value, b)
    return Dual(value, matmul(x.tangent, Wt))


def dual_dot(x: Dual, a) -> Dual:
    """x -> a^T x along the last axis."""
    return Dual(matmul(x.value, a), matmul(x.tangent, a))


# -- user-facing derivative helpers --------------------------------------------

def _check_finite(value, batch_index):
    if not np.all(np.isfinite(value)):
        raise NumericFailure(
            f"non-finite loss value {value!r}"
            + ("" if batch_index is None else f" at batch {batch_index}"),
            batch_index=batch_index)


def value_and_grad(loss_eval, params, batch_index=None):
    """Evaluate ``loss_eval(params)`` and its gradient w.r.t. ``params``."""
    with Tape() as tape:
        p = tape.watch(params)
        out = loss_eval(p)
        value = float(np.asarray(_val(out)).reshape(()))
        _check_finite(value, batch_index)
        (g,) = tape.gradient(out, [p])
    _check_finite(g, batch_index)
    return value, g


def grad_params(loss_eval, params, batch_index=None):
    """Gradient of a scalar loss closure with the same layout as ``params``."""
    return value_and_grad(loss_eval, params, batch_index)[1]


def forward_jvp(net_eval, params, x, direction):
    """Return (phi(x), d phi / d direction) at a single point."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    if x.size != direction.size:
        raise ConfigError(f"point has {x.size} coordinates but direction has {direction.size}")
    width = getattr(net_eval, "input_dim", None)
    if width is not None and width != x.size:
        raise ConfigError(f"network expects input dimension {width}, got {x.size}")
    out = net_eval(params, Dual.seed(x[None, :], direction[None, :]))
    return float(np.reshape(_val(out.value), -1)[0]), float(np.reshape(_val(out.tangent), -1)[0])


def grad_params_of_input_grad(net_eval, params, x):
    """Matrix whose row j is the parameter gradient of d phi / d x_j at ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    width = getattr(net_eval, "input_dim", None)
    if width is not None and width != x.size:
        raise ConfigError(f"network expects input dimension {width}, got {x.size}")
    rows = []
    for j in range(x.size):
        direction = np.zeros(x.size)
        direction[j] = 1.0

        def component(p, direction=direction):
            out = net_eval(p, Dual.seed(x[None, :], direction[None, :]))
            return reduce_sum(out.tangent)

        rows.append(grad_params(component, params))
    return np.array(rows)
