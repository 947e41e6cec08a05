"""Tape-based reverse-mode differentiation over numpy arrays.

Every operation on a :class:`Var` appends a node to its :class:`Tape`.  The
reverse sweep in :func:`grad` only needs first-order vector-Jacobian products,
because spatial derivatives of network outputs are obtained with forward
order-2 jets (:class:`Jet`) whose coefficients are themselves tape values.
Differentiating a jet coefficient with respect to parameters is therefore an
ordinary reverse sweep over a longer tape.

Every unary primitive is a family ``unary(kind, order)`` giving the
``order``-th derivative of ``kind``; the adjoint of order ``k`` uses order
``k + 1``.  Jets need orders 1 and 2, their parameter gradients order 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Jet",
    "DivergedGradientError",
    "UnsupportedPrimitiveError",
    "grad",
    "jet_eval",
    "seed_jet",
    "unary",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "elu",
    "silu",
    "abs_smooth",
    "linear",
    "matmul",
    "concat",
    "sum",
    "mean",
    "square",
    "value_of",
]


class DivergedGradientError(FloatingPointError):
    """A non-finite value showed up while differentiating."""


class UnsupportedPrimitiveError(NotImplementedError):
    """A primitive cannot be propagated at the requested derivative order."""


# ---------------------------------------------------------------------------
# elementwise derivative tables


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _d_sin(x, k, _):
    return (np.sin, np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z))[k % 4](x)


def _d_cos(x, k, _):
    return (np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin)[k % 4](x)


def _d_exp(x, k, _):
    return np.exp(x)


def _d_log(x, k, _):
    if k == 0:
        return np.log(x)
    return (-1.0) ** (k - 1) * math.factorial(k - 1) / x**k


def _d_sqrt(x, k, _):
    coef = 1.0
    for i in range(k):
        coef *= 0.5 - i
    return coef * x ** (0.5 - k)


def _d_tanh(x, k, _):
    t = np.tanh(x)
    s = 1.0 - t * t
    if k == 0:
        return t
    if k == 1:
        return s
    if k == 2:
        return -2.0 * t * s
    if k == 3:
        return -2.0 * s * (1.0 - 3.0 * t * t)
    raise UnsupportedPrimitiveError(f"tanh derivative of order {k}")


def _d_elu(x, k, _):
    # ELU with alpha = 1; x == 0 takes the left branch so ELU''(0) = 1.
    pos = x > 0
    neg = np.exp(np.minimum(x, 0.0))
    if k == 0:
        return np.where(pos, x, neg - 1.0)
    if k == 1:
        return np.where(pos, 1.0, neg)
    return np.where(pos, 0.0, neg)


def _d_silu(x, k, _):
    s = _sigmoid(x)
    if k == 0:
        return x * s
    if k == 1:
        return s * (1.0 + x * (1.0 - s))
    ds = s * (1.0 - s)
    if k == 2:
        return ds * (2.0 + x * (1.0 - 2.0 * s))
    if k == 3:
        return ds * ((1.0 - 2.0 * s) * (3.0 + x * (1.0 - 2.0 * s)) - 2.0 * x * ds)
    raise UnsupportedPrimitiveError(f"silu derivative of order {k}")


def _d_abs_smooth(x, k, eps):
    a = np.sqrt(x * x + eps * eps)
    if k == 0:
        return a
    if k == 1:
        return x / a
    if k == 2:
        return eps * eps / a**3
    if k == 3:
        return -3.0 * eps * eps * x / a**5
    raise UnsupportedPrimitiveError(f"abs_smooth derivative of order {k}")


_DERIVS: dict[str, Callable[[np.ndarray, int, float], np.ndarray]] = {
    "sin": _d_sin,
    "cos": _d_cos,
    "exp": _d_exp,
    "log": _d_log,
    "sqrt": _d_sqrt,
    "tanh": _d_tanh,
    "elu": _d_elu,
    "silu": _d_silu,
    "abs_smooth": _d_abs_smooth,
}

# highest derivative order each kind can produce
_MAX_ORDER = {
    "sin": math.inf,
    "cos": math.inf,
    "exp": math.inf,
    "log": math.inf,
    "sqrt": math.inf,
    "tanh": 3,
    "elu": math.inf,
    "silu": 3,
    "abs_smooth": 3,
}


def _elu_upto2(x, _):
    pos = x > 0
    e = np.exp(np.minimum(x, 0.0))
    g1 = np.where(pos, 1.0, e)
    return np.where(pos, x, e - 1.0), g1, g1 - pos


# value and first two derivatives from shared intermediates
_UPTO2 = {"elu": _elu_upto2}


def _unary_upto2(kind: str, x: np.ndarray, eps: float):
    fused = _UPTO2.get(kind)
    if fused is not None:
        return fused(x, eps)
    return tuple(_unary_value(kind, x, k, eps) for k in range(3))


def _unary_value(kind: str, x: np.ndarray, order: int, eps: float) -> np.ndarray:
    fn = _DERIVS.get(kind)
    if fn is None or order > _MAX_ORDER[kind]:
        raise UnsupportedPrimitiveError(f"{kind!r} at derivative order {order}")
    return fn(x, order, eps)


# ---------------------------------------------------------------------------
# op registry


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@dataclass(frozen=True)
class _Op:
    name: str
    forward: Callable[..., np.ndarray]
    # vjp(g, out, inputs, needs, **attrs) -> tuple of input adjoints (None when not needed)
    vjp: Callable[..., tuple]


def _vjp_add(g, out, xs, needs):
    a, b = xs
    return (
        _unbroadcast(g, np.shape(a)) if needs[0] else None,
        _unbroadcast(g, np.shape(b)) if needs[1] else None,
    )


def _vjp_sub(g, out, xs, needs):
    a, b = xs
    return (
        _unbroadcast(g, np.shape(a)) if needs[0] else None,
        _unbroadcast(-g, np.shape(b)) if needs[1] else None,
    )


def _vjp_mul(g, out, xs, needs):
    a, b = xs
    return (
        _unbroadcast(g * b, np.shape(a)) if needs[0] else None,
        _unbroadcast(g * a, np.shape(b)) if needs[1] else None,
    )


def _vjp_div(g, out, xs, needs):
    a, b = xs
    return (
        _unbroadcast(g / b, np.shape(a)) if needs[0] else None,
        _unbroadcast(-g * out / b, np.shape(b)) if needs[1] else None,
    )


def _vjp_matmul(g, out, xs, needs):
    a, b = xs
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


def _fwd_linear(x, w, b=None):
    x = np.asarray(x)
    # one GEMM over all leading axes instead of a stacked matmul
    y = (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))
    if b is not None:
        y = y + b
    return y


def _vjp_linear(g, out, xs, needs):
    x, w = xs[0], xs[1]
    gx = _unbroadcast(g @ w, np.shape(x)) if needs[0] else None
    gw = None
    if needs[1]:
        g2 = g.reshape(-1, g.shape[-1])
        x2 = np.broadcast_to(x, g.shape[:-1] + (x.shape[-1],)).reshape(-1, x.shape[-1])
        gw = g2.T @ x2
    gb = None
    if len(xs) == 3 and needs[2]:
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
    return (gx, gw, gb) if len(xs) == 3 else (gx, gw)


def _vjp_unary(g, out, xs, needs, kind, order, eps):
    return (g * _unary_value(kind, xs[0], order + 1, eps),)


def _vjp_pow(g, out, xs, needs, n):
    x = xs[0]
    return (g * n * x ** (n - 1),)


def _fwd_sum(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _vjp_sum(g, out, xs, needs, axis=None, keepdims=False):
    x = xs[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape),)


def _fwd_mean(x, axis=None, keepdims=False):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _vjp_mean(g, out, xs, needs, axis=None, keepdims=False):
    x = xs[0]
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, x.shape),)


def _vjp_reshape(g, out, xs, needs, shape):
    return (g.reshape(np.shape(xs[0])),)


def _vjp_transpose(g, out, xs, needs, axes):
    return (np.transpose(g, np.argsort(axes)),)


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is None or k is Ellipsis for k in parts)


def _vjp_getitem(g, out, xs, needs, key):
    full = np.zeros(np.shape(xs[0]))
    if _is_basic(key):
        full[key] = g
    else:
        np.add.at(full, key, g)
    return (full,)


def _fwd_concat(*xs, axis=0):
    return np.concatenate(xs, axis=axis)


def _vjp_concat(g, out, xs, needs, axis=0):
    sizes = np.cumsum([np.shape(x)[axis] for x in xs])[:-1]
    parts = np.split(g, sizes, axis=axis)
    return tuple(p if n else None for p, n in zip(parts, needs))


_OPS: dict[str, _Op] = {
    op.name: op
    for op in [
        _Op("add", np.add, _vjp_add),
        _Op("sub", np.subtract, _vjp_sub),
        _Op("mul", np.multiply, _vjp_mul),
        _Op("div", np.divide, _vjp_div),
        _Op("neg", np.negative, lambda g, out, xs, needs: (-g,)),
        _Op("matmul", np.matmul, _vjp_matmul),
        _Op("linear", _fwd_linear, _vjp_linear),
        _Op("unary", lambda x, kind, order, eps: _unary_value(kind, x, order, eps), _vjp_unary),
        _Op("pow", lambda x, n: x**n, _vjp_pow),
        _Op("sum", _fwd_sum, _vjp_sum),
        _Op("mean", _fwd_mean, _vjp_mean),
        _Op("reshape", lambda x, shape: np.reshape(x, shape), _vjp_reshape),
        _Op("transpose", lambda x, axes: np.transpose(x, axes), _vjp_transpose),
        _Op("getitem", lambda x, key: x[key], _vjp_getitem),
        _Op("concat", _fwd_concat, _vjp_concat),
    ]
}


# ---------------------------------------------------------------------------
# tape and variables


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "op", "inputs", "attrs", "value", "name")
    __array_ufunc__ = None  # ndarray <op> Var defers to Var

    def __init__(self, tape, index, op, inputs, attrs, value, name=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.name = name

    def __repr__(self):
        label = self.name or self.op
        return f"Var(#{self.index} {label}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return _apply("transpose", (self,), axes=tuple(reversed(range(self.ndim))))

    def __add__(self, other):
        return _apply("add", (self, other))

    def __radd__(self, other):
        return _apply("add", (other, self))

    def __sub__(self, other):
        return _apply("sub", (self, other))

    def __rsub__(self, other):
        return _apply("sub", (other, self))

    def __mul__(self, other):
        return _apply("mul", (self, other))

    def __rmul__(self, other):
        return _apply("mul", (other, self))

    def __truediv__(self, other):
        return _apply("div", (self, other))

    def __rtruediv__(self, other):
        return _apply("div", (other, self))

    def __neg__(self):
        return _apply("neg", (self,))

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise UnsupportedPrimitiveError("only integer powers are recorded")
        return _apply("pow", (self,), n=int(n))

    def __matmul__(self, other):
        return _apply("matmul", (self, other))

    def __rmatmul__(self, other):
        return _apply("matmul", (other, self))

    def __getitem__(self, key):
        return _apply("getitem", (self,), key=key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return _apply("reshape", (self,), shape=tuple(shape))

    def sum(self, axis=None, keepdims=False):
        return _apply("sum", (self,), axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _apply("mean", (self,), axis=axis, keepdims=keepdims)


class Tape:
    """Append-only record of primitive operations.

    Nodes are stored in creation order, so every node's inputs precede it.
    A tape belongs to one thread of execution; replaying a finished tape
    does not mutate it.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        v = Var(self, len(self.nodes), "leaf", (), {}, np.asarray(value, dtype=np.float64), name)
        self.nodes.append(v)
        return v

    def leaves(self, values: Sequence[np.ndarray], prefix: str = "p") -> list[Var]:
        return [self.leaf(v, f"{prefix}{i}") for i, v in enumerate(values)]

    def _record(self, op: str, inputs: tuple, attrs: dict, value: np.ndarray) -> Var:
        v = Var(self, len(self.nodes), op, inputs, attrs, value)
        self.nodes.append(v)
        return v

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every node forward; ``leaf_values`` overrides leaves by index."""
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                values.append(np.asarray(leaf_values.get(node.index, node.value), dtype=np.float64))
                continue
            args = [values[x.index] if isinstance(x, Var) else x for x in node.inputs]
            values.append(_OPS[node.op].forward(*args, **node.attrs))
        return values


def _apply(op: str, inputs: tuple, **attrs) -> Any:
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            tape = x.tape
            break
    args = [x.value if isinstance(x, Var) else x for x in inputs]
    out = _OPS[op].forward(*args, **attrs)
    if tape is None:
        return out
    return tape._record(op, inputs, attrs, out)


def value_of(x) -> np.ndarray:
    """Primal value of a tape variable or plain array."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def grad(loss: Var, params: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar ``loss`` with respect to ``params``.

    Parameters that ``loss`` does not depend on receive zeros.  A non-finite
    adjoint raises :class:`DivergedGradientError` naming the first node (in
    sweep order) where it appeared.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss is not recorded on a tape")
    if np.size(loss.value) != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    if not np.isfinite(loss.value).all():
        raise DivergedGradientError(f"non-finite loss at node #{loss.index} ({loss.op})")
    tape = loss.tape
    adj: list[np.ndarray | None] = [None] * (loss.index + 1)
    adj[loss.index] = np.ones_like(loss.value)
    for i in range(loss.index, -1, -1):
        g = adj[i]
        node = tape.nodes[i]
        if g is None or node.op == "leaf":
            continue
        needs = tuple(isinstance(x, Var) for x in node.inputs)
        args = [x.value if isinstance(x, Var) else x for x in node.inputs]
        contribs = _OPS[node.op].vjp(g, node.value, args, needs, **node.attrs)
        for x, c in zip(node.inputs, contribs):
            if c is None or not isinstance(x, Var):
                continue
            j = x.index
            adj[j] = c if adj[j] is None else adj[j] + c
    out = []
    for p in params:
        a = adj[p.index] if p.index <= loss.index else None
        out.append(np.zeros_like(p.value) if a is None else np.asarray(a))
    if not all(np.isfinite(g).all() for g in out):
        for i in range(loss.index, -1, -1):
            if adj[i] is not None and not np.isfinite(adj[i]).all():
                node = tape.nodes[i]
                raise DivergedGradientError(
                    f"non-finite adjoint at node #{i} ({node.name or node.op})"
                )
    return out


# ---------------------------------------------------------------------------
# functional primitives (accept Var or ndarray)


def unary(kind: str, x, order: int = 0, eps: float = 0.0):
    if isinstance(x, Var):
        return _apply("unary", (x,), kind=kind, order=order, eps=eps)
    return _unary_value(kind, np.asarray(x, dtype=np.float64), order, eps)


def sin(x):
    return unary("sin", x)


def cos(x):
    return unary("cos", x)


def exp(x):
    return unary("exp", x)


def log(x):
    return unary("log", x)


def sqrt(x):
    return unary("sqrt", x)


def tanh(x):
    return unary("tanh", x)


def elu(x):
    return unary("elu", x)


def silu(x):
    return unary("silu", x)


def abs_smooth(x, eps: float = 1e-8):
    return unary("abs_smooth", x, eps=eps)


def square(x):
    return x * x


def linear(x, w, b=None):
    """``x @ w.T + b`` over the last axis of ``x``."""
    if b is None:
        return _apply("linear", (x, w))
    return _apply("linear", (x, w, b))


def matmul(a, b):
    return _apply("matmul", (a, b))


def concat(xs: Sequence, axis: int = 0):
    return _apply("concat", tuple(xs), axis=axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return _apply("sum", (x,), axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return _apply("mean", (x,), axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# order-2 jets


@dataclass
class Jet:
    """Truncated Taylor expansion along one or more directions.

    ``value`` has shape ``(..., w)``.  ``d1`` and ``d2`` carry a leading
    direction axis, ``(D, ..., w)``, and broadcast against ``value``; ``d2`` is
    ``None`` for order-1 jets.  All three may be tape variables.
    """

    value: Any
    d1: Any
    d2: Any = None

    @property
    def order(self) -> int:
        return 1 if self.d2 is None else 2

    def linear(self, w, b=None) -> "Jet":
        d2 = None if self.d2 is None else linear(self.d2, w)
        return Jet(linear(self.value, w, b), linear(self.d1, w), d2)

    def apply(self, kind: str, eps: float = 0.0) -> "Jet":
        """Push the jet through an elementwise primitive ``kind``."""
        if kind not in _DERIVS:
            raise UnsupportedPrimitiveError(f"{kind!r} has no jet rule")
        need = 2 if self.d2 is not None else 1
        # parameter gradients of the jet need one order more
        if _MAX_ORDER[kind] < need + 1:
            raise UnsupportedPrimitiveError(f"{kind!r} cannot carry order-{need} jets")
        if not any(isinstance(v, Var) for v in (self.value, self.d1, self.d2)):
            return self._apply_plain(kind, eps)
        g1 = unary(kind, self.value, 1, eps)
        d1 = g1 * self.d1
        d2 = None
        if self.d2 is not None:
            g2 = unary(kind, self.value, 2, eps)
            d2 = g1 * self.d2 + g2 * (self.d1 * self.d1)
        return Jet(unary(kind, self.value, 0, eps), d1, d2)

    def _apply_plain(self, kind: str, eps: float) -> "Jet":
        # untaped fast path: shared intermediates, in-place products
        x = np.asarray(self.value, dtype=np.float64)
        if self.d2 is None:
            g1 = _unary_value(kind, x, 1, eps)
            return Jet(_unary_value(kind, x, 0, eps), g1 * self.d1)
        f, g1, g2 = _unary_upto2(kind, x, eps)
        t = self.d1 * self.d1
        t = np.multiply(t, g2, out=t) if t.shape[1:] == g2.shape else t * g2
        d2 = g1 * self.d2
        d2 = np.add(d2, t, out=d2) if d2.shape == t.shape else d2 + t
        return Jet(f, g1 * self.d1, d2)

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, self.d1, self.d2)
        d2 = None if self.d2 is None or other.d2 is None else self.d2 + other.d2
        return Jet(self.value + other.value, self.d1 + other.d1, d2)

    __radd__ = __add__

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return self.scale(other)
        a, b = self, other
        d1 = a.d1 * b.value + a.value * b.d1
        d2 = None
        if a.d2 is not None and b.d2 is not None:
            d2 = a.d2 * b.value + 2.0 * (a.d1 * b.d1) + a.value * b.d2
        return Jet(a.value * b.value, d1, d2)

    __rmul__ = __mul__

    def scale(self, c) -> "Jet":
        d2 = None if self.d2 is None else self.d2 * c
        return Jet(self.value * c, self.d1 * c, d2)

    def concat(self, other: "Jet") -> "Jet":
        """Join two jets along the feature axis."""
        value = concat([self.value, other.value], axis=-1)
        d1 = concat([_bcast_dirs(self.d1, self.value), _bcast_dirs(other.d1, other.value)], axis=-1)
        d2 = None
        if self.d2 is not None and other.d2 is not None:
            d2 = concat([_bcast_dirs(self.d2, self.value), _bcast_dirs(other.d2, other.value)], axis=-1)
        return Jet(value, d1, d2)


def _bcast_dirs(d, like):
    lead = np.shape(d)[0]
    target = (lead,) + np.shape(value_of(like))
    if np.shape(d) == target:
        return d
    return d * np.ones(target)


def seed_jet(x, directions: np.ndarray, order: int = 2) -> Jet:
    """Jet of the identity map at ``x`` (shape ``(..., d)``) along unit ``directions`` (D, d)."""
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    norms = np.linalg.norm(directions, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise ValueError(f"jet directions must have unit norm, got {norms}")
    xv = value_of(x)
    d1 = directions.reshape((directions.shape[0],) + (1,) * (xv.ndim - 1) + (directions.shape[1],))
    d2 = np.zeros_like(d1) if order == 2 else None
    return Jet(x, d1, d2)


def jet_eval(f: Callable[[Jet], Jet], x, direction, order: int = 2) -> Jet:
    """Evaluate ``f`` with its first ``order`` directional derivatives at ``x``.

    ``f`` maps a :class:`Jet` to a :class:`Jet` using the jet-aware operations.
    With a single direction the leading direction axis is dropped.
    """
    direction = np.asarray(direction, dtype=np.float64)
    single = direction.ndim == 1
    out = f(seed_jet(x, direction, order))
    if not single:
        return out
    d1 = _bcast_dirs(out.d1, out.value)[0]
    d2 = None if out.d2 is None else _bcast_dirs(out.d2, out.value)[0]
    return Jet(out.value, d1, d2)
