"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to :class:`Var` nodes while it
is active. Nodes hold float64 arrays (a scalar is a 0-d array), and each node
stores a vector-Jacobian product closure for its parents. Operations whose
inputs are all plain arrays are evaluated eagerly and never touch the tape, so
the same numerical code runs with or without differentiation.

Example
-------
>>> with Tape() as tape:
...     (x,) = tape.declare_parameters([3.0])
...     y = x * x
...     tape.grad(y)
array([6.])
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "StaleRecordingError",
    "Tape",
    "Var",
    "active_tape",
    "amax",
    "central_difference",
    "concatenate",
    "declare_parameters",
    "detach",
    "exp",
    "finite_diff_check",
    "grad",
    "is_var",
    "log",
    "logsumexp",
    "matmul",
    "mean",
    "record",
    "reshape",
    "sqrt",
    "square",
    "stack",
    "sum",
    "swapaxes",
    "value_of",
]


class NonFiniteError(FloatingPointError):
    """Raised when a recorded node would hold NaN or infinite values."""


class StaleRecordingError(RuntimeError):
    """Raised when nodes from a closed or foreign tape are used."""


_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "detpf_active_tape", default=None
)


def active_tape() -> "Tape | None":
    return _ACTIVE.get()


class Tape:
    """A single-use recording of differentiable operations.

    Nodes are appended in creation order, which is a valid topological order
    for the backward pass. Tapes are bound to the current context via
    :mod:`contextvars`, so independent recordings can live in different
    threads without sharing state.
    """

    def __init__(self) -> None:
        self._nodes: list[Var] = []
        self._params: list[Var] = []
        self._token = None
        self.closed = False

    def __enter__(self) -> "Tape":
        if self.closed:
            raise StaleRecordingError("tape has already been closed")
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None
        self.closed = True

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def num_parameters(self) -> int:
        return int(np.sum([p.value.size for p in self._params], dtype=np.int64))

    def _append(self, node: "Var") -> None:
        node.index = len(self._nodes)
        self._nodes.append(node)

    def parameter(self, values) -> "Var":
        """Declare one array-shaped parameter leaf."""
        self._check_open()
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("parameter values must be finite")
        leaf = Var(arr, self, (), None)
        self._append(leaf)
        self._params.append(leaf)
        return leaf

    def declare_parameters(self, values) -> list["Var"]:
        """Declare one scalar leaf per entry of ``values``."""
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        return [self.parameter(v) for v in arr]

    def grad(self, root: "Var") -> np.ndarray:
        """Gradient of a scalar ``root`` w.r.t. every declared parameter.

        Returns the flattened gradients of all parameters concatenated in
        declaration order. Parameters that ``root`` does not depend on get
        zeros.
        """
        grads = self.grad_list(root)
        if not grads:
            return np.zeros(0)
        return np.concatenate([g.reshape(-1) for g in grads])

    def grad_list(self, root) -> list[np.ndarray]:
        if not isinstance(root, Var):
            return [np.zeros_like(p.value) for p in self._params]
        if root.tape is not self:
            raise StaleRecordingError("root was recorded on a different tape")
        if root.value.size != 1:
            raise ValueError("grad requires a scalar root, got shape %s" % (root.shape,))
        adjoint: list[np.ndarray | None] = [None] * (root.index + 1)
        adjoint[root.index] = np.ones_like(root.value)
        nodes = self._nodes
        for k in range(root.index, -1, -1):
            g = adjoint[k]
            if g is None:
                continue
            node = nodes[k]
            if not node.parents:
                continue
            adjoint[k] = None  # interior adjoints are not needed once propagated
            contributions = node.vjp(g)
            for parent, pg in zip(node.parents, contributions):
                if pg is None:
                    continue
                j = parent.index
                prev = adjoint[j]
                adjoint[j] = pg if prev is None else prev + pg
        out = []
        for p in self._params:
            g = adjoint[p.index] if p.index <= root.index else None
            out.append(np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64))
        return out

    def _check_open(self) -> None:
        if self.closed:
            raise StaleRecordingError("tape has already been closed")


class Var:
    """A recorded array value."""

    __slots__ = ("value", "tape", "parents", "vjp", "index")
    __array_priority__ = 1000.0

    def __init__(self, value: np.ndarray, tape: Tape, parents: tuple, vjp) -> None:
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.index = -1

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return "Var(%r)" % (self.value,)

    def __float__(self) -> float:
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

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
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> np.ndarray:
    """The numerical value of a node or array-like."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def detach(x) -> np.ndarray:
    """Value of ``x`` as a constant (gradients stop here)."""
    return value_of(x)


def record(value, parents: Sequence, vjp: Callable) -> "Var | np.ndarray":
    """Record a node computed from ``parents``.

    ``vjp(g)`` must return one entry per parent (``None`` for constants).
    When no parent is a :class:`Var` the plain value is returned.
    """
    tape = None
    for p in parents:
        if isinstance(p, Var):
            if p.tape.closed:
                raise StaleRecordingError("node belongs to a closed tape")
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise StaleRecordingError("nodes from different tapes cannot be combined")
    value = np.asarray(value, dtype=np.float64)
    if tape is None:
        return value
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("non-finite value produced while recording")
    var_parents = tuple(p for p in parents if isinstance(p, Var))
    if len(var_parents) == len(parents):
        wrapped = vjp
    else:
        mask = [isinstance(p, Var) for p in parents]

        def wrapped(g, _vjp=vjp, _mask=mask):
            return tuple(c for c, m in zip(_vjp(g), _mask) if m)

    node = Var(value, tape, var_parents, wrapped)
    tape._append(node)
    return node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return record(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def subtract(a, b):
    av, bv = value_of(a), value_of(b)
    return record(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def multiply(a, b):
    av, bv = value_of(a), value_of(b)
    return record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def divide(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def negative(a):
    return record(-value_of(a), (a,), lambda g: (-g,))


def power(a, p: float):
    av = value_of(a)
    return record(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def exp(a):
    out = np.exp(value_of(a))
    return record(out, (a,), lambda g: (g * out,))


def log(a):
    av = value_of(a)
    return record(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    out = np.sqrt(value_of(a))
    return record(out, (a,), lambda g: (g * 0.5 / out,))


def square(a):
    av = value_of(a)
    return record(av * av, (a,), lambda g: (2.0 * g * av,))


# -- reductions -----------------------------------------------------------


def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)) if not keepdims else g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    av = value_of(a)
    return record(
        np.sum(av, axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (np.array(_expand(g, av.shape, axis, keepdims)),),
    )


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    count = av.size if axis is None else np.prod([av.shape[ax] for ax in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) / float(count)


def logsumexp(a, axis=None, keepdims=False):
    """Numerically stable ``log(sum(exp(a)))`` recorded as one node."""
    av = value_of(a)
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(av - m), axis=axis, keepdims=True)
    out_keep = np.log(s) + m
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def vjp(g):
        soft = np.exp(av - out_keep)
        return (soft * _expand(g, av.shape, axis, keepdims),)

    return record(out, (a,), vjp)


def amax(a, axis=None):
    """Maximum along ``axis``; the gradient goes to the first maximiser."""
    av = value_of(a)
    if axis is None:
        flat = int(np.argmax(av))
        out = av.reshape(-1)[flat]

        def vjp(g):
            z = np.zeros(av.size)
            z[flat] = g
            return (z.reshape(av.shape),)

        return record(out, (a,), vjp)
    axis = axis % av.ndim
    arg = np.expand_dims(np.argmax(av, axis=axis), axis)
    out = np.take_along_axis(av, arg, axis=axis).squeeze(axis)

    def vjp(g):
        z = np.zeros_like(av)
        np.put_along_axis(z, arg, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return record(out, (a,), vjp)


# -- linear algebra and shape ---------------------------------------------


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv

    def vjp(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if av.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
            ga = _unbroadcast(ga, av.shape)
        else:
            ga = _unbroadcast(ga, av.shape)
        if bv.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
        return ga, _unbroadcast(gb, bv.shape)

    return record(out, (a, b), vjp)


def reshape(a, shape):
    av = value_of(a)
    return record(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def swapaxes(a, ax1: int, ax2: int):
    return record(np.swapaxes(value_of(a), ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, idx):
    av = value_of(a)

    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, idx, g)
        return (z,)

    return record(av[idx], (a,), vjp)


def stack(items: Sequence, axis: int = 0):
    vals = [value_of(x) for x in items]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(vals)))

    return record(out, tuple(items), vjp)


def concatenate(items: Sequence, axis: int = 0):
    vals = [value_of(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tuple(items), vjp)


# -- module-level conveniences -----------------------------------------------


def _require_tape() -> Tape:
    tape = _ACTIVE.get()
    if tape is None:
        raise StaleRecordingError("no active tape; use `with Tape():`")
    return tape


def declare_parameters(values) -> list[Var]:
    """Declare scalar parameter leaves on the active tape."""
    return _require_tape().declare_parameters(values)


def grad(root) -> np.ndarray:
    """Gradient of ``root`` on the active tape."""
    tape = _require_tape()
    if isinstance(root, Var) and root.tape is not tape:
        raise StaleRecordingError("root does not belong to the active tape")
    return tape.grad(root)


def central_difference(f: Callable[[np.ndarray], float], point, h: float) -> np.ndarray:
    """Central finite-difference gradient of ``f`` at ``point``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.asarray(point, dtype=np.float64).reshape(-1)
    out = np.empty_like(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = float(value_of(f(xp))), float(value_of(f(xm)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("function returned a non-finite value during differencing")
        out[i] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_check(f: Callable, point, h: float = 1e-5) -> float:
    """Max relative error between the recorded gradient and central differences.

    ``f`` receives a 1-D parameter vector, either a :class:`Var` (while
    recording) or a plain array (while differencing), and returns a scalar.
    The error per coordinate is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    x0 = np.asarray(point, dtype=np.float64).reshape(-1)
    if x0.size == 0:
        return 0.0
    with Tape() as tape:
        theta = tape.parameter(x0)
        out = f(theta)
        if not np.all(np.isfinite(value_of(out))):
            raise NonFiniteError("function returned a non-finite value")
        g_ad = tape.grad(out)
    g_fd = central_difference(f, x0, h)
    return float(np.max(np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))))
