"""Dense float64 matrices with a reverse-mode differentiation tape.

Every value is a 2-D ``numpy.ndarray`` of dtype float64 (a column vector is
``n x 1``, a scalar is ``1 x 1``).  Operations on :class:`Var` append a node to
the owning :class:`Tape`; :meth:`Tape.backward` walks the nodes once in
reverse creation order and accumulates vector-Jacobian products.

Binary operations broadcast the way numpy does, which is all the losses need
(row vectors against matrices, scalars against anything).

Example::

    tape = Tape()
    w = tape.param(np.ones((2, 2)))
    loss = frobenius_sq(w @ w)
    grads = tape.backward(loss)
    grads[w]  # d loss / d w
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import NumericError, ShapeError

Matrix = np.ndarray
Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

ELEMENTWISE = (
    "add", "sub", "mul", "div", "log", "exp", "sqrt", "erf", "sigmoid",
    "square", "clamp_min",
)
REDUCTIONS = ("sum", "mean", "frobenius_sq")

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def as_matrix(x) -> Matrix:
    """Coerce scalars, vectors and nested lists to a 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


class Tape:
    """Append-only record of primitive operations.

    Single-writer: build and differentiate a tape from one thread.
    """

    def __init__(self):
        self._values: list[Matrix] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Vjp | None] = []
        self._needs_grad: list[bool] = []
        self._params: list[int] = []

    def __len__(self):
        return len(self._values)

    def _append(self, value, parents, vjp, needs_grad) -> "Var":
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._needs_grad.append(needs_grad)
        return Var(self, len(self._values) - 1, value)

    def const(self, value) -> "Var":
        """A leaf that never receives a gradient."""
        return self._append(as_matrix(value), (), None, False)

    def param(self, value, name: str | None = None) -> "Var":
        """A leaf whose gradient :meth:`backward` reports."""
        v = self._append(as_matrix(value), (), None, True)
        v.name = name
        self._params.append(v.index)
        return v

    def record(self, value: Matrix, parents: Sequence["Var"], vjp: Vjp) -> "Var":
        """Record a custom primitive.

        ``vjp(g)`` receives the upstream gradient (same shape as ``value``) and
        returns one gradient per parent, or ``None`` for a parent that does not
        need one.  Nodes whose parents are all constants are stored without a
        vjp, so constant subgraphs cost nothing on the way back.
        """
        for p in parents:
            if p.tape is not self:
                raise ValueError("Var belongs to a different tape")
        needs = any(self._needs_grad[p.index] for p in parents)
        return self._append(
            value, tuple(p.index for p in parents), vjp if needs else None, needs
        )

    def needs_grad(self, v: "Var") -> bool:
        return self._needs_grad[v.index]

    @property
    def params(self) -> list["Var"]:
        return [Var(self, i, self._values[i]) for i in self._params]

    def backward(self, loss: "Var") -> dict["Var", Matrix]:
        """Gradients of a scalar ``loss`` with respect to every parameter leaf.

        Parameters the loss does not depend on get a zero gradient.
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        grads: list[Matrix | None] = [None] * len(self._values)
        grads[loss.index] = np.ones((1, 1))
        for i in range(loss.index, -1, -1):
            g = grads[i]
            vjp = self._vjps[i]
            if g is None or vjp is None:
                continue
            for p, pg in zip(self._parents[i], vjp(g)):
                if pg is None or not self._needs_grad[p]:
                    continue
                if grads[p] is None:
                    grads[p] = pg
                else:
                    grads[p] = grads[p] + pg
        out = {}
        for i in self._params:
            g = grads[i]
            out[Var(self, i, self._values[i])] = (
                np.zeros_like(self._values[i]) if g is None else g
            )
        return out


class Var:
    """Handle to one node of a :class:`Tape`.

    Two handles are equal (and hash equal) when they refer to the same node.
    """

    __slots__ = ("tape", "index", "value", "name")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, index: int, value: Matrix):
        self.tape = tape
        self.index = index
        self.value = value
        self.name = None

    def __hash__(self):
        return hash((id(self.tape), self.index))

    def __eq__(self, other):
        return (
            isinstance(other, Var)
            and other.tape is self.tape
            and other.index == self.index
        )

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return take(self, key)


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _pair(a, b) -> tuple[Var, Var]:
    if isinstance(a, Var):
        return a, _lift(b, a.tape)
    if isinstance(b, Var):
        return _lift(a, b.tape), b
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: Matrix, shape: tuple[int, int]) -> Matrix:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Var, b: Var, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- binary -----------------------------------------------------------------

def add(a, b) -> Var:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return a.tape.record(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return a.tape.record(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    return a.tape.record(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Var:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise ValueError("div: division by zero")
    out = av / bv
    return a.tape.record(
        out, (a, b),
        lambda g: (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * out / bv, bv.shape),
        ),
    )


def matmul(a, b) -> Var:
    a, b = _pair(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# -- unary ------------------------------------------------------------------

def neg(x: Var) -> Var:
    return x.tape.record(-x.value, (x,), lambda g: (-g,))


def _check_finite(xv: np.ndarray, op: str) -> None:
    if not np.isfinite(xv).all():
        raise NumericError(f"{op}: non-finite input")


def log(x: Var) -> Var:
    xv = x.value
    _check_finite(xv, "log")
    if np.any(~(xv > 0.0)):
        raise ValueError("log: input must be strictly positive")
    return x.tape.record(np.log(xv), (x,), lambda g: (g / xv,))


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return x.tape.record(out, (x,), lambda g: (g * out,))


def sqrt(x: Var) -> Var:
    xv = x.value
    _check_finite(xv, "sqrt")
    if np.any(~(xv >= 0.0)):
        raise ValueError("sqrt: input must be nonnegative")
    out = np.sqrt(xv)
    return x.tape.record(out, (x,), lambda g: (g * 0.5 / out,))


def erf(x: Var) -> Var:
    """Error function (Cephes-backed; absolute error well below 1e-15)."""
    xv = x.value
    return x.tape.record(
        special.erf(xv), (x,),
        lambda g: (g * _TWO_OVER_SQRT_PI * np.exp(-xv * xv),),
    )


def sigmoid(x: Var) -> Var:
    out = special.expit(x.value)
    return x.tape.record(out, (x,), lambda g: (g * out * (1.0 - out),))


def square(x: Var) -> Var:
    xv = x.value
    return x.tape.record(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def relu(x: Var) -> Var:
    xv = x.value
    return x.tape.record(np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0.0),))


def clamp_min(x: Var, lo: float) -> Var:
    """max(x, lo); the gradient is zero where the bound is active."""
    xv = x.value
    return x.tape.record(np.maximum(xv, lo), (x,), lambda g: (g * (xv > lo),))


def clamp_max(x: Var, hi: float) -> Var:
    xv = x.value
    return x.tape.record(np.minimum(xv, hi), (x,), lambda g: (g * (xv < hi),))


def clamp(x: Var, lo: float, hi: float) -> Var:
    xv = x.value
    inside = (xv > lo) & (xv < hi)
    return x.tape.record(np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


_UNARY = {
    "log": log, "exp": exp, "sqrt": sqrt, "erf": erf, "sigmoid": sigmoid,
    "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(x, fn: str, other=None) -> Var:
    """Dispatch an entrywise function by name.

    Binary functions take ``other``; ``clamp_min`` takes its bound as ``other``.
    """
    if fn in _UNARY:
        return _UNARY[fn](x)
    if fn in _BINARY:
        if other is None:
            raise ValueError(f"{fn} needs a second operand")
        return _BINARY[fn](x, other)
    if fn == "clamp_min":
        if other is None:
            raise ValueError("clamp_min needs a bound")
        return clamp_min(x, float(other))
    raise ValueError(f"unknown elementwise function {fn!r}")


# -- structural -------------------------------------------------------------

def transpose(x: Var) -> Var:
    return x.tape.record(x.value.T, (x,), lambda g: (g.T,))


def take(x: Var, key) -> Var:
    """Basic (slice / integer) indexing that keeps the result 2-D."""
    if not isinstance(key, tuple):
        key = (key, slice(None))
    key = tuple(slice(k, k + 1) if isinstance(k, (int, np.integer)) else k for k in key)
    for k in key:
        if not isinstance(k, slice):
            raise TypeError("take supports integer and slice indices only")
    shape = x.shape
    out = x.value[key]

    def vjp(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return x.tape.record(out, (x,), vjp)


def detach(x: Var) -> Var:
    """Stop-gradient: same value, recorded as a constant."""
    return x.tape.const(x.value)


def hstack(parts: Sequence[Var]) -> Var:
    tape = parts[0].tape
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return tape.record(np.hstack([p.value for p in parts]), tuple(parts), vjp)


def vstack(parts: Sequence[Var]) -> Var:
    tape = parts[0].tape
    heights = [p.shape[0] for p in parts]
    edges = np.cumsum([0] + heights)

    def vjp(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return tape.record(np.vstack([p.value for p in parts]), tuple(parts), vjp)


# -- reductions -------------------------------------------------------------

def _check_axis(axis):
    if axis not in (None, 0, 1):
        raise ValueError(f"axis must be None, 0 or 1, got {axis!r}")


def reduce(x: Var, kind: str, axis: int | None = None) -> Var:
    """Sum, mean or squared Frobenius norm over ``axis`` (None: everything).

    Results keep two dimensions: axis=0 gives ``1 x d``, axis=1 gives ``n x 1``.
    """
    _check_axis(axis)
    if x.value.size == 0:
        raise ValueError("empty reduction")
    xv = x.value
    shape = xv.shape
    if kind == "sum":
        out = xv.sum(axis=axis, keepdims=True)
        return x.tape.record(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    if kind == "mean":
        count = xv.size if axis is None else shape[axis]
        out = xv.sum(axis=axis, keepdims=True) / count
        return x.tape.record(
            out, (x,), lambda g: (np.broadcast_to(g / count, shape).copy(),)
        )
    if kind == "frobenius_sq":
        out = (xv * xv).sum(axis=axis, keepdims=True)
        return x.tape.record(out, (x,), lambda g: (2.0 * g * xv,))
    raise ValueError(f"unknown reduction {kind!r}")


def sum(x: Var, axis: int | None = None) -> Var:  # noqa: A001
    return reduce(x, "sum", axis)


def mean(x: Var, axis: int | None = None) -> Var:
    return reduce(x, "mean", axis)


def frobenius_sq(x: Var, axis: int | None = None) -> Var:
    return reduce(x, "frobenius_sq", axis)


def logsumexp_rows(x: Var) -> Var:
    xv = x.value
    top = xv.max(axis=1, keepdims=True)
    e = np.exp(xv - top)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return x.tape.record(np.log(s) + top, (x,), lambda g: (g * soft,))


def log_softmax_rows(x: Var) -> Var:
    return x - logsumexp_rows(x)


# -- sorting ----------------------------------------------------------------

def sort_columns_with_permutation(x: Var) -> tuple[Var, np.ndarray]:
    """Sort every column ascending.

    Returns the sorted Var and an integer array ``perm`` with
    ``sorted[i, j] == x[perm[i, j], j]``.  The sort is stable, so ties keep
    their original row order.  Backward scatters each output gradient to the
    input row it came from, treating the fixed permutation as a linear map;
    that is exact wherever the column has no ties.
    """
    xv = x.value
    if np.isnan(xv).any():
        raise ValueError("sort: input contains NaN")
    perm = np.argsort(xv, axis=0, kind="stable")
    out = np.take_along_axis(xv, perm, axis=0)

    def vjp(g):
        full = np.empty_like(g)
        np.put_along_axis(full, perm, g, axis=0)
        return (full,)

    return x.tape.record(out, (x,), vjp), perm
