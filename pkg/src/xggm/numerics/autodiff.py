"""Reverse-mode differentiation over numpy arrays.

Every primitive in this module accepts plain ``numpy`` arrays or :class:`Var`
nodes.  With only arrays as inputs the primitive is an ordinary numpy
computation; as soon as one input is a ``Var`` the result is recorded on that
variable's :class:`Tape`.  Model code is therefore written once and runs both
taped (training, analytic gradients) and untaped (evaluation, finite
differences).

Arrays may carry any number of leading batch axes; the "matrix" operations
act on the trailing two axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

Array = np.ndarray


class Var:
    """A value recorded on a tape."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("value", "tape", "parents", "index", "name", "op")

    def __init__(self, value, tape, parents=(), op="leaf", name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.op = op
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = self.name or self.op
        return f"Var({label}, shape={self.value.shape})"

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, power):
        if power != 2:
            raise ContractError("only squaring is supported on the tape")
        return square(self)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as they are computed, so the recording order is a
    topological order and its reverse is a valid order for the backward pass.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}
        self.check_finite = check_finite

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        var = Var(np.asarray(value, dtype=np.float64), self, name=name)
        self._push(var)
        self.params[name] = var
        return var

    def params_from(self, values: dict[str, Array]) -> dict[str, Var]:
        return {name: self.param(name, v) for name, v in values.items()}

    def _push(self, var: Var) -> Var:
        if self.check_finite and not np.all(np.isfinite(var.value)):
            raise NumericError(f"non-finite values produced by {var.op!r}")
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def record(self, value, parents, op) -> Var:
        return self._push(Var(value, self, tuple(parents), op=op))

    def gradients(self, loss: Var) -> tuple[dict[str, Array], set[str]]:
        """Gradients of ``loss`` for every parameter, and the set reached."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss must be a node of this tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list = [None] * (loss.index + 1)
        grads[loss.index] = np.ones_like(loss.value)
        for idx in range(loss.index, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            for parent, vjp in node.parents:
                pg = vjp(g)
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        out, reached = {}, set()
        for name, var in self.params.items():
            g = grads[var.index] if var.index <= loss.index else None
            if g is None:
                out[name] = np.zeros_like(var.value)
            else:
                out[name] = np.asarray(g, dtype=np.float64).reshape(var.value.shape)
                reached.add(name)
        return out, reached


def backward(tape: Tape, loss: Var) -> dict[str, Array]:
    """Map every registered parameter name to d(loss)/d(parameter)."""
    return tape.gradients(loss)[0]


# ---------------------------------------------------------------------------
# plumbing


def value(x) -> Array:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands live on different tapes")
    return tape


def _unbroadcast(g: Array, shape: tuple) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _out(op: str, result: Array, inputs: Sequence, vjps: Sequence[Callable]):
    tape = _tape_of(*inputs)
    if tape is None:
        return result
    parents = [(x, f) for x, f in zip(inputs, vjps) if isinstance(x, Var)]
    return tape.record(result, parents, op)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    av, bv = value(a), value(b)
    return _out("add", av + bv, (a, b),
                (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    return _out("sub", av - bv, (a, b),
                (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    return _out("mul", av * bv, (a, b),
                (lambda g: _unbroadcast(g * bv, av.shape),
                 lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _out("div", out, (a, b),
                (lambda g: _unbroadcast(g / bv, av.shape),
                 lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _out("neg", -value(a), (a,), (lambda g: -g,))


def scale(a, c: float):
    return _out("scale", value(a) * c, (a,), (lambda g: g * c,))


def square(a):
    av = value(a)
    return _out("square", av * av, (a,), (lambda g: 2.0 * av * g,))


def sigmoid(a):
    av = value(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _out("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def relu(a):
    av = value(a)
    mask = av > 0
    return _out("relu", np.where(mask, av, 0.0), (a,), (lambda g: g * mask,))


def exp(a):
    out = np.exp(value(a))
    return _out("exp", out, (a,), (lambda g: g * out,))


def log(a):
    av = value(a)
    return _out("log", np.log(av), (a,), (lambda g: g / av,))


def absolute(a):
    av = value(a)
    return _out("abs", np.abs(av), (a,), (lambda g: g * np.sign(av),))


def clip(a, lo: float, hi: float):
    av = value(a)
    inside = (av > lo) & (av < hi)
    return _out("clip", np.clip(av, lo, hi), (a,), (lambda g: g * inside,))


def maximum(a, floor: float):
    """Elementwise ``max(a, floor)`` against a constant floor."""
    av = value(a)
    above = av > floor
    return _out("maximum", np.where(above, av, floor), (a,), (lambda g: g * above,))


# ---------------------------------------------------------------------------
# reductions and reshaping


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False):
    av = value(a)
    return _out("sum", np.sum(av, axis=axis, keepdims=keepdims), (a,),
                (lambda g: _expand(g, av.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return _out("mean", np.mean(av, axis=axis, keepdims=keepdims), (a,),
                (lambda g: _expand(g, av.shape, axis, keepdims) / n,))


def sum_of_squares(a):
    av = value(a)
    return _out("sum_of_squares", np.sum(av * av), (a,), (lambda g: 2.0 * g * av,))


def reshape(a, shape):
    av = value(a)
    return _out("reshape", av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def transpose(a):
    """Swap the trailing two axes."""
    av = value(a)
    return _out("transpose", np.swapaxes(av, -1, -2), (a,), (lambda g: np.swapaxes(g, -1, -2),))


def expand_dims(a, axis: int):
    av = value(a)
    return _out("expand_dims", np.expand_dims(av, axis), (a,), (lambda g: g.reshape(av.shape),))


def concat(xs: Iterable, axis: int = -1):
    xs = list(xs)
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _out("concat", out, xs, [piece(i) for i in range(len(xs))])


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """``a @ b`` with ``b`` at least 2-D; leading axes broadcast."""
    av, bv = value(a), value(b)
    if bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shapes {av.shape} and {bv.shape}")
    if av.ndim == 1:
        return reshape(matmul(reshape(a, (1, -1)), b), (av @ bv).shape)
    out = av @ bv
    return _out("matmul", out, (a, b),
                (lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape),
                 lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)))


def node_matmul(x, w):
    """Per-node linear map: ``out[..., i, :] = x[..., i, :] @ w[i]``.

    ``x`` has shape (..., N, d) and ``w`` is a stack of N matrices (N, d, e).
    """
    xv, wv = value(x), value(w)
    if wv.ndim != 3 or xv.shape[-2:] != wv.shape[:2]:
        raise DimensionError(f"node_matmul shapes {xv.shape} and {wv.shape}")
    out = np.einsum("...nd,nde->...ne", xv, wv)
    n, d, e = wv.shape

    def grad_w(g):
        return np.einsum("bnd,bne->nde", xv.reshape(-1, n, d), g.reshape(-1, n, e))

    return _out("node_matmul", out, (x, w),
                (lambda g: np.einsum("...ne,nde->...nd", g, wv), grad_w))


def upper_indices(n: int) -> tuple[Array, Array]:
    return np.triu_indices(n, k=1)


def pack_upper(r):
    """Strictly-upper-triangular entries of the trailing square matrix, row-major."""
    rv = value(r)
    if rv.ndim < 2 or rv.shape[-1] != rv.shape[-2]:
        raise DimensionError(f"pack_upper needs a square matrix, got {rv.shape}")
    n = rv.shape[-1]
    if n < 2:
        raise DimensionError("pack_upper needs at least 2 nodes")
    iu, ju = upper_indices(n)

    def vjp(g):
        full = np.zeros(rv.shape)
        full[..., iu, ju] = g
        return full

    return _out("pack_upper", rv[..., iu, ju], (r,), (vjp,))


def unpack_upper(vec, n: int):
    """Symmetric matrix with ``vec`` above and below the diagonal and ones on it."""
    vv = value(vec)
    if n < 2 or vv.ndim < 1 or vv.shape[-1] != n * (n - 1) // 2:
        raise DimensionError(f"vector of length {vv.shape[-1:]} cannot fill a {n}x{n} matrix")
    iu, ju = upper_indices(n)
    out = np.zeros(vv.shape[:-1] + (n, n))
    out[..., iu, ju] = vv
    out[..., ju, iu] = vv
    diag = np.arange(n)
    out[..., diag, diag] = 1.0
    return _out("unpack_upper", out, (vec,), (lambda g: g[..., iu, ju] + g[..., ju, iu],))
