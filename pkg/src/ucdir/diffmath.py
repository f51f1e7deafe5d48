"""Small reverse-mode differentiation engine over dense float64 arrays.

A :class:`Tape` records primitive ops in construction order. Values are
computed eagerly when a node is added, :meth:`Tape.forward` replays the whole
tape from the leaf values, and :meth:`Tape.backward` accumulates gradients in
reverse construction order.

    >>> t = Tape()
    >>> x = t.leaf(np.array([3.0, 4.0]), name="x", trainable=True)
    >>> y = dot(x, x)
    >>> float(y.value)
    25.0
    >>> t.backward(y)["x"]
    array([6., 8.])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping

import numpy as np

NORM_EPS = 1e-8


class ShapeError(ValueError):
    """Op inputs have incompatible shapes."""


class UsageError(RuntimeError):
    """Tape used out of contract (e.g. backward on a non-scalar root)."""


class DomainError(ValueError):
    """Op evaluated outside its domain (log of a non-positive value, ...)."""


class CollapseError(ValueError):
    """A vector to be L2-normalized has (near) zero norm."""


class GradCheckError(RuntimeError):
    """Loss became non-finite at a perturbed coordinate."""


@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    trainable: bool = False
    requires_grad: bool = False
    grad: np.ndarray | None = None


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.index]

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self):
        return self.node.value.shape

    @property
    def grad(self):
        return self.node.grad

    def __repr__(self):
        n = self.node
        return f"Var(#{self.index} {n.op} shape={n.value.shape})"

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

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# op table: name -> (forward(*values, **attrs), vjp(g, out, *values, **attrs))
# ---------------------------------------------------------------------------

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def _f_add(a, b):
    _bshape(a, b)
    return a + b


def _f_sub(a, b):
    _bshape(a, b)
    return a - b


def _f_mul(a, b):
    _bshape(a, b)
    return a * b


def _f_div(a, b):
    _bshape(a, b)
    return a / b


def _f_matmul(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul needs 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return a @ b


def _v_matmul(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _f_dot(a, b):
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.shape} . {b.shape}")
    return np.asarray(a @ b)


def _f_sum(a, axis=None, keepdims=False):
    return np.asarray(a.sum(axis=axis, keepdims=keepdims))


def _v_sum(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _f_l2n(a, axis=-1):
    norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    if np.any(norm < NORM_EPS):
        raise CollapseError(f"collapse: vector norm {float(norm.min()):.3g} below {NORM_EPS}")
    return a / norm


def _v_l2n(g, out, a, axis=-1):
    norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)


def _f_lse(a, axis=-1):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _v_lse(g, out, a, axis=-1):
    p = np.exp(a - np.expand_dims(out, axis))
    return (np.expand_dims(g, axis) * p,)


def _f_softmax(a, axis=-1):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _v_softmax(g, out, a, axis=-1):
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _f_logsoftmax(a, axis=-1):
    m = a.max(axis=axis, keepdims=True)
    s = a - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def _v_logsoftmax(g, out, a, axis=-1):
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


def _f_log(a):
    if np.any(a <= 0):
        raise DomainError("log of non-positive value")
    return np.log(a)


def _f_sqrt(a):
    if np.any(a < 0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(a)


_OPS: Dict[str, tuple] = {
    "add": (_f_add, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))),
    "sub": (_f_sub, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))),
    "mul": (_f_mul, lambda g, o, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))),
    "div": (_f_div, lambda g, o, a, b: (_unbroadcast(g / b, a.shape),
                                        _unbroadcast(-g * a / (b * b), b.shape))),
    "neg": (lambda a: -a, lambda g, o, a: (-g,)),
    "scale": (lambda a, c: a * c, lambda g, o, a, c: (g * c,)),
    "square": (lambda a: a * a, lambda g, o, a: (2.0 * g * a,)),
    "matmul": (_f_matmul, _v_matmul),
    "dot": (_f_dot, lambda g, o, a, b: (g * b, g * a)),
    "exp": (np.exp, lambda g, o, a: (g * o,)),
    "log": (_f_log, lambda g, o, a: (g / a,)),
    "sqrt": (_f_sqrt, lambda g, o, a: (g / (2.0 * o),)),
    "tanh": (np.tanh, lambda g, o, a: (g * (1.0 - o * o),)),
    "sum": (_f_sum, _v_sum),
    "transpose": (lambda a: a.T, lambda g, o, a: (g.T,)),
    "reshape": (lambda a, shape: a.reshape(shape), lambda g, o, a, shape: (g.reshape(a.shape),)),
    "l2normalize": (_f_l2n, _v_l2n),
    "logsumexp": (_f_lse, _v_lse),
    "softmax": (_f_softmax, _v_softmax),
    "log_softmax": (_f_logsoftmax, _v_logsoftmax),
}


class Tape:
    """Ordered record of primitive ops; single-owner, not thread-safe."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None, trainable: bool = False) -> Var:
        arr = np.array(value, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError(f"leaf {name or len(self.nodes)} has non-finite entries")
        self.nodes.append(Node("leaf", (), arr, name=name, trainable=trainable,
                               requires_grad=trainable))
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        return self.leaf(value)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise UsageError("Var belongs to a different tape")
            return x
        return self.const(x)

    def apply(self, op: str, inputs: tuple, **attrs) -> Var:
        fwd, _ = _OPS[op]
        idx = len(self.nodes)
        try:
            value = fwd(*(self.nodes[i].value for i in inputs), **attrs)
        except (ShapeError, DomainError, CollapseError) as exc:
            raise type(exc)(f"node #{idx} ({op}): {exc}") from None
        rg = any(self.nodes[i].requires_grad for i in inputs)
        if type(value) is not np.ndarray or value.dtype != np.float64:
            value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node(op, inputs, value, attrs, requires_grad=rg))
        return Var(self, idx)

    def leaves(self, trainable_only: bool = True) -> Dict[str, Var]:
        return {n.name: Var(self, i) for i, n in enumerate(self.nodes)
                if n.op == "leaf" and n.name is not None and (n.trainable or not trainable_only)}

    def forward(self, root: Var | None = None) -> np.ndarray:
        """Re-evaluate every node from the current leaf values; return the root value."""
        for idx, node in enumerate(self.nodes):
            if node.op == "leaf":
                continue
            fwd, _ = _OPS[node.op]
            try:
                node.value = np.asarray(fwd(*(self.nodes[i].value for i in node.inputs),
                                            **node.attrs), dtype=np.float64)
            except (ShapeError, DomainError, CollapseError) as exc:
                raise type(exc)(f"node #{idx} ({node.op}): {exc}") from None
        ridx = len(self.nodes) - 1 if root is None else root.index
        return self.nodes[ridx].value

    def backward(self, root: Var | None = None) -> Dict[str, np.ndarray]:
        """Reverse accumulation from a scalar root.

        Returns gradients keyed by trainable leaf name. Trainable leaves the
        root does not depend on get zeros; constants never get a buffer.
        """
        if not self.nodes:
            raise UsageError("empty tape")
        ridx = len(self.nodes) - 1 if root is None else root.index
        rval = self.nodes[ridx].value
        if rval.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {rval.shape}")
        for n in self.nodes:
            n.grad = None
        self.nodes[ridx].grad = np.ones_like(rval)
        for idx in range(ridx, -1, -1):
            node = self.nodes[idx]
            if node.grad is None or node.op == "leaf" or not node.requires_grad:
                continue
            _, vjp = _OPS[node.op]
            ins = [self.nodes[i] for i in node.inputs]
            gins = vjp(node.grad, node.value, *(n.value for n in ins), **node.attrs)
            for n, g in zip(ins, gins):
                if not n.requires_grad:
                    continue
                # vjps never write in place, so aliasing between buffers is harmless
                g = np.asarray(g, dtype=np.float64)
                if g.shape != n.value.shape:
                    g = g.reshape(n.value.shape)
                n.grad = g if n.grad is None else n.grad + g
        out = {}
        for n in self.nodes:
            if n.op == "leaf" and n.trainable:
                if n.grad is None:
                    n.grad = np.zeros_like(n.value)
                out[n.name] = n.grad
        return out


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------

def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return Tape()


def lift_all(*xs):
    """Put every argument on one tape (constants for raw arrays)."""
    t = _tape_of(*xs)
    out = tuple(t.lift(x) for x in xs)
    return out if len(out) > 1 else out[0]


def _binary(op, a, b):
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t.apply(op, (a.index, b.index))


def _unary(op, a, **attrs):
    t = _tape_of(a)
    a = t.lift(a)
    return t.apply(op, (a.index,), **attrs)


def add(a, b):
    return _binary("add", a, b)


def sub(a, b):
    return _binary("sub", a, b)


def mul(a, b):
    return _binary("mul", a, b)


def div(a, b):
    return _binary("div", a, b)


def matmul(a, b):
    return _binary("matmul", a, b)


def dot(a, b):
    return _binary("dot", a, b)


def neg(a):
    return _unary("neg", a)


def scale(a, c: float):
    return _unary("scale", a, c=float(c))


def square(a):
    return _unary("square", a)


def exp(a):
    return _unary("exp", a)


def log(a):
    return _unary("log", a)


def sqrt(a):
    return _unary("sqrt", a)


def tanh(a):
    return _unary("tanh", a)


def transpose(a):
    return _unary("transpose", a)


def reshape(a, shape):
    return _unary("reshape", a, shape=tuple(shape))


def reshape_col(a):
    """(n,) -> (n, 1)"""
    return reshape(a, (-1, 1))


def reduce_sum(a, axis=None, keepdims=False):
    return _unary("sum", a, axis=axis, keepdims=keepdims)


def l2normalize(a, axis=-1):
    """Unit-normalize along ``axis``; raises CollapseError when a norm < 1e-8."""
    return _unary("l2normalize", a, axis=axis)


def logsumexp(a, axis=-1):
    return _unary("logsumexp", a, axis=axis)


def softmax(a, axis=-1):
    return _unary("softmax", a, axis=axis)


def log_softmax(a, axis=-1):
    return _unary("log_softmax", a, axis=axis)


def forward(tape: Tape, root: Var | None = None) -> np.ndarray:
    return tape.forward(root)


def backward(tape: Tape, root: Var | None = None) -> Dict[str, np.ndarray]:
    return tape.backward(root)


def grad_check(lossfn: Callable[[Tape, Mapping[str, Var]], Var],
               params: Mapping[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``lossfn(tape, leaves)`` builds a scalar loss from trainable leaves named
    like the keys of ``params``. The error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``. Numeric derivatives come from replaying
    the recorded tape with one perturbed leaf entry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k, trainable=True) for k, v in params.items()}
    root = lossfn(tape, leaves)
    grads = {k: g.copy() for k, g in tape.backward(root).items()}
    worst = 0.0
    for name, leaf in leaves.items():
        base = leaf.value
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            try:
                base[idx] = orig + h
                fp = float(tape.forward(root))
                base[idx] = orig - h
                fm = float(tape.forward(root))
            except (DomainError, CollapseError) as exc:
                raise GradCheckError(f"loss undefined at {name}{list(idx)}: {exc}") from None
            finally:
                base[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite loss at {name}{list(idx)}")
            num = (fp - fm) / (2.0 * h)
            ana = float(grads[name][idx])
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    tape.forward(root)
    return worst
