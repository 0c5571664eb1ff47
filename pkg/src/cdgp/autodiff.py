"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Variable` wraps an ndarray together with the local vector-Jacobian
products needed to push a cotangent back to its parents.  The graph is built
eagerly while the forward computation runs; :meth:`Variable.backward` walks it
once in reverse topological order.

Only values created with ``requires_grad=True`` (and everything computed from
them) are recorded, so freezing a parameter is simply a matter of passing a
plain array instead of a Variable.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Variable", "ShapeError", "ComputationRecord", "record", "value_and_grad",
    "check_gradient", "as_variable", "add", "sub", "mul", "div", "neg",
    "matmul", "cos", "sin", "cos_sin", "exp", "log", "tanh", "square", "sqrt",
    "reciprocal", "lgamma", "softplus", "sum", "mean", "broadcast_to",
    "reshape", "swapaxes", "concat", "stack", "getitem",
]


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Variable:
    """A node in the computation graph.

    Parameters
    ----------
    value : array_like
        Stored as a float64 ndarray (scalars become 0-d arrays).
    requires_grad : bool
        Leaves with ``requires_grad=True`` receive ``.grad`` after backward.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjps")
    __array_ufunc__ = None  # make ndarray operators defer to ours

    def __init__(self, value, requires_grad=False, _parents=(), _vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def __repr__(self):
        return f"Variable(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        ``seed`` defaults to ones, which for a scalar output gives the gradient.
        """
        if not self.requires_grad:
            return
        order = _toposort(self)
        cot = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = cot.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                gp = vjp(g)
                key = id(parent)
                prev = cot.get(key)
                cot[key] = gp if prev is None else prev + gp

    # operator sugar
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_variable(x):
    return x if isinstance(x, Variable) else Variable(x)


def _val(x):
    return x.value if isinstance(x, Variable) else np.asarray(x, dtype=np.float64)


def _tracked(x):
    return isinstance(x, Variable) and x.requires_grad


def _node(value, pairs):
    """Build the output node, keeping only parents that carry gradients.

    With no tracked parent the raw ndarray is returned, so untracked
    computations stay ordinary numpy values.
    """
    pairs = [(p, f) for p, f in pairs if _tracked(p)]
    if not pairs:
        return value
    parents, vjps = zip(*pairs)
    return Variable(value, True, parents, vjps)


def _binary(a, b, fn, name):
    av, bv = _val(a), _val(b)
    try:
        return av, bv, fn(av, bv)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {av.shape} and {bv.shape}") from None


# -- arithmetic -------------------------------------------------------------

def add(a, b):
    av, bv, out = _binary(a, b, np.add, "add")
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)),
                       (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b):
    av, bv, out = _binary(a, b, np.subtract, "sub")
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)),
                       (b, lambda g: _unbroadcast(-g, bv.shape))])


def mul(a, b):
    av, bv, out = _binary(a, b, np.multiply, "mul")
    return _node(out, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                       (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b):
    av, bv, out = _binary(a, b, np.divide, "div")
    return _node(out, [(a, lambda g: _unbroadcast(g / bv, av.shape)),
                       (b, lambda g: _unbroadcast(-g * out / bv, bv.shape))])


def neg(a):
    return _node(-_val(a), [(a, lambda g: -g)])


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise ShapeError(f"matmul: batch shapes {av.shape} and {bv.shape} do not broadcast") from None
    return _node(out, [
        (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)),
        (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)),
    ])


# -- elementwise ------------------------------------------------------------

def cos(a):
    av = _val(a)
    return _node(np.cos(av), [(a, lambda g: -g * np.sin(av))])


def sin(a):
    av = _val(a)
    return _node(np.sin(av), [(a, lambda g: g * np.cos(av))])


def exp(a):
    out = np.exp(_val(a))
    return _node(out, [(a, lambda g: g * out)])


def log(a):
    av = _val(a)
    return _node(np.log(av), [(a, lambda g: g / av)])


def cos_sin(a):
    """Both ``cos(a)`` and ``sin(a)``, each reusing the other's values in backward."""
    av = _val(a)
    c, s = np.cos(av), np.sin(av)
    return _node(c, [(a, lambda g: -g * s)]), _node(s, [(a, lambda g: g * c)])


def tanh(a):
    out = np.tanh(_val(a))
    return _node(out, [(a, lambda g: g * (1.0 - out * out))])


def square(a):
    av = _val(a)
    return _node(av * av, [(a, lambda g: 2.0 * g * av)])


def sqrt(a):
    out = np.sqrt(_val(a))
    return _node(out, [(a, lambda g: 0.5 * g / out)])


def reciprocal(a):
    out = 1.0 / _val(a)
    return _node(out, [(a, lambda g: -g * out * out)])


def lgamma(a):
    av = _val(a)
    return _node(special.gammaln(av), [(a, lambda g: g * special.digamma(av))])


def softplus(a):
    """log(1 + exp(a)) without overflow."""
    av = _val(a)
    out = np.logaddexp(0.0, av)
    return _node(out, [(a, lambda g: g * special.expit(av))])


# -- reductions and structure -------------------------------------------------

def sum(a, axis=None, keepdims=False):
    av = _val(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape)

    return _node(out, [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    av = _val(a)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape):
    av = _val(a)
    try:
        out = np.broadcast_to(av, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {av.shape} to {tuple(shape)}") from None
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape))])


def reshape(a, shape):
    av = _val(a)
    return _node(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def swapaxes(a, ax1, ax2):
    return _node(np.swapaxes(_val(a), ax1, ax2), [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def getitem(a, idx):
    av = _val(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _node(av[idx], [(a, vjp)])


def concat(parts: Sequence, axis=-1):
    vals = [_val(p) for p in parts]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[v.shape for v in vals]}") from None
    if not any(_tracked(p) for p in parts):
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _node(out, [(p, piece(i)) for i, p in enumerate(parts)])


def stack(parts: Sequence, axis=-1):
    """Stack arrays or Variables; returns a plain ndarray when nothing is tracked."""
    if not any(isinstance(p, Variable) for p in parts):
        if all(np.ndim(p) == 0 for p in parts):
            return np.array(parts, dtype=np.float64)
        return np.stack([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)
    vals = [_val(p) for p in parts]
    try:
        out = np.stack(vals, axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[v.shape for v in vals]}") from None

    def piece(i):
        return lambda g: np.take(g, i, axis=axis)

    return _node(out, [(p, piece(i)) for i, p in enumerate(parts)])


# -- drivers --------------------------------------------------------------------

class ComputationRecord:
    """A recorded evaluation of ``fn`` at fixed inputs, ready for one backward sweep."""

    def __init__(self, fn: Callable, inputs: Sequence):
        self.inputs = [Variable(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
        self.output = fn(*self.inputs)
        if not isinstance(self.output, Variable):
            self.output = Variable(self.output)

    @property
    def value(self):
        return self.output.value

    def backward(self):
        if self.output.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {self.output.shape}")
        for x in self.inputs:
            x.zero_grad()
        self.output.backward()
        return [np.zeros_like(x.value) if x.grad is None else x.grad for x in self.inputs]


def record(fn: Callable, *inputs) -> ComputationRecord:
    return ComputationRecord(fn, inputs)


def value_and_grad(fn: Callable, *inputs):
    rec = record(fn, *inputs)
    return float(rec.value), rec.backward()


def check_gradient(fn: Callable, point, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``point`` is one array or a sequence of arrays matching ``fn``'s arguments.
    The relative error per coordinate is ``|a - c| / (|c| + 1e-12)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = not isinstance(point, (list, tuple))
    arrays = [np.array(p, dtype=np.float64) for p in ([point] if single else point)]
    with np.errstate(all="ignore"):
        _, grads = value_and_grad(fn, *arrays)
    for k, g in enumerate(grads):
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise FloatingPointError(f"non-finite gradient at input {k}, coordinate {bad[0]}")

    def evaluate(args):
        out = fn(*args)
        return float(_val(out))

    with np.errstate(all="ignore"):
        return _fd_scan(evaluate, arrays, grads, step)


def _fd_scan(evaluate, arrays, grads, step):
    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = evaluate(arrays)
            flat[j] = orig - step
            down = evaluate(arrays)
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            an = grads[k].reshape(-1)[j]
            if not np.isfinite(fd):
                raise FloatingPointError(f"non-finite value near input {k}, coordinate {j}")
            worst = max(worst, abs(an - fd) / (abs(fd) + 1e-12))
    return worst
