"""Reverse-mode automatic differentiation on an eager tape.

Every quantity the trainers minimize, including interval endpoints produced
by bound propagation, is recorded as a tape node so a single reverse sweep
yields gradients with respect to all network parameters.  Nodes hold float64
ndarrays (a scalar is a 0-d array), values are computed eagerly at record
time, and the tape is rebuilt from scratch for every training step, so data-
dependent branching may inspect ``.value`` freely.

Subgradient conventions: ReLU'(0) = 0, |.|'(0) = 0, and min/max ties route
the gradient to the first argument.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue

__all__ = ["Tape", "Ref", "ParamStore", "Adam"]

_EINSUM_KW = {"optimize": True}


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sigd1(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _sigd2(z):
    s = _sigmoid(z)
    return (1.0 - 2.0 * s) * s * (1.0 - s)


def _sigd3(z):
    s = _sigmoid(z)
    return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)


def _tanhd1(z):
    t = np.tanh(z)
    return 1.0 - t * t


# numpy implementations shared with non-tape evaluation paths
NUMPY_UNARY = {
    "neg": np.negative,
    "relu": lambda z: np.maximum(z, 0.0),
    "abs": np.abs,
    "sigmoid": _sigmoid,
    "sigd1": _sigd1,
    "sigd2": _sigd2,
    "tanh": np.tanh,
    "tanhd1": _tanhd1,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "square": np.square,
    "sin": np.sin,
    "cos": np.cos,
}

# local derivative of each unary op as a function of the input
_UNARY_D = {
    "neg": lambda z: -1.0,
    "relu": lambda z: (z > 0).astype(np.float64),
    "abs": lambda z: np.sign(z),
    "sigmoid": _sigd1,
    "sigd1": _sigd2,
    "sigd2": _sigd3,
    "tanh": _tanhd1,
    "tanhd1": lambda z: -2.0 * np.tanh(z) * _tanhd1(z),
    "exp": np.exp,
    "log": lambda z: 1.0 / z,
    "sqrt": lambda z: 0.5 / np.sqrt(z),
    "square": lambda z: 2.0 * z,
    "sin": np.cos,
    "cos": lambda z: -np.sin(z),
}

# ops whose forward pass caches an intermediate the derivative reuses
# (avoids re-evaluating transcendentals during the reverse sweep)
_UNARY_FWD_AUX = {
    "sigmoid": lambda z: (lambda s: (s, s))(_sigmoid(z)),
    "sigd1": lambda z: (lambda s: (s * (1.0 - s), s))(_sigmoid(z)),
    "sigd2": lambda z: (lambda s: ((1.0 - 2.0 * s) * s * (1.0 - s), s))(_sigmoid(z)),
    "tanh": lambda z: (lambda t: (t, t))(np.tanh(z)),
    "tanhd1": lambda z: (lambda t: (1.0 - t * t, t))(np.tanh(z)),
    "exp": lambda z: (lambda e: (e, e))(np.exp(z)),
    "sqrt": lambda z: (lambda r: (r, r))(np.sqrt(z)),
}

_UNARY_D_AUX = {
    "sigmoid": lambda s: s * (1.0 - s),
    "sigd1": lambda s: (1.0 - 2.0 * s) * s * (1.0 - s),
    "sigd2": lambda s: s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s),
    "tanh": lambda t: 1.0 - t * t,
    "tanhd1": lambda t: -2.0 * t * (1.0 - t * t),
    "exp": lambda e: e,
    "sqrt": lambda r: 0.5 / r,
}


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Node:
    __slots__ = ("op", "value", "parents", "ctx", "requires_grad")

    def __init__(self, op, value, parents, ctx, requires_grad):
        self.op = op
        self.value = value
        self.parents = parents
        self.ctx = ctx
        self.requires_grad = requires_grad


class Ref:
    """Handle to a tape node; supports arithmetic with arrays and scalars."""

    __slots__ = ("tape", "idx")
    # defer binary ops with ndarrays to this class instead of letting numpy
    # build object arrays of handles
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(other, self)

    def __neg__(self):
        return self.tape.unary("neg", self)

    def __repr__(self):
        return f"Ref#{self.idx}({self.tape.nodes[self.idx].op}, shape={self.shape})"


class Tape:
    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.check_finite = check_finite

    # -- node creation -----------------------------------------------------

    def _push(self, op, value, parents=(), ctx=None, requires_grad=None) -> Ref:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"non-finite value produced by op {op!r}")
        if requires_grad is None:
            requires_grad = any(self.nodes[p].requires_grad for p in parents)
        self.nodes.append(_Node(op, value, tuple(parents), ctx, requires_grad))
        return Ref(self, len(self.nodes) - 1)

    def leaf(self, value, name: str | None = None) -> Ref:
        """Tracked input (a parameter block)."""
        return self._push("leaf", np.array(value, dtype=np.float64, copy=True),
                          ctx=name, requires_grad=True)

    def const(self, value) -> Ref:
        return self._push("const", value, requires_grad=False)

    def lift(self, x) -> Ref:
        return x if isinstance(x, Ref) else self.const(x)

    # -- elementwise -------------------------------------------------------

    def _binary(self, op, a, b, fn):
        a, b = self.lift(a), self.lift(b)
        return self._push(op, fn(a.value, b.value), (a.idx, b.idx))

    def add(self, a, b):
        return self._binary("add", a, b, np.add)

    def sub(self, a, b):
        return self._binary("sub", a, b, np.subtract)

    def mul(self, a, b):
        return self._binary("mul", a, b, np.multiply)

    def div(self, a, b):
        return self._binary("div", a, b, np.divide)

    def minimum(self, a, b):
        return self._binary("min", a, b, np.minimum)

    def maximum(self, a, b):
        return self._binary("max", a, b, np.maximum)

    def unary(self, op, a):
        a = self.lift(a)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            fwd = _UNARY_FWD_AUX.get(op)
            if fwd is not None:
                value, aux = fwd(a.value)
                return self._push(op, value, (a.idx,), ctx=aux)
            return self._push(op, NUMPY_UNARY[op](a.value), (a.idx,))

    def relu(self, a):
        return self.unary("relu", a)

    def abs(self, a):
        return self.unary("abs", a)

    def sigmoid(self, a):
        return self.unary("sigmoid", a)

    def sigd1(self, a):
        return self.unary("sigd1", a)

    def sigd2(self, a):
        return self.unary("sigd2", a)

    def tanh(self, a):
        return self.unary("tanh", a)

    def tanhd1(self, a):
        return self.unary("tanhd1", a)

    def exp(self, a):
        return self.unary("exp", a)

    def log(self, a):
        return self.unary("log", a)

    def sqrt(self, a):
        return self.unary("sqrt", a)

    def square(self, a):
        return self.unary("square", a)

    def sin(self, a):
        return self.unary("sin", a)

    def cos(self, a):
        return self.unary("cos", a)

    # -- structural --------------------------------------------------------

    def sum(self, a, axis=None, keepdims: bool = False):
        a = self.lift(a)
        val = a.value.sum(axis=axis, keepdims=keepdims)
        return self._push("sum", val, (a.idx,),
                          ctx=(a.value.shape, axis, keepdims))

    def take(self, a, indices, axis: int = 0):
        a = self.lift(a)
        idx = np.asarray(indices, dtype=np.intp)
        val = np.take(a.value, idx, axis=axis)
        return self._push("take", val, (a.idx,), ctx=(a.value.shape, idx, axis))

    def reshape(self, a, shape):
        a = self.lift(a)
        return self._push("reshape", a.value.reshape(shape), (a.idx,),
                          ctx=a.value.shape)

    def einsum(self, spec: str, a, b):
        """Two-operand einsum.  Each input index must appear in the output
        or in the other operand, with no repeats inside one operand, so the
        adjoint is again an einsum."""
        a, b = self.lift(a), self.lift(b)
        sin_, sout = spec.replace(" ", "").split("->")
        sa, sb = sin_.split(",")
        for s, other in ((sa, sb), (sb, sa)):
            if len(set(s)) != len(s):
                raise ValueError(f"repeated index inside one operand: {spec}")
            if not set(s) <= (set(sout) | set(other)):
                raise ValueError(f"index summed within a single operand: {spec}")
        val = np.einsum(spec, a.value, b.value, **_EINSUM_KW)
        return self._push("einsum", val, (a.idx, b.idx), ctx=(sa, sb, sout))

    # -- reverse sweep -----------------------------------------------------

    def backward(self, root: Ref) -> dict[int, np.ndarray]:
        """Gradient of a scalar root w.r.t. every tracked leaf.

        One reverse pass in fixed node order; accumulation order is
        deterministic by construction.
        """
        node = self.nodes[root.idx]
        if node.value.size != 1:
            raise ValueError("backward root must be scalar")
        grads: dict[int, np.ndarray] = {root.idx: np.ones_like(node.value)}
        for i in range(root.idx, -1, -1):
            g = grads.pop(i, None)
            if g is None:
                continue
            n = self.nodes[i]
            if n.op in ("leaf", "const"):
                if n.op == "leaf":
                    grads[i] = g  # keep leaf gradients
                continue
            if not n.requires_grad:
                continue
            for pid, pg in self._vjp(n, g):
                if not self.nodes[pid].requires_grad:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return grads

    def grad(self, grads: dict[int, np.ndarray], leaf: Ref) -> np.ndarray:
        return grads.get(leaf.idx, np.zeros_like(leaf.value))

    def _vjp(self, n: _Node, g: np.ndarray):
        op = n.op
        ps = n.parents
        if op in _UNARY_D_AUX and n.ctx is not None:
            return [(ps[0], g * _UNARY_D_AUX[op](n.ctx))]
        if op in _UNARY_D:
            z = self.nodes[ps[0]].value
            return [(ps[0], g * _UNARY_D[op](z))]
        a = self.nodes[ps[0]].value
        b = self.nodes[ps[1]].value if len(ps) > 1 else None
        if op == "add":
            return [(ps[0], _unbroadcast(g, a.shape)),
                    (ps[1], _unbroadcast(g, b.shape))]
        if op == "sub":
            return [(ps[0], _unbroadcast(g, a.shape)),
                    (ps[1], _unbroadcast(-g, b.shape))]
        if op == "mul":
            return [(ps[0], _unbroadcast(g * b, a.shape)),
                    (ps[1], _unbroadcast(g * a, b.shape))]
        if op == "div":
            return [(ps[0], _unbroadcast(g / b, a.shape)),
                    (ps[1], _unbroadcast(-g * a / (b * b), b.shape))]
        if op == "min":
            m = (a <= b).astype(np.float64)
            return [(ps[0], _unbroadcast(g * m, a.shape)),
                    (ps[1], _unbroadcast(g * (1.0 - m), b.shape))]
        if op == "max":
            m = (a >= b).astype(np.float64)
            return [(ps[0], _unbroadcast(g * m, a.shape)),
                    (ps[1], _unbroadcast(g * (1.0 - m), b.shape))]
        if op == "sum":
            in_shape, axis, keepdims = n.ctx
            if axis is None:
                return [(ps[0], np.broadcast_to(g.reshape(()), in_shape).copy()
                         if g.ndim == 0 or not keepdims else
                         np.broadcast_to(g, in_shape).copy())]
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            return [(ps[0], np.broadcast_to(gg, in_shape).copy())]
        if op == "take":
            in_shape, idx, axis = n.ctx
            out = np.zeros(in_shape, dtype=np.float64)
            sl = [slice(None)] * len(in_shape)
            sl[axis] = idx
            np.add.at(out, tuple(sl), g)
            return [(ps[0], out)]
        if op == "reshape":
            return [(ps[0], g.reshape(n.ctx))]
        if op == "einsum":
            sa, sb, so = n.ctx
            da = np.einsum(f"{so},{sb}->{sa}", g, b, **_EINSUM_KW)
            db = np.einsum(f"{sa},{so}->{sb}", a, g, **_EINSUM_KW)
            return [(ps[0], da), (ps[1], db)]
        raise AssertionError(f"no vjp for op {op!r}")


class ParamStore:
    """Named, ordered float64 parameter blocks with flat packing.

    The flat layout is the concatenation of the blocks in insertion order;
    views are disjoint and cover the vector exactly.
    """

    def __init__(self, blocks: dict[str, np.ndarray] | None = None):
        self._order: list[str] = []
        self._blocks: dict[str, np.ndarray] = {}
        if blocks:
            for k, v in blocks.items():
                self.add(k, v)

    def add(self, name: str, value: np.ndarray):
        if name in self._blocks:
            raise KeyError(f"duplicate parameter block {name!r}")
        self._order.append(name)
        self._blocks[name] = np.array(value, dtype=np.float64, copy=True)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._blocks[name]

    def __setitem__(self, name: str, value: np.ndarray):
        ref = self._blocks[name]
        if np.shape(value) != ref.shape:
            raise ValueError(f"shape mismatch for block {name!r}")
        self._blocks[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    @property
    def names(self) -> list[str]:
        return list(self._order)

    @property
    def size(self) -> int:
        return sum(self._blocks[k].size for k in self._order)

    def pack(self) -> np.ndarray:
        return np.concatenate([self._blocks[k].ravel() for k in self._order]) \
            if self._order else np.zeros(0)

    def unpack(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ValueError("flat vector size mismatch")
        ofs = 0
        for k in self._order:
            blk = self._blocks[k]
            self._blocks[k] = flat[ofs:ofs + blk.size].reshape(blk.shape).copy()
            ofs += blk.size

    def copy(self) -> "ParamStore":
        return ParamStore({k: self._blocks[k] for k in self._order})

    def leaves(self, tape: Tape) -> dict[str, Ref]:
        return {k: tape.leaf(self._blocks[k], name=k) for k in self._order}

    def grad_flat(self, tape: Tape, grads: dict[int, np.ndarray],
                  leaves: dict[str, Ref]) -> np.ndarray:
        parts = []
        for k in self._order:
            parts.append(tape.grad(grads, leaves[k]).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


class Adam:
    """Adam over a flat parameter vector, (0.9, 0.999, 1e-8) defaults."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1 ** self.t)
        vh = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)
