"""Arithmetic expression language for drift and diffusion terms.

Supports scalar evaluation (numpy arrays or tape refs, so trainable
controller outputs can flow through the dynamics), sound interval
evaluation, parsing with standard precedence, and printing.

Grammar (whitespace-insensitive)::

    expr    := term (('+'|'-') term)*
    term    := factor (('*'|'/') factor)*
    factor  := '-' factor | power
    power   := atom ('^' factor)?          # right-associative
    atom    := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers are state variables ``x1..xn``, control variables ``u1..um``,
declared named constants, the builtin functions ``sin cos tan exp log sqrt
tanh abs``, or declared 2-argument lookup tables.  Exponents must be
constant (integers use exact even/odd range rules; non-integer exponents
require a positive base).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import ivals
from .errors import ExprSyntaxError, EvalDomainError, DimensionMismatch
from .ivals import IVal
from .tape import Ref, NUMPY_UNARY

__all__ = [
    "ExprAst", "Const", "StateVar", "ControlVar", "NamedConst", "Unary",
    "Binary", "Call", "DynamicsSpec", "TableFunction2D",
    "parse_expr", "expr_to_string", "eval_scalar", "eval_columns",
    "eval_interval", "substitute_controls", "e_mul", "e_add", "e_const",
    "free_control_vars",
]

UNARY_FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs")


class ExprAst:
    """Base class for expression nodes (immutable after construction)."""
    __slots__ = ()


@dataclass(frozen=True)
class Const(ExprAst):
    value: float


@dataclass(frozen=True)
class StateVar(ExprAst):
    index: int  # 1-based, as written


@dataclass(frozen=True)
class ControlVar(ExprAst):
    index: int  # 1-based


@dataclass(frozen=True)
class NamedConst(ExprAst):
    name: str


@dataclass(frozen=True)
class Unary(ExprAst):
    op: str  # only '-'
    child: ExprAst


@dataclass(frozen=True)
class Binary(ExprAst):
    op: str  # + - * / ^
    left: ExprAst
    right: ExprAst


@dataclass(frozen=True)
class Call(ExprAst):
    func: str
    args: tuple


def e_const(v: float) -> Const:
    return Const(float(v))


def _is_zero(e: ExprAst) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def _is_one(e: ExprAst) -> bool:
    return isinstance(e, Const) and e.value == 1.0


def e_add(a: ExprAst, b: ExprAst) -> ExprAst:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def e_mul(a: ExprAst, b: ExprAst) -> ExprAst:
    """Product with folding; x*x becomes x^2 so interval evaluation keeps
    the exact even-power range instead of the loose four-corner one."""
    if _is_zero(a) or _is_zero(b):
        return Const(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a == b:
        return Binary("^", a, Const(2.0))
    return Binary("*", a, b)


# ---------------------------------------------------------------------------
# parsing


_TOKEN_RE = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
                       r"|\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)"
                       r"|(\*\*)|([()+\-*/^,]))")


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            tail = text[pos:].lstrip()
            if not tail:
                break
            raise ExprSyntaxError(f"unexpected character {tail[0]!r}", pos)
        num, ident, dstar, op = m.groups()
        if num is not None:
            tokens.append(("num", float(num), m.start(1)))
        elif ident is not None:
            tokens.append(("ident", ident, m.start(2)))
        elif dstar is not None:
            tokens.append(("op", "^", m.start(3)))
        else:
            tokens.append(("op", op, m.start(4)))
        pos = m.end()
    tokens.append(("end", None, len(text)))
    return tokens


_VAR_RE = re.compile(r"^([xu])(\d+)$")


def _const_fold(e: ExprAst) -> float | None:
    """Value of a closed constant subtree, or None if not constant."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Unary):
        v = _const_fold(e.child)
        return None if v is None else -v
    if isinstance(e, Binary):
        a, b = _const_fold(e.left), _const_fold(e.right)
        if a is None or b is None:
            return None
        return {"+": a + b, "-": a - b, "*": a * b,
                "/": (a / b if b != 0 else None),
                "^": a ** b}[e.op]
    return None


class _Parser:
    def __init__(self, tokens, constants, tables, n, m_u):
        self.toks = tokens
        self.i = 0
        self.constants = constants
        self.tables = tables
        self.n = n
        self.m_u = m_u

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect_op(self, op):
        kind, val, off = self.next()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected {op!r}", off)

    def parse(self) -> ExprAst:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing token {val!r}", off)
        return e

    def expr(self) -> ExprAst:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                e = Binary(val, e, rhs)
            else:
                return e

    def term(self) -> ExprAst:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.factor()
                e = Binary(val, e, rhs)
            else:
                return e

    def factor(self) -> ExprAst:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            child = self.factor()
            if isinstance(child, Const):
                return Const(-child.value)
            return Unary("-", child)
        return self.power()

    def power(self) -> ExprAst:
        base = self.atom()
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.next()
            exponent = self.factor()  # right-associative, allows unary minus
            folded = _const_fold(exponent)
            if folded is None:
                raise ExprSyntaxError("exponent must be a constant", off)
            return Binary("^", base, Const(folded))
        return base

    def atom(self) -> ExprAst:
        kind, val, off = self.next()
        if kind == "num":
            return Const(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                return self.call(val, off)
            m = _VAR_RE.match(val)
            if m:
                idx = int(m.group(2))
                if m.group(1) == "x":
                    if not (1 <= idx <= self.n):
                        raise ExprSyntaxError(
                            f"state variable x{idx} outside 1..{self.n}", off)
                    return StateVar(idx)
                if not (1 <= idx <= self.m_u):
                    raise ExprSyntaxError(
                        f"control variable u{idx} outside 1..{self.m_u}", off)
                return ControlVar(idx)
            if val in self.constants:
                return NamedConst(val)
            raise ExprSyntaxError(f"unknown identifier {val!r}", off)
        raise ExprSyntaxError(f"unexpected token {val!r}", off)

    def call(self, name, off) -> ExprAst:
        self.expect_op("(")
        args = [self.expr()]
        while True:
            kind, val, o2 = self.next()
            if kind == "op" and val == ",":
                args.append(self.expr())
            elif kind == "op" and val == ")":
                break
            else:
                raise ExprSyntaxError("expected ',' or ')'", o2)
        if name in UNARY_FUNCS:
            if len(args) != 1:
                raise ExprSyntaxError(f"{name} takes one argument", off)
            return Call(name, tuple(args))
        if name in self.tables:
            if len(args) != 2:
                raise ExprSyntaxError(f"table {name} takes two arguments", off)
            return Call(name, tuple(args))
        raise ExprSyntaxError(f"unknown function {name!r}", off)


def parse_expr(text: str, constants=(), tables=(), n: int = 64,
               m_u: int = 64) -> ExprAst:
    """Parse expression text against declared dimensions and names."""
    return _Parser(_tokenize(text), set(constants), set(tables), n, m_u).parse()


# ---------------------------------------------------------------------------
# printing


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def expr_to_string(e: ExprAst) -> str:
    def render(node, parent_prec, right_side):
        if isinstance(node, Const):
            s = repr(node.value)
            return f"({s})" if node.value < 0 and parent_prec > 0 else s
        if isinstance(node, StateVar):
            return f"x{node.index}"
        if isinstance(node, ControlVar):
            return f"u{node.index}"
        if isinstance(node, NamedConst):
            return node.name
        if isinstance(node, Unary):
            inner = render(node.child, _PREC["neg"], False)
            s = f"-{inner}"
            return f"({s})" if parent_prec > _PREC["neg"] else s
        if isinstance(node, Call):
            args = ", ".join(render(a, 0, False) for a in node.args)
            return f"{node.func}({args})"
        p = _PREC[node.op]
        left = render(node.left, p if node.op != "^" else p + 1, False)
        # left-assoc ops need parens on an equal-precedence right child
        rp = p + 1 if node.op in ("-", "/", "+", "*") else p
        right = render(node.right, rp, True)
        s = f"{left} {node.op} {right}" if node.op != "^" else f"{left}^{right}"
        return f"({s})" if p < parent_prec else s

    return render(e, 0, False)


# ---------------------------------------------------------------------------
# evaluation


class TableFunction2D:
    """Bilinear lookup table f(a, b) on a rectangular grid.

    Scalar evaluation interpolates bilinearly; interval evaluation returns
    the min/max over all grid nodes of the cells covered by the argument
    rectangle, which encloses the bilinear interpolant exactly because the
    interpolant is a convex combination of its cell's corner nodes.
    Arguments outside the grid are an error.
    """

    def __init__(self, a_grid, b_grid, values):
        self.a = np.asarray(a_grid, dtype=np.float64)
        self.b = np.asarray(b_grid, dtype=np.float64)
        self.v = np.asarray(values, dtype=np.float64)
        if self.v.shape != (self.a.size, self.b.size):
            raise ValueError("table shape must be (len(a_grid), len(b_grid))")
        if np.any(np.diff(self.a) <= 0) or np.any(np.diff(self.b) <= 0):
            raise ValueError("table grids must be strictly increasing")

    def _locate(self, g, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < g[0]) or np.any(x > g[-1]):
            raise EvalDomainError("table lookup outside the grid range")
        i = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        t = (x - g[i]) / (g[i + 1] - g[i])
        return i, t

    def eval(self, a, b):
        if isinstance(a, Ref) or isinstance(b, Ref):
            raise EvalDomainError(
                "table functions cannot take trainable arguments pointwise; "
                "use interval evaluation for bound computations")
        ia, ta = self._locate(self.a, a)
        ib, tb = self._locate(self.b, b)
        v = self.v
        return ((1 - ta) * (1 - tb) * v[ia, ib] + ta * (1 - tb) * v[ia + 1, ib]
                + (1 - ta) * tb * v[ia, ib + 1] + ta * tb * v[ia + 1, ib + 1])

    def eval_interval(self, aI: IVal, bI: IVal) -> IVal:
        a_lo, a_hi = np.atleast_1d(aI.lo_val), np.atleast_1d(aI.hi_val)
        b_lo, b_hi = np.atleast_1d(bI.lo_val), np.atleast_1d(bI.hi_val)
        n = max(a_lo.size, b_lo.size)
        a_lo, a_hi, b_lo, b_hi = (np.broadcast_to(z, (n,)) for z in
                                  (a_lo, a_hi, b_lo, b_hi))
        lo = np.empty(n)
        hi = np.empty(n)
        for k in range(n):
            i0, _ = self._locate(self.a, a_lo[k])
            i1, _ = self._locate(self.a, a_hi[k])
            j0, _ = self._locate(self.b, b_lo[k])
            j1, _ = self._locate(self.b, b_hi[k])
            patch = self.v[i0:i1 + 2, j0:j1 + 2]
            lo[k] = patch.min()
            hi[k] = patch.max()
        return IVal(lo, hi)


def _check_finite(v):
    arr = v.value if isinstance(v, Ref) else np.asarray(v)
    if not np.all(np.isfinite(arr)):
        raise EvalDomainError("expression produced a non-finite value")
    return v


def eval_columns(e: ExprAst, x_cols, u_cols, consts, tables=None):
    """Evaluate over per-dimension columns (arrays and/or tape refs)."""
    tables = tables or {}

    def ev(node):
        if isinstance(node, Const):
            return node.value
        if isinstance(node, StateVar):
            return x_cols[node.index - 1]
        if isinstance(node, ControlVar):
            if u_cols is None:
                raise EvalDomainError(
                    f"expression references u{node.index} but no control given")
            return u_cols[node.index - 1]
        if isinstance(node, NamedConst):
            return consts[node.name]
        if isinstance(node, Unary):
            return -ev(node.child)
        if isinstance(node, Call):
            if node.func in UNARY_FUNCS:
                arg = ev(node.args[0])
                if node.func == "log":
                    if np.any(ivals.val_of(arg) <= 0.0):
                        raise EvalDomainError("log of a non-positive value")
                if node.func == "sqrt":
                    if np.any(ivals.val_of(arg) < 0.0):
                        raise EvalDomainError("sqrt of a negative value")
                if node.func == "tan":
                    s = ivals.apply_unary("sin", arg)
                    c = ivals.apply_unary("cos", arg)
                    return _check_finite(s / c)
                return ivals.apply_unary(node.func, arg)
            return tables[node.func].eval(ev(node.args[0]), ev(node.args[1]))
        if node.op == "^":
            base = ev(node.left)
            k = node.right.value
            if k == int(k):
                ki = int(k)
                if ki == 0:
                    return np.ones_like(ivals.val_of(base))
                if ki < 0:
                    den = ivals.val_of(base)
                    if np.any(den == 0.0):
                        raise EvalDomainError("zero raised to a negative power")
                    return _check_finite(1.0 / ivals._int_pow(base, -ki))
                return ivals._int_pow(base, ki)
            if np.any(ivals.val_of(base) <= 0.0):
                raise EvalDomainError("non-integer power of a non-positive base")
            lg = ivals.apply_unary("log", base)
            return ivals.apply_unary("exp", lg * k)
        lhs, rhs = ev(node.left), ev(node.right)
        if node.op == "+":
            return lhs + rhs
        if node.op == "-":
            return lhs - rhs
        if node.op == "*":
            return lhs * rhs
        if np.any(ivals.val_of(rhs) == 0.0):
            raise EvalDomainError("division by zero")
        return _check_finite(lhs / rhs)

    return _check_finite(ev(e))


def eval_scalar(e: ExprAst, x, u=None, consts=None, tables=None):
    """Evaluate at a single point (vectors of floats)."""
    x_cols = [np.float64(v) for v in np.atleast_1d(np.asarray(x, dtype=np.float64))]
    u_cols = None
    if u is not None:
        u_cols = [np.float64(v) for v in np.atleast_1d(np.asarray(u, dtype=np.float64))]
    out = eval_columns(e, x_cols, u_cols, consts or {}, tables)
    return float(out)


def eval_interval(e: ExprAst, xI, uI=None, consts=None, tables=None) -> IVal:
    """Sound interval enclosure over per-dimension interval columns."""
    consts = consts or {}
    tables = tables or {}

    def as_ival(v):
        return v if isinstance(v, IVal) else IVal.point(v)

    def ev(node) -> IVal:
        if isinstance(node, Const):
            return IVal.point(np.float64(node.value))
        if isinstance(node, StateVar):
            return as_ival(xI[node.index - 1])
        if isinstance(node, ControlVar):
            if uI is None:
                raise EvalDomainError(
                    f"expression references u{node.index} but no control given")
            return as_ival(uI[node.index - 1])
        if isinstance(node, NamedConst):
            return IVal.point(np.float64(consts[node.name]))
        if isinstance(node, Unary):
            return -ev(node.child)
        if isinstance(node, Call):
            if node.func in UNARY_FUNCS:
                arg = ev(node.args[0])
                return {
                    "sin": ivals.isin, "cos": ivals.icos, "tan": ivals.itan,
                    "exp": ivals.iexp, "log": ivals.ilog, "sqrt": ivals.isqrt,
                    "tanh": ivals.itanh, "abs": ivals.iabs,
                }[node.func](arg)
            return tables[node.func].eval_interval(ev(node.args[0]),
                                                   ev(node.args[1]))
        if node.op == "^":
            base = ev(node.left)
            k = node.right.value
            if k == int(k):
                return ivals.ipow_int(base, int(k))
            return ivals.ipow_real(base, k)
        lhs, rhs = ev(node.left), ev(node.right)
        return {"+": lhs.__add__, "-": lhs.__sub__, "*": lhs.__mul__,
                "/": lhs.__truediv__}[node.op](rhs)

    return ev(e)


def free_control_vars(e: ExprAst) -> set:
    out = set()

    def walk(node):
        if isinstance(node, ControlVar):
            out.add(node.index)
        elif isinstance(node, Unary):
            walk(node.child)
        elif isinstance(node, Binary):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Call):
            for a in node.args:
                walk(a)

    walk(e)
    return out


def substitute_controls(e: ExprAst, u_exprs) -> ExprAst:
    """Inline control expressions u_j := pi_j(x); used to close the loop
    symbolically when the controller is itself an expression."""
    if isinstance(e, ControlVar):
        return u_exprs[e.index - 1]
    if isinstance(e, Unary):
        return Unary(e.op, substitute_controls(e.child, u_exprs))
    if isinstance(e, Binary):
        return Binary(e.op, substitute_controls(e.left, u_exprs),
                      substitute_controls(e.right, u_exprs))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute_controls(a, u_exprs) for a in e.args))
    return e


@dataclass
class DynamicsSpec:
    """SDE coefficient expressions: drift f(x, u) and diffusion g(x)."""

    n: int
    m_u: int
    n_w: int
    drift: list          # n expressions
    diffusion: list      # n rows of n_w expressions
    constants: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.drift) != self.n:
            raise DimensionMismatch(f"drift needs {self.n} rows")
        if len(self.diffusion) != self.n or any(len(r) != self.n_w
                                                for r in self.diffusion):
            raise DimensionMismatch(
                f"diffusion must be {self.n} x {self.n_w}")
        for row in self.diffusion:
            for g in row:
                if free_control_vars(g):
                    raise DimensionMismatch(
                        "diffusion expressions may only reference state variables")

    @classmethod
    def from_strings(cls, n, m_u, n_w, drift, diffusion, constants=None,
                     tables=None) -> "DynamicsSpec":
        constants = dict(constants or {})
        tables = dict(tables or {})
        names = set(constants)
        drift_ast = [parse_expr(s, names, set(tables), n, m_u) for s in drift]
        diff_ast = [[parse_expr(s, names, set(tables), n, m_u) for s in row]
                    for row in diffusion]
        return cls(n, m_u, n_w, drift_ast, diff_ast, constants, tables)

    def drift_columns(self, x_cols, u_cols):
        return [eval_columns(f, x_cols, u_cols, self.constants, self.tables)
                for f in self.drift]

    def diffusion_matrix(self, x_cols):
        """Batched g(x): returns an (n, n_w) nested list of columns."""
        return [[eval_columns(g, x_cols, None, self.constants, self.tables)
                 for g in row] for row in self.diffusion]

    def diffusion_product_exprs(self):
        """Symbolic [g g^T]_{ij} = sum_k g_ik * g_jk (upper triangle enough;
        the matrix is symmetric by construction)."""
        out = [[None] * self.n for _ in range(self.n)]
        for i in range(self.n):
            for j in range(i, self.n):
                acc = Const(0.0)
                for k in range(self.n_w):
                    acc = e_add(acc, e_mul(self.diffusion[i][k],
                                           self.diffusion[j][k]))
                out[i][j] = acc
                out[j][i] = acc
        return out
