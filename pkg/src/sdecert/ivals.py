"""Interval arithmetic whose endpoints may be ndarrays or tape refs.

This is the kernel of differentiable interval bound propagation: intervals
carry elementwise lower/upper endpoints, and every rule is written with ops
the tape can differentiate.  Because tape values are eager, data-dependent
range analysis (which endpoint or interior critical point attains an
extremum) is decided from current values and folded in as constant masks;
gradients then flow only through the active branch, which is the correct
subgradient of the bound.

Products use the four-corner rule through min/max primitives; affine maps
use the center-radius rule; sigmoid/tanh families use exact range analysis
(monotone pieces plus interior extrema).
"""

from __future__ import annotations

import numpy as np

from .errors import EvalDomainError
from .tape import Ref, NUMPY_UNARY

__all__ = ["IVal"]

_TWO_PI = 2.0 * np.pi
# critical point of the sigmoid second derivative and its extreme value
_SIGD2_Z = float(np.log(2.0 + np.sqrt(3.0)))
_SIGD2_C = 1.0 / (6.0 * np.sqrt(3.0))


def val_of(x):
    """Eager numeric value of an endpoint (tape or plain)."""
    return x.value if isinstance(x, Ref) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Ref):
            return x.tape
    return None


def apply_unary(name, x):
    if isinstance(x, Ref):
        return x.tape.unary(name, x)
    return NUMPY_UNARY[name](np.asarray(x, dtype=np.float64))


def vmin(a, b):
    t = _tape_of(a, b)
    if t is not None:
        return t.minimum(t.lift(a), t.lift(b))
    return np.minimum(a, b)


def vmax(a, b):
    t = _tape_of(a, b)
    if t is not None:
        return t.maximum(t.lift(a), t.lift(b))
    return np.maximum(a, b)


def blend(mask, a, b):
    """mask * a + (1 - mask) * b with a constant 0/1 mask array."""
    mask = np.asarray(mask, dtype=np.float64)
    return mask * a + (1.0 - mask) * b


class IVal:
    """Elementwise interval [lo, hi]; endpoints are arrays or tape refs."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, x) -> "IVal":
        return cls(x, x)

    @classmethod
    def from_box_cols(cls, lo: np.ndarray, hi: np.ndarray) -> "IVal":
        return cls(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))

    @property
    def lo_val(self) -> np.ndarray:
        return val_of(self.lo)

    @property
    def hi_val(self) -> np.ndarray:
        return val_of(self.hi)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self):
        return 0.5 * (self.hi - self.lo)

    # -- ring operations ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, IVal):
            return IVal(self.lo + other.lo, self.hi + other.hi)
        return IVal(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, IVal):
            return IVal(self.lo - other.hi, self.hi - other.lo)
        return IVal(self.lo - other, self.hi - other)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        return IVal(-self.hi, -self.lo)

    def __mul__(self, other):
        if isinstance(other, IVal):
            return imul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, IVal):
            return imul(self, reciprocal(other))
        return scale(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def contains_value(self, v, slack: float = 0.0) -> np.ndarray:
        return (self.lo_val - slack <= v) & (v <= self.hi_val + slack)


def imul(a: IVal, b: IVal) -> IVal:
    """Four-corner interval product; gradients flow through active corners."""
    p1 = a.lo * b.lo
    p2 = a.lo * b.hi
    p3 = a.hi * b.lo
    p4 = a.hi * b.hi
    lo = vmin(vmin(p1, p2), vmin(p3, p4))
    hi = vmax(vmax(p1, p2), vmax(p3, p4))
    return IVal(lo, hi)


def scale(a: IVal, c) -> IVal:
    """Product with a pointwise factor via the positive/negative split,
    exact and differentiable in the factor."""
    if isinstance(c, Ref):
        cp = c.tape.relu(c)
        cn = c.tape.relu(-c)
    else:
        c = np.asarray(c, dtype=np.float64)
        cp = np.maximum(c, 0.0)
        cn = np.maximum(-c, 0.0)
    return IVal(cp * a.lo - cn * a.hi, cp * a.hi - cn * a.lo)


def reciprocal(a: IVal) -> IVal:
    lo_v, hi_v = a.lo_val, a.hi_val
    if np.any((lo_v <= 0.0) & (hi_v >= 0.0)):
        raise EvalDomainError("division by an interval containing zero")
    return IVal(1.0 / a.hi, 1.0 / a.lo)


def monotone(name: str, a: IVal, increasing: bool = True) -> IVal:
    f_lo = apply_unary(name, a.lo)
    f_hi = apply_unary(name, a.hi)
    return IVal(f_lo, f_hi) if increasing else IVal(f_hi, f_lo)


def iexp(a: IVal) -> IVal:
    return monotone("exp", a)


def ilog(a: IVal) -> IVal:
    if np.any(a.lo_val <= 0.0):
        raise EvalDomainError("log over an interval touching (-inf, 0]")
    return monotone("log", a)


def isqrt(a: IVal) -> IVal:
    if np.any(a.lo_val < 0.0):
        raise EvalDomainError("sqrt over an interval with negative points")
    return monotone("sqrt", a)


def itanh(a: IVal) -> IVal:
    return monotone("tanh", a)


def isigmoid(a: IVal) -> IVal:
    return monotone("sigmoid", a)


def iabs(a: IVal) -> IVal:
    lo_v, hi_v = a.lo_val, a.hi_val
    straddle = (lo_v <= 0.0) & (hi_v >= 0.0)
    alo = apply_unary("abs", a.lo)
    ahi = apply_unary("abs", a.hi)
    return IVal(blend(straddle, 0.0, vmin(alo, ahi)), vmax(alo, ahi))


def ipow_int(a: IVal, k: int) -> IVal:
    if k == 0:
        one = np.ones_like(a.lo_val)
        return IVal(one, one)
    if k < 0:
        return reciprocal(ipow_int(a, -k))
    if k == 1:
        return IVal(a.lo, a.hi)
    if k % 2 == 0:
        m = iabs(a)
        return IVal(_int_pow(m.lo, k), _int_pow(m.hi, k))
    return IVal(_int_pow(a.lo, k), _int_pow(a.hi, k))


def _int_pow(x, k: int):
    # square-and-multiply keeps everything inside supported tape ops
    result = None
    base = x
    while k > 0:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if k:
            base = apply_unary("square", base)
    return result


def ipow_real(a: IVal, r: float) -> IVal:
    if np.any(a.lo_val <= 0.0):
        raise EvalDomainError("non-integer power needs a strictly positive base")
    t = _tape_of(a.lo, a.hi)
    if t is not None:
        f = lambda x: t.exp(t.log(t.lift(x)) * r)
    else:
        f = lambda x: np.exp(np.log(np.asarray(x, dtype=np.float64)) * r)
    return IVal(f(a.lo), f(a.hi)) if r >= 0 else IVal(f(a.hi), f(a.lo))


def isquare(a: IVal) -> IVal:
    return ipow_int(a, 2)


def isin(a: IVal) -> IVal:
    """Exact sine range via monotone pieces and interior extrema; argument
    reduction uses floating floor (documented precision ~1 ulp per 2*pi),
    and intervals at least 2*pi wide collapse to [-1, 1]."""
    lo_v, hi_v = a.lo_val, a.hi_val
    wide = (hi_v - lo_v) >= _TWO_PI
    k_max = np.ceil((lo_v - 0.5 * np.pi) / _TWO_PI)
    has_max = (0.5 * np.pi + _TWO_PI * k_max) <= hi_v
    k_min = np.ceil((lo_v + 0.5 * np.pi) / _TWO_PI)
    has_min = (-0.5 * np.pi + _TWO_PI * k_min) <= hi_v
    s_lo = apply_unary("sin", a.lo)
    s_hi = apply_unary("sin", a.hi)
    hi_out = blend(wide | has_max, 1.0, vmax(s_lo, s_hi))
    lo_out = blend(wide | has_min, -1.0, vmin(s_lo, s_hi))
    return IVal(lo_out, hi_out)


def icos(a: IVal) -> IVal:
    return isin(a + 0.5 * np.pi)


def itan(a: IVal) -> IVal:
    lo_v, hi_v = a.lo_val, a.hi_val
    branch_lo = np.floor((lo_v + 0.5 * np.pi) / np.pi)
    branch_hi = np.floor((hi_v + 0.5 * np.pi) / np.pi)
    if np.any(branch_lo != branch_hi):
        raise EvalDomainError("tan over an interval containing a pole")
    t = _tape_of(a.lo, a.hi)
    if t is not None:
        f = lambda x: t.div(t.sin(t.lift(x)), t.cos(t.lift(x)))
    else:
        f = np.tan
    return IVal(f(a.lo), f(a.hi))


def isigd1(a: IVal) -> IVal:
    """Range of sigmoid' (unimodal, peak 1/4 at 0)."""
    lo_v, hi_v = a.lo_val, a.hi_val
    f_lo = apply_unary("sigd1", a.lo)
    f_hi = apply_unary("sigd1", a.hi)
    has_peak = (lo_v <= 0.0) & (hi_v >= 0.0)
    return IVal(vmin(f_lo, f_hi), blend(has_peak, 0.25, vmax(f_lo, f_hi)))


def isigd2(a: IVal) -> IVal:
    """Range of sigmoid''; extrema +-1/(6*sqrt(3)) at z = -+log(2+sqrt(3))."""
    lo_v, hi_v = a.lo_val, a.hi_val
    f_lo = apply_unary("sigd2", a.lo)
    f_hi = apply_unary("sigd2", a.hi)
    has_max = (lo_v <= -_SIGD2_Z) & (hi_v >= -_SIGD2_Z)
    has_min = (lo_v <= _SIGD2_Z) & (hi_v >= _SIGD2_Z)
    hi_out = blend(has_max, _SIGD2_C, vmax(f_lo, f_hi))
    lo_out = blend(has_min, -_SIGD2_C, vmin(f_lo, f_hi))
    return IVal(lo_out, hi_out)


def itanhd1(a: IVal) -> IVal:
    """Range of tanh' (unimodal, peak 1 at 0)."""
    lo_v, hi_v = a.lo_val, a.hi_val
    f_lo = apply_unary("tanhd1", a.lo)
    f_hi = apply_unary("tanhd1", a.hi)
    has_peak = (lo_v <= 0.0) & (hi_v >= 0.0)
    return IVal(vmin(f_lo, f_hi), blend(has_peak, 1.0, vmax(f_lo, f_hi)))


ACTIVATION_RANGES = {
    "sigmoid": isigmoid,
    "tanh": itanh,
    "sigd1": isigd1,
    "sigd2": isigd2,
    "tanhd1": itanhd1,
}
