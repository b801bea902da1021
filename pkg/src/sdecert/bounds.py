"""Differentiable interval bound propagation for certificates and generators.

Given a batch of cells (boxes), these routines produce sound per-cell
enclosures of the certificate value V and of the generator value (the
expected instantaneous drift of V along the SDE).  When a tape and parameter
leaves are supplied, both endpoints are tape nodes, so the bound-based
training loss is differentiable in the network parameters; without a tape
the same arithmetic runs on plain arrays for frozen evaluation.

Soundness is inherited from the primitive rules in :mod:`sdecert.ivals`:
center-radius affine maps, exact activation ranges, and four-corner
products.  All downstream constraint checks add an absolute slack of 1e-9
to absorb native floating-point rounding (no outward rounding is performed
per primitive).
"""

from __future__ import annotations

import numpy as np

from .ivals import (IVal, isigd1, isigd2, isigmoid, scale)
from . import ivals
from .tape import Ref, Tape

__all__ = ["bound_affine", "bound_activation", "bound_certificate",
           "bound_generator", "CONSTRAINT_SLACK"]

# documented absolute slack folded into every downstream constraint check
CONSTRAINT_SLACK = 1e-9

_EK = {"optimize": True}


def _einsum(spec, a, b):
    if isinstance(a, Ref) or isinstance(b, Ref):
        t = a.tape if isinstance(a, Ref) else b.tape
        return t.einsum(spec, t.lift(a), t.lift(b))
    return np.einsum(spec, a, b, **_EK)


def _abs(x):
    return x.tape.abs(x) if isinstance(x, Ref) else np.abs(x)


def _sum(x, axis):
    return x.tape.sum(x, axis=axis) if isinstance(x, Ref) else np.sum(x, axis=axis)


def _take(x, idx, axis):
    return x.tape.take(x, idx, axis=axis) if isinstance(x, Ref) \
        else np.take(x, idx, axis=axis)


def _reshape(x, shape):
    return x.tape.reshape(x, shape) if isinstance(x, Ref) else np.reshape(x, shape)


def _isum(I: IVal, axis) -> IVal:
    return IVal(_sum(I.lo, axis), _sum(I.hi, axis))


def _itake(I: IVal, idx, axis) -> IVal:
    return IVal(_take(I.lo, idx, axis), _take(I.hi, idx, axis))


def _iexpand(I: IVal, shape) -> IVal:
    return IVal(_reshape(I.lo, shape), _reshape(I.hi, shape))


def bound_affine(W, b, inI: IVal, tape: Tape | None = None) -> IVal:
    """Center-radius image of an interval vector batch under x -> W x + b.

    ``inI`` endpoints have shape (C, k); the result has shape (C, m) for W
    of shape (m, k).  Exact for affine maps.
    """
    mid = _einsum("ck,jk->cj", inI.mid, W)
    rad = _einsum("ck,jk->cj", inI.rad, _abs(W))
    if b is not None:
        mid = mid + b
    return IVal(mid - rad, mid + rad)


def bound_activation(kind: str, zI: IVal) -> IVal:
    """Exact elementwise range of an activation over an interval."""
    return ivals.ACTIVATION_RANGES[kind](zI)


def _cert_layer_intervals(net, lo, hi, leaves=None, prefix=""):
    """Interval layer quantities of the certificate over a batch of boxes."""
    get = (lambda k: leaves[prefix + k]) if leaves is not None \
        else (lambda k: getattr(net, k))
    xI = IVal.from_box_cols(lo / net.s_in, hi / net.s_in)
    z1I = bound_affine(get("W1"), get("b1"), xI)
    h1I = isigmoid(z1I)
    z2I = bound_affine(get("W2"), get("b2"), h1I)
    return {"z1": z1I, "h1": h1I, "z2": z2I, "h2": isigmoid(z2I),
            "d1": isigd1(z1I), "q1": isigd2(z1I),
            "d2": isigd1(z2I), "q2": isigd2(z2I), "get": get}


def bound_certificate(net, lo: np.ndarray, hi: np.ndarray,
                      tape: Tape | None = None, leaves: dict | None = None,
                      prefix: str = "") -> IVal:
    """Sound enclosure of V over each box in a (C, n) batch."""
    L = _cert_layer_intervals(net, lo, hi, leaves, prefix)
    W3 = L["get"]("W3")
    h2I = L["h2"]
    mid = _einsum("cj,j->c", h2I.mid, W3) * net.s_out
    rad = _einsum("cj,j->c", h2I.rad, _abs(W3)) * net.s_out
    out = IVal(mid - rad, mid + rad)
    if net.has_bias:
        b3 = leaves[prefix + "b3"] if leaves is not None else net.b3
        out = out + b3
    return out


def bound_generator(gen, lo: np.ndarray, hi: np.ndarray,
                    tape: Tape | None = None, leaves: dict | None = None) -> IVal:
    """Sound enclosure of the generator value over each box in a batch.

    The first-order term couples drift enclosures with the closed-form
    gradient intervals; the second-order term runs over the structurally
    non-zero entries of the diffusion outer product only.  The upper
    endpoint is the quantity penalized by the generator loss term.
    """
    net = gen.net
    prefix = gen.cert_prefix
    C = lo.shape[0]
    L = _cert_layer_intervals(net, lo, hi, leaves, prefix)
    get = L["get"]
    W1, W2, W3 = get("W1"), get("W2"), get("W3")

    W1s = W1 * (1.0 / net.s_in)          # fold input scaling into the weights
    P = _einsum("jk,ki->jki", W2, W1s)
    A_mid = _einsum("ck,jki->cji", L["d1"].mid, P)
    A_rad = _einsum("ck,jki->cji", L["d1"].rad, _abs(P))
    AI = IVal(A_mid - A_rad, A_mid + A_rad)   # (C, m2, n)

    d2W3 = scale(L["d2"], W3)                 # (C, m2)
    m2, n = net.m2, net.n
    gradI = _isum(ivals.imul(_iexpand(d2W3, (C, m2, 1)), AI), axis=1) * net.s_out

    fI = gen.drift_interval_columns(lo, hi, tape=tape, leaves=leaves)
    term = None
    for i in range(n):
        gi = _itake(gradI, [i], axis=1)
        gi = _iexpand(gi, (C,))
        contrib = ivals.imul(fI[i], gi)
        term = contrib if term is None else term + contrib

    pairs = gen.nz_pairs
    if pairs:
        idx_i = [p[0] for p in pairs]
        idx_l = [p[1] for p in pairs]
        coeff = np.array([0.5 * p[2] for p in pairs])
        A_i = _itake(AI, idx_i, axis=2)
        A_l = _itake(AI, idx_l, axis=2)
        partA = ivals.imul(A_i, A_l)          # (C, m2, P)
        q2W3 = scale(L["q2"], W3)
        termA = ivals.imul(_iexpand(q2W3, (C, m2, 1)), partA)
        W11 = _take(W1s, idx_i, 1) * _take(W1s, idx_l, 1)     # (m1, P)
        R = _einsum("jk,kp->jkp", W2, W11)
        in_mid = _einsum("ck,jkp->cjp", L["q1"].mid, R)
        in_rad = _einsum("ck,jkp->cjp", L["q1"].rad, _abs(R))
        inner2I = IVal(in_mid - in_rad, in_mid + in_rad)
        termB = ivals.imul(_iexpand(d2W3, (C, m2, 1)), inner2I)
        HI = _isum(termA + termB, axis=1) * net.s_out         # (C, P)
        ggtI = gen.ggt_interval_pairs(lo, hi)                 # constant (C, P)
        second = _isum(scale(ivals.imul(ggtI, HI), coeff), axis=1)
        term = second if term is None else term + second

    if term is None:
        zero = np.zeros(C)
        return IVal(zero, zero)
    return term
