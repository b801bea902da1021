"""The generator computation graph.

For a certificate V and closed-loop SDE coefficients, the generator value at
a state is::

    Phi(x) = sum_i f_i(x, pi(x)) dV/dx_i
             + 1/2 sum_{i,l} [g(x) g(x)^T]_{il} d2V/dx_i dx_l

built from the certificate's closed-form spatial derivatives, so the same
parameter storage drives V and Phi coherently.  The diffusion outer product
is precomposed symbolically (with x*x folded to x^2 so interval evaluation
stays exact), and only its structurally non-zero entries enter the
second-order sum.

Controllers come in three flavors: a fixed expression vector (inlined
symbolically into the drift for tighter bounds), a frozen network (its
output box is computed by IBP and substituted as a constant control
enclosure), and a trainable network (its output intervals stay on the tape
so gradients reach the controller parameters).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .expr import (Const, DynamicsSpec, eval_columns, eval_interval,
                   free_control_vars, substitute_controls)
from .ivals import IVal
from .nets import CertificateNet, ControllerNet
from .tape import Tape

__all__ = ["ExprController", "NetController", "GeneratorGraph",
           "build_generator", "eval_generator"]

_EK = {"optimize": True}


class ExprController:
    """Feedback law given as state-only expressions u_j = pi_j(x)."""

    def __init__(self, exprs):
        self.exprs = list(exprs)
        for e in self.exprs:
            if free_control_vars(e):
                raise DimensionMismatch("controller expressions must be state-only")

    @property
    def m_u(self) -> int:
        return len(self.exprs)


class NetController:
    def __init__(self, net: ControllerNet, trainable: bool):
        self.net = net
        self.trainable = trainable

    @property
    def m_u(self) -> int:
        return self.net.m_u


class GeneratorGraph:
    def __init__(self, net: CertificateNet, dynamics: DynamicsSpec, controller,
                 cert_prefix: str = "", ctrl_prefix: str = "pi."):
        if net.n != dynamics.n:
            raise DimensionMismatch(
                f"certificate dim {net.n} != dynamics dim {dynamics.n}")
        if controller is not None and controller.m_u != dynamics.m_u:
            raise DimensionMismatch(
                f"controller outputs {controller.m_u} != control dim {dynamics.m_u}")
        if controller is None and dynamics.m_u > 0:
            raise DimensionMismatch("dynamics use controls but no controller given")
        self.net = net
        self.dynamics = dynamics
        self.controller = controller
        self.cert_prefix = cert_prefix
        self.ctrl_prefix = ctrl_prefix

        if isinstance(controller, ExprController):
            self.closed_drift = [substitute_controls(f, controller.exprs)
                                 for f in dynamics.drift]
        else:
            self.closed_drift = None

        ggt = dynamics.diffusion_product_exprs()
        self.ggt_exprs = ggt
        self.nz_pairs = []
        for i in range(dynamics.n):
            for l in range(i, dynamics.n):
                e = ggt[i][l]
                if not (isinstance(e, Const) and e.value == 0.0):
                    self.nz_pairs.append((i, l, 1.0 if i == l else 2.0))

    # -- drift and diffusion access -----------------------------------------

    def _x_cols(self, X):
        return [X[:, i] for i in range(self.dynamics.n)]

    def drift_columns(self, X, tape: Tape | None = None,
                      leaves: dict | None = None):
        """Pointwise closed-loop drift columns at a batch of states."""
        dyn = self.dynamics
        x_cols = self._x_cols(X)
        if self.closed_drift is not None:
            return [eval_columns(f, x_cols, None, dyn.constants, dyn.tables)
                    for f in self.closed_drift]
        ctrl = self.controller
        if ctrl is None:
            u_cols = None
        elif isinstance(ctrl, NetController) and ctrl.trainable and tape is not None:
            refs = ctrl.net.tape_forward(tape, leaves, X, self.ctrl_prefix)
            u_cols = [tape.reshape(r, (X.shape[0],)) for r in refs]
        else:
            u = ctrl.net.forward(X)
            u_cols = [u[:, j] for j in range(u.shape[1])]
        return [eval_columns(f, x_cols, u_cols, dyn.constants, dyn.tables)
                for f in dyn.drift]

    def drift_interval_columns(self, lo, hi, tape: Tape | None = None,
                               leaves: dict | None = None):
        """Sound drift enclosures over a batch of boxes."""
        dyn = self.dynamics
        xI = [IVal(lo[:, i], hi[:, i]) for i in range(dyn.n)]
        if self.closed_drift is not None:
            return [eval_interval(f, xI, None, dyn.constants, dyn.tables)
                    for f in self.closed_drift]
        ctrl = self.controller
        if ctrl is None:
            uI = None
        elif isinstance(ctrl, NetController) and ctrl.trainable and tape is not None:
            boxes = ctrl.net.interval_forward(lo, hi, tape=tape, leaves=leaves,
                                              prefix=self.ctrl_prefix)
            uI = [IVal(tape.reshape(b.lo, (lo.shape[0],)),
                       tape.reshape(b.hi, (lo.shape[0],))) for b in boxes]
        else:
            boxes = ctrl.net.interval_forward(lo, hi)
            uI = [IVal(b.lo.reshape(-1), b.hi.reshape(-1)) for b in boxes]
        return [eval_interval(f, xI, uI, dyn.constants, dyn.tables)
                for f in dyn.drift]

    def ggt_point_pairs(self, X) -> np.ndarray:
        """(B, P) values of the non-zero diffusion products at states."""
        x_cols = self._x_cols(X)
        dyn = self.dynamics
        cols = []
        for (i, l, _) in self.nz_pairs:
            v = eval_columns(self.ggt_exprs[i][l], x_cols, None,
                             dyn.constants, dyn.tables)
            cols.append(np.broadcast_to(np.asarray(v, dtype=np.float64),
                                        (X.shape[0],)))
        if not cols:
            return np.zeros((X.shape[0], 0))
        return np.stack(cols, axis=1)

    def ggt_interval_pairs(self, lo, hi) -> IVal:
        dyn = self.dynamics
        xI = [IVal(lo[:, i], hi[:, i]) for i in range(dyn.n)]
        los, his = [], []
        C = lo.shape[0]
        for (i, l, _) in self.nz_pairs:
            v = eval_interval(self.ggt_exprs[i][l], xI, None,
                              dyn.constants, dyn.tables)
            los.append(np.broadcast_to(np.asarray(v.lo_val, dtype=np.float64), (C,)))
            his.append(np.broadcast_to(np.asarray(v.hi_val, dtype=np.float64), (C,)))
        return IVal(np.stack(los, axis=1), np.stack(his, axis=1))

    # -- pointwise generator value -------------------------------------------

    def eval(self, X, chunk: int = 20000) -> np.ndarray:
        """Phi at a batch of states (current parameters, frozen controller)."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        pts = X[None, :] if single else X
        outs = []
        for s in range(0, pts.shape[0], chunk):
            outs.append(self._eval_chunk(pts[s:s + chunk]))
        out = np.concatenate(outs) if outs else np.zeros(0)
        return float(out[0]) if single else out

    def _eval_chunk(self, X) -> np.ndarray:
        net = self.net
        q = net.layer_quantities(X)
        A = net.scaled_jacobian_inner(q)
        grad = net.s_out * np.einsum("j,bj,bji->bi", net.W3, q["d2"], A, **_EK)
        F = np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64), (X.shape[0],))
                      for c in self.drift_columns(X)], axis=1)
        phi = np.einsum("bi,bi->b", F, grad, **_EK)
        if self.nz_pairs:
            idx_i = [p[0] for p in self.nz_pairs]
            idx_l = [p[1] for p in self.nz_pairs]
            coeff = np.array([0.5 * p[2] for p in self.nz_pairs])
            W1s = net.W1 / net.s_in[None, :]
            partA = A[:, :, idx_i] * A[:, :, idx_l]
            W11 = W1s[:, idx_i] * W1s[:, idx_l]
            inner = np.einsum("jk,bk,kp->bjp", net.W2, q["q1"], W11, **_EK)
            HB = net.s_out * (np.einsum("j,bj,bjp->bp", net.W3, q["q2"], partA, **_EK)
                              + np.einsum("j,bj,bjp->bp", net.W3, q["d2"], inner, **_EK))
            ggt = self.ggt_point_pairs(X)
            phi = phi + (ggt * HB) @ coeff
        return phi

    def tape_phi_points(self, tape: Tape, leaves: dict, X):
        """Pointwise Phi on the tape; used by the sampled (soft) loss and by
        joint synthesis, where gradients also reach controller parameters."""
        net = self.net
        p = self.cert_prefix
        q = net.tape_point_quantities(tape, leaves, X, p)
        W1, W2, W3 = q["W1"], q["W2"], q["W3"]
        B = X.shape[0]
        W1s = W1 * (1.0 / net.s_in)
        P = tape.einsum("jk,ki->jki", W2, W1s)
        A = tape.einsum("bk,jki->bji", q["d1"], P)
        W3d2 = q["d2"] * W3
        grad = tape.einsum("bj,bji->bi", W3d2, A) * net.s_out
        f_cols = self.drift_columns(X, tape=tape, leaves=leaves)
        phi = None
        for i, fc in enumerate(f_cols):
            gi = tape.reshape(tape.take(grad, [i], axis=1), (B,))
            term = gi * fc
            phi = term if phi is None else phi + term
        if self.nz_pairs:
            idx_i = [pr[0] for pr in self.nz_pairs]
            idx_l = [pr[1] for pr in self.nz_pairs]
            coeff = np.array([0.5 * pr[2] for pr in self.nz_pairs])
            A_i = tape.take(A, idx_i, axis=2)
            A_l = tape.take(A, idx_l, axis=2)
            partA = A_i * A_l
            W11 = tape.take(W1s, idx_i, axis=1) * tape.take(W1s, idx_l, axis=1)
            R = tape.einsum("jk,kp->jkp", W2, W11)
            inner = tape.einsum("bk,jkp->bjp", q["q1"], R)
            HB = (tape.einsum("bj,bjp->bp", q["q2"] * W3, partA)
                  + tape.einsum("bj,bjp->bp", W3d2, inner)) * net.s_out
            ggt = self.ggt_point_pairs(X) * coeff[None, :]
            phi = phi + tape.einsum("bp,bp->b", HB, tape.const(ggt))
        if phi is None:
            phi = tape.const(np.zeros(B))
        return phi


def build_generator(net: CertificateNet, dynamics: DynamicsSpec,
                    controller) -> GeneratorGraph:
    return GeneratorGraph(net, dynamics, controller)


def eval_generator(gen: GeneratorGraph, x) -> float:
    """Generator value at one state."""
    return gen.eval(np.asarray(x, dtype=np.float64))
