"""Certificate and controller networks.

The certificate is a two-hidden-layer sigmoid network with input and output
scaling and a linear output (twice continuously differentiable by
construction, which the generator condition requires)::

    x_norm = x / s_in
    z1 = W1 x_norm + b1,  h1 = sigmoid(z1)
    z2 = W2 h1 + b2,      h2 = sigmoid(z2)
    V(x) = s_out * W3 . h2  (+ b3 when the output bias is enabled)

Spatial gradient and Hessian are closed forms in the layer quantities
d = sigmoid'(z) and q = sigmoid''(z); the Hessian generalizes the diagonal
second-derivative expression to mixed partials because the diffusion outer
product need not be diagonal.

Controllers are small feedforward nets with tanh hidden layers and
per-channel bounded output activations mapping onto the actuator range.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .ivals import IVal, isigmoid, itanh
from .tape import ParamStore, Ref, Tape, NUMPY_UNARY

__all__ = ["CertificateNet", "ControllerNet", "OutputChannel",
           "save_checkpoint", "load_checkpoint"]

_EK = {"optimize": True}

_sigmoid = NUMPY_UNARY["sigmoid"]
_sigd1 = NUMPY_UNARY["sigd1"]
_sigd2 = NUMPY_UNARY["sigd2"]


class CertificateNet:
    def __init__(self, W1, b1, W2, b2, W3, b3, s_in, s_out):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.W2 = np.asarray(W2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.W3 = np.asarray(W3, dtype=np.float64)
        self.b3 = None if b3 is None else np.asarray(b3, dtype=np.float64).reshape(())
        self.s_in = np.asarray(s_in, dtype=np.float64)
        self.s_out = float(s_out)
        m1, n = self.W1.shape
        m2 = self.W2.shape[0]
        if self.W2.shape != (m2, m1) or self.W3.shape != (m2,):
            raise DimensionMismatch("inconsistent layer shapes")
        if self.s_in.shape != (n,) or np.any(self.s_in <= 0) or self.s_out <= 0:
            raise ValueError("scaling vectors must be positive")

    @property
    def n(self) -> int:
        return self.W1.shape[1]

    @property
    def m1(self) -> int:
        return self.W1.shape[0]

    @property
    def m2(self) -> int:
        return self.W2.shape[0]

    @property
    def has_bias(self) -> bool:
        return self.b3 is not None

    @property
    def last_layer_dim(self) -> int:
        """Number of last-layer decision variables (weights + optional bias)."""
        return self.m2 + (1 if self.has_bias else 0)

    @classmethod
    def initialize(cls, n, m1, m2, s_in, s_out, rng: np.random.Generator,
                   output_bias: bool = True) -> "CertificateNet":
        """Uniform fan-in init; the output layer starts small and positive
        so the initial V is approximately non-negative."""
        a1 = 1.0 / np.sqrt(n)
        a2 = 1.0 / np.sqrt(m1)
        W1 = rng.uniform(-a1, a1, size=(m1, n))
        b1 = rng.uniform(-a1, a1, size=m1)
        W2 = rng.uniform(-a2, a2, size=(m2, m1))
        b2 = rng.uniform(-a2, a2, size=m2)
        W3 = rng.uniform(0.0, 0.2 / np.sqrt(m2), size=m2)
        b3 = np.float64(0.01) if output_bias else None
        return cls(W1, b1, W2, b2, W3, b3, s_in, s_out)

    # -- parameter plumbing --------------------------------------------------

    def param_store(self, prefix: str = "") -> ParamStore:
        store = ParamStore()
        store.add(prefix + "W1", self.W1)
        store.add(prefix + "b1", self.b1)
        store.add(prefix + "W2", self.W2)
        store.add(prefix + "b2", self.b2)
        store.add(prefix + "W3", self.W3)
        if self.has_bias:
            store.add(prefix + "b3", self.b3)
        return store

    def load_params(self, store: ParamStore, prefix: str = ""):
        self.W1 = store[prefix + "W1"]
        self.b1 = store[prefix + "b1"]
        self.W2 = store[prefix + "W2"]
        self.b2 = store[prefix + "b2"]
        self.W3 = store[prefix + "W3"]
        if self.has_bias:
            self.b3 = store[prefix + "b3"].reshape(())

    def copy(self) -> "CertificateNet":
        return CertificateNet(self.W1, self.b1, self.W2, self.b2, self.W3,
                              self.b3, self.s_in, self.s_out)

    # -- numpy evaluation ----------------------------------------------------

    def _check_points(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        pts = X[None, :] if single else X
        if pts.shape[1] != self.n:
            raise DimensionMismatch(f"points have dim {pts.shape[1]}, net has {self.n}")
        return pts, single

    def layer_quantities(self, X):
        """z/h/d/q arrays for every layer at a batch of points."""
        pts, _ = self._check_points(X)
        xn = pts / self.s_in
        z1 = xn @ self.W1.T + self.b1
        h1 = _sigmoid(z1)
        z2 = h1 @ self.W2.T + self.b2
        return {
            "z1": z1, "h1": h1, "d1": _sigd1(z1), "q1": _sigd2(z1),
            "z2": z2, "h2": _sigmoid(z2), "d2": _sigd1(z2), "q2": _sigd2(z2),
        }

    def forward(self, X):
        pts, single = self._check_points(X)
        q = self.layer_quantities(pts)
        v = self.s_out * (q["h2"] @ self.W3)
        if self.has_bias:
            v = v + self.b3
        return v[0] if single else v

    def hidden_features(self, X) -> np.ndarray:
        """Last hidden layer h2 (the certificate is linear in it)."""
        pts, single = self._check_points(X)
        h2 = self.layer_quantities(pts)["h2"]
        return h2[0] if single else h2

    def scaled_jacobian_inner(self, q) -> np.ndarray:
        """A[b,j,i] = sum_k W2[j,k] d1[b,k] W1s[k,i] with W1s = W1/s_in."""
        W1s = self.W1 / self.s_in[None, :]
        return np.einsum("jk,bk,ki->bji", self.W2, q["d1"], W1s, **_EK)

    def spatial_gradient(self, X):
        pts, single = self._check_points(X)
        q = self.layer_quantities(pts)
        A = self.scaled_jacobian_inner(q)
        g = self.s_out * np.einsum("j,bj,bji->bi", self.W3, q["d2"], A, **_EK)
        return g[0] if single else g

    def spatial_hessian(self, X):
        pts, single = self._check_points(X)
        q = self.layer_quantities(pts)
        W1s = self.W1 / self.s_in[None, :]
        A = self.scaled_jacobian_inner(q)
        cross = np.einsum("j,bj,bji,bjl->bil", self.W3, q["q2"], A, A, **_EK)
        inner = np.einsum("jk,bk,ki,kl->bjil", self.W2, q["q1"], W1s, W1s, **_EK)
        direct = np.einsum("j,bj,bjil->bil", self.W3, q["d2"], inner, **_EK)
        H = self.s_out * (cross + direct)
        # the formula is symmetric in (i, l); averaging with the transpose
        # removes the contraction-order float asymmetry bit-exactly
        H = 0.5 * (H + np.swapaxes(H, 1, 2))
        return H[0] if single else H

    # -- tape evaluation -------------------------------------------------------

    def tape_leaves(self, tape: Tape, prefix: str = "") -> dict[str, Ref]:
        return self.param_store(prefix).leaves(tape)

    def tape_point_quantities(self, tape: Tape, leaves: dict, X,
                              prefix: str = "") -> dict:
        """Pointwise layer quantities recorded on the tape for a batch."""
        pts, _ = self._check_points(X)
        xn = tape.const(pts / self.s_in)
        W1, b1 = leaves[prefix + "W1"], leaves[prefix + "b1"]
        W2, b2 = leaves[prefix + "W2"], leaves[prefix + "b2"]
        W3 = leaves[prefix + "W3"]
        z1 = tape.einsum("bi,ki->bk", xn, W1) + b1
        h1 = tape.sigmoid(z1)
        z2 = tape.einsum("bk,jk->bj", h1, W2) + b2
        h2 = tape.sigmoid(z2)
        out = {
            "z1": z1, "h1": h1, "d1": tape.sigd1(z1), "q1": tape.sigd2(z1),
            "z2": z2, "h2": h2, "d2": tape.sigd1(z2), "q2": tape.sigd2(z2),
            "W1": W1, "W2": W2, "W3": W3,
        }
        if self.has_bias:
            out["b3"] = leaves[prefix + "b3"]
        return out

    def tape_forward(self, tape: Tape, leaves: dict, X, prefix: str = "") -> Ref:
        q = self.tape_point_quantities(tape, leaves, X, prefix)
        v = tape.einsum("bj,j->b", q["h2"], q["W3"]) * self.s_out
        if self.has_bias:
            v = v + q["b3"]
        return v


@dataclass(frozen=True)
class OutputChannel:
    """One controller output: activation plus its actuator range."""

    activation: str               # tanh | sigmoid | linear
    low: float | None = None
    high: float | None = None

    def __post_init__(self):
        if self.activation not in ("tanh", "sigmoid", "linear"):
            raise ValueError(f"unsupported output activation {self.activation}")
        if self.activation != "linear" and (self.low is None or self.high is None):
            raise ValueError("bounded output channels need a [low, high] range")

    def apply(self, z):
        if self.activation == "linear":
            return z
        if isinstance(z, Ref):
            act = z.tape.tanh(z) if self.activation == "tanh" else z.tape.sigmoid(z)
        else:
            act = np.tanh(z) if self.activation == "tanh" else _sigmoid(z)
        if self.activation == "tanh":
            mid = 0.5 * (self.low + self.high)
            half = 0.5 * (self.high - self.low)
            return mid + half * act
        return self.low + (self.high - self.low) * act

    def apply_interval(self, zI: IVal) -> IVal:
        if self.activation == "linear":
            return zI
        if self.activation == "tanh":
            mid = 0.5 * (self.low + self.high)
            half = 0.5 * (self.high - self.low)
            return itanh(zI) * half + mid
        return isigmoid(zI) * (self.high - self.low) + self.low


class ControllerNet:
    """Feedforward controller with tanh hidden layers; outputs saturate into
    the declared compact control set channel by channel."""

    def __init__(self, weights, biases, channels, s_in):
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.channels = list(channels)
        self.s_in = np.asarray(s_in, dtype=np.float64)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatch("weights/biases layer lists must match")
        if self.weights[-1].shape[0] != len(self.channels):
            raise DimensionMismatch("one output channel spec per output row")

    @property
    def n(self) -> int:
        return self.weights[0].shape[1]

    @property
    def m_u(self) -> int:
        return len(self.channels)

    @classmethod
    def initialize(cls, n, hidden, channels, s_in,
                   rng: np.random.Generator) -> "ControllerNet":
        sizes = [n] + list(hidden) + [len(channels)]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            a = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-a, a, size=fan_out))
        return cls(weights, biases, channels, s_in)

    def param_store(self, prefix: str = "pi.") -> ParamStore:
        store = ParamStore()
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            store.add(f"{prefix}W{i}", W)
            store.add(f"{prefix}b{i}", b)
        return store

    def load_params(self, store: ParamStore, prefix: str = "pi."):
        for i in range(len(self.weights)):
            self.weights[i] = store[f"{prefix}W{i}"]
            self.biases[i] = store[f"{prefix}b{i}"]

    def copy(self) -> "ControllerNet":
        return ControllerNet(self.weights, self.biases, self.channels, self.s_in)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        h = (X[None, :] if single else X) / self.s_in
        if h.shape[1] != self.n:
            raise DimensionMismatch(f"points have dim {h.shape[1]}, net has {self.n}")
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
        z = h @ self.weights[-1].T + self.biases[-1]
        out = np.stack([ch.apply(z[:, c]) for c, ch in enumerate(self.channels)],
                       axis=1)
        return out[0] if single else out

    def tape_forward(self, tape: Tape, leaves: dict, X,
                     prefix: str = "pi.") -> list[Ref]:
        """Per-channel control outputs recorded on the tape."""
        pts = np.asarray(X, dtype=np.float64) / self.s_in
        h = tape.const(pts)
        depth = len(self.weights)
        for i in range(depth - 1):
            z = tape.einsum("bk,jk->bj", h, leaves[f"{prefix}W{i}"]) \
                + leaves[f"{prefix}b{i}"]
            h = tape.tanh(z)
        z = tape.einsum("bk,jk->bj", h, leaves[f"{prefix}W{depth-1}"]) \
            + leaves[f"{prefix}b{depth-1}"]
        return [ch.apply(tape.take(z, [c], axis=1))
                for c, ch in enumerate(self.channels)]

    def interval_forward(self, lo: np.ndarray, hi: np.ndarray,
                         tape: Tape | None = None, leaves: dict | None = None,
                         prefix: str = "pi.") -> list[IVal]:
        """IBP output ranges over a batch of boxes, on or off the tape."""
        from .bounds import bound_affine  # local import avoids a cycle
        cur = IVal.from_box_cols(lo / self.s_in, hi / self.s_in)
        depth = len(self.weights)
        for i in range(depth):
            if leaves is not None:
                W, b = leaves[f"{prefix}W{i}"], leaves[f"{prefix}b{i}"]
            else:
                W, b = self.weights[i], self.biases[i]
            cur = bound_affine(W, b, cur, tape=tape)
            if i < depth - 1:
                cur = itanh(cur)
        out = []
        for c, ch in enumerate(self.channels):
            if tape is not None:
                zc = IVal(tape.take(cur.lo, [c], axis=1),
                          tape.take(cur.hi, [c], axis=1))
            else:
                zc = IVal(cur.lo[:, c], cur.hi[:, c])
            out.append(ch.apply_interval(zc))
        return out


# ---------------------------------------------------------------------------
# checkpoints: 4-byte magic, uint32 little-endian header length, UTF-8 JSON
# header, then the flat parameter vector as little-endian float64.

_MAGIC = b"SDCK"


def save_checkpoint(path, store: ParamStore, header: dict):
    header = dict(header)
    header["blocks"] = [[name, list(store[name].shape)] for name in store.names]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    flat = store.pack().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_checkpoint(path) -> tuple[dict, ParamStore]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    store = ParamStore()
    for name, shape in header["blocks"]:
        store.add(name, np.zeros(shape))
    store.unpack(flat)
    return header, store
