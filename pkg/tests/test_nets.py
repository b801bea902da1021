import numpy as np
import pytest

from sdecert.nets import (CertificateNet, ControllerNet, OutputChannel,
                          load_checkpoint, save_checkpoint)
from sdecert.tape import Tape


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def random_net(rng, n=3, m1=10, m2=6, s_out=7.0, bias=True):
    net = CertificateNet.initialize(n, m1, m2, np.full(n, 2.0), s_out, rng,
                                    output_bias=bias)
    net.W1 = rng.normal(size=net.W1.shape)
    net.b1 = rng.normal(size=net.b1.shape)
    net.W2 = rng.normal(size=net.W2.shape)
    net.b2 = rng.normal(size=net.b2.shape)
    net.W3 = rng.normal(size=net.W3.shape)
    if bias:
        net.b3 = np.float64(rng.normal())
    return net


def forward_reference(net, x):
    """Independent straightforward re-implementation with plain loops."""
    xn = np.asarray(x, dtype=float) / net.s_in
    h1 = np.array([sigmoid(sum(net.W1[k, i] * xn[i] for i in range(net.n))
                           + net.b1[k]) for k in range(net.m1)])
    h2 = np.array([sigmoid(sum(net.W2[j, k] * h1[k] for k in range(net.m1))
                           + net.b2[j]) for j in range(net.m2)])
    v = net.s_out * sum(net.W3[j] * h2[j] for j in range(net.m2))
    if net.has_bias:
        v += float(net.b3)
    return v


def hessian_diag_reference(net, x):
    """Literal diagonal second-derivative formula with explicit loops."""
    xn = np.asarray(x, dtype=float) / net.s_in
    z1 = net.W1 @ xn + net.b1
    h1 = sigmoid(z1)
    z2 = net.W2 @ h1 + net.b2
    d1 = sigmoid(z1) * (1 - sigmoid(z1))
    q1 = (1 - 2 * sigmoid(z1)) * d1
    d2 = sigmoid(z2) * (1 - sigmoid(z2))
    q2 = (1 - 2 * sigmoid(z2)) * d2
    out = np.zeros(net.n)
    for i in range(net.n):
        total = 0.0
        for j in range(net.m2):
            S = sum(net.W2[j, k] * d1[k] * net.W1[k, i] for k in range(net.m1))
            cross = net.W3[j] * q2[j] * S * S
            direct = net.W3[j] * d2[j] * sum(
                net.W2[j, k] * q1[k] * net.W1[k, i] ** 2 for k in range(net.m1))
            total += cross + direct
        out[i] = net.s_out / net.s_in[i] ** 2 * total
    return out


class TestForward:
    def test_zero_network(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, bias=False)
        for blk in ("W1", "b1", "W2", "b2", "W3"):
            setattr(net, blk, np.zeros_like(getattr(net, blk)))
        X = rng.normal(size=(10, 3))
        assert np.all(net.forward(X) == 0.0)

    def test_constant_hidden_activation(self):
        rng = np.random.default_rng(1)
        net = random_net(rng, bias=False)
        net.W2 = np.zeros_like(net.W2)
        net.b2 = np.zeros_like(net.b2)
        net.W3 = np.zeros_like(net.W3)
        net.W3[2] = 1.0
        X = rng.normal(size=(5, 3))
        assert np.allclose(net.forward(X), 0.5 * net.s_out)

    def test_duplicate_implementation_oracle(self):
        rng = np.random.default_rng(2)
        net = random_net(rng)
        for _ in range(10):
            x = rng.normal(size=3)
            assert net.forward(x) == pytest.approx(forward_reference(net, x),
                                                   abs=1e-12, rel=1e-12)

    def test_tape_forward_matches(self):
        rng = np.random.default_rng(3)
        net = random_net(rng)
        X = rng.normal(size=(7, 3))
        t = Tape()
        leaves = net.param_store().leaves(t)
        v = net.tape_forward(t, leaves, X)
        assert np.allclose(v.value, net.forward(X), atol=1e-14)


class TestSpatialDerivatives:
    def test_zero_w1_zero_gradient(self):
        rng = np.random.default_rng(4)
        net = random_net(rng)
        net.W1 = np.zeros_like(net.W1)
        X = rng.normal(size=(6, 3))
        assert np.all(net.spatial_gradient(X) == 0.0)
        assert np.all(net.spatial_hessian(X) == 0.0)

    def test_hand_computed_1d_chain(self):
        net = CertificateNet(W1=[[1.0]], b1=[0.0], W2=[[1.0]], b2=[0.0],
                             W3=[1.0], b3=None, s_in=[1.0], s_out=1.0)
        g = net.spatial_gradient(np.array([0.0]))
        s_half = sigmoid(0.5)
        expected = (s_half * (1 - s_half)) * 0.25
        assert g[0] == pytest.approx(expected, rel=1e-12)
        assert g[0] == pytest.approx(0.05875093, rel=1e-6)

    def test_gradient_fd(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            net = random_net(rng)
            X = rng.uniform(-3, 3, size=(20, 3))
            g = net.spatial_gradient(X)
            for i in range(3):
                e = np.zeros(3)
                e[i] = 1e-4
                fd = (net.forward(X + e) - net.forward(X - e)) / 2e-4
                assert np.max(np.abs(fd - g[:, i]) /
                              np.maximum(1e-8, np.abs(fd))) < 1e-5

    def test_hessian_fd(self):
        rng = np.random.default_rng(6)
        net = random_net(rng)
        X = rng.uniform(-3, 3, size=(20, 3))
        H = net.spatial_hessian(X)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-4
            fd = (net.spatial_gradient(X + e) - net.spatial_gradient(X - e)) / 2e-4
            assert np.max(np.abs(fd - H[:, i, :]) /
                          np.maximum(1e-6, np.abs(fd))) < 1e-4

    def test_hessian_exactly_symmetric(self):
        rng = np.random.default_rng(7)
        net = random_net(rng, n=4)
        X = rng.normal(size=(50, 4))
        H = net.spatial_hessian(X)
        assert np.array_equal(H, np.swapaxes(H, 1, 2))

    def test_hessian_diagonal_two_path(self):
        rng = np.random.default_rng(8)
        net = random_net(rng)
        for _ in range(5):
            x = rng.normal(size=3)
            H = net.spatial_hessian(x)
            ref = hessian_diag_reference(net, x)
            assert np.allclose(np.diag(H), ref, atol=1e-12, rtol=1e-12)

    def test_scaling_reparameterization_invariance(self):
        rng = np.random.default_rng(9)
        net = random_net(rng)
        c = 3.7
        net2 = net.copy()
        net2.s_in = c * net.s_in
        net2.W1 = c * net.W1
        X = rng.normal(size=(10, 3))
        assert np.allclose(net.forward(X), net2.forward(X), atol=1e-12)


class TestController:
    def make(self, rng):
        chans = [OutputChannel("tanh", -1.0, 1.0),
                 OutputChannel("sigmoid", 0.0, 5.0),
                 OutputChannel("linear")]
        net = ControllerNet.initialize(2, [8], chans, np.array([2.0, 3.0]), rng)
        for i in range(len(net.weights)):
            net.weights[i] = rng.normal(size=net.weights[i].shape) * 2
            net.biases[i] = rng.normal(size=net.biases[i].shape)
        return net

    def test_bounded_channels_stay_in_range(self):
        rng = np.random.default_rng(10)
        net = self.make(rng)
        X = rng.uniform(-50, 50, size=(200, 2))
        U = net.forward(X)
        assert np.all((U[:, 0] >= -1.0) & (U[:, 0] <= 1.0))
        assert np.all((U[:, 1] >= 0.0) & (U[:, 1] <= 5.0))

    def test_zero_weight_tanh_outputs_midpoint(self):
        rng = np.random.default_rng(11)
        net = ControllerNet.initialize(2, [4], [OutputChannel("tanh", -1, 1)],
                                       np.ones(2), rng)
        for i in range(len(net.weights)):
            net.weights[i] = np.zeros_like(net.weights[i])
            net.biases[i] = np.zeros_like(net.biases[i])
        X = rng.normal(size=(10, 2))
        assert np.all(net.forward(X) == 0.0)

    def test_tape_forward_matches(self):
        rng = np.random.default_rng(12)
        net = self.make(rng)
        X = rng.uniform(-5, 5, size=(6, 2))
        t = Tape()
        leaves = net.param_store("pi.").leaves(t)
        refs = net.tape_forward(t, leaves, X)
        U = net.forward(X)
        for c, r in enumerate(refs):
            assert np.allclose(r.value.ravel(), U[:, c], atol=1e-14)

    def test_interval_forward_sound(self):
        rng = np.random.default_rng(13)
        net = self.make(rng)
        lo = rng.uniform(-10, 5, size=(30, 2))
        hi = lo + rng.uniform(0, 5, size=(30, 2))
        boxes = net.interval_forward(lo, hi)
        for c in range(3):
            blo = np.asarray(boxes[c].lo_val).reshape(-1)
            bhi = np.asarray(boxes[c].hi_val).reshape(-1)
            for cell in range(30):
                pts = lo[cell] + rng.random((100, 2)) * (hi[cell] - lo[cell])
                u = net.forward(pts)[:, c]
                assert np.all(u >= blo[cell] - 1e-9)
                assert np.all(u <= bhi[cell] + 1e-9)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        net = random_net(rng)
        path = tmp_path / "cert.ckpt"
        header = {"kind": "certificate", "arch": {"n": 3, "m1": 10, "m2": 6},
                  "s_in": list(net.s_in), "s_out": net.s_out,
                  "benchmark": "toy", "epoch": 17}
        save_checkpoint(path, net.param_store(), header)
        hdr, store = load_checkpoint(path)
        assert hdr["epoch"] == 17 and hdr["kind"] == "certificate"
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            assert np.array_equal(store[name],
                                  net.param_store()[name]), name

    def test_flat_layout_is_le_float64(self, tmp_path):
        rng = np.random.default_rng(15)
        net = random_net(rng, n=2, m1=3, m2=2)
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, net.param_store(), {"kind": "certificate"})
        raw = path.read_bytes()
        assert raw[:4] == b"SDCK"
        import json as _json
        import struct
        (hlen,) = struct.unpack("<I", raw[4:8])
        header = _json.loads(raw[8:8 + hlen])
        flat = np.frombuffer(raw[8 + hlen:], dtype="<f8")
        assert flat.size == net.param_store().size
        assert [b[0] for b in header["blocks"]] == \
            ["W1", "b1", "W2", "b2", "W3", "b3"]
