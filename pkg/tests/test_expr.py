import numpy as np
import pytest

from sdecert.errors import EvalDomainError, ExprSyntaxError
from sdecert.expr import (Binary, Call, Const, ControlVar, DynamicsSpec,
                          StateVar, NamedConst, TableFunction2D, e_mul,
                          eval_columns, eval_interval, eval_scalar,
                          expr_to_string, parse_expr, substitute_controls)
from sdecert.ivals import IVal


def gbm_dynamics(n=2):
    drift = []
    for i in range(1, n + 1):
        terms = [f"-0.5*x{i}"]
        if i + 1 <= n:
            terms.append(f"+ x{i+1}")
        if i - 1 >= 1:
            terms.append(f"- x{i-1}")
        terms.append(f"+ u{i}")
        drift.append(" ".join(terms))
    diffusion = [["0" if k != i else f"0.2*x{i+1}" for k in range(n)]
                 for i in range(n)]
    return DynamicsSpec.from_strings(n, n, n, drift, diffusion)


class TestParse:
    def test_pendulum_term_structure(self):
        ast = parse_expr("(g/L)*sin(x1)", constants={"g", "L"}, n=2, m_u=1)
        assert isinstance(ast, Binary) and ast.op == "*"
        assert isinstance(ast.left, Binary) and ast.left.op == "/"
        assert ast.left == Binary("/", NamedConst("g"), NamedConst("L"))
        assert ast.right == Call("sin", (StateVar(1),))

    def test_single_token(self):
        assert parse_expr("x2", n=2, m_u=0) == StateVar(2)

    def test_linear_row_eval(self):
        ast = parse_expr("-0.5*x1 + x2", n=2, m_u=0)
        assert eval_scalar(ast, [1.0, 0.0]) == pytest.approx(-0.5)

    def test_precedence_and_associativity(self):
        assert eval_scalar(parse_expr("2^3^2", n=1, m_u=0), [0.0]) == 512.0
        assert eval_scalar(parse_expr("8/4/2", n=1, m_u=0), [0.0]) == 1.0
        assert eval_scalar(parse_expr("1-2-3", n=1, m_u=0), [0.0]) == -4.0
        assert eval_scalar(parse_expr("-2^2", n=1, m_u=0), [0.0]) == -4.0
        assert eval_scalar(parse_expr("2*x1^2", n=1, m_u=0), [3.0]) == 18.0

    def test_double_star_power(self):
        assert eval_scalar(parse_expr("x1**2", n=1, m_u=0), [3.0]) == 9.0

    def test_syntax_error_offset(self):
        with pytest.raises(ExprSyntaxError) as exc:
            parse_expr("x1 + ", n=2, m_u=0)
        assert exc.value.offset == 5

    def test_unknown_identifier(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("x1 + q", n=2, m_u=0)

    def test_out_of_range_variable(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("x3", n=2, m_u=0)

    def test_variable_exponent_rejected(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("x1^x2", n=2, m_u=0)


class TestEvalScalar:
    def test_gbm_closed_loop_row(self):
        # drift row 1 with u = -x substituted: -1.5 x1 + x2 at (1, 0)
        dyn = gbm_dynamics(2)
        closed = substitute_controls(dyn.drift[0],
                                     [parse_expr(f"-x{i}", n=2, m_u=0)
                                      for i in (1, 2)])
        assert eval_scalar(closed, [1.0, 0.0]) == pytest.approx(-1.5)

    def test_pendulum_first_row_is_x2(self):
        ast = parse_expr("x2", n=2, m_u=1)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=2)
            assert eval_scalar(ast, x, [0.0]) == x[1]

    def test_sin_zero(self):
        assert eval_scalar(parse_expr("sin(x1)", n=1, m_u=0), [0.0]) == 0.0

    def test_division_by_zero(self):
        with pytest.raises(EvalDomainError):
            eval_scalar(parse_expr("1/x1", n=1, m_u=0), [0.0])

    def test_log_domain(self):
        with pytest.raises(EvalDomainError):
            eval_scalar(parse_expr("log(x1)", n=1, m_u=0), [-1.0])

    def test_nonfinite_is_error(self):
        with pytest.raises(EvalDomainError):
            eval_scalar(parse_expr("exp(x1)^100", n=1, m_u=0), [1000.0])


class TestEvalInterval:
    def test_sin_monotone_quadrant(self):
        out = eval_interval(parse_expr("sin(x1)", n=1, m_u=0),
                            [IVal(np.float64(0.0), np.float64(np.pi / 2))])
        assert out.lo_val == pytest.approx(0.0, abs=1e-15)
        assert out.hi_val == pytest.approx(1.0, abs=1e-12)

    def test_even_power_straddling_zero(self):
        out = eval_interval(parse_expr("x1^2", n=1, m_u=0),
                            [IVal(np.float64(-1.0), np.float64(2.0))])
        assert out.lo_val == 0.0 and out.hi_val == 4.0

    def test_gbm_diffusion_entry(self):
        out = eval_interval(parse_expr("0.2*x1", n=1, m_u=0),
                            [IVal(np.float64(45.0), np.float64(55.0))])
        assert out.lo_val == pytest.approx(9.0)
        assert out.hi_val == pytest.approx(11.0)

    def test_sin_interior_extrema_and_wide(self):
        sin = parse_expr("sin(x1)", n=1, m_u=0)
        out = eval_interval(sin, [IVal(np.float64(1.0), np.float64(4.0))])
        assert out.hi_val == 1.0 and out.lo_val == pytest.approx(np.sin(4.0))
        wide = eval_interval(sin, [IVal(np.float64(0.0), np.float64(10.0))])
        assert wide.lo_val == -1.0 and wide.hi_val == 1.0

    def test_division_interval_containing_zero(self):
        with pytest.raises(EvalDomainError):
            eval_interval(parse_expr("1/x1", n=1, m_u=0),
                          [IVal(np.float64(-1.0), np.float64(1.0))])

    def test_degenerate_equals_scalar(self):
        dyn = gbm_dynamics(3)
        rng = np.random.default_rng(3)
        for ast in dyn.drift:
            x = rng.uniform(-50, 50, size=3)
            u = rng.uniform(-5, 5, size=3)
            sc = eval_scalar(ast, x, u)
            iv = eval_interval(ast, [IVal(np.float64(v), np.float64(v)) for v in x],
                               [IVal(np.float64(v), np.float64(v)) for v in u])
            tol = 1e-15 * max(1.0, abs(sc))
            assert abs(float(iv.lo_val) - sc) <= tol
            assert abs(float(iv.hi_val) - sc) <= tol


class TestEnclosureSoundness:
    def test_benchmark_dynamics_fuzz(self):
        """10^5 (expression, box) pairs, 100 points per box, batched."""
        rng = np.random.default_rng(4)
        pend = DynamicsSpec.from_strings(
            2, 1, 1, ["x2", "(g/L)*sin(x1) + (M*u1 - b*x2)/(m*L^2)"],
            [["0"], ["sigma"]],
            constants={"g": 9.81, "L": 0.5, "m": 0.15, "b": 0.1, "M": 6.0,
                       "sigma": 2.0})
        loz = DynamicsSpec.from_strings(
            3, 3, 1, ["-10*x1 + 10*x2 + u1", "x1*(28 - x3) - x2 + u2",
                      "x1*x2 - (8/3)*x3 + u3"],
            [["0.1"], ["0.1"], ["0.1"]])
        cases = [(gbm_dynamics(3), 60.0, 5.0), (pend, 6.0, 1.0),
                 (loz, 6.0, 3.0)]
        pairs = 0
        for dyn, xs, us in cases:
            exprs = list(dyn.drift) + [g for row in dyn.diffusion for g in row]
            n_boxes = max(1, 100_000 // (len(exprs) * len(cases)))
            for ast in exprs:
                lo = rng.uniform(-xs, xs * 0.8, size=(n_boxes, dyn.n))
                hi = lo + rng.uniform(0, xs * 0.3, size=(n_boxes, dyn.n))
                ulo = rng.uniform(-us, us * 0.6, size=(n_boxes, dyn.m_u))
                uhi = ulo + rng.uniform(0, us * 0.4, size=(n_boxes, dyn.m_u))
                xI = [IVal(lo[:, i], hi[:, i]) for i in range(dyn.n)]
                uI = [IVal(ulo[:, j], uhi[:, j]) for j in range(dyn.m_u)]
                enc = eval_interval(ast, xI, uI, dyn.constants)
                enc_lo = np.broadcast_to(enc.lo_val, (n_boxes,))
                enc_hi = np.broadcast_to(enc.hi_val, (n_boxes,))
                t = rng.random((100, n_boxes, 1))
                X = lo[None] + t * (hi - lo)[None]
                U = ulo[None] + rng.random((100, n_boxes, 1)) * (uhi - ulo)[None]
                vals = eval_columns(
                    ast, [X[..., i].ravel() for i in range(dyn.n)],
                    [U[..., j].ravel() for j in range(dyn.m_u)], dyn.constants)
                vals = np.broadcast_to(np.asarray(vals), (100 * n_boxes,)) \
                    .reshape(100, n_boxes)
                slack = 1e-12 * np.maximum(1.0, np.abs(vals))
                assert np.all(vals >= enc_lo[None] - slack)
                assert np.all(vals <= enc_hi[None] + slack)
                pairs += n_boxes
        assert pairs >= 90_000


class TestPrintRoundTrip:
    def test_benchmark_round_trips(self):
        dyn = gbm_dynamics(4)
        pend_row = parse_expr("(g/L)*sin(x1) + (M*u1 - b*x2)/(m*L^2)",
                              constants={"g", "L", "m", "b", "M"}, n=2, m_u=1)
        consts = {"g", "L", "m", "b", "M"}
        for ast in list(dyn.drift) + [pend_row]:
            text = expr_to_string(ast)
            again = parse_expr(text, constants=consts, n=4, m_u=4)
            assert again == ast, text

    def test_random_round_trips(self):
        rng = np.random.default_rng(5)

        def rand_ast(depth):
            if depth == 0 or rng.random() < 0.25:
                return [Const(round(float(rng.normal()), 3)), StateVar(1),
                        StateVar(2), ControlVar(1)][rng.integers(0, 4)]
            op = ["+", "-", "*", "/"][rng.integers(0, 4)]
            if rng.random() < 0.2:
                return Binary("^", rand_ast(depth - 1), Const(float(rng.integers(0, 4))))
            if rng.random() < 0.25:
                fn = ["sin", "cos", "exp", "tanh", "abs"][rng.integers(0, 5)]
                return Call(fn, (rand_ast(depth - 1),))
            return Binary(op, rand_ast(depth - 1), rand_ast(depth - 1))

        for _ in range(300):
            ast = rand_ast(4)
            assert parse_expr(expr_to_string(ast), n=2, m_u=1) == ast


class TestSymbolicHelpers:
    def test_square_detection(self):
        x = StateVar(1)
        prod = e_mul(Binary("*", Const(0.2), x), Binary("*", Const(0.2), x))
        assert prod == Binary("^", Binary("*", Const(0.2), x), Const(2.0))

    def test_diffusion_products_symmetric_and_exact(self):
        dyn = gbm_dynamics(3)
        ggt = dyn.diffusion_product_exprs()
        for i in range(3):
            for j in range(3):
                assert ggt[i][j] == ggt[j][i]
        # diagonal entry is (0.2 x)^2, exact non-negative range
        out = eval_interval(ggt[0][0], [IVal(np.float64(-1.0), np.float64(2.0)),
                                        IVal(np.float64(0), np.float64(0)),
                                        IVal(np.float64(0), np.float64(0))])
        assert out.lo_val == 0.0
        assert out.hi_val == pytest.approx(0.16)


class TestDiffusionControlRejection:
    def test_control_in_diffusion_rejected(self):
        with pytest.raises(Exception):
            DynamicsSpec.from_strings(1, 1, 1, ["u1"], [["u1"]])


class TestTableFunction:
    def make(self):
        a = np.linspace(-1, 1, 5)
        b = np.linspace(0, 2, 4)
        vals = np.add.outer(a ** 2, b)
        return TableFunction2D(a, b, vals), a, b, vals

    def test_bilinear_matches_nodes(self):
        tab, a, b, vals = self.make()
        for i in range(5):
            for j in range(4):
                assert tab.eval(a[i], b[j]) == pytest.approx(vals[i, j])

    def test_interval_encloses_samples(self):
        tab, *_ = self.make()
        rng = np.random.default_rng(6)
        for _ in range(50):
            alo, ahi = np.sort(rng.uniform(-1, 1, 2))
            blo, bhi = np.sort(rng.uniform(0, 2, 2))
            enc = tab.eval_interval(IVal(np.float64(alo), np.float64(ahi)),
                                    IVal(np.float64(blo), np.float64(bhi)))
            pts_a = rng.uniform(alo, ahi, 200)
            pts_b = rng.uniform(blo, bhi, 200)
            vals = tab.eval(pts_a, pts_b)
            assert np.all(vals >= enc.lo_val[0] - 1e-12)
            assert np.all(vals <= enc.hi_val[0] + 1e-12)

    def test_outside_grid_is_error(self):
        tab, *_ = self.make()
        with pytest.raises(EvalDomainError):
            tab.eval(2.0, 0.5)
