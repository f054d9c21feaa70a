"""Graph evaluation and differentiation against hand values and FD oracles."""

import numpy as np
import pytest

from lipgan.grad_core import (
    DomainError,
    Expr,
    ExprGraph,
    ShapeError,
    UnsupportedOpError,
    evaluate,
    fd_check,
    gradient,
    gradient_graph,
)
from lipgan.gan_trainer import MlpConfig, init_mlp, _mlp_expr


def _mlp_graph(cfg, params, batch):
    graph = ExprGraph()
    x = graph.input("x", (batch, cfg.input_dim))
    prefs = [graph.input(f"p{i}", p.shape) for i, p in enumerate(params)]
    out = _mlp_expr(graph, x, prefs, cfg.activation)
    return graph, x, prefs, out


def _mlp_bindings(params, x):
    b = {"x": x}
    b.update({f"p{i}": p for i, p in enumerate(params)})
    return b


class TestEvaluate:
    def test_square_scalar(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.square()
        assert float(evaluate(g, {"x": 3.0}, y)) == 9.0

    def test_sigmoid_at_zero(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.sigmoid()
        assert float(evaluate(g, {"x": 0.0}, y)) == 0.5

    def test_mlp_forward_matches_plain_numpy(self):
        # independent straight-line recomputation of the same arithmetic
        cfg = MlpConfig(input_dim=2, hidden_width=8, depth=1)
        params = init_mlp(cfg, 7)
        rng = np.random.default_rng(7)
        x = rng.standard_normal((5, 2))
        graph, _, _, out = _mlp_graph(cfg, params, 5)
        got = evaluate(graph, _mlp_bindings(params, x), out.mean())

        w1, b1, w2, b2 = params
        h = np.maximum(x @ w1 + b1, 0.0)
        expected = (h @ w2 + b2).mean()
        assert float(got) == pytest.approx(float(expected), rel=0, abs=1e-15)

    def test_shape_mismatch_names_node(self):
        g = ExprGraph()
        a = g.input("a", (2, 3))
        b = g.input("b", (4,))
        with pytest.raises(ShapeError, match="add"):
            a + b

    def test_matmul_shape_mismatch(self):
        g = ExprGraph()
        a = g.input("a", (2, 3))
        b = g.input("b", (2, 3))
        with pytest.raises(ShapeError, match="matmul"):
            a @ b

    def test_log_of_negative_is_domain_error(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.log()
        with pytest.raises(DomainError, match="log"):
            evaluate(g, {"x": -1.0}, y)

    def test_sqrt_of_negative_is_domain_error(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.sqrt()
        with pytest.raises(DomainError, match="sqrt"):
            evaluate(g, {"x": -0.5}, y)

    def test_missing_binding(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.exp()
        with pytest.raises(ValueError, match="missing binding"):
            evaluate(g, {}, y)

    def test_reevaluation_after_input_change_matches_fresh_graph(self):
        cfg = MlpConfig(input_dim=2, hidden_width=4, depth=2)
        params = init_mlp(cfg, 3)
        rng = np.random.default_rng(3)
        x1 = rng.standard_normal((3, 2))
        x2 = rng.standard_normal((3, 2))

        graph, _, _, out = _mlp_graph(cfg, params, 3)
        evaluate(graph, _mlp_bindings(params, x1), out)
        reused = evaluate(graph, _mlp_bindings(params, x2), out)

        fresh_graph, _, _, fresh_out = _mlp_graph(cfg, params, 3)
        fresh = evaluate(fresh_graph, _mlp_bindings(params, x2), fresh_out)
        assert np.array_equal(reused, fresh)


class TestGradient:
    def test_square(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.square()
        assert float(gradient(g, y, [x], {"x": 3.0})[x]) == 6.0

    def test_sigmoid_prime_at_zero(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.sigmoid()
        assert float(gradient(g, y, [x], {"x": 0.0})[x]) == 0.25

    def test_non_scalar_output_rejected(self):
        g = ExprGraph()
        x = g.input("x", (3,))
        y = x.square()
        with pytest.raises(ValueError, match="scalar"):
            gradient(g, y, [x], {"x": np.ones(3)})

    def test_mlp_gradient_matches_fd(self):
        cfg = MlpConfig(input_dim=3, hidden_width=8, depth=2)
        params = init_mlp(cfg, 11)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((4, 3))
        graph, _, prefs, out = _mlp_graph(cfg, params, 4)
        rep = fd_check(graph, out.square().mean(), prefs, 1e-5, _mlp_bindings(params, x))
        assert rep.max_rel_error <= 1e-4

    def test_gradient_uses_cached_values_after_evaluate(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.square()
        evaluate(g, {"x": 4.0}, y)
        assert float(gradient(g, y, [x])[x]) == 8.0

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            g = ExprGraph()
            x = g.input("x", (4,))
            f = (x.square() * 0.5).sum()
            h = (x.tanh() + x.exp() * 0.1).sum()
            a, b = rng.uniform(-2, 2, size=2)
            combo = f * a + h * b
            binding = {"x": rng.standard_normal(4)}
            gf = gradient(g, f, [x], binding)[x]
            gh = gradient(g, h, [x], binding)[x]
            gc = gradient(g, combo, [x], binding)[x]
            np.testing.assert_allclose(gc, a * gf + b * gh, rtol=0, atol=1e-12)

    def test_determinism_bit_identical(self):
        def run():
            cfg = MlpConfig(input_dim=2, hidden_width=16, depth=2)
            params = init_mlp(cfg, 5)
            rng = np.random.default_rng(5)
            x = rng.standard_normal((8, 2))
            graph, _, prefs, out = _mlp_graph(cfg, params, 8)
            loss = out.square().mean()
            grads = gradient(graph, loss, prefs, _mlp_bindings(params, x))
            return np.concatenate([grads[p].ravel() for p in prefs])

        assert np.array_equal(run(), run())


class TestGradientGraph:
    def test_linear_in_theta(self):
        # f(x; w) = w*x, squared input-gradient is w^2, d/dw = 2w
        g = ExprGraph()
        w = g.input("w")
        x = g.input("x")
        f = w * x
        gx = gradient_graph(g, f, x)
        pen = gx.square()
        got = gradient(g, pen, [w], {"w": 3.0, "x": 1.7})[w]
        assert float(got) == 6.0

    def test_two_parameter_hand_case(self):
        # f = a*x + b*x^2 at x=1: input grad = a + 2b, d/da (grad^2) = 2(a+2b)
        g = ExprGraph()
        a = g.input("a")
        b = g.input("b")
        x = g.input("x")
        f = a * x + b * x.square()
        gx = gradient_graph(g, f, x)
        pen = gx.square()
        binding = {"a": 0.7, "b": 1.1, "x": 1.0}
        got = gradient(g, pen, [a, b], binding)
        expect = 2 * (0.7 + 2 * 1.1)
        assert float(got[a]) == pytest.approx(expect, abs=1e-12)
        assert float(got[b]) == pytest.approx(2 * expect, abs=1e-12)

    def test_penalty_double_backward_matches_fd(self):
        from lipgan.lipschitz_penalty import grad_norm_expr

        cfg = MlpConfig(input_dim=2, hidden_width=6, depth=2)
        params = init_mlp(cfg, 13)
        rng = np.random.default_rng(13)
        x = rng.standard_normal((4, 2))
        graph, xin, prefs, out = _mlp_graph(cfg, params, 4)
        norms = grad_norm_expr(graph, out, xin)
        pen = (norms - 1.0).square().mean()
        rep = fd_check(graph, pen, prefs, 1e-5, _mlp_bindings(params, x))
        assert rep.max_rel_error <= 1e-3

    def test_gradient_of_unreachable_input_is_zero(self):
        g = ExprGraph()
        x = g.input("x")
        y = g.input("y")
        f = x.square()
        gy = gradient_graph(g, f, y)
        assert float(evaluate(g, {"x": 2.0, "y": 5.0}, gy)) == 0.0

    def test_unregistered_op_kind_raises(self):
        g = ExprGraph()
        x = g.input("x")
        bogus = g._add("frobnicate", (x.idx,), ())
        with pytest.raises(UnsupportedOpError, match="frobnicate"):
            gradient_graph(g, bogus, x)


class TestFdCheck:
    def test_linear_map_is_fd_exact(self):
        g = ExprGraph()
        x = g.input("x", (4,))
        w = g.constant(np.array([1.0, -2.0, 0.5, 3.0]))
        y = (x * w).sum()
        rep = fd_check(g, y, [x], 1e-5, {"x": np.array([0.3, -1.0, 2.0, 0.1])})
        assert rep.max_rel_error <= 1e-9

    def test_exp_value_near_e(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.exp()
        eps = 1e-5
        hi = float(evaluate(g, {"x": 1.0 + eps}, y))
        lo = float(evaluate(g, {"x": 1.0 - eps}, y))
        assert (hi - lo) / (2 * eps) == pytest.approx(np.e, abs=1e-6)
        rep = fd_check(g, y, [x], eps, {"x": 1.0})
        assert rep.max_rel_error <= 1e-9

    def test_epsilon_positive(self):
        g = ExprGraph()
        x = g.input("x")
        y = x.square()
        with pytest.raises(ValueError):
            fd_check(g, y, [x], 0.0, {"x": 1.0})

    def test_random_mlps_hundred_seeds(self):
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            cfg = MlpConfig(
                input_dim=int(rng.integers(1, 4)),
                hidden_width=int(rng.integers(2, 13)),
                depth=int(rng.integers(1, 4)),
            )
            params = init_mlp(cfg, seed)
            batch = int(rng.integers(1, 5))
            x = rng.standard_normal((batch, cfg.input_dim))
            graph, _, prefs, out = _mlp_graph(cfg, params, batch)
            rep = fd_check(
                graph, out.square().mean(), prefs, 1e-5, _mlp_bindings(params, x)
            )
            worst = max(worst, rep.max_rel_error)
        assert worst <= 1e-4


class TestReductionOps:
    def test_batch_max_first_tie_wins(self):
        g = ExprGraph()
        x = g.input("x", (4,))
        y = x.max()
        binding = {"x": np.array([1.0, 3.0, 3.0, 0.5])}
        assert float(evaluate(g, binding, y)) == 3.0
        grad = gradient(g, y, [x], binding)[x]
        np.testing.assert_array_equal(grad, [0.0, 1.0, 0.0, 0.0])

    def test_row_reductions(self):
        g = ExprGraph()
        x = g.input("x", (2, 3))
        binding = {"x": np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])}
        np.testing.assert_array_equal(evaluate(g, binding, x.sum0()), [5.0, 7.0, 9.0])
        np.testing.assert_array_equal(evaluate(g, binding, x.sum1()), [6.0, 15.0])

    def test_relu_second_derivative_is_zero_everywhere(self):
        # the mask is treated as locally constant, including at the kink
        g = ExprGraph()
        x = g.input("x")
        f = x.relu()
        gx = gradient_graph(g, f, x)
        ggx = gradient_graph(g, gx, x)
        for v in (-1.0, 0.0, 2.0):
            assert float(evaluate(g, {"x": v}, ggx)) == 0.0
