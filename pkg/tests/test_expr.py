"""Parser, printer, symbolic derivatives and jets."""

import numpy as np
import pytest

from msl import DomainError, ParseError, differentiate, eval_jet, parse
from msl.expr import Const, Expr, Mul, Neg, Pow, Sin, Var

from conftest import random_expr_and_point


class TestParse:
    def test_gaussian_sine(self):
        e = parse("exp(-x1^2)*sin(x1)", 1)
        assert e.arity == 1
        assert abs(e.eval([0.5]) - np.exp(-0.25) * np.sin(0.5)) < 1e-15

    def test_saddle(self):
        e = parse("x1^2 - x2^2", 2)
        assert e.eval([3.0, 2.0]) == 5.0

    def test_syntax_error_offset(self):
        with pytest.raises(ParseError) as err:
            parse("x1 +", 1)
        assert err.value.offset == 4

    def test_arity_error(self):
        with pytest.raises(ParseError):
            parse("x3", 2)

    def test_aliases(self):
        e = parse("x*y + z", 3)
        assert e.eval([2.0, 3.0, 4.0]) == 10.0

    def test_negative_exponent_rejected(self):
        with pytest.raises(ParseError):
            parse("x1^-2", 1)

    def test_unary_minus_binds_looser_than_power(self):
        # -x1^2 must mean -(x1^2): the Gaussian factor depends on it
        e = parse("-x1^2", 1)
        assert e.eval([2.0]) == -4.0

    def test_scientific_notation(self):
        assert parse("1e-9*x1", 1).eval([2.0]) == 2e-9

    def test_roundtrip_structural_identity(self):
        # print-then-parse is idempotent, and printing preserves semantics
        rng = np.random.default_rng(7)
        for _ in range(200):
            e, x = random_expr_and_point(rng)
            first = parse(str(e), e.arity)
            assert parse(str(first), e.arity) == first
            a, b = e.eval(x), first.eval(x)
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a))

    def test_division_by_zero_is_an_error(self):
        e = parse("x1/(x1-1)", 1)
        with pytest.raises(DomainError):
            e.eval([1.0])
        with pytest.raises(DomainError):
            e.eval_many(np.array([[0.0], [1.0], [2.0]]))


class TestDifferentiate:
    def test_power_rule(self):
        e = parse("x1^2 - x2^2", 2)
        assert str(differentiate(e, 1)) == "2*x1"

    def test_constant_in_other_variable(self):
        assert str(differentiate(parse("x1", 2), 2)) == "0"

    def test_gaussian_sine_derivative_pointwise(self):
        e = parse("exp(-x1^2)*sin(x1)", 1)
        d = differentiate(e, 1)
        ref = parse("exp(-x1^2)*(-2*x1*sin(x1)+cos(x1))", 1)
        for x in np.linspace(-3, 3, 41):
            assert abs(d.eval([x]) - ref.eval([x])) < 1e-14 * max(1, abs(d.eval([x])))

    def test_index_out_of_range(self):
        with pytest.raises(Exception):
            differentiate(parse("x1", 1), 2)

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(100):
            e, x = random_expr_and_point(rng)
            for i in range(1, e.arity + 1):
                sym = e.partial(i).eval(x)
                xp, xm = x.copy(), x.copy()
                xp[i - 1] += h
                xm[i - 1] -= h
                fd = (e.eval(xp) - e.eval(xm)) / (2 * h)
                assert abs(sym - fd) <= 1e-6 * max(1.0, abs(sym), abs(fd))


class TestJets:
    def test_saddle_jet(self):
        j = eval_jet(parse("x1^2 - x2^2", 2), (1.0, 2.0), 2)
        assert j.value == -3.0
        assert np.array_equal(j.tensors[0], [2.0, -4.0])
        assert np.array_equal(j.tensors[1], [[2.0, 0.0], [0.0, -2.0]])

    def test_linear_jet(self):
        j = eval_jet(parse("x1", 1), (0.0,), 1)
        assert j.value == 0.0 and j.tensors[0][0] == 1.0

    def test_zero_jet_is_value_only(self):
        j = eval_jet(parse("x1^3", 1), (2.0,), 0)
        assert j.value == 8.0 and j.tensors == ()

    def test_tensor_symmetry_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            e, x = random_expr_and_point(rng, n_max=3)
            j = eval_jet(e, x, 3)
            t3 = j.tensors[2]
            for perm in ((0, 2, 1), (1, 0, 2), (2, 1, 0)):
                assert np.array_equal(t3, np.transpose(t3, perm))

    def test_truncation_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            e, x = random_expr_and_point(rng)
            j2 = eval_jet(e, x, 2)
            j1 = eval_jet(e, x, 1)
            t = j2.truncate(1)
            assert t.value == j1.value
            assert np.array_equal(t.tensors[0], j1.tensors[0])

    def test_jet_linearity(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            e1, x = random_expr_and_point(rng, n_max=2)
            e2 = Expr(
                __import__("conftest").random_node(rng, e1.arity, 2), e1.arity
            )
            a = float(rng.uniform(-2, 2))
            try:
                left = eval_jet(a * e1 + e2, x, 2)
                r1 = eval_jet(e1, x, 2)
                r2 = eval_jet(e2, x, 2)
            except DomainError:
                continue
            scale = max(1.0, abs(left.value))
            assert abs(left.value - (a * r1.value + r2.value)) < 1e-12 * scale
            for j in range(2):
                want = a * r1.tensors[j] + r2.tensors[j]
                got = left.tensors[j]
                s = np.maximum(1.0, np.abs(want))
                assert np.all(np.abs(got - want) < 1e-12 * s)

    def test_high_order_rejected(self):
        with pytest.raises(Exception):
            eval_jet(parse("x1", 1), (0.0,), 5)


class TestExprAlgebra:
    def test_difference_is_exact_zero(self):
        e = parse("x1^2+x2^2", 2)
        diff = e - e
        pts = np.random.default_rng(0).uniform(-2, 2, (50, 2))
        assert np.all(diff.eval_many(pts) == 0.0)

    def test_structural_equality_implies_equal_eval(self):
        a = parse("sin(x1)*exp(-x1^2)", 1)
        b = parse("sin(x1)*exp(-x1^2)", 1)
        assert a == b
        xs = np.linspace(-2, 2, 17).reshape(-1, 1)
        assert np.array_equal(a.eval_many(xs), b.eval_many(xs))

    def test_immutable(self):
        e = parse("x1", 1)
        with pytest.raises(AttributeError):
            e.arity = 2
