"""Engine parity and program compilation."""

import numpy as np
import pytest

from msl.backend import HAVE_NUMBA, BackendDomainError, compile_programs, run_program
from msl.expr import parse

from conftest import random_expr_and_point

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not available")


def test_shared_subexpressions_compiled_once():
    e = parse("exp(-x1^2)*sin(x1)+exp(-x1^2)*cos(x1)", 1)
    prog = compile_programs([e.root], 1)
    n_exp = int(np.sum(prog.code[:, 0] == 7))
    assert n_exp == 1  # exp(-x1^2) shared between both products


def test_multi_output_program():
    e = parse("x1*x2", 2)
    prog = compile_programs([e.root, e.partial(1).root, e.partial(2).root], 2)
    out = run_program(prog, np.array([[3.0, 4.0]]), engine="numpy")
    assert out[:, 0].tolist() == [12.0, 4.0, 3.0]


def test_domain_error_reports_point():
    e = parse("1/x1", 1)
    with pytest.raises(BackendDomainError) as err:
        run_program(e.program(), np.array([[2.0], [0.0]]), engine="numpy")
    assert err.value.point[0] == 0.0


@needs_numba
def test_engines_agree():
    rng = np.random.default_rng(42)
    for _ in range(40):
        e, _ = random_expr_and_point(rng)
        pts = rng.uniform(-2, 2, (257, e.arity))
        a = e.eval_many(pts, engine="numpy")
        b = e.eval_many(pts, engine="numba")
        scale = np.maximum(1.0, np.abs(a))
        assert np.all(np.abs(a - b) <= 1e-12 * scale)


@needs_numba
def test_numba_domain_error():
    e = parse("1/x1", 1)
    with pytest.raises(BackendDomainError):
        run_program(e.program(), np.array([[0.0]]), engine="numba")


def test_integer_power_matches_repeated_multiplication():
    e = parse("x1^7", 1)
    x = 1.7
    out = run_program(e.program(), np.array([[x]]), engine="numpy")[0, 0]
    acc = 1.0
    for _ in range(7):
        acc *= x
    assert out == acc


def test_scalar_eval_agrees_with_program():
    rng = np.random.default_rng(8)
    for _ in range(50):
        e, x = random_expr_and_point(rng)
        a = e.eval(x)
        b = float(e.eval_many(x.reshape(1, -1), engine="numpy")[0])
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
