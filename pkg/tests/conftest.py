"""Shared generators: random grammar expressions and gated model perturbations."""

import numpy as np
import pytest

from msl import eval_jet
from msl.critical import GATE_SAMPLES, ModelQuadratic
from msl.expr import Add, Const, Cos, Div, Exp, Expr, Mul, Neg, Pow, Sin, Sub, Var
from msl.jets import CompactBox, ck_norm_over


def random_node(rng, n, depth):
    """Random AST from the grammar; denominators are kept away from zero."""
    if depth == 0:
        if rng.random() < 0.4:
            return Const(round(float(rng.uniform(-3, 3)), 3))
        return Var(int(rng.integers(n)))
    r = rng.random()
    d = depth - 1
    if r < 0.18:
        return Add(random_node(rng, n, d), random_node(rng, n, d))
    if r < 0.36:
        return Sub(random_node(rng, n, d), random_node(rng, n, d))
    if r < 0.54:
        return Mul(random_node(rng, n, d), random_node(rng, n, d))
    if r < 0.62:
        return Div(
            random_node(rng, n, d),
            Add(Const(float(rng.uniform(1.0, 3.0))), Pow(Var(int(rng.integers(n))), 2)),
        )
    if r < 0.72:
        return Pow(random_node(rng, n, d), int(rng.integers(2, 4)))
    if r < 0.79:
        return Neg(random_node(rng, n, d))
    if r < 0.86:
        return Exp(Mul(Const(0.3), random_node(rng, n, d)))
    if r < 0.93:
        return Sin(random_node(rng, n, d))
    return Cos(random_node(rng, n, d))


def random_expr_and_point(rng, n_max=3, depth=3, scale_bound=1e3):
    """A random smooth expression and a sample point with tame jet values."""
    while True:
        n = int(rng.integers(1, n_max + 1))
        e = Expr(random_node(rng, n, depth), n)
        x = rng.uniform(-2.0, 2.0, n)
        try:
            jet = eval_jet(e, x, 3)
        except Exception:
            continue
        parts = [abs(jet.value)] + [float(np.abs(t).max()) for t in jet.tensors]
        if all(np.isfinite(p) and p < scale_bound for p in parts):
            return e, x


def random_poly_node(rng, n, max_degree=3, terms=4):
    """Random polynomial with bounded total degree and at least one variable."""
    node = None
    for _ in range(terms):
        coef = Const(round(float(rng.uniform(-1, 1)), 6))
        term = coef
        degree = int(rng.integers(1, max_degree + 1))
        for _ in range(degree):
            term = Mul(term, Var(int(rng.integers(n))))
        node = term if node is None else Add(node, term)
    return node


def random_gated_instance(rng, n=None, theta=(0.3, 0.95)):
    """(model, g, r) with the sampled C^2 gate ||g-f|| < 0.9 r/n guaranteed.

    The perturbation is a random cubic scaled against its measured norm on
    the gate grid, so the margin fraction theta is exact by construction.
    """
    if n is None:
        n = int(rng.integers(1, 5))
    signs = tuple(int(s) for s in rng.integers(0, 2, n))
    model = ModelQuadratic(signs, float(rng.uniform(-1, 1)))
    r = float(rng.uniform(0.1, 0.9))
    p = Expr(random_poly_node(rng, n), n)
    box = CompactBox.ball(r, n, samples_per_axis=GATE_SAMPLES[n])
    w = ck_norm_over(p, box, 2).total
    if w == 0.0:
        return random_gated_instance(rng, n, theta)
    s = 0.9 * (r / n) * float(rng.uniform(*theta)) / w
    g = model.to_expr() + s * p
    return model, g, r


def random_gated_pair(rng, n=None, theta=(0.3, 0.95)):
    """(model, g, h, r): two independent perturbations gated on one model."""
    if n is None:
        n = int(rng.integers(1, 5))
    model, g, r = random_gated_instance(rng, n=n, theta=theta)
    box = CompactBox.ball(r, n, samples_per_axis=GATE_SAMPLES[n])
    p = Expr(random_poly_node(rng, n), n)
    w = ck_norm_over(p, box, 2).total
    if w == 0.0:
        return random_gated_pair(rng, n, theta)
    s = 0.9 * (r / n) * float(rng.uniform(*theta)) / w
    h = model.to_expr() + s * p
    return model, g, h, r


@pytest.fixture(scope="session")
def warm_kernels():
    """Trigger numba JIT once so timed suites measure the workload only."""
    from msl import parse

    e = parse("exp(-x1^2)*sin(x1)+x1^2/(1+x1^2)", 1)
    e.eval_many(np.linspace(-1, 1, 64).reshape(-1, 1))
    eval_jet(e, [0.5], 2)
    return True
