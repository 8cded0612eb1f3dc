"""Certificates for the transition profiles and the plateau bump."""

import numpy as np

from msl.smooth import BumpRho, radial_window, smoothstep, smoothstep_deriv, value_window


def test_smoothstep_endpoints_exact():
    t = np.array([-1.0, 0.0, 1.0, 2.0])
    assert np.array_equal(smoothstep(t), [0.0, 0.0, 1.0, 1.0])


def test_smoothstep_monotone():
    t = np.linspace(-0.5, 1.5, 20001)
    s = smoothstep(t)
    assert np.all(np.diff(s) >= 0)
    assert np.all((s >= 0) & (s <= 1))


def test_bump_certificates_on_dense_grid():
    rho = BumpRho()
    y = np.linspace(-3.0, 3.0, 100_001)
    v = rho(y)
    assert v.min() >= 0.0 and v.max() <= 1.0
    # plateau and vanishing regions exact
    assert np.all(v[np.abs(y) <= 1.0] == 1.0)
    assert np.all(v[np.abs(y) >= 2.0] == 0.0)
    # even: same values at y and -y
    assert np.array_equal(v, rho(-y))
    # monotone decreasing on [0, inf)
    right = v[y >= 0]
    assert np.all(np.diff(right) <= 0)
    # derivative bound strictly under 3/2
    assert np.abs(rho.deriv(y)).max() < 1.5


def test_bump_derivative_matches_finite_differences():
    rho = BumpRho()
    y = np.linspace(-2.5, 2.5, 2001)
    h = 1e-6
    fd = (rho(y + h) - rho(y - h)) / (2 * h)
    assert np.abs(fd - rho.deriv(y)).max() < 1e-8


def test_smoothstep_deriv_consistency():
    t = np.linspace(0.01, 0.99, 999)
    h = 1e-7
    fd = (smoothstep(t + h) - smoothstep(t - h)) / (2 * h)
    assert np.abs(fd - smoothstep_deriv(t)).max() < 1e-6


def test_radial_window():
    d = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    w = radial_window(d, 1.0, 2.0)
    assert np.array_equal(w[:3], [1.0, 1.0, 1.0])
    assert w[3] > 0 and np.array_equal(w[4:], [0.0, 0.0])


def test_value_window():
    t = np.array([0.9, 1.0, 1.02, 1.04, 1.06, 1.2])
    w = value_window(t, 1.0, 0.05, 0.1)
    assert w[1] == 1.0 and w[2] == 1.0 and w[3] == 1.0
    assert 0 < w[4] < 1  # 1.06 lies in the transition shell
    assert w[0] == 0.0 and w[-1] == 0.0  # 0.9 sits exactly on the outer edge
