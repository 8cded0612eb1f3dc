"""Closed-form C-infinity transition profiles, plateau bumps and windows.

The basic ingredient is a monotone smoothstep s with s=0 on t<=0, s=1 on
t>=1 and all derivatives vanishing at the seams.  The classical
exp(-1/t)/(exp(-1/t)+exp(-1/(1-t))) profile has maximum slope 2, which is too
steep for the plateau bump below (its derivative must stay under 3/2 over a
unit transition), so we use the flatter tanh-of-tan profile

    s(t) = (1 + tanh(0.8 * tan(pi (t - 1/2)))) / 2,

whose maximum slope is about 1.42.  All functions are numpy-vectorized.
"""

from __future__ import annotations

import numpy as np

__all__ = ["smoothstep", "smoothstep_deriv", "BumpRho", "radial_window", "value_window"]

_GAIN = 0.8


def smoothstep(t):
    """Monotone C-infinity step: 0 for t<=0, 1 for t>=1."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    out[t <= 0.0] = 0.0
    out[t >= 1.0] = 1.0
    mid = (t > 0.0) & (t < 1.0)
    if mid.any():
        u = np.tan(np.pi * (t[mid] - 0.5))
        out[mid] = 0.5 * (1.0 + np.tanh(_GAIN * u))
    return out if out.ndim else float(out)


def smoothstep_deriv(t):
    """Derivative of smoothstep; bounded by about 1.42."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0.0) & (t < 1.0)
    if mid.any():
        u = np.tan(np.pi * (t[mid] - 0.5))
        # sech^2 via decaying exponentials; cosh itself overflows for large u
        e = np.exp(-np.abs(_GAIN * u))
        sech = 2.0 * e / (1.0 + e * e)
        out[mid] = 0.5 * _GAIN * np.pi * sech * sech * (1.0 + u * u)
    return out if out.ndim else float(out)


class BumpRho:
    """Even plateau bump: 1 on |y|<=1, 0 on |y|>=2, monotone on [0, inf).

    The transition on 1<|y|<2 is the smoothstep above, so the derivative
    bound sup|rho'| < 3/2 holds with margin (verified on a dense grid by the
    test suite); the plateau and vanishing regions are exact by construction.
    """

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y)
        out = np.empty_like(a)
        out[a <= 1.0] = 1.0
        out[a >= 2.0] = 0.0
        mid = (a > 1.0) & (a < 2.0)
        if mid.any():
            out[mid] = smoothstep(2.0 - a[mid])
        return out if out.ndim else float(out)

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y)
        out = np.zeros_like(a)
        mid = (a > 1.0) & (a < 2.0)
        if mid.any():
            out[mid] = -np.sign(y[mid]) * smoothstep_deriv(2.0 - a[mid])
        return out if out.ndim else float(out)


def radial_window(dist, core, support):
    """1 inside the core radius, 0 outside the support radius, smooth between."""
    if not 0 < core < support:
        raise ValueError("need 0 < core < support")
    dist = np.asarray(dist, dtype=float)
    return smoothstep((support - dist) / (support - core))


def value_window(t, center, inner, outer):
    """1 on |t-center|<=inner, 0 on |t-center|>=outer, smooth between."""
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    t = np.asarray(t, dtype=float)
    return smoothstep((outer - np.abs(t - center)) / (outer - inner))
