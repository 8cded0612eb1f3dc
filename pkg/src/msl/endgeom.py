"""End behavior on R^n: gradient properness, level-set flows, genericity.

A locally stable function whose gradient map keeps the origin out of its
improper value set is stable: outside a large ball the level sets near any
critical value can be trivialized by flowing along the unique sphere-tangent
vector field X with df(X) = 1, X orthogonal to ker(df) within the sphere's
tangent space.  Concretely X is the tangential part of the gradient divided
by its squared norm, so the flow parameter equals the function value and
orbits stay on spheres exactly.

The gradient condition itself is tested empirically: minima of |grad f| over
sampled spheres of doubling radii, with the verdict recorded alongside the
witnessed lower bound (never claimed as a proof).  The same machinery powers
the classification of the diagonal quadratics sum_{i<=k} x_i^2 - sum_{j>k}
x_j^2 and a seeded genericity scan for linear perturbations f + <a, x>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, ExprError, parse, run_checked
from .smooth import value_window

__all__ = [
    "GradientProfile",
    "TrivializationOrbit",
    "GkClassification",
    "ScanStatistics",
    "TangencyDegeneracyError",
    "sphere_samples",
    "gradient_improper_test",
    "classify_Gk",
    "gk_expr",
    "end_trivialize",
    "linear_perturbation_scan",
]

TOL_TANGENT = 1e-8
TOL_FLOW = 1e-6
RK4_STEP = 1e-3
TOL_EPS = 1e-3
DEFAULT_RADII = tuple(float(2**k) for k in range(1, 11))  # 2, 4, ..., 1024


class TangencyDegeneracyError(RuntimeError):
    """The tangential gradient vanished: the level set is sphere-tangent here."""

    def __init__(self, point):
        super().__init__(f"tangential gradient below tolerance at {point}")
        self.point = np.asarray(point)


# --------------------------------------------------------------------------
# Deterministic sphere sampling


def _fibonacci_sphere(m):
    i = np.arange(m) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sphere_samples(n, m, radius=1.0):
    """Deterministic low-discrepancy samples of the sphere of given radius.

    Dimension 1: the two points +-radius; 2: uniform angles; 3: Fibonacci
    lattice; 4: a product grid of spherical angles.  The +-axis points are
    always included.
    """
    if n == 1:
        pts = np.array([[1.0], [-1.0]])
    elif n == 2:
        t = 2.0 * math.pi * np.arange(m) / m
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif n == 3:
        pts = _fibonacci_sphere(m)
    elif n == 4:
        k = max(3, int(round((m / 2.0) ** (1.0 / 3.0))))
        t1 = np.linspace(0, math.pi, k + 2)[1:-1]
        t2 = np.linspace(0, math.pi, k + 2)[1:-1]
        t3 = np.linspace(0, 2 * math.pi, 2 * k, endpoint=False)
        g1, g2, g3 = np.meshgrid(t1, t2, t3, indexing="ij")
        pts = np.stack(
            [
                np.cos(g1),
                np.sin(g1) * np.cos(g2),
                np.sin(g1) * np.sin(g2) * np.cos(g3),
                np.sin(g1) * np.sin(g2) * np.sin(g3),
            ],
            axis=-1,
        ).reshape(-1, 4)
    else:
        raise ExprError("sphere sampling supports dimensions 1..4")
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    pts = np.concatenate([pts, axes])
    return np.ascontiguousarray(radius * pts)


# --------------------------------------------------------------------------
# Gradient properness


@dataclass
class GradientProfile:
    """Minima of |grad f| over sampled spheres of increasing radii.

    ``epsilon_hat`` is the best tail bound max_j min_{i>=j} min_grad[i]; the
    verdict is ``origin_excluded`` when it clears the tolerance, meaning no
    sampled sphere beyond R* carries gradient values near zero.  This is a
    sampled witness, not a proof.
    """

    radii: np.ndarray
    min_grad: np.ndarray
    epsilon_hat: float
    r_star: float
    verdict: str  # "origin_excluded" | "inconclusive"
    tol: float
    sphere_samples: int


def _grad_norm_batch(f, pts):
    info = f.jet_program(1)
    vals = run_checked(info.program, pts)
    g = vals[info.slices[1]]
    return np.sqrt(np.sum(g * g, axis=0))


def gradient_improper_test(f, radii=DEFAULT_RADII, samples=10_000, tol=TOL_EPS):
    """Empirical test that the gradient map stays away from zero near infinity."""
    radii = np.asarray(sorted(radii), dtype=float)
    mins = np.empty(len(radii))
    for i, r in enumerate(radii):
        pts = sphere_samples(f.arity, samples, r)
        mins[i] = float(_grad_norm_batch(f, pts).min())
    tail_min = np.minimum.accumulate(mins[::-1])[::-1]
    j = int(np.argmax(tail_min))
    eps_hat = float(tail_min[j])
    return GradientProfile(
        radii=radii,
        min_grad=mins,
        epsilon_hat=eps_hat,
        r_star=float(radii[j]),
        verdict="origin_excluded" if eps_hat >= tol else "inconclusive",
        tol=float(tol),
        sphere_samples=samples,
    )


# --------------------------------------------------------------------------
# The diagonal quadratic family


def gk_expr(n, k):
    """sum_{i<=k} x_i^2 - sum_{j>k} x_j^2 as an expression on R^n."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    terms = []
    for i in range(1, n + 1):
        sign = "" if i <= k else "-"
        terms.append(f"{sign}x{i}^2")
    text = "+".join(terms).replace("+-", "-")
    return parse(text if text else "0", n)


@dataclass
class GkClassification:
    """Stability ledger of one diagonal quadratic, with numeric witnesses."""

    n: int
    k: int
    proper: bool
    quasi_proper: bool
    strongly_stable: bool
    stable: bool
    morse_index: int
    sphere_min_ratio: float  # min |G_k| / R^2 over the largest sampled sphere
    cone_escape_value: float | None  # value along the escaping null-cone ray
    gradient: GradientProfile


def classify_Gk(n, k, radii=DEFAULT_RADII, samples=4000):
    """Classify the quadratic with k plus-signs on R^n.

    Properness is witnessed by min |G_k| growing like R^2 on sampled spheres;
    for 0 < k < n the null cone provides an exact escaping ray on which the
    value is identically zero, so 0 is an improper point while Delta = {0},
    defeating quasi-properness.  Stability holds for every k: by properness
    at k in {0, n}, otherwise through the gradient test (the gradient is a
    linear isomorphism here).
    """
    g = gk_expr(n, k)
    r_big = max(radii)
    pts = sphere_samples(n, samples, r_big)
    vals = run_checked(g.program(), pts)[0]
    ratio = float(np.min(np.abs(vals)) / r_big**2)

    cone_escape = None
    if 0 < k < n:
        ray = np.zeros(n)
        ray[0] = 1.0 / math.sqrt(2.0)
        ray[n - 1] = 1.0 / math.sqrt(2.0)
        escape = np.outer(np.geomspace(1.0, 1e6, 25), ray)
        cone_vals = run_checked(g.program(), np.ascontiguousarray(escape))[0]
        cone_escape = float(np.max(np.abs(cone_vals)))

    profile = gradient_improper_test(g, radii=radii, samples=samples)
    proper = k in (0, n)
    quasi = proper  # for 0 < k < n the cone ray clusters the critical value 0
    stable = proper or profile.verdict == "origin_excluded"
    return GkClassification(
        n=n,
        k=k,
        proper=proper,
        quasi_proper=quasi,
        strongly_stable=quasi,
        stable=stable,
        morse_index=n - k,
        sphere_min_ratio=ratio,
        cone_escape_value=cone_escape,
        gradient=profile,
    )


# --------------------------------------------------------------------------
# End trivialization flow


@dataclass
class TrivializationOrbit:
    """One flow orbit Phi(p, t) with its fidelity residuals.

    ``value_residuals`` tracks |f(Phi(p,t)) - t| (the flow parameter is the
    function value); ``radius_drifts`` tracks ||Phi(p,t)| - |p|| (the field
    is tangent to spheres, so orbits should not change radius).
    """

    start: np.ndarray
    times: np.ndarray
    points: np.ndarray
    value_residuals: np.ndarray
    radius_drifts: np.ndarray


def _tangent_field(f, pts, band_center, band_inner, band_outer, tol_tangent):
    info = f.jet_program(1)
    out = run_checked(info.program, pts)
    vals = out[0]
    grad = out[info.slices[1]].T  # (m, n)
    radii = np.linalg.norm(pts, axis=1)
    unit = pts / radii[:, None]
    radial = np.sum(grad * unit, axis=1)
    tang = grad - radial[:, None] * unit
    tnorm2 = np.sum(tang * tang, axis=1)
    if np.any(tnorm2 <= tol_tangent**2):
        bad = int(np.argmin(tnorm2))
        raise TangencyDegeneracyError(pts[bad])
    window = value_window(vals, band_center, band_inner, band_outer)
    return (window / tnorm2)[:, None] * tang


def end_trivialize(
    f,
    q,
    R,
    starts,
    t_range,
    *,
    step=RK4_STEP,
    band_eps=None,
    tol_tangent=TOL_TANGENT,
):
    """Flow level sets of f across the value band around q, outside B(R).

    ``starts`` are points with f = q and |p| > R; each is carried to every
    requested value t by RK4 integration of the sphere-tangent field; the
    orbits realize the end-triviality chart over the band at the sampled
    resolution.  Raises TangencyDegeneracyError where the field is undefined
    (a numerical witness of the sphere-tangency obstruction set).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    t_lo, t_hi = min(t_range), max(t_range)
    if band_eps is None:
        band_eps = 5.0 * max(abs(t_lo - q), abs(t_hi - q), 1e-6)
    if np.any(np.linalg.norm(starts, axis=1) <= R):
        raise ValueError("start points must lie outside the ball of radius R")

    def integrate(direction, s_max):
        n_steps = int(round(s_max / step))
        traj = [starts.copy()]
        x = starts.copy()
        h = direction * step

        def field(w):
            return _tangent_field(f, w, q, band_eps / 4.0, band_eps / 2.0, tol_tangent)

        for _ in range(n_steps):
            k1 = field(x)
            k2 = field(x + 0.5 * h * k1)
            k3 = field(x + 0.5 * h * k2)
            k4 = field(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            traj.append(x.copy())
        return traj

    up_steps = max(0, int(round((t_hi - q) / step)))
    down_steps = max(0, int(round((q - t_lo) / step)))
    traj_up = integrate(+1.0, up_steps * step) if up_steps else [starts.copy()]
    traj_down = integrate(-1.0, down_steps * step) if down_steps else [starts.copy()]

    times = np.concatenate(
        [q - step * np.arange(down_steps, 0, -1), [q], q + step * np.arange(1, up_steps + 1)]
    )
    frames = traj_down[::-1] + traj_up[1:]

    orbits = []
    start_radii = np.linalg.norm(starts, axis=1)
    prog = f.program()
    all_pts = np.concatenate(frames)
    all_vals = run_checked(prog, np.ascontiguousarray(all_pts))[0].reshape(len(frames), -1)
    for i in range(starts.shape[0]):
        pts_i = np.stack([fr[i] for fr in frames])
        vals_i = all_vals[:, i]
        orbits.append(
            TrivializationOrbit(
                start=starts[i].copy(),
                times=times.copy(),
                points=pts_i,
                value_residuals=np.abs(vals_i - times),
                radius_drifts=np.abs(np.linalg.norm(pts_i, axis=1) - start_radii[i]),
            )
        )
    return orbits


# --------------------------------------------------------------------------
# Linear perturbation genericity scan


def _linear_expr(a):
    """The linear form <a, x> as an expression."""
    from .expr import Const, Mul, Var, Add

    a = np.asarray(a, dtype=float)
    node = None
    for i, c in enumerate(a):
        term = Mul(Const(float(c)), Var(i))
        node = term if node is None else Add(node, term)
    return Expr(node if node is not None else Const(0.0), len(a))


def _is_polynomial(e):
    from . import expr as _e

    def walk(node):
        if isinstance(node, (_e.Exp, _e.Sin, _e.Cos, _e.Div)):
            return False
        if isinstance(node, (_e.Const, _e.Var)):
            return True
        if isinstance(node, _e.Pow):
            return walk(node.base)
        if isinstance(node, _e.Neg):
            return walk(node.a)
        return walk(node.a) and walk(node.b)

    return walk(e.root)


def _multi_start_critical_points(g, window, starts_per_axis=15, iters=60):
    """Batched Newton from a coarse start grid; returns unique points in the box."""
    n = g.arity
    axis = np.linspace(-window, window, starts_per_axis)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    info = g.jet_program(2)
    alive = np.ones(len(X), dtype=bool)
    for _ in range(iters):
        vals = run_checked(info.program, np.ascontiguousarray(X))
        grad = vals[info.slices[1]].T
        hess = np.empty((len(X), n, n))
        for col, (i, j) in enumerate(info.tuples[2]):
            hess[:, i - 1, j - 1] = vals[info.slices[2]][col]
            hess[:, j - 1, i - 1] = vals[info.slices[2]][col]
        dets = np.linalg.det(hess)
        ok = alive & np.isfinite(dets) & (np.abs(dets) > 1e-300)
        step = np.zeros_like(X)
        if ok.any():
            step[ok] = np.linalg.solve(hess[ok], grad[ok][..., None])[..., 0]
        X = X - step
        bad = ~np.all(np.isfinite(X), axis=1) | (np.abs(X) > 100 * window).any(axis=1)
        X[bad] = 0.0
        alive &= ~bad
    vals = run_checked(info.program, np.ascontiguousarray(X))
    grad = vals[info.slices[1]].T
    res = np.linalg.norm(grad, axis=1)
    inside = np.all(np.abs(X) <= window, axis=1)
    good = alive & inside & (res < 1e-8)
    pts = X[good]
    unique = []
    for p in pts:
        if all(np.linalg.norm(p - u) > 1e-6 * (1 + np.linalg.norm(u)) for u in unique):
            unique.append(p)
    return unique


@dataclass
class ScanStatistics:
    """Outcome of the seeded linear-perturbation genericity scan."""

    trials: int
    passes: int
    pass_fraction: float
    seed: int
    window: float
    records: list = field(default_factory=list)
    failing: list = field(default_factory=list)


def linear_perturbation_scan(
    f,
    trials,
    window,
    *,
    seed=0,
    radii=(2.0, 8.0, 32.0, 128.0, 512.0),
    sphere_samples_count=2000,
    starts_per_axis=15,
):
    """Check stability of f + <a, x> for random a in the unit ball.

    Each trial passes when (i) all critical points found in the window are
    nondegenerate with pairwise distinct values and (ii) the gradient test
    excludes the origin (equivalently -a avoids the improper values of
    grad f).  Fixed seeds reproduce the exact pass/fail vector.
    """
    if not _is_polynomial(f):
        raise ExprError("linear_perturbation_scan requires a polynomial")
    n = f.arity
    rng = np.random.default_rng(seed)
    records = []
    failing = []
    passes = 0
    for t in range(trials):
        u = rng.normal(size=n)
        u /= np.linalg.norm(u)
        a = u * rng.random() ** (1.0 / n)
        f_a = f + _linear_expr(a)

        local_ok = True
        points = _multi_start_critical_points(f_a, window, starts_per_axis=starts_per_axis)
        values = []
        info = f_a.jet_program(2)
        for p in points:
            vals = run_checked(info.program, p.reshape(1, -1))[:, 0]
            hess = np.empty((n, n))
            for col, (i, j) in enumerate(info.tuples[2]):
                hess[i - 1, j - 1] = vals[info.slices[2]][col]
                hess[j - 1, i - 1] = vals[info.slices[2]][col]
            eigs = np.linalg.eigvalsh(hess)
            amin, amax = np.min(np.abs(eigs)), np.max(np.abs(eigs))
            if amin == 0.0 or amin <= 1e-8 * amax:
                local_ok = False
            values.append(float(vals[0]))
        values = sorted(values)
        for v1, v2 in zip(values, values[1:]):
            if abs(v2 - v1) <= 1e-9 * max(1.0, abs(v1), abs(v2)):
                local_ok = False

        profile = gradient_improper_test(
            f_a, radii=radii, samples=sphere_samples_count
        )
        grad_ok = profile.verdict == "origin_excluded"
        ok = local_ok and grad_ok
        passes += int(ok)
        records.append(
            {
                "a": [float(v) for v in a],
                "local_ok": bool(local_ok),
                "grad_ok": bool(grad_ok),
                "critical_points": len(points),
                "epsilon_hat": profile.epsilon_hat,
                "pass": bool(ok),
            }
        )
        if not ok:
            failing.append([float(v) for v in a])
    return ScanStatistics(
        trials=trials,
        passes=passes,
        pass_fraction=passes / trials if trials else 1.0,
        seed=seed,
        window=float(window),
        records=records,
        failing=failing,
    )
