"""Normalizing diffeomorphisms for a perturbation g of a Morse function f.

Three constructions undo the drift of critical data under a small
perturbation:

* ``TargetShift`` (a target diffeomorphism): around each critical value y_i
  the monotone map h(y) = y + (y_g - y_i) * rho(4 (y - y_i) / nu_i) carries
  y_i exactly to the perturbed critical value and is the identity outside
  |y - y_i| < nu_i / 2; conjugating g by its inverse restores the critical
  values.
* ``TranslationFlow`` (a source diffeomorphism): the time-1 flow of the
  compactly supported field X(w) = window(|w - x_i|) * (x_g - x_i) carries
  each original critical point onto its perturbed location; inside the
  window's core the field is constant, so those orbits are exact straight
  segments.
* ``EndShift``: along monotone end branches of f, points are slid to the
  location whose f-value is the shifted target, interpolated by a weight
  that vanishes on a central compact set.  When every shifted value band
  stays away from the improper values of f the end shift is the identity.

``verify_normalization`` measures how well the composite
psi^{-1} o g o Psi1 o Psi2 restores the critical set and values of f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .critical import newton_refine
from .expr import Expr, ExprError
from .jets import CompactBox, ck_norm_over
from .smooth import BumpRho, radial_window, smoothstep

__all__ = [
    "AdmissibleBound",
    "TargetShift",
    "ShiftEntry",
    "FlowSpec",
    "TranslationFlow",
    "EndShift",
    "NormalizationCheck",
    "ShiftTooLargeError",
    "AdmissibilityError",
    "admissible_perturbation",
    "build_psi",
    "build_flow_psi2",
    "build_end_shift_psi1",
    "verify_normalization",
]

_RHO = BumpRho()
RK4_STEP = 1e-3
FLOW_TOL = 1e-9


class ShiftTooLargeError(RuntimeError):
    """A critical-value shift exceeds the monotonicity certificate nu/8."""


class AdmissibilityError(RuntimeError):
    """A box intended to be critical-point free touches a critical point."""


# --------------------------------------------------------------------------
# Admissible perturbation sizes


@dataclass
class AdmissibleBound:
    """Per-box C^2 perturbation bound mu.

    Critical boxes get the conservative mu = gamma / (4 n) with
    gamma = (nu/4)^(4/nu); regular boxes get half the minimum gradient norm.
    Any g with ||g - f||_{2,box} < mu for every box keeps exactly one
    critical point per critical box and none elsewhere.
    """

    box: CompactBox
    kind: str  # "critical" | "regular"
    mu: float
    nu: float | None = None
    gamma: float | None = None
    min_grad: float | None = None


def admissible_perturbation(f, boxes):
    """Compute the bound system for a list of (box, nu-or-None) pairs.

    ``nu`` present marks a critical box (the trivialization band half-width
    of its critical value); ``None`` marks a box that must stay free of
    critical points.
    """
    bounds = []
    n = f.arity
    for box, nu in boxes:
        if nu is not None:
            if nu <= 0:
                raise ValueError("nu must be positive")
            gamma = (nu / 4.0) ** (4.0 / nu)
            bounds.append(
                AdmissibleBound(box=box, kind="critical", mu=gamma / (4.0 * n), nu=nu, gamma=gamma)
            )
        else:
            pts = box.grid()
            info = f.jet_program(1)
            from .expr import run_checked

            vals = run_checked(info.program, pts)
            grad_norm = np.sqrt(np.sum(vals[info.slices[1]] ** 2, axis=0))
            m_alpha = float(grad_norm.min())
            if m_alpha <= 0.0:
                raise AdmissibilityError(f"box {box.lower}..{box.upper} touches a critical point")
            bounds.append(
                AdmissibleBound(box=box, kind="regular", mu=m_alpha / 2.0, min_grad=m_alpha)
            )
    return bounds


# --------------------------------------------------------------------------
# Target shift psi_g


@dataclass
class ShiftEntry:
    center: float  # critical value of f
    target: float  # critical value of g
    nu: float
    source_point: np.ndarray | None = None
    moved_point: np.ndarray | None = None

    @property
    def shift(self):
        return self.target - self.center


@dataclass
class TargetShift:
    """Piecewise shift of the value line: y_i -> y_{i,g}, identity elsewhere.

    Monotone whenever every |shift| < nu/8 (then the derivative perturbation
    is at most (nu/8)(4/nu) sup|rho'| < 3/4); the certificate below stores the
    verified grid minimum of the derivative.
    """

    entries: list
    min_deriv: float = math.nan

    def supports(self):
        """Intervals outside of which the map is exactly the identity."""
        return [(e.center - e.nu / 2.0, e.center + e.nu / 2.0) for e in self.entries]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = y.astype(float).copy()
        for e in self.entries:
            if e.shift == 0.0:
                continue
            mask = np.abs(out - e.center) < e.nu / 2.0
            if mask.any():
                out[mask] = y[mask] + e.shift * _RHO(4.0 * (y[mask] - e.center) / e.nu)
        return out if out.ndim else float(out)

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        out = np.ones_like(y)
        for e in self.entries:
            if e.shift == 0.0:
                continue
            mask = np.abs(y - e.center) < e.nu / 2.0
            if mask.any():
                out[mask] += e.shift * (4.0 / e.nu) * _RHO.deriv(4.0 * (y[mask] - e.center) / e.nu)
        return out if out.ndim else float(out)

    def inverse(self, z):
        """Solve psi(y) = z (Newton; the map is monotone with deriv > 1/4)."""
        z = np.asarray(z, dtype=float)
        y = z.astype(float).copy()
        for _ in range(60):
            r = self(y) - z
            if np.all(np.abs(r) <= 1e-14 * np.maximum(1.0, np.abs(z))):
                break
            y = y - r / self.deriv(y)
        return y if y.ndim else float(y)


def build_psi(f, g, locus, radii, *, max_shift_fraction=0.125):
    """Build the target shift for the critical values of f under g.

    ``locus`` is an iterable of critical points of f (CriticalPoint or bare
    locations); each perturbed critical point is located by Newton from the
    original one.  ``radii`` maps entry index to nu_i (scalar or sequence).
    """
    points = [np.atleast_1d(np.asarray(getattr(p, "location", p), dtype=float)) for p in locus]
    if np.isscalar(radii):
        radii = [float(radii)] * len(points)
    entries = []
    for x_i, nu in zip(points, radii):
        y_i = f.eval(x_i)
        moved = newton_refine(g, x_i)
        y_g = moved.value
        if not abs(y_g - y_i) < nu * max_shift_fraction:
            raise ShiftTooLargeError(
                f"shift {y_g - y_i:.3e} at value {y_i:.6g} exceeds nu/8 = {nu * max_shift_fraction:.3e}"
            )
        entries.append(
            ShiftEntry(center=float(y_i), target=float(y_g), nu=float(nu),
                       source_point=x_i, moved_point=moved.location)
        )
    intervals = sorted((e.center - e.nu, e.center + e.nu) for e in entries)
    for (lo1, hi1), (lo2, hi2) in zip(intervals, intervals[1:]):
        if hi1 > lo2:
            raise ValueError(f"value intervals ({lo1}, {hi1}) and ({lo2}, {hi2}) overlap")
    shift = TargetShift(entries=entries)
    mins = [1.0]
    for e in entries:
        ys = np.linspace(e.center - e.nu / 2.0, e.center + e.nu / 2.0, 2001)
        mins.append(float(shift.deriv(ys).min()))
    shift.min_deriv = min(mins)
    if shift.min_deriv <= 0.0:
        raise ShiftTooLargeError("derivative certificate failed: psi' <= 0 on the grid")
    return shift


# --------------------------------------------------------------------------
# Translation flow Psi^2


@dataclass
class FlowSpec:
    """One compactly supported translation field.

    The field is window(|w - center|) * displacement with window identically
    1 inside ``core`` and 0 outside ``support``; the displacement must stay
    under core/2 so the center's unit-time orbit remains in the core (where
    the orbit is an exact straight segment).
    """

    center: np.ndarray
    displacement: np.ndarray
    core: float
    support: float
    step: float = RK4_STEP


class TranslationFlow:
    """Time-1 map of a sum of disjointly supported translation fields."""

    def __init__(self, specs):
        self.specs = specs
        for i, a in enumerate(specs):
            if not np.linalg.norm(a.displacement) < a.core / 2.0:
                raise ValueError(
                    f"displacement {np.linalg.norm(a.displacement):.3e} exceeds half the "
                    f"core radius {a.core / 2.0:.3e}"
                )
            if not a.core < a.support:
                raise ValueError("need core < support")
            for b in specs[i + 1:]:
                if np.linalg.norm(a.center - b.center) <= a.support + b.support:
                    raise ValueError("field supports overlap")

    def map(self, points):
        """Apply the time-1 map to an (m, n) batch of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        for spec in self.specs:
            d = spec.displacement
            dn = np.linalg.norm(d)
            rel = pts - spec.center
            dist = np.linalg.norm(rel, axis=1)
            if dn == 0.0:
                continue
            # orbit provably stays in the constant-field core: exact segment
            exact = dist + dn <= spec.core
            pts[exact] += d
            moving = (dist < spec.support) & ~exact
            if moving.any():
                pts[moving] = self._rk4(pts[moving], spec)
        return pts

    @staticmethod
    def _rk4(x, spec):
        def field(w):
            dist = np.linalg.norm(w - spec.center, axis=1)
            lam = radial_window(dist, spec.core, spec.support)
            return lam[:, None] * spec.displacement

        n_steps = max(1, int(round(1.0 / spec.step)))
        h = 1.0 / n_steps
        for _ in range(n_steps):
            k1 = field(x)
            k2 = field(x + 0.5 * h * k1)
            k3 = field(x + 0.5 * h * k2)
            k4 = field(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    def jacobian_det(self, points, h=1e-6):
        """Finite-difference determinant of the time-1 map (diffeo check)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m, n = pts.shape
        stencil = np.repeat(pts, 2 * n, axis=0)  # one batched map() call
        for j in range(n):
            stencil[2 * j::2 * n, j] += h
            stencil[2 * j + 1::2 * n, j] -= h
        mapped = self.map(stencil).reshape(m, n, 2, n)
        J = (mapped[:, :, 0, :] - mapped[:, :, 1, :]) / (2 * h)  # (m, j, out)
        return np.linalg.det(np.swapaxes(J, 1, 2))


def build_flow_psi2(pairs, core_radius, support_radius=None):
    """Translation flow moving each x_i to x_{i,g}.

    ``pairs`` is a list of (source, target) locations; ``core_radius`` a
    scalar or per-pair sequence; the support defaults to twice the core.
    """
    pairs = [(np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float)))
             for a, b in pairs]
    if np.isscalar(core_radius):
        core_radius = [float(core_radius)] * len(pairs)
    specs = []
    for (src, dst), core in zip(pairs, core_radius):
        support = 2.0 * core if support_radius is None else support_radius
        specs.append(
            FlowSpec(center=src, displacement=dst - src, core=float(core), support=float(support))
        )
    return TranslationFlow(specs)


# --------------------------------------------------------------------------
# End shift Psi^1


@dataclass
class _Branch:
    lo: float
    hi: float
    weight: float
    entry: ShiftEntry


class EndShift:
    """Reparametrization along monotone end branches of a 1-d function.

    On the far part of each end component of f^{-1}((y_i - nu, y_i + nu)) a
    point x slides to the unique point x' of the same branch with
    f(x') = psi(f(x)); the slide is weighted by a smooth function of the
    branch position that vanishes on [-K, K] (so the map is the identity
    there) and equals 1 beyond the interpolation band.
    """

    def __init__(self, f, shift, k_radius, band, identity=False):
        self.f = f
        self.shift = shift
        self.k_radius = float(k_radius)
        self.band = band
        self.identity = identity
        self._branch_cache = {}

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.identity:
            return x.copy() if x.ndim else float(x)
        flat = np.atleast_1d(x).astype(float)
        out = flat.copy()
        for i, xi in enumerate(flat):
            out[i] = self._map_scalar(float(xi))
        out = out.reshape(np.shape(x))
        return out if out.ndim else float(out)

    def _map_scalar(self, x):
        if abs(x) <= self.k_radius:
            return x
        y = self.f.eval([x])
        entry = None
        for e in self.shift.entries:
            if abs(y - e.center) < e.nu:
                entry = e
                break
        if entry is None or entry.shift == 0.0:
            return x
        branch = self._branch_for(x, entry)
        if branch is None or branch.weight == 0.0:
            return x
        target = y + entry.shift * _RHO(4.0 * (y - entry.center) / entry.nu) * branch.weight
        return self._solve_on_branch(branch, target, x)

    def _branch_for(self, x, entry):
        key = (round(x, 9), id(entry))
        if key in self._branch_cache:
            return self._branch_cache[key]
        lo, hi = self._bracket_branch(x, entry)
        if lo is None:
            branch = None
        else:
            crossing = self._solve_value(lo, hi, entry.center)
            if crossing is None:
                branch = None
            else:
                x0, x1 = self.band
                w = float(smoothstep((abs(crossing) - x0) / (x1 - x0)))
                branch = _Branch(lo=lo, hi=hi, weight=w, entry=entry)
        self._branch_cache[key] = branch
        return branch

    def _bracket_branch(self, x, entry):
        """Maximal interval around x where f stays inside the entry band."""
        lo_val, hi_val = entry.center - entry.nu, entry.center + entry.nu
        step = max(1e-3, 1e-3 * abs(x))
        side = 1.0 if x > 0 else -1.0

        def inside(t):
            if abs(t) <= self.k_radius:
                return False
            v = self.f.eval([t])
            return lo_val < v < hi_val

        a = b = x
        s = step
        for _ in range(200):
            if not inside(a - s * side * 0 - s):  # expand left
                break
            a -= s
            s *= 1.5
        s = step
        for _ in range(200):
            if not inside(b + s):
                break
            b += s
            s *= 1.5
        # bisect the exact edges
        a = self._edge(a - step, a, inside) if not inside(a - step) else a - step
        b = self._edge(b + step, b, inside) if not inside(b + step) else b + step
        return a, b

    @staticmethod
    def _edge(outside, inside_pt, inside):
        a, b = outside, inside_pt
        for _ in range(80):
            mid = 0.5 * (a + b)
            if inside(mid):
                b = mid
            else:
                a = mid
        return b

    def _solve_value(self, lo, hi, target):
        """Solve f(x) = target on the branch [lo, hi] (f monotone there)."""
        fa = self.f.eval([lo]) - target
        fb = self.f.eval([hi]) - target
        if fa == 0.0:
            return lo
        if fb == 0.0:
            return hi
        if (fa < 0) == (fb < 0):
            return None
        a, b = lo, hi
        for _ in range(100):
            mid = 0.5 * (a + b)
            fm = self.f.eval([mid]) - target
            if fm == 0.0:
                return mid
            if (fa < 0) != (fm < 0):
                b = mid
            else:
                a, fa = mid, fm
        return 0.5 * (a + b)

    def _solve_on_branch(self, branch, target, fallback):
        x = self._solve_value(branch.lo, branch.hi, target)
        return fallback if x is None else x


def build_end_shift_psi1(f, shift, k_radius, band, z_components=(), *, force=False):
    """End shift for a 1-d function; identity when no band meets Z(f).

    ``z_components`` are the improper-value components of f as produced by
    the end-behavior analysis; if every shifted value band keeps a positive
    distance from them the preimage bands have compact intersection with the
    relevant ends and the end shift may be taken to be the identity.  Pass
    ``force=True`` to build the branch machinery regardless.
    """
    if f.arity != 1:
        raise ExprError("end shift requires a function of one variable")
    x0, x1 = band
    if not k_radius <= x0 < x1:
        raise ValueError("need k_radius <= band start < band end")
    identity = not force and not _bands_meet_z(shift, z_components)
    return EndShift(f, shift, k_radius, band, identity=identity)


def _bands_meet_z(shift, z_components):
    for e in shift.entries:
        for comp in z_components:
            if comp[0] == "point":
                if abs(comp[1] - e.center) < e.nu:
                    return True
            else:
                _, lo, hi, _ = comp
                if lo - e.nu < e.center < hi + e.nu:
                    return True
    return False


# --------------------------------------------------------------------------
# Verification


@dataclass
class NormalizationCheck:
    """Residual record for the composite psi^{-1} o g o Psi1 o Psi2."""

    critical_location_error: float
    critical_value_error: float
    c0_residual: float
    c0_bound: float
    psi_min_deriv: float
    flow_min_det: float
    identity_outside_ok: bool
    per_point: list

    @property
    def passed(self):
        return (
            self.critical_location_error < 1e-8
            and self.critical_value_error < 1e-8
            and self.c0_residual <= self.c0_bound
            and self.psi_min_deriv > 0
            and self.flow_min_det > 0
            and self.identity_outside_ok
        )


def _composite_factory(g, psi, psi1, psi2):
    def composite(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = psi2.map(x)
        y = psi1(y[:, 0]).reshape(-1, 1) if psi1 is not None else y
        vals = g.eval_many(y)
        return psi.inverse(vals)

    return composite


def verify_normalization(f, g, psi, psi1, psi2, window, density=2000):
    """Check that the composite restores the critical set and values of f.

    Critical points of the composite are located independently by bisecting
    the exact chain-rule factor g'(Psi1(Psi2(x))) (the other factors of the
    composite derivative are positive by the diffeomorphism certificates).
    """
    if f.arity != 1 or g.arity != 1:
        raise ExprError("verification is implemented for one variable")
    composite = _composite_factory(g, psi, psi1, psi2)
    gprime = g.partial(1)

    def dcomp(x):
        pt = np.atleast_2d(np.asarray(x, dtype=float))
        y = psi2.map(pt)
        if psi1 is not None:
            y = np.atleast_2d(psi1(y[:, 0])).reshape(-1, 1)
        return float(gprime.eval_many(y)[0])

    loc_err = 0.0
    val_err = 0.0
    per_point = []
    for e in psi.entries:
        x_i = float(e.source_point[0])
        # bracket inside the exact-translation core so every probe is cheap
        half = 0.45 * min(s.core for s in psi2.specs) if psi2.specs else 1e-2
        a, b = x_i - half, x_i + half
        fa, fb = dcomp(a), dcomp(b)
        if (fa < 0) == (fb < 0):
            loc_err = math.inf
            per_point.append((x_i, math.inf, math.inf))
            continue
        for _ in range(120):
            mid = 0.5 * (a + b)
            fm = dcomp(mid)
            if fm == 0.0:
                a = b = mid
                break
            if (fa < 0) != (fm < 0):
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        x_hat = 0.5 * (a + b)
        y_hat = float(composite([x_hat])[0])
        dloc = abs(x_hat - x_i)
        dval = abs(y_hat - e.center)
        loc_err = max(loc_err, dloc)
        val_err = max(val_err, dval)
        per_point.append((x_i, dloc, dval))

    xs = np.linspace(-window, window, int(density * 2 * window) + 1).reshape(-1, 1)
    comp_vals = composite(xs)
    f_vals = f.eval_many(xs)
    g_vals = g.eval_many(xs)
    c0 = float(np.max(np.abs(comp_vals - f_vals)))
    c0_bound = 5.0 * float(np.max(np.abs(g_vals - f_vals)))

    psi_min = psi.min_deriv
    if psi2.specs:
        sample_pts = []
        for s in psi2.specs:
            sample_pts.extend(
                s.center + t * np.ones_like(s.center) for t in
                np.linspace(-s.support * 0.95, s.support * 0.95, 13)
            )
        dets = psi2.jacobian_det(np.array(sample_pts))
        flow_min_det = float(dets.min())
    else:
        flow_min_det = 1.0

    identity_ok = _identity_outside(f, psi, psi1, psi2, window)

    return NormalizationCheck(
        critical_location_error=float(loc_err),
        critical_value_error=float(val_err),
        c0_residual=c0,
        c0_bound=c0_bound,
        psi_min_deriv=float(psi_min),
        flow_min_det=flow_min_det,
        identity_outside_ok=identity_ok,
        per_point=per_point,
    )


def _identity_outside(f, psi, psi1, psi2, window):
    # psi is exactly the identity outside the union of the nu/2 intervals
    supports = psi.supports()
    candidates = []
    for lo, hi in supports:
        w = hi - lo
        candidates.extend([lo - 0.51 * w, hi + 0.51 * w, lo - 3 * w, hi + 3 * w])
    ys = np.array(
        [y for y in candidates if all(not (lo < y < hi) for lo, hi in supports)]
        or [0.0, 1.0]
    )
    if not np.array_equal(psi(ys), ys):
        return False
    # the flow is exactly the identity outside the union of its supports
    pts = []
    for s in psi2.specs:
        for scale in (1.001, 1.5, 4.0):
            offset = np.zeros_like(s.center)
            offset[0] = s.support * scale
            p = s.center + offset
            if all(
                np.linalg.norm(p - o.center) >= o.support * (1 + 1e-12)
                for o in psi2.specs
            ):
                pts.append(p)
    if pts:
        pts = np.array(pts)
        if not np.array_equal(psi2.map(pts), pts):
            return False
    # the end shift is exactly the identity on the central compact set
    if psi1 is not None:
        xs = np.linspace(-psi1.k_radius, psi1.k_radius, 17)
        if not np.array_equal(psi1(xs), xs):
            return False
    return True
