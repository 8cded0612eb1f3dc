"""Full stability classification for smooth functions on the real line.

A function f: R -> R is locally stable exactly when it is Morse: every
critical point nondegenerate and no two critical values equal.  Beyond that
the flags are governed by set intersections: improper values Z(f) (cluster
values along sequences escaping to +-infinity, which on R form the interval
[liminf, limsup] at each end), the improper values Z(f|_Sigma) of the
critical-value sequence, the genuine end limits L(f), and the discriminant
Delta(f) of critical values:

* infinitesimally stable  <=>  Morse and Z(f|_Sigma) empty,
* quasi-proper            <=>  Z(f) does not meet Delta(f),
* stable (Dimca)          <=>  Morse and Delta(f) misses Z(f|_Sigma) u L(f),
* strongly stable         <=>  Morse and quasi-proper.

All set data is window- and sampling-limited; every emptiness decision
carries its margin, and decisions that sampling cannot separate are reported
as inconclusive (None) rather than guessed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .critical import ConvergenceError, CriticalPoint, DegenerateHessianError, _refine
from .expr import Expr, ExprError, run_checked

__all__ = [
    "CriticalLocus1D",
    "EndData",
    "EndBehavior",
    "StabilityReport",
    "critical_locus",
    "tan_equation_roots",
    "end_behavior",
    "classify",
    "tri_and",
]

DEFAULT_DENSITY = 10_000  # grid points per unit length for the locus scan
TOL_LIM = 1e-9  # end-limit detection: oscillation over the last windows
TOL_CLUSTER = 1e-6  # grouping tolerance for cluster values
COLLISION_REL = 1e-12  # relative tolerance treating two values as equal
BLOWUP_THRESHOLD = 1e6


def tri_and(*flags):
    """Three-valued conjunction: False dominates, then None, else True."""
    if any(f is False for f in flags):
        return False
    if any(f is None for f in flags):
        return None
    return True


# --------------------------------------------------------------------------
# Critical locus


@dataclass
class CriticalLocus1D:
    """Critical points of a 1-d function inside [-window, window].

    Contains every critical point whose derivative sign change is visible at
    the scan density (sign changes annihilated by double-precision underflow
    of f' are unobservable in principle).  ``complete_in_window`` requires
    agreement with a doubled-density rescan, no collisions among refined
    points, and no unresolved zero plateaus.
    """

    window: float
    points: list
    complete_in_window: bool
    unresolved: list = field(default_factory=list)

    @property
    def locations(self):
        return np.array([p.location[0] for p in self.points])

    @property
    def values(self):
        return np.array([p.value for p in self.points])

    def degenerate_points(self):
        return [p for p in self.points if p.degenerate]


def _scan_candidates(e, window, density):
    """Sign-change brackets and isolated zeros of e on [-window, window]."""
    npts = max(int(round(2 * window * density)) + 1, 64)
    xs = np.linspace(-window, window, npts)
    d = e.eval_many(xs.reshape(-1, 1))
    brackets = []
    singles = []
    unresolved = []

    # sign test, not a product: products of adjacent tiny values underflow to 0
    neg, pos = d < 0, d > 0
    flips = (neg[:-1] & pos[1:]) | (pos[:-1] & neg[1:])
    for i in np.nonzero(flips)[0]:
        brackets.append((xs[i], xs[i + 1], d[i], d[i + 1]))

    zero = d == 0.0
    if zero.any():
        idx = np.nonzero(zero)[0]
        run_start = idx[0]
        prev = idx[0]
        runs = []
        for j in idx[1:]:
            if j != prev + 1:
                runs.append((run_start, prev))
                run_start = j
            prev = j
        runs.append((run_start, prev))
        for lo, hi in runs:
            if lo == 0 or hi == npts - 1:
                continue  # plateau touching the window edge: invisible tail
            if lo == hi:
                singles.append(xs[lo])
            elif d[lo - 1] * d[hi + 1] < 0:
                unresolved.append(0.5 * (xs[lo] + xs[hi]))
            else:
                unresolved.append(0.5 * (xs[lo] + xs[hi]))
    return brackets, singles, unresolved, xs[1] - xs[0]


def _bisect_bracket(e, a, b, fa, fb, iters):
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = e.eval([mid])
        if fm == 0.0:
            return mid, mid, 0.0, 0.0
        if (fa < 0) != (fm < 0):
            b, fb = mid, fm
        else:
            a, fa = mid, fm
    return a, b, fa, fb


def _degenerate_record(f, x):
    value, grad, hess = _jet2_scalar(f, x)
    return CriticalPoint(
        location=np.array([x]),
        value=value,
        morse_index=int(hess < 0),
        grad_residual=abs(grad),
        hessian_eigenvalues=np.array([hess]),
        degenerate=True,
    )


def _jet2_scalar(f, x):
    info = f.jet_program(2)
    vals = run_checked(info.program, np.array([[x]], dtype=float))[:, 0]
    return float(vals[0]), float(vals[1]), float(vals[2])


def _refine_candidate(f, fprime, x0, bracket=None, spacing=1e-4):
    """Refine one candidate root of f'; returns a CriticalPoint record.

    Newton supplies both the location and (through its convergence rate and
    Hessian spectrum) the nondegeneracy diagnosis; bisection inside the
    bracket is the fallback when Newton misbehaves.
    """
    try:
        point, reason = _refine(f, [x0])
        if reason is not None:
            point.degenerate = True
        ok = True
    except (ConvergenceError, DegenerateHessianError):
        ok = False
        point = None
    if bracket is not None:
        a, b, fa, fb = bracket
        in_bracket = ok and a - spacing <= point.location[0] <= b + spacing
        if not in_bracket:
            a2, b2, fa2, fb2 = _bisect_bracket(fprime, a, b, fa, fb, 100)
            mid = 0.5 * (a2 + b2)
            try:
                point, reason = _refine(f, [mid])
                if reason is not None:
                    point.degenerate = True
            except (ConvergenceError, DegenerateHessianError):
                point = _degenerate_record(f, mid)
    elif not ok:
        point = _degenerate_record(f, x0)
    return point


def critical_locus(f, window, density=DEFAULT_DENSITY):
    """Locate all critical points of f visible in [-window, window].

    Degenerate (non-Morse) points are recorded with ``degenerate=True``
    rather than raised.
    """
    if f.arity != 1:
        raise ExprError("critical_locus requires a function of one variable")
    if window <= 0:
        raise ValueError("window must be positive")
    fprime = f.partial(1)

    brackets, singles, unresolved, spacing = _scan_candidates(fprime, window, density)
    points = []
    for a, b, fa, fb in brackets:
        points.append(
            _refine_candidate(f, fprime, 0.5 * (a + b), bracket=(a, b, fa, fb), spacing=spacing)
        )
    for x0 in singles:
        points.append(_refine_candidate(f, fprime, x0, spacing=spacing))

    points.sort(key=lambda p: p.location[0])
    deduped = []
    collision = False
    for p in points:
        if deduped and abs(p.location[0] - deduped[-1].location[0]) < 1e-9 * (
            1 + abs(p.location[0])
        ):
            collision = True
            continue
        deduped.append(p)

    b2, s2, u2, _ = _scan_candidates(fprime, window, 2 * density)
    agreement = (len(b2) + len(s2)) == (len(brackets) + len(singles)) and len(u2) == len(
        unresolved
    )
    complete = agreement and not collision and not unresolved
    return CriticalLocus1D(
        window=float(window),
        points=deduped,
        complete_in_window=complete,
        unresolved=unresolved,
    )


# --------------------------------------------------------------------------
# The transcendental critical-point equation of the Gaussian-sine function


def tan_equation_roots(count):
    """Roots of 2x sin x - cos x = 0 bracketed in (n pi, (2n+1) pi/2).

    These are the critical points of exp(-x^2) sin x lying beyond pi (the
    equation has one further positive root ~0.6534 below pi, which this
    bracketed family deliberately excludes).  Bisection plus Newton polish
    drives the normalized residual |sin x - cos x / (2x)| below 1e-12; the
    normalization removes the 2x growth of the raw form, whose value changes
    by about 4e-12 per ulp of x near the 50th root and therefore cannot be
    pinned below 1e-12 in double precision.
    """
    if count < 1:
        raise ValueError("count must be >= 1")

    def g(x):
        return 2.0 * x * math.sin(x) - math.cos(x)

    def gprime(x):
        return 3.0 * math.sin(x) + 2.0 * x * math.cos(x)

    roots = []
    for n in range(1, count + 1):
        a, b = n * math.pi, (2 * n + 1) * math.pi / 2
        fa, fb = g(a), g(b)
        if fa * fb >= 0:
            raise RuntimeError(f"no sign change in bracket ({a}, {b})")
        for _ in range(80):
            mid = 0.5 * (a + b)
            fm = g(mid)
            if fm == 0.0:
                a = b = mid
                break
            if fa * fm < 0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        x = 0.5 * (a + b)
        for _ in range(3):
            dp = gprime(x)
            if dp != 0.0:
                x -= g(x) / dp
        residual = abs(g(x)) / (2.0 * x)
        if residual >= 1e-12:
            raise RuntimeError(f"root polish failed at n={n}: residual {residual:.3e}")
        roots.append(x)
    return np.array(roots)


# --------------------------------------------------------------------------
# End behavior


@dataclass
class EndData:
    """Sampled behavior of f along one end (windows [2^k, 2^{k+1}])."""

    side: int  # +1 or -1
    liminf: float
    limsup: float
    limit: float | None  # finite limit, +-inf for escape, None when absent
    window_mins: np.ndarray
    window_maxs: np.ndarray
    window_avgs: np.ndarray
    edge_uncertainty: float
    undetermined: bool = False

    @property
    def cluster_interval(self):
        return (self.liminf, self.limsup)

    def z_component(self):
        """Cluster-value set this end contributes to Z(f), or None."""
        if self.undetermined:
            return None
        if self.limit is not None:
            if math.isinf(self.limit):
                return None
            return ("point", self.limit, self.edge_uncertainty)
        if math.isinf(self.liminf) or math.isinf(self.limsup):
            lo = self.liminf if not math.isinf(self.liminf) else -math.inf
            hi = self.limsup if not math.isinf(self.limsup) else math.inf
            return ("interval", lo, hi, self.edge_uncertainty)
        return ("interval", self.liminf, self.limsup, self.edge_uncertainty)


@dataclass
class EndBehavior:
    pos: EndData
    neg: EndData

    def z_components(self):
        comps = []
        for end in (self.pos, self.neg):
            c = end.z_component()
            if c is not None:
                comps.append(c)
        return comps

    def l_values(self):
        vals = []
        for end in (self.pos, self.neg):
            if end.limit is not None and not math.isinf(end.limit):
                vals.append(end.limit)
        return vals

    @property
    def undetermined(self):
        return self.pos.undetermined or self.neg.undetermined


def _analyze_end(f, side, k_max, samples, tol_lim):
    xs = []
    for k in range(k_max + 1):
        w = np.linspace(2.0**k, 2.0 ** (k + 1), samples)
        xs.append(side * w)
    pts = np.concatenate(xs).reshape(-1, 1)
    vals = f.eval_many(pts).reshape(k_max + 1, samples)

    mins = np.empty(k_max + 1)
    maxs = np.empty(k_max + 1)
    avgs = np.empty(k_max + 1)
    has_nan = False
    pos_inf = neg_inf = False
    for k in range(k_max + 1):
        v = vals[k]
        if np.isnan(v).any():
            has_nan = True
        pos_inf = pos_inf or np.isposinf(v).any()
        neg_inf = neg_inf or np.isneginf(v).any()
        finite = v[np.isfinite(v)]
        if finite.size:
            mins[k], maxs[k], avgs[k] = finite.min(), finite.max(), finite.mean()
        else:
            mins[k] = maxs[k] = avgs[k] = np.nan

    tail = slice(k_max - 2, k_max + 1)
    tail_finite = np.isfinite(mins[tail]).all() and np.isfinite(maxs[tail]).all()

    limit = None
    liminf = limsup = np.nan
    unc = 0.0
    undetermined = False

    if has_nan and not tail_finite:
        undetermined = True
    elif (pos_inf or neg_inf) and not tail_finite:
        if pos_inf and not neg_inf:
            limit, liminf, limsup = math.inf, math.inf, math.inf
        elif neg_inf and not pos_inf:
            limit, liminf, limsup = -math.inf, -math.inf, -math.inf
        else:
            liminf, limsup = -math.inf, math.inf
    else:
        m3, M3 = mins[tail], maxs[tail]
        lo, hi = float(m3.min()), float(M3.max())
        osc = hi - lo
        increasing = m3[0] <= m3[1] <= m3[2]
        decreasing = M3[0] >= M3[1] >= M3[2]
        if increasing and lo > BLOWUP_THRESHOLD:
            limit, liminf, limsup = math.inf, math.inf, math.inf
        elif decreasing and hi < -BLOWUP_THRESHOLD:
            limit, liminf, limsup = -math.inf, -math.inf, -math.inf
        else:
            liminf, limsup = lo, hi
            unc = float(
                max(
                    np.max(np.abs(np.diff(m3))),
                    np.max(np.abs(np.diff(M3))),
                )
            )
            if osc < tol_lim:
                limit = 0.5 * (lo + hi)
                unc = osc
            else:
                unc = max(2.0 * unc, 0.0)
            if pos_inf:
                limsup, limit = math.inf, None
            if neg_inf:
                liminf, limit = -math.inf, None

    return EndData(
        side=side,
        liminf=float(liminf) if not np.isnan(liminf) else math.nan,
        limsup=float(limsup) if not np.isnan(limsup) else math.nan,
        limit=limit,
        window_mins=mins,
        window_maxs=maxs,
        window_avgs=avgs,
        edge_uncertainty=unc,
        undetermined=undetermined,
    )


def end_behavior(f, k_max=20, samples=2048, tol_lim=TOL_LIM):
    """liminf/limsup/limit of f over dyadic windows toward each end.

    A finite limit is declared only when the oscillation over the last three
    windows drops below ``tol_lim``; escape to +-infinity is recognised from
    monotone window minima/maxima beyond a magnitude threshold (such an end
    contributes nothing to the improper value set).
    """
    if f.arity != 1:
        raise ExprError("end_behavior requires a function of one variable")
    return EndBehavior(
        pos=_analyze_end(f, +1, k_max, samples, tol_lim),
        neg=_analyze_end(f, -1, k_max, samples, tol_lim),
    )


# --------------------------------------------------------------------------
# Cluster values of the critical-value sequence (improper values of f|_Sigma)


def _tail_subsequences(values):
    """Last-three subsequences (direct and alternating) ordered outward."""
    out = []
    v = list(values)
    if len(v) >= 3:
        out.append(v[-3:])
    if len(v) >= 5:
        out.append([v[-5], v[-3], v[-1]])
    if len(v) >= 6:
        out.append([v[-6], v[-4], v[-2]])
    return out


def _critical_value_clusters(locus, tol_cluster):
    """Cluster points of the critical-value sequence toward each window edge.

    A tail clusters when its last three values agree within ``tol_cluster``
    and the successive gaps shrink (or vanish outright); the mean of the tail
    serves as the cluster representative.
    """
    clusters = []
    locs = locus.locations
    vals = locus.values
    for side in (+1, -1):
        mask = locs * side > 0
        if mask.sum() < 3:
            continue
        order = np.argsort(locs[mask] * side)
        outward = vals[mask][order]
        for sub in _tail_subsequences(outward):
            a, b, c = sub
            osc = max(sub) - min(sub)
            d_last, d_prev = abs(c - b), abs(b - a)
            if osc == 0.0 or (osc < tol_cluster and d_last < d_prev):
                clusters.append(float(np.mean(sub)))
    merged = []
    for c in sorted(clusters):
        if merged and abs(c - merged[-1]) <= tol_cluster:
            continue
        merged.append(c)
    return merged


# --------------------------------------------------------------------------
# Set-intersection decisions with margins


def _distance_to_component(value, comp):
    """(distance, sampling uncertainty, reference magnitude) to one component."""
    kind = comp[0]
    if kind == "point":
        return abs(value - comp[1]), comp[2], abs(comp[1])
    _, lo, hi, unc = comp
    if lo <= value <= hi:
        return 0.0, unc, abs(value)
    if value < lo:
        return lo - value, unc, abs(lo)
    return value - hi, unc, abs(hi)


def _decide_empty(values, comps, tol_sep, *, fuzzy_bands=True):
    """Decide whether {values} meets the component set; returns (flag, margin).

    Nonempty requires a genuine hit (relative collision or interior point);
    distances inside a component's sampling uncertainty are inconclusive.
    """
    if not values or not comps:
        return True, math.inf
    margin = math.inf
    hit = False
    fuzzy = False
    for v in values:
        for comp in comps:
            d, unc, ref = _distance_to_component(v, comp)
            margin = min(margin, d)
            # relative to the pair's own magnitude: exponentially small
            # values that are genuinely distinct must not read as collisions
            scale = max(abs(v), ref)
            if d <= COLLISION_REL * scale:
                hit = True
            elif fuzzy_bands and d <= unc:
                fuzzy = True
    if hit:
        return False, margin
    if fuzzy:
        return None, margin
    if margin > tol_sep:
        return True, margin
    return None, margin


# --------------------------------------------------------------------------
# Classification


@dataclass
class StabilityReport:
    """Window-limited stability classification with margins.

    Flags are three-valued: True/False when the sampled data separates the
    relevant sets decisively, None when it cannot.  ``margins`` records the
    minimum separation backing each emptiness claim.
    """

    window: float
    is_morse: bool | None
    locally_stable: bool | None
    infinitesimally_stable: bool | None
    quasi_proper: bool | None
    dimca_stable: bool | None
    strongly_stable: bool | None
    z_f: list
    z_f_sigma: list
    l_f: list
    delta: list
    margins: dict
    locus: CriticalLocus1D
    ends: EndBehavior
    notes: list = field(default_factory=list)


def _morse_flags(locus):
    """(is_morse, value-separation margin, min |f''|) for the located points."""
    notes = []
    if locus.degenerate_points():
        return False, 0.0, 0.0, ["degenerate critical point detected"]
    vals = locus.values
    if len(vals) < 2:
        sep = math.inf
    else:
        s = np.sort(vals)
        gaps = np.diff(s)
        sep = float(gaps.min()) if len(gaps) else math.inf
        # collisions are judged relative to the values' own magnitude so that
        # exponentially small but genuinely distinct tail values stay distinct
        scale = np.maximum(np.abs(s[:-1]), np.abs(s[1:]))
        if np.any(gaps <= COLLISION_REL * scale):
            notes.append("repeated critical values: restriction to the critical set is not injective")
            return False, sep, _min_hessian(locus), notes
    morse = True if locus.complete_in_window else None
    if not locus.complete_in_window:
        notes.append("locus possibly incomplete: Morse flag inconclusive")
    return morse, sep, _min_hessian(locus), notes


def _min_hessian(locus):
    eigs = [
        float(np.min(np.abs(p.hessian_eigenvalues)))
        for p in locus.points
        if p.hessian_eigenvalues is not None
    ]
    return min(eigs) if eigs else math.inf


def classify(
    f,
    window,
    density=DEFAULT_DENSITY,
    *,
    tol_sep=0.0,
    tol_cluster=TOL_CLUSTER,
    k_max=20,
    end_samples=2048,
):
    """Classify a function of one real variable by the stability hierarchy.

    ``tol_sep`` is the decision threshold for set-intersection margins
    (strictly positive margins decide emptiness by default; raising it turns
    thin margins into inconclusive flags).  ``tol_cluster`` groups cluster
    values of the critical-value sequence.
    """
    if f.arity != 1:
        raise ExprError("classify requires a function of one variable")
    locus = critical_locus(f, window, density)
    ends = end_behavior(f, k_max=k_max, samples=end_samples)

    is_morse, value_sep, min_hess, notes = _morse_flags(locus)
    delta = [float(v) for v in locus.values]

    z_comps = ends.z_components()
    l_vals = ends.l_values()
    sigma_clusters = _critical_value_clusters(locus, tol_cluster)

    if ends.undetermined:
        quasi_flag, quasi_margin = None, math.nan
        notes.append("end behavior undetermined")
    else:
        quasi_flag, quasi_margin = _decide_empty(delta, z_comps, tol_sep)

    sigma_comps = [("point", c, 0.0) for c in sigma_clusters] + [
        ("point", l, 0.0) for l in l_vals
    ]
    dimca_flag, dimca_margin = _decide_empty(delta, sigma_comps, tol_sep, fuzzy_bands=False)

    sigma_empty = True if not sigma_clusters else False
    if not locus.complete_in_window and not sigma_clusters:
        sigma_empty = None

    report = StabilityReport(
        window=float(window),
        is_morse=is_morse,
        locally_stable=is_morse,
        infinitesimally_stable=tri_and(is_morse, sigma_empty),
        quasi_proper=quasi_flag,
        dimca_stable=tri_and(is_morse, dimca_flag),
        strongly_stable=tri_and(is_morse, quasi_flag),
        z_f=z_comps,
        z_f_sigma=sigma_clusters,
        l_f=l_vals,
        delta=delta,
        margins={
            "value_separation": value_sep,
            "min_abs_hessian_eigenvalue": min_hess,
            "quasi_proper": quasi_margin,
            "dimca": dimca_margin,
        },
        locus=locus,
        ends=ends,
        notes=notes,
    )
    return report
