"""Certified critical points.

For perturbations g of a diagonal quadratic sum of +-x_i^2 + c the map
F(x) = x - (df)^{-1} dg(x) is a contraction on the ball B(r) whenever the
sampled C^2 distance from the model stays under r/n; iterating it from the
origin locates the unique critical point of g in B(r), with the step norms
dominated by (r/2)^k.  A derivative-threshold grid scan provides an
independent uniqueness check at its sampling resolution, and first-order
perturbation bounds relate the critical points and values of two admissible
perturbations.  A plain damped Newton refiner covers general functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, Pow, Var, Neg, Const, ExprError, run_checked
from .jets import CompactBox, ck_norm_over, perturbation_gate

__all__ = [
    "ModelQuadratic",
    "CriticalPoint",
    "UniquenessCertificate",
    "PerturbationBounds",
    "HypothesisError",
    "NonContractionError",
    "DegenerateHessianError",
    "ConvergenceError",
    "contraction_solve",
    "certify_unique",
    "perturbation_bounds",
    "newton_refine",
]

TOL_GRAD = 1e-10
TOL_NONDEG = 1e-8
MAX_NEWTON_ITER = 100
CONTRACTION_STEP_TOL = 1e-14
MAX_CONTRACTION_ITER = 200
GATE_SAFETY = 0.9  # grid max is a lower bound of the sup; shrink the bound
# per-axis gate grid sizes / uniqueness scan divisions, sized by dimension
# (the scan's threshold and exemption radius scale with its step, so coarser
# high-dimensional grids weaken only the certificate's resolution, not its
# soundness)
GATE_SAMPLES = {1: 201, 2: 61, 3: 25, 4: 13}
SCAN_DIVISIONS = {1: 200, 2: 200, 3: 40, 4: 14}


class HypothesisError(RuntimeError):
    """The admissibility gate ||g - f||_{2,B(r)} < bound failed."""


class NonContractionError(RuntimeError):
    """An iteration step violated the (r/2)^k envelope."""


class DegenerateHessianError(RuntimeError):
    """The Hessian at the located point is numerically singular."""


class ConvergenceError(RuntimeError):
    """The iteration failed to converge within its budget."""


@dataclass(frozen=True)
class ModelQuadratic:
    """f(w) = sum_i (-1)^{signs_i} w_i^2 + offset; critical point 0, value offset."""

    signs: tuple
    offset: float = 0.0

    def __post_init__(self):
        if not self.signs or any(s not in (0, 1) for s in self.signs):
            raise ValueError("signs must be a nonempty tuple of 0/1")

    @property
    def n(self):
        return len(self.signs)

    def sign_factors(self):
        return np.array([1.0 if s == 0 else -1.0 for s in self.signs])

    def to_expr(self):
        node = None
        for i, s in enumerate(self.signs):
            term = Pow(Var(i), 2)
            if s == 1:
                term = Neg(term)
            node = term if node is None else _raw_add(node, term)
        if self.offset != 0.0:
            node = _raw_add(node, Const(float(self.offset)))
        return Expr(node, self.n)

    @property
    def morse_index(self):
        return int(sum(self.signs))


def _raw_add(a, b):
    from .expr import Add

    return Add(a, b)


@dataclass
class CriticalPoint:
    """A located critical point with Morse data and optional certificate."""

    location: np.ndarray
    value: float
    morse_index: int
    grad_residual: float
    cert_radius: float | None = None
    iterates: list = field(default_factory=list)
    hessian_eigenvalues: np.ndarray | None = None
    degenerate: bool = False


def _safe_l2(v):
    """Euclidean norm without the squaring underflow of np.linalg.norm."""
    m = float(np.max(np.abs(v))) if np.size(v) else 0.0
    if m == 0.0 or not np.isfinite(m):
        return m
    w = np.asarray(v, dtype=float) / m
    return m * float(np.sqrt(np.sum(w * w)))


def _jet2_at(g, x):
    """(value, gradient, hessian) from the symbolic order-2 jet program."""
    info = g.jet_program(2)
    vals = run_checked(info.program, np.asarray(x, dtype=float).reshape(1, -1))[:, 0]
    n = g.arity
    grad = vals[info.slices[1]]
    hess = np.empty((n, n))
    for (i, j), v in zip(info.tuples[2], vals[info.slices[2]]):
        hess[i - 1, j - 1] = v
        hess[j - 1, i - 1] = v
    return float(vals[0]), grad.copy(), hess


def contraction_solve(g, model, r, *, gate_samples=None, max_iter=MAX_CONTRACTION_ITER):
    """Locate the unique critical point of g in B(r) by contraction iteration.

    Requires 0 < r < 1 and the sampled gate ||g - f||_{2,B(r)} < 0.9 r/n.
    Each recorded step norm must stay strictly below (r/2)^k; a violation
    signals an inconsistent input or an underestimated norm and aborts.
    """
    n = model.n
    if g.arity != n:
        raise ExprError("expression arity does not match the model dimension")
    if not 0 < r < 1:
        raise ValueError("need 0 < r < 1")
    samples = gate_samples or GATE_SAMPLES.get(n, 9)
    box = CompactBox.ball(r, n, samples_per_axis=samples)
    gate = perturbation_gate(model.to_expr(), g, box, 2, GATE_SAFETY * r / n)
    if not gate.passed:
        raise HypothesisError(
            "hypothesis not met: ||g-f||_{2,B(r)} = "
            f"{gate.norm.total:.6g} >= {gate.bound:.6g}"
        )

    inv_diag = 0.5 * model.sign_factors()  # (df)^{-1} is diagonal +-1/2
    grad_info = g.jet_program(1)
    grad_slice = grad_info.slices[1]

    def grad_at(x):
        return run_checked(grad_info.program, x.reshape(1, -1))[grad_slice, 0]

    x = np.zeros(n)
    steps = []
    converged = False
    for k in range(1, max_iter + 1):
        x_new = x - inv_diag * grad_at(x)
        step = float(np.linalg.norm(x_new - x))
        if not step < (r / 2.0) ** k:
            raise NonContractionError(
                f"step {k} norm {step:.3e} violates (r/2)^k = {(r / 2.0) ** k:.3e}"
            )
        steps.append(step)
        x = x_new
        if step < CONTRACTION_STEP_TOL:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"no convergence within {max_iter} iterations")

    value, grad, hess = _jet2_at(g, x)
    eigs = np.linalg.eigvalsh(hess)
    if np.min(np.abs(eigs)) < TOL_NONDEG:
        raise DegenerateHessianError("Hessian singular at the located point")
    return CriticalPoint(
        location=x,
        value=value,
        morse_index=int(np.sum(eigs < 0)),
        grad_residual=float(np.linalg.norm(grad)),
        cert_radius=float(r),
        iterates=steps,
        hessian_eigenvalues=eigs,
    )


@dataclass
class UniquenessCertificate:
    """Grid-scan uniqueness record for the contraction-located point.

    The scan flags sample points where ||dg|| drops below a descent threshold
    calibrated so that any critical point within half a grid step of a sample
    would be flagged; flagged points farther than ``exempt_radius`` from the
    located point defeat the certificate.  Resolution is limited by the step.
    """

    unique: bool
    point: CriticalPoint
    scan_step: float
    threshold: float
    exempt_radius: float
    n_scanned: int
    suspicious: np.ndarray


def certify_unique(g, model, r, *, scan_divisions=None, gate_samples=None):
    """Contraction solve plus an exhaustive derivative-threshold grid scan."""
    cp = contraction_solve(g, model, r, gate_samples=gate_samples)
    n = model.n
    divisions = scan_divisions or SCAN_DIVISIONS.get(n, 16)
    step = r / divisions
    axis = np.arange(-divisions, divisions + 1) * step
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    pts = np.ascontiguousarray(pts[np.linalg.norm(pts, axis=1) <= r])

    info = g.jet_program(1)
    vals = run_checked(info.program, pts)
    grad_norm = np.sqrt(np.sum(vals[info.slices[1]] ** 2, axis=0))

    h_diag = step * np.sqrt(n)
    # Hessian of a gated g: diagonal entries exceed 2 - r/n, off-diagonal stay
    # under r/n, so ||dg|| grows at least like (2-r)|x - x*|/sqrt(n) away from
    # the critical point while any true zero keeps ||dg|| under (2+r)/2 * h
    # at the nearest sample.
    threshold = 0.5 * (2.0 + r) * h_diag
    exempt_radius = 4.0 * h_diag
    dist = np.linalg.norm(pts - cp.location, axis=1)
    mask = (grad_norm < threshold) & (dist > exempt_radius)
    suspicious = pts[mask]
    return UniquenessCertificate(
        unique=bool(suspicious.shape[0] == 0),
        point=cp,
        scan_step=float(step),
        threshold=float(threshold),
        exempt_radius=float(exempt_radius),
        n_scanned=int(pts.shape[0]),
        suspicious=suspicious,
    )


@dataclass
class PerturbationBounds:
    """First-order bounds between critical data of two admissible perturbations."""

    location_distance: float
    location_bound: float
    value_distance: float
    value_bound: float
    both_hold: bool
    point_g: CriticalPoint
    point_h: CriticalPoint


def perturbation_bounds(g, h, model, r, U=None, *, gate_samples=None):
    """Check |x_g - x_h| < sqrt(n) ||g-h||_{1,U} and the matching value bound.

    Both g and h must pass the B(r) admissibility gate; U is a convex sample
    region inside B(r) containing both critical points (default: the centered
    ball of radius 0.9 r).
    """
    n = model.n
    samples = gate_samples or GATE_SAMPLES.get(n, 9)
    cp_g = contraction_solve(g, model, r, gate_samples=gate_samples)
    cp_h = contraction_solve(h, model, r, gate_samples=gate_samples)
    if U is None:
        U = CompactBox.ball(0.9 * r, n, samples_per_axis=samples)
    for cp in (cp_g, cp_h):
        inside = (
            np.all(cp.location >= U.lower)
            and np.all(cp.location <= U.upper)
            and (
                U.ball_radius is None
                or np.linalg.norm(cp.location - U.ball_center) <= U.ball_radius
            )
        )
        if not inside:
            raise ValueError(f"critical point {cp.location} lies outside U")

    diff_norm = ck_norm_over(g - h, U, 1).total
    g_norm = ck_norm_over(g, U, 1).total
    dx = float(np.linalg.norm(cp_g.location - cp_h.location))
    dy = float(abs(cp_g.value - cp_h.value))
    bound_x = float(np.sqrt(n) * diff_norm)
    bound_y = float((np.sqrt(n) * g_norm + 1.0) * diff_norm)
    # strict inequalities, except that g = h degenerates both sides to zero
    x_holds = dx < bound_x or (dx == 0.0 and bound_x == 0.0)
    y_holds = dy < bound_y or (dy == 0.0 and bound_y == 0.0)
    return PerturbationBounds(
        location_distance=dx,
        location_bound=bound_x,
        value_distance=dy,
        value_bound=bound_y,
        both_hold=bool(x_holds and y_holds),
        point_g=cp_g,
        point_h=cp_h,
    )


def _refine(g, x0, *, tol_grad=TOL_GRAD, max_iter=MAX_NEWTON_ITER):
    """Newton iteration on dg; returns (point, degenerate_reason or None).

    Degeneracy is judged by scale-free signals so exponentially small but
    healthy Hessians (Gaussian tails) are not misflagged: an exactly zero or
    spectrally unbalanced Hessian (min |eig| <= tol * max |eig|), or sustained
    linear-rate convergence of the Newton steps.
    """
    n = g.arity
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x.shape != (n,):
        raise ExprError(f"start point has dimension {x.shape}, expected ({n},)")
    step_norms = []
    converged = False
    for _ in range(max_iter):
        value, grad, hess = _jet2_at(g, x)
        res = _safe_l2(grad)
        # the residual alone is not enough: exponentially small gradients
        # (Gaussian tails) satisfy any absolute threshold far from the root,
        # so also require the last Newton step to pin the location
        location_ok = step_norms and step_norms[-1] < 1e-9 * (1 + np.linalg.norm(x))
        if res == 0.0 or (res < tol_grad and location_ok):
            converged = True
            break
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise DegenerateHessianError(f"singular Hessian at {x}") from None
        x = x - delta
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e12:
            raise ConvergenceError(f"iteration diverged from {x0}")
        step_norms.append(float(np.linalg.norm(delta)))
    if not converged:
        raise ConvergenceError(f"no convergence from {x0} within {max_iter} iterations")

    value, grad, hess = _jet2_at(g, x)
    eigs = np.linalg.eigvalsh(hess)
    amin, amax = np.min(np.abs(eigs)), np.max(np.abs(eigs))
    reason = None
    if amin == 0.0:
        reason = "zero Hessian eigenvalue"
    elif amin <= TOL_NONDEG * amax:
        reason = f"eigenvalue ratio {amin / amax:.2e} below {TOL_NONDEG}"
    elif len(step_norms) >= 3:
        tail = step_norms[-3:]
        ratios = [b / a for a, b in zip(tail, tail[1:]) if a > 0]
        if ratios and min(ratios) > 0.25:
            reason = f"linear-rate convergence (step ratios {ratios})"
    point = CriticalPoint(
        location=x,
        value=value,
        morse_index=int(np.sum(eigs < 0)),
        grad_residual=_safe_l2(grad),
        iterates=step_norms,
        hessian_eigenvalues=eigs,
        degenerate=reason is not None,
    )
    return point, reason


def newton_refine(g, x0, *, tol_grad=TOL_GRAD, max_iter=MAX_NEWTON_ITER):
    """Refine a critical point of a general smooth function by Newton.

    Raises DegenerateHessianError when the converged point fails the
    nondegeneracy certificate and ConvergenceError on divergence.
    """
    point, reason = _refine(g, x0, tol_grad=tol_grad, max_iter=max_iter)
    if reason is not None:
        raise DegenerateHessianError(f"degenerate critical point at {point.location}: {reason}")
    return point
