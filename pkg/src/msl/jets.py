"""Whitney-style C^k norms over points and sampled compact sets.

For a function h: R^n -> R the order-k derivative acts on k-fold tensor
products; with a one-dimensional target its operator norm equals the
Euclidean norm of the full n^k coefficient tensor (for k=2 this is the
Frobenius norm of the Hessian, i.e. sqrt of the sum of squared eigenvalues
with multiplicity).  The C^k norm at a point is |h(x)| plus the sum of those
tensor norms for orders 1..k; over a compact set it is the sup, which we
approximate by a grid maximum and report as a certified lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, ExprError, run_checked

__all__ = [
    "CompactBox",
    "CkNorm",
    "GateResult",
    "dk_norm",
    "ck_norm_at",
    "ck_norm_over",
    "perturbation_gate",
    "tensor_part_norms",
]

DEFAULT_SAMPLES_PER_AXIS = 101


@dataclass
class CompactBox:
    """Axis-aligned sample box, optionally masked to a centered ball.

    The induced grid is the uniform product grid with ``samples_per_axis``
    points per axis (odd counts include the center).  A ball B(r) is the box
    [-r, r]^n with the mask |x| <= r.
    """

    lower: np.ndarray
    upper: np.ndarray
    samples_per_axis: int = DEFAULT_SAMPLES_PER_AXIS
    ball_radius: float | None = None
    ball_center: np.ndarray | None = None
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper dimension mismatch")
        if not np.all(self.lower < self.upper):
            raise ValueError("need lower < upper componentwise")
        if self.samples_per_axis < 2:
            raise ValueError("need at least 2 samples per axis")
        if self.ball_center is not None:
            self.ball_center = np.asarray(self.ball_center, dtype=float)

    @classmethod
    def ball(cls, radius, n, samples_per_axis=DEFAULT_SAMPLES_PER_AXIS, center=None):
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(
            lower=center - radius,
            upper=center + radius,
            samples_per_axis=samples_per_axis,
            ball_radius=float(radius),
            ball_center=center,
        )

    @property
    def dim(self):
        return len(self.lower)

    def grid(self):
        """All sample points as an (m, n) array (ball mask applied)."""
        if self._grid is None:
            axes = [
                np.linspace(self.lower[i], self.upper[i], self.samples_per_axis)
                for i in range(self.dim)
            ]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=1)
            if self.ball_radius is not None:
                keep = (
                    np.linalg.norm(pts - self.ball_center, axis=1)
                    <= self.ball_radius * (1 + 1e-12)
                )
                pts = pts[keep]
            self._grid = np.ascontiguousarray(pts)
        return self._grid

    def refined(self, factor=2):
        return CompactBox(
            lower=self.lower.copy(),
            upper=self.upper.copy(),
            samples_per_axis=(self.samples_per_axis - 1) * factor + 1,
            ball_radius=self.ball_radius,
            ball_center=None if self.ball_center is None else self.ball_center.copy(),
        )


@dataclass(frozen=True)
class CkNorm:
    """C^k norm data: per-order tensor norms and their sum.

    ``parts[j]`` is the order-j tensor norm (parts[0] = |h(x)|); ``total`` is
    the sum.  For a sampled set the norm is the grid maximum, flagged
    ``grid_lower_bound`` because it certifies only a lower bound of the sup;
    ``at`` records the maximizing sample.
    """

    k: int
    total: float
    parts: tuple
    over_set: bool = False
    grid_lower_bound: bool = False
    at: np.ndarray | None = None


def tensor_part_norms(e, points, k):
    """Per-order tensor norms for orders 0..k over a point batch.

    Returns an array of shape (k+1, m); row 0 is |e(x)|.
    """
    info = e.jet_program(k)
    vals = run_checked(info.program, points)
    m = points.shape[0]
    parts = np.empty((k + 1, m))
    parts[0] = np.abs(vals[0])
    for j in range(1, k + 1):
        block = vals[info.slices[j]]
        parts[j] = np.sqrt(info.weights[j] @ (block * block))
    return parts


def dk_norm(e, x, k):
    """Euclidean norm of the order-k derivative tensor at a point."""
    if not 1 <= k <= 4:
        raise ExprError("dk_norm supports 1 <= k <= 4")
    pts = np.asarray(x, dtype=float).reshape(1, -1)
    return float(tensor_part_norms(e, pts, k)[k, 0])


def ck_norm_at(e, x, k):
    """C^k norm |h(x)| + sum_j ||D^j h(x)|| at a single point."""
    if not 0 <= k <= 4:
        raise ExprError("ck_norm_at supports 0 <= k <= 4")
    pts = np.asarray(x, dtype=float).reshape(1, -1)
    parts = tensor_part_norms(e, pts, k)[:, 0]
    return CkNorm(k=k, total=float(parts.sum()), parts=tuple(float(p) for p in parts))


def ck_norm_over(e, box, k, engine=None):
    """Grid maximum of the pointwise C^k norm over a compact box or ball.

    The result is a certified lower bound of the true sup (the grid only
    samples the set); refinement can only increase it.
    """
    if not 0 <= k <= 4:
        raise ExprError("ck_norm_over supports 0 <= k <= 4")
    if box.dim != e.arity:
        raise ExprError("box dimension does not match expression arity")
    pts = box.grid()
    info = e.jet_program(k)
    vals = run_checked(info.program, pts, engine=engine)
    totals = np.abs(vals[0]).copy()
    per_order = [np.abs(vals[0])]
    for j in range(1, k + 1):
        block = vals[info.slices[j]]
        pj = np.sqrt(info.weights[j] @ (block * block))
        per_order.append(pj)
        totals += pj
    best = int(np.argmax(totals))
    return CkNorm(
        k=k,
        total=float(totals[best]),
        parts=tuple(float(p[best]) for p in per_order),
        over_set=True,
        grid_lower_bound=True,
        at=pts[best].copy(),
    )


@dataclass(frozen=True)
class GateResult:
    passed: bool
    margin: float
    bound: float
    norm: CkNorm


def perturbation_gate(f, g, box, k, bound):
    """Check ||g - f||_{k,X} < bound on the sampled set; margin = bound - norm."""
    if f.arity != g.arity:
        raise ExprError("f and g must share arity")
    norm = ck_norm_over(g - f, box, k)
    return GateResult(
        passed=bool(norm.total < bound),
        margin=float(bound - norm.total),
        bound=float(bound),
        norm=norm,
    )
