"""Command-line surface emitting machine-readable JSON reports and CSV tables.

Subcommands: analyze (stability classification), certify (contraction
certificate), normalize (diffeomorphism pipeline), gk (diagonal quadratic
table), trivialize (level-set flow), perturb (linear genericity scan).

Exit codes: 0 every reported flag is determined; 1 usage or expression parse
error; 2 an inconclusive flag or an unmet hypothesis.  Reports are
deterministic given flags and seed; pass --no-timings for byte-identical
reruns (wall-clock times are the only nondeterministic fields).
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .backend import active_engine
from .critical import (
    HypothesisError,
    ModelQuadratic,
    NonContractionError,
    certify_unique,
)
from .endgeom import (
    TangencyDegeneracyError,
    classify_Gk,
    end_trivialize,
    gradient_improper_test,
    linear_perturbation_scan,
    _multi_start_critical_points,
)
from .expr import DomainError, ParseError, parse
from .jets import CompactBox, ck_norm_over
from .normalize import (
    ShiftTooLargeError,
    build_end_shift_psi1,
    build_flow_psi2,
    build_psi,
    verify_normalization,
)
from .oned import classify, critical_locus, end_behavior

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INCONCLUSIVE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _np_to_plain(obj):
    if isinstance(obj, dict):
        return {k: _np_to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_np_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_np_to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)  # 'inf'/'-inf'/'nan': strict-JSON-safe markers
    return obj


class Report:
    """Ordered JSON report with per-section wall-clock times."""

    def __init__(self, command, inputs):
        self.data = {
            "schema": "msl/1",
            "version": __version__,
            "engine": active_engine(),
            "command": command,
            "inputs": _np_to_plain(inputs),
        }
        self.timings = {}

    def section(self, name, payload, elapsed=None):
        self.data[name] = _np_to_plain(payload)
        if elapsed is not None:
            self.timings[name] = round(elapsed, 6)

    def dump(self, path, include_timings=True):
        doc = dict(self.data)
        if include_timings:
            doc["timings"] = self.timings
        text = json.dumps(doc, indent=2, allow_nan=True) + "\n"
        if path in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(path, "w") as fh:
                fh.write(text)


def _flag(value):
    return value if value is None else bool(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\r\n")


# --------------------------------------------------------------------------
# Subcommands


def _cmd_analyze(args):
    f = parse(args.expr, args.dim)
    report = Report(_echo(args), {"expr": args.expr, "dim": args.dim, "window": args.window})
    inconclusive = False
    if args.dim == 1:
        t0 = time.perf_counter()
        rep = classify(
            f,
            args.window,
            density=args.grid,
            tol_sep=args.tol_sep,
            tol_cluster=args.tol_cluster,
        )
        flags = {
            "is_morse": _flag(rep.is_morse),
            "locally_stable": _flag(rep.locally_stable),
            "infinitesimally_stable": _flag(rep.infinitesimally_stable),
            "quasi_proper": _flag(rep.quasi_proper),
            "dimca_stable": _flag(rep.dimca_stable),
            "strongly_stable": _flag(rep.strongly_stable),
        }
        inconclusive = any(v is None for v in flags.values())
        report.section(
            "classification",
            {
                "flags": flags,
                "margins": rep.margins,
                "critical_points": [
                    {
                        "location": p.location,
                        "value": p.value,
                        "morse_index": p.morse_index,
                        "grad_residual": p.grad_residual,
                        "degenerate": p.degenerate,
                    }
                    for p in rep.locus.points
                ],
                "complete_in_window": rep.locus.complete_in_window,
                "delta": rep.delta,
                "z_f": rep.z_f,
                "z_f_sigma": rep.z_f_sigma,
                "l_f": rep.l_f,
                "end_limits": {
                    "pos": rep.ends.pos.limit,
                    "neg": rep.ends.neg.limit,
                },
                "notes": rep.notes,
            },
            time.perf_counter() - t0,
        )
    else:
        t0 = time.perf_counter()
        box = CompactBox(
            lower=[-args.window] * args.dim,
            upper=[args.window] * args.dim,
            samples_per_axis=max(9, min(41, args.norm_samples)),
        )
        norms = {f"c{k}_norm": ck_norm_over(f, box, k).total for k in range(3)}
        points = _multi_start_critical_points(f, args.window)
        profile = gradient_improper_test(f, samples=2000)
        report.section(
            "analysis",
            {
                "norms_over_window": norms,
                "critical_points": [list(map(float, p)) for p in points],
                "gradient_profile": {
                    "radii": profile.radii,
                    "min_grad": profile.min_grad,
                    "epsilon_hat": profile.epsilon_hat,
                    "verdict": profile.verdict,
                },
            },
            time.perf_counter() - t0,
        )
        inconclusive = profile.verdict != "origin_excluded"
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_INCONCLUSIVE if inconclusive else EXIT_OK


def _cmd_certify(args):
    signs = tuple(int(s) for s in args.signs.split(","))
    g = parse(args.expr, len(signs))
    model = ModelQuadratic(signs=signs, offset=args.offset)
    report = Report(
        _echo(args),
        {"expr": args.expr, "signs": list(signs), "offset": args.offset, "radius": args.radius},
    )
    t0 = time.perf_counter()
    try:
        cert = certify_unique(g, model, args.radius)
    except (HypothesisError, NonContractionError) as exc:
        report.section("certificate", {"error": str(exc)}, time.perf_counter() - t0)
        report.dump(args.out, include_timings=not args.no_timings)
        return EXIT_INCONCLUSIVE
    cp = cert.point
    report.section(
        "certificate",
        {
            "unique": cert.unique,
            "location": cp.location,
            "value": cp.value,
            "morse_index": cp.morse_index,
            "grad_residual": cp.grad_residual,
            "cert_radius": cp.cert_radius,
            "step_norms": cp.iterates,
            "scan": {
                "step": cert.scan_step,
                "threshold": cert.threshold,
                "exempt_radius": cert.exempt_radius,
                "points_scanned": cert.n_scanned,
                "suspicious": cert.suspicious,
            },
        },
        time.perf_counter() - t0,
    )
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_OK if cert.unique else EXIT_INCONCLUSIVE


def _cmd_normalize(args):
    f = parse(args.f, 1)
    g = parse(args.g, 1)
    report = Report(_echo(args), {"f": args.f, "g": args.g, "window": args.window})
    t0 = time.perf_counter()
    locus = critical_locus(f, args.window)
    if not locus.points:
        report.section("normalization", {"error": "no critical points in window"})
        report.dump(args.out, include_timings=not args.no_timings)
        return EXIT_INCONCLUSIVE
    values = locus.values
    nus = []
    for p in locus.points:
        gaps = [abs(p.value - q.value) for q in locus.points if q is not p]
        half_gap = 0.45 * min(gaps) if gaps else args.nu
        nus.append(min(half_gap, args.nu))
    try:
        psi = build_psi(f, g, locus.points, nus)
    except ShiftTooLargeError as exc:
        report.section("normalization", {"error": str(exc)})
        report.dump(args.out, include_timings=not args.no_timings)
        return EXIT_INCONCLUSIVE
    locs = np.sort(locus.locations)
    loc_gap = float(np.min(np.diff(locs))) if len(locs) > 1 else 1.0
    core = min(args.core, loc_gap / 5.0)
    psi2 = build_flow_psi2(
        [(e.source_point, e.moved_point) for e in psi.entries], core
    )
    ends = end_behavior(f)
    psi1 = build_end_shift_psi1(
        f,
        psi,
        args.window * 0.9,
        (args.window * 0.9, args.window * 0.95),
        z_components=ends.z_components(),
    )
    check = verify_normalization(f, g, psi, psi1, psi2, window=args.window,
                                 density=args.grid)
    report.section(
        "normalization",
        {
            "entries": [
                {
                    "critical_value": e.center,
                    "shifted_value": e.target,
                    "nu": e.nu,
                    "source_point": e.source_point,
                    "moved_point": e.moved_point,
                }
                for e in psi.entries
            ],
            "psi_min_derivative": psi.min_deriv,
            "end_shift_identity": psi1.identity,
            "residuals": {
                "critical_location_error": check.critical_location_error,
                "critical_value_error": check.critical_value_error,
                "c0_residual": check.c0_residual,
                "c0_bound": check.c0_bound,
                "flow_min_det": check.flow_min_det,
                "identity_outside_ok": check.identity_outside_ok,
            },
            "passed": check.passed,
        },
        time.perf_counter() - t0,
    )
    if args.out_csv:
        ys = np.linspace(values.min() - 1.0, values.max() + 1.0, args.csv_points)
        _write_csv(f"{args.out_csv}_psi.csv", ["y", "psi"], np.stack([ys, psi(ys)], axis=1))
        xs = np.linspace(-args.window, args.window, args.csv_points)
        mapped = psi2.map(xs.reshape(-1, 1))[:, 0]
        _write_csv(f"{args.out_csv}_psi2.csv", ["x", "psi2"], np.stack([xs, mapped], axis=1))
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_OK if check.passed else EXIT_INCONCLUSIVE


def _cmd_gk(args):
    report = Report(_echo(args), {"n": args.n, "k": args.k})
    t0 = time.perf_counter()
    c = classify_Gk(args.n, args.k, samples=args.samples)
    report.section(
        "gk",
        {
            "proper": c.proper,
            "quasi_proper": c.quasi_proper,
            "strongly_stable": c.strongly_stable,
            "stable": c.stable,
            "morse_index": c.morse_index,
            "sphere_min_ratio": c.sphere_min_ratio,
            "cone_escape_value": c.cone_escape_value,
            "gradient_profile": {
                "radii": c.gradient.radii,
                "min_grad": c.gradient.min_grad,
                "epsilon_hat": c.gradient.epsilon_hat,
                "r_star": c.gradient.r_star,
                "verdict": c.gradient.verdict,
            },
        },
        time.perf_counter() - t0,
    )
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_OK


def _cmd_trivialize(args):
    f = parse(args.expr, args.dim)
    report = Report(
        _echo(args),
        {"expr": args.expr, "q": args.q, "R": args.R, "t_range": [args.t_min, args.t_max]},
    )
    rng = np.random.default_rng(args.seed)
    # deterministic start points on the level set f = q outside B(R): on a
    # sphere of radius s > R find directions where f straddles q and bisect
    # along the connecting great-circle arc
    starts = []
    attempts = 0
    while len(starts) < args.points and attempts < 100 * args.points:
        attempts += 1
        s = args.R * (1.2 + 2.0 * rng.random())
        u = rng.normal(size=args.dim)
        v = rng.normal(size=args.dim)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        fu = f.eval(s * u) - args.q
        fv = f.eval(s * v) - args.q
        if (fu < 0) == (fv < 0):
            continue
        for _ in range(100):
            w = u + v
            nw = np.linalg.norm(w)
            if nw < 1e-12:
                break
            w /= nw
            fw = f.eval(s * w) - args.q
            if (fu < 0) != (fw < 0):
                v, fv = w, fw
            else:
                u, fu = w, fw
        starts.append(s * u)
    if not starts:
        report.section("trivialization", {"error": "no level-set start points found"})
        report.dump(args.out, include_timings=not args.no_timings)
        return EXIT_INCONCLUSIVE
    t0 = time.perf_counter()
    try:
        orbits = end_trivialize(
            f, args.q, args.R, np.array(starts), (args.t_min, args.t_max), step=args.step
        )
    except TangencyDegeneracyError as exc:
        report.section("trivialization", {"error": str(exc), "witness": exc.point})
        report.dump(args.out, include_timings=not args.no_timings)
        return EXIT_INCONCLUSIVE
    vmax = max(float(o.value_residuals.max()) for o in orbits)
    dmax = max(float(o.radius_drifts.max()) for o in orbits)
    report.section(
        "trivialization",
        {
            "orbits": len(orbits),
            "time_samples": len(orbits[0].times),
            "max_value_residual": vmax,
            "max_radius_drift": dmax,
            "passed": bool(vmax < 1e-6 and dmax < 1e-6),
        },
        time.perf_counter() - t0,
    )
    if args.out_csv:
        rows = []
        for i, o in enumerate(orbits):
            for j, t in enumerate(o.times):
                rows.append(
                    [i, t, *o.points[j], o.value_residuals[j], o.radius_drifts[j]]
                )
        coords = [f"x{i + 1}" for i in range(args.dim)]
        _write_csv(
            args.out_csv, ["orbit", "t", *coords, "value_residual", "radius_drift"], rows
        )
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_OK if vmax < 1e-6 and dmax < 1e-6 else EXIT_INCONCLUSIVE


def _cmd_perturb(args):
    f = parse(args.expr, args.dim)
    report = Report(
        _echo(args),
        {"expr": args.expr, "dim": args.dim, "trials": args.trials, "seed": args.seed,
         "window": args.window},
    )
    t0 = time.perf_counter()
    stats = linear_perturbation_scan(f, args.trials, args.window, seed=args.seed)
    report.section(
        "scan",
        {
            "trials": stats.trials,
            "passes": stats.passes,
            "pass_fraction": stats.pass_fraction,
            "failing": stats.failing,
            "records": stats.records,
        },
        time.perf_counter() - t0,
    )
    report.dump(args.out, include_timings=not args.no_timings)
    return EXIT_OK


def _echo(args):
    return [sys.argv[0].rsplit("/", 1)[-1], args.command] + args.raw


def build_parser():
    parser = _Parser(prog="msl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="-", help="report path (default stdout)")
        p.add_argument("--no-timings", action="store_true",
                       help="omit wall-clock times for byte-identical reruns")

    p = sub.add_parser("analyze", help="stability classification of an expression")
    p.add_argument("--expr", required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--window", type=float, default=20.0)
    p.add_argument("--grid", type=float, default=10_000.0,
                   help="locus scan density (points per unit)")
    p.add_argument("--tol-sep", type=float, default=0.0,
                   help="margin below which emptiness flags become inconclusive")
    p.add_argument("--tol-cluster", type=float, default=1e-6)
    p.add_argument("--norm-samples", type=int, default=21)
    common(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("certify", help="contraction certificate for a near-quadratic")
    p.add_argument("--expr", required=True)
    p.add_argument("--signs", required=True, help="comma-separated 0/1 per axis")
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--radius", type=float, required=True)
    common(p)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("normalize", help="normalizing diffeomorphism pipeline")
    p.add_argument("--f", required=True)
    p.add_argument("--g", required=True)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--nu", type=float, default=0.5, help="cap on the value-band radii")
    p.add_argument("--core", type=float, default=0.1, help="cap on the flow core radius")
    p.add_argument("--grid", type=int, default=1000, help="verification density per unit")
    p.add_argument("--out-csv", default=None, help="prefix for psi/psi2 CSV tables")
    p.add_argument("--csv-points", type=int, default=501)
    common(p)
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("gk", help="classify the diagonal quadratic with k plus-signs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, default=4000)
    common(p)
    p.set_defaults(func=_cmd_gk)

    p = sub.add_parser("trivialize", help="level-set trivialization flow")
    p.add_argument("--expr", required=True)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--t-min", type=float, required=True)
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", default=None,
                   help="CSV: orbit index, t, coordinates, residual, drift")
    common(p)
    p.set_defaults(func=_cmd_trivialize)

    p = sub.add_parser("perturb", help="linear perturbation genericity scan")
    p.add_argument("--expr", required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=float, default=10.0)
    common(p)
    p.set_defaults(func=_cmd_perturb)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw = argv[1:]
    try:
        return args.func(args)
    except ParseError as exc:
        sys.stderr.write(f"parse error: {exc}\n")
        return EXIT_USAGE
    except DomainError as exc:
        sys.stderr.write(f"domain error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
