"""Normalizing diffeomorphisms: target shift, translation flow, end shift."""

import math

import numpy as np
import pytest

from msl import parse
from msl.jets import CompactBox
from msl.normalize import (
    AdmissibilityError,
    ShiftEntry,
    ShiftTooLargeError,
    TargetShift,
    admissible_perturbation,
    build_end_shift_psi1,
    build_flow_psi2,
    build_psi,
    verify_normalization,
)
from msl.oned import critical_locus, end_behavior


class TestAdmissibleBounds:
    def test_critical_box_constants(self):
        # gamma = (nu/4)^(4/nu) with nu = 0.5: (0.125)^8; mu = gamma/(4n)
        box = CompactBox(lower=[-0.5], upper=[0.5], samples_per_axis=21)
        (b,) = admissible_perturbation(parse("x1^2", 1), [(box, 0.5)])
        assert abs(b.gamma - 0.125**8) < 1e-22
        assert abs(b.mu - 0.125**8 / 4) < 1e-22

    def test_regular_box_linear(self):
        box = CompactBox(lower=[1.0], upper=[2.0], samples_per_axis=21)
        (b,) = admissible_perturbation(parse("x1", 1), [(box, None)])
        assert b.mu == 0.5

    def test_regular_box_parabola(self):
        box = CompactBox(lower=[1.0], upper=[2.0], samples_per_axis=21)
        (b,) = admissible_perturbation(parse("x1^2", 1), [(box, None)])
        assert abs(b.mu - 1.0) < 1e-12

    def test_box_touching_critical_point(self):
        box = CompactBox(lower=[-0.5], upper=[0.5], samples_per_axis=21)
        with pytest.raises(AdmissibilityError):
            admissible_perturbation(parse("x1^2", 1), [(box, None)])


class TestTargetShift:
    def _single(self, shift=0.05, nu=1.0):
        entry = ShiftEntry(center=0.0, target=shift, nu=nu,
                           source_point=np.array([0.0]), moved_point=np.array([0.0]))
        ts = TargetShift(entries=[entry])
        ts.min_deriv = float(
            ts.deriv(np.linspace(-nu / 2, nu / 2, 4001)).min()
        )
        return ts

    def test_center_maps_to_target(self):
        ts = self._single()
        assert ts(0.0) == 0.05

    def test_identity_outside_half_support(self):
        ts = self._single()
        ys = np.array([-0.75, -0.5, 0.5, 0.75, 3.0])
        assert np.array_equal(ts(ys), ys)

    def test_zero_shift_is_identity(self):
        ts = self._single(shift=0.0)
        ys = np.linspace(-2, 2, 101)
        assert np.array_equal(ts(ys), ys)

    def test_monotone_and_invertible(self):
        ts = self._single()
        assert ts.min_deriv > 0
        ys = np.linspace(-1.5, 1.5, 501)
        vals = ts(ys)
        assert np.all(np.diff(vals) > 0)
        back = ts.inverse(vals)
        assert np.abs(back - ys).max() < 1e-12

    def test_build_psi_shift_too_large(self):
        f = parse("x1^2", 1)
        g = f + parse("0.2", 1)  # shifts the critical value by 0.2 > nu/8
        loc = critical_locus(f, 2.0)
        with pytest.raises(ShiftTooLargeError):
            build_psi(f, g, loc.points, 0.5)

    def test_build_psi_maps_exactly(self):
        f = parse("x1^2", 1)
        g = f + parse("0.01", 1)
        loc = critical_locus(f, 2.0)
        psi = build_psi(f, g, loc.points, 0.5)
        e = psi.entries[0]
        assert e.center == 0.0 and abs(e.target - 0.01) < 1e-12
        assert psi(e.center) == e.target  # rho(0) = 1


class TestTranslationFlow:
    def test_center_translates_exactly(self):
        flow = build_flow_psi2([(np.array([0.0, 0.0]), np.array([0.003, 0.0]))], 0.05)
        out = flow.map(np.array([[0.0, 0.0]]))
        assert np.array_equal(out[0], [0.003, 0.0])

    def test_identity_flow(self):
        flow = build_flow_psi2([(np.array([1.0]), np.array([1.0]))], 0.05)
        xs = np.linspace(0.8, 1.2, 21).reshape(-1, 1)
        assert np.array_equal(flow.map(xs), xs)

    def test_points_outside_support_fixed(self):
        flow = build_flow_psi2([(np.array([0.0]), np.array([0.001]))], 0.05)
        xs = np.array([[0.11], [0.5], [-3.0]])
        assert np.array_equal(flow.map(xs), xs)

    def test_core_translation_constant(self):
        # inside the constant-field core the displacement is exact
        d = 0.004
        flow = build_flow_psi2([(np.array([0.0]), np.array([d]))], 0.05)
        xs = np.linspace(-0.04, 0.04, 11).reshape(-1, 1)
        moved = flow.map(xs)
        assert np.abs(moved - xs - d).max() < 1e-15

    def test_transition_zone_accuracy(self):
        # RK4 against a tiny-step reference in the smooth transition shell
        d = 0.004
        flow = build_flow_psi2([(np.array([0.0]), np.array([d]))], 0.05)
        x0 = np.array([[0.07]])
        got = flow.map(x0)
        from msl.smooth import radial_window

        x = x0.copy()
        h = 1e-5
        for _ in range(100_000):
            def fld(w):
                return radial_window(np.abs(w - 0.0), 0.05, 0.1) * d
            k1 = fld(x)
            k2 = fld(x + 0.5 * h * k1)
            k3 = fld(x + 0.5 * h * k2)
            k4 = fld(x + h * k3)
            x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        assert abs(got[0, 0] - x[0, 0]) < 1e-9

    def test_displacement_cap(self):
        with pytest.raises(ValueError):
            build_flow_psi2([(np.array([0.0]), np.array([0.03]))], 0.05)

    def test_overlapping_supports_rejected(self):
        with pytest.raises(ValueError):
            build_flow_psi2(
                [
                    (np.array([0.0]), np.array([0.001])),
                    (np.array([0.15]), np.array([0.151])),
                ],
                0.05,
            )

    def test_jacobian_positive(self):
        flow = build_flow_psi2([(np.array([0.0, 0.0]), np.array([0.003, 0.001]))], 0.05)
        pts = np.array([[0.0, 0.0], [0.06, 0.0], [0.0, 0.09], [0.2, 0.2]])
        dets = flow.jacobian_det(pts)
        assert np.all(dets > 0)


class TestEndShift:
    def test_quasi_proper_shortcut_is_identity(self):
        f = parse("x1^2", 1)
        g = f + parse("0.01", 1)
        loc = critical_locus(f, 2.0)
        psi = build_psi(f, g, loc.points, 0.5)
        ends = end_behavior(f)
        psi1 = build_end_shift_psi1(f, psi, 2.0, (2.0, 3.0), ends.z_components())
        assert psi1.identity
        xs = np.linspace(-10, 10, 41)
        assert np.array_equal(psi1(xs), xs)

    def test_forced_branch_machinery_on_sine(self):
        # sin crosses the value band around 0 on monotone branches at k*pi;
        # the far branches must carry x to the point with the shifted value
        f = parse("sin(x1)", 1)
        entry = ShiftEntry(center=0.0, target=0.05, nu=0.5,
                           source_point=np.array([0.0]), moved_point=np.array([0.0]))
        shift = TargetShift(entries=[entry])
        shift.min_deriv = 0.5
        psi1 = build_end_shift_psi1(f, shift, 5.0, (5.0, 11.0), (), force=True)
        assert not psi1.identity
        # identity on the central compact set
        xs = np.linspace(-5, 5, 11)
        assert np.array_equal(psi1(xs), xs)
        # far branch through 4*pi has interpolation weight 1
        x = 4 * math.pi + 0.01
        y = f.eval([x])
        mapped = psi1(x)
        target = shift(y)
        assert abs(f.eval([mapped]) - target) < 1e-10
        # the branch crossing inside the band start keeps weight 0
        x_near = 2 * math.pi - 0.2  # its level-crossing 2*pi is above K=5
        mapped_near = psi1(x_near)
        assert abs(f.eval([mapped_near]) - f.eval([x_near])) <= 0.05

    def test_monotone_on_far_branch(self):
        f = parse("sin(x1)", 1)
        entry = ShiftEntry(center=0.0, target=0.04, nu=0.5,
                           source_point=np.array([0.0]), moved_point=np.array([0.0]))
        shift = TargetShift(entries=[entry])
        shift.min_deriv = 0.5
        psi1 = build_end_shift_psi1(f, shift, 5.0, (5.0, 11.0), (), force=True)
        xs = 4 * math.pi + np.linspace(-0.2, 0.2, 41)
        mapped = psi1(xs)
        assert np.all(np.diff(mapped) > 0)


class TestVerification:
    def _pipeline(self, f, g, window, nu_cap=0.5, core=0.05):
        loc = critical_locus(f, window)
        nus = []
        for p in loc.points:
            gaps = [abs(p.value - q.value) for q in loc.points if q is not p]
            nus.append(min(0.45 * min(gaps), nu_cap) if gaps else nu_cap)
        psi = build_psi(f, g, loc.points, nus)
        locs = np.sort(loc.locations)
        gap = float(np.min(np.diff(locs))) if len(locs) > 1 else math.inf
        flow = build_flow_psi2(
            [(e.source_point, e.moved_point) for e in psi.entries],
            min(core, gap / 5.0),
        )
        ends = end_behavior(f)
        psi1 = build_end_shift_psi1(
            f, psi, window * 0.9, (window * 0.9, window * 0.95), ends.z_components()
        )
        return verify_normalization(f, g, psi, psi1, flow, window=window, density=400)

    def test_identity_perturbation_all_residuals_zero(self):
        f = parse("x1^2", 1)
        check = self._pipeline(f, f + parse("0", 1), 3.0)
        assert check.critical_location_error == 0.0
        assert check.critical_value_error == 0.0
        assert check.c0_residual == 0.0
        assert check.passed

    def test_tiny_linear_perturbation(self):
        f = parse("x1^2", 1)
        g = f + parse("1e-9*x1*exp(-4*x1^2)", 1)
        check = self._pipeline(f, g, 3.0)
        assert check.critical_location_error < 1e-12
        assert check.critical_value_error < 1e-12
        assert check.passed

    def test_gaussian_sine_with_central_perturbation(self):
        f = parse("exp(-x1^2)*sin(x1)", 1)
        g = f + parse("0.0005*exp(-8*x1^2)*(1-x1+x1^2)", 1)
        check = self._pipeline(f, g, 30.0, nu_cap=0.15, core=0.2)
        assert check.critical_location_error < 1e-8
        assert check.critical_value_error < 1e-8
        assert check.c0_residual <= check.c0_bound
        assert check.identity_outside_ok
        assert check.passed
