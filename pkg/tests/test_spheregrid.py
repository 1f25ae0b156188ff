"""Tests for the structured sphere grid: quadrature, stencils, pole closure."""

import numpy as np
import pytest

from exmass.spheregrid import SphereGrid, equator_grading


class TestConstruction:
    def test_rejects_small_or_odd_grids(self):
        with pytest.raises(ValueError):
            SphereGrid(3, 16)
        with pytest.raises(ValueError):
            SphereGrid(16, 3)
        with pytest.raises(ValueError):
            SphereGrid(16, 15)

    def test_shapes_and_ranges(self):
        g = SphereGrid(16, 20)
        assert g.shape == (16, 20)
        assert g.theta.shape == (16, 20)
        assert 0.0 < g.theta1d[0] < g.theta1d[-1] < np.pi
        assert g.phi1d[0] == 0.0 and g.phi1d[-1] < 2.0 * np.pi

    def test_grading_validation(self):
        with pytest.raises(ValueError):
            equator_grading(1.0)
        with pytest.raises(ValueError):
            equator_grading(-0.1)

    def test_graded_theta_monotone(self):
        g = SphereGrid(32, 32, grading=equator_grading(0.8))
        assert np.all(np.diff(g.theta1d) > 0)
        assert 0.0 < g.theta1d[0] < g.theta1d[-1] < np.pi


class TestQuadrature:
    def test_unit_sphere_area(self):
        g = SphereGrid(32, 32)
        area = g.integrate(np.ones(g.shape))
        assert area == pytest.approx(4.0 * np.pi, rel=1e-3)

    def test_unit_sphere_area_graded(self):
        g = SphereGrid(64, 64, grading=equator_grading(0.6))
        area = g.integrate(np.ones(g.shape))
        assert area == pytest.approx(4.0 * np.pi, rel=1e-3)

    def test_quadrature_second_order(self):
        vals = []
        for n in (16, 32, 64):
            g = SphereGrid(n, n)
            vals.append(abs(g.integrate(np.cos(g.theta) ** 2) - 4.0 * np.pi / 3.0))
        assert vals[0] / vals[1] > 3.0
        assert vals[1] / vals[2] > 3.0

    def test_odd_integrand_cancels(self):
        g = SphereGrid(24, 24)
        val = g.integrate(np.cos(g.theta))
        assert abs(val) < 1e-12


class TestStencils:
    def test_d_theta_on_smooth_scalar(self):
        g = SphereGrid(64, 64)
        err = np.max(np.abs(g.d_theta(np.cos(g.theta)) + np.sin(g.theta)))
        assert err < 5e-4

    def test_d_theta_second_order(self):
        errs = []
        for n in (32, 64):
            g = SphereGrid(n, n)
            f = np.sin(g.theta) * np.cos(g.phi)  # smooth across the poles
            exact = np.cos(g.theta) * np.cos(g.phi)
            errs.append(np.max(np.abs(g.d_theta(f) - exact)))
        assert errs[0] / errs[1] > 3.5

    def test_d_phi_exact_order(self):
        g = SphereGrid(32, 32)
        f = np.sin(g.theta) * np.sin(g.phi)
        exact = np.sin(g.theta) * np.cos(g.phi)
        err = np.max(np.abs(g.d_phi(f) - exact))
        assert err < 7e-3
        assert np.max(np.abs(g.d_phi(np.ones(g.shape)))) == 0.0

    def test_second_derivatives(self):
        g = SphereGrid(64, 64)
        f = np.cos(g.theta)
        assert np.max(np.abs(g.d2_theta(f) + np.cos(g.theta))) < 2e-3
        f2 = np.sin(g.theta) * np.sin(g.phi)
        assert np.max(np.abs(g.d2_phi(f2) + f2)) < 2e-3
        exact = np.cos(g.theta) * np.cos(g.phi)
        assert np.max(np.abs(g.d_theta_phi(f2) - exact)) < 3e-3

    def test_constants_annihilated(self):
        g = SphereGrid(16, 16, grading=equator_grading(0.4))
        c = np.full(g.shape, 2.75)
        assert np.max(np.abs(g.d_theta(c))) < 1e-13
        assert np.max(np.abs(g.d2_theta(c))) < 1e-12

    def test_graded_chain_rule(self):
        g = SphereGrid(64, 64, grading=equator_grading(0.5))
        err = np.max(np.abs(g.d_theta(np.cos(g.theta)) + np.sin(g.theta)))
        assert err < 5e-3


class TestPoleClosure:
    def test_pad_even_scalar(self):
        g = SphereGrid(16, 16)
        f = np.cos(g.theta)  # z-coordinate: smooth even continuation
        padded = g.pad_pole(f, parity=1)
        np.testing.assert_allclose(
            padded[0], np.roll(f[0], g.nlon // 2), atol=1e-15
        )
        assert padded.shape == (g.nlat + 2, g.nlon)

    def test_pad_odd_field(self):
        g = SphereGrid(16, 16)
        f = np.sin(g.theta)  # theta-component style: flips across the pole
        padded = g.pad_pole(f, parity=-1)
        np.testing.assert_allclose(
            padded[0], -np.roll(f[0], g.nlon // 2), atol=1e-15
        )

    def test_smooth_cross_pole_derivative(self):
        # x = sin(theta) cos(phi) is smooth at the pole; the stencil must not
        # see a kink there.
        errs = []
        for n in (32, 64):
            g = SphereGrid(n, n)
            f = np.sin(g.theta) * np.cos(g.phi)
            exact = np.cos(g.theta) * np.cos(g.phi)
            errs.append(np.max(np.abs(g.d_theta(f) - exact)[0]))  # pole row
        assert errs[0] / errs[1] > 3.0


class TestGeometryHelpers:
    def test_unit_directions(self):
        g = SphereGrid(16, 16)
        n = g.unit_directions()
        np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-14)

    def test_great_circle_distance(self):
        g = SphereGrid(32, 32)
        d = g.great_circle_distance(0, 0)
        assert d[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert d.max() <= np.pi + 1e-12
        # antipodal-ish node sits near pi away
        assert d[-1, g.nlon // 2] > np.pi - 0.2
