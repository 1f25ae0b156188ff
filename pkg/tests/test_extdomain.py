"""Tests for the exterior-domain charts, collars and conformal metrics."""

import numpy as np
import pytest

import exmass.extdomain as xd
import exmass.immersion as im
import exmass.spheregrid as sg


def make_grid(n_r=24, nlat=12, r_inner=1.0, r_outer=10.0):
    return xd.RadialGrid(sg.SphereGrid(nlat, 2 * nlat), r_inner, r_outer, n_r)


class TestRadialGrid:
    def test_node_placement(self):
        grid = make_grid(16, 8, 2.0, 32.0)
        assert abs(grid.r[0] - 2.0) < 1e-14
        assert abs(grid.r[-1] - 32.0) < 1e-13
        # log-uniform: constant ratio between consecutive nodes
        ratios = grid.r[1:] / grid.r[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_validation(self):
        sphere = sg.SphereGrid(8, 16)
        with pytest.raises(ValueError, match="r_outer > r_inner"):
            xd.RadialGrid(sphere, 5.0, 1.0, 16)
        with pytest.raises(ValueError, match="n_r >= 4"):
            xd.RadialGrid(sphere, 1.0, 10.0, 2)
        graded = sg.SphereGrid(8, 16, grading=sg.equator_grading(0.3))
        with pytest.raises(ValueError, match="ungraded"):
            xd.RadialGrid(graded, 1.0, 10.0, 16)

    def test_cell_volumes_sum(self):
        # radial thirds are exact; the angular midpoint rule carries an
        # O(nlat^-2) defect in the total solid angle
        rels = []
        for nlat in (10, 20):
            grid = make_grid(20, nlat, 1.0, 7.0)
            total = float(np.sum(grid.cell_volumes()))
            exact = 4.0 * np.pi / 3.0 * (7.0**3 - 1.0)
            rels.append(abs(total - exact) / exact)
        assert rels[0] < 5e-3
        assert rels[0] / rels[1] > 3.8

    def test_shell_integral_of_one(self):
        grid = make_grid(16, 24)
        i = grid.shell_index(5.0)
        val = grid.shell_integral(np.ones(grid.shape), i)
        exact = 4.0 * np.pi * grid.r[i] ** 2
        assert abs(val - exact) / exact < 1.5e-3

    def test_shell_index_nearest(self):
        grid = make_grid(16, 8, 1.0, 16.0)
        assert grid.shell_index(1.0) == 0
        assert grid.shell_index(16.0) == grid.n_r
        i = grid.shell_index(4.0)
        assert abs(grid.r[i] - 4.0) == np.min(np.abs(grid.r - 4.0))

    def test_d_xi_second_order_at_end_rows(self):
        # the end stencil shares the central leading truncation term, so
        # composed second derivatives stay second order up to the ends
        errs = []
        for n_r in (24, 48):
            grid = make_grid(n_r, 6)
            fld = grid.rad**2 * np.ones(grid.shape)  # e^(2 xi) in log radius
            d = grid.d_xi(fld)
            err = np.abs(d - 2.0 * grid.rad**2) / grid.rad**2
            errs.append(max(np.max(err[0]), np.max(err[-1])))
        assert errs[0] / errs[1] > 3.5

    def test_flat_laplacian_kills_harmonic(self):
        sups = []
        for n_r, nlat in [(24, 12), (48, 24)]:
            grid = make_grid(n_r, nlat)
            fld = (1.0 / grid.rad) * np.ones(grid.shape)
            sups.append(np.max(np.abs(grid.laplacian_flat(fld))))
        assert sups[0] < 2e-2
        assert sups[0] / sups[1] > 3.5

    def test_field_shape_check(self):
        grid = make_grid(8, 6)
        with pytest.raises(ValueError, match="field shape"):
            grid.d_r(np.zeros((3, 3)))


class TestConformalAFMetric:
    def test_validation(self):
        grid = make_grid(8, 6)
        with pytest.raises(ValueError, match="not positive"):
            xd.ConformalAFMetric(grid, -np.ones(grid.shape))
        with pytest.raises(ValueError, match="unknown base"):
            xd.ConformalAFMetric(grid, np.ones(grid.shape), base="round")
        with pytest.raises(ValueError, match="wrong shape"):
            xd.ConformalAFMetric(
                grid, np.ones(grid.shape), base=np.zeros(grid.shape + (2, 2))
            )

    def test_metric_field_diagonal(self):
        grid = make_grid(8, 6)
        met = xd.harmonic_factor(grid, 0.5)
        g = met.metric_field()
        v4 = met.v**4
        np.testing.assert_allclose(g[..., 0, 0], v4, rtol=1e-13)
        np.testing.assert_allclose(g[..., 1, 1], v4 * grid.rad**2, rtol=1e-13)
        assert np.max(np.abs(g[..., 0, 1])) == 0.0

    def test_tail_fit_recovers_monopole(self):
        grid = make_grid(32, 8, 1.0, 40.0)
        met = xd.harmonic_factor(grid, 0.35)
        c1, r2 = met.tail_fit()
        assert abs(c1 - 0.35) < 1e-3
        assert r2 > 0.999

    def test_measured_decay_rate(self):
        grid = make_grid(32, 8, 1.0, 40.0)
        met = xd.harmonic_factor(grid, 0.35)
        assert abs(met.measured_decay_rate() - 1.0) < 0.05
        flat = xd.ConformalAFMetric(grid, np.ones(grid.shape))
        assert np.isinf(flat.measured_decay_rate())

    def test_schwarzschild_potential_horizon_value(self):
        grid = make_grid(16, 8)
        u = xd.schwarzschild_potential(grid, 1.0)
        # isotropic u = (1 - m/2r)/(1 + m/2r) at r = 1, m = 1
        assert abs(u[0, 0, 0] - (0.5 / 1.5)) < 1e-14
        assert np.max(u) < 1.0


class TestCollarGrid:
    def test_round_sphere_cut_locus_unbounded(self):
        # convex surface, outward collar: no focal point and no far-pair
        # collision, so any depth is admissible
        sphere = im.round_sphere(sg.SphereGrid(16, 32), radius=1.0)
        assert np.isinf(xd.CollarGrid.cut_locus_estimate(sphere))
        collar = xd.CollarGrid(sphere, 3.0, n_levels=4)
        assert collar.depth == pytest.approx(3.0)

    def test_depth_past_cut_locus_raises(self):
        # peanut-shaped surface: concave waist gives a finite focal radius
        grid = sg.SphereGrid(24, 48)
        peanut = im.radial_graph(grid, 1.0 + 0.45 * np.cos(2.0 * grid.theta))
        est = xd.CollarGrid.cut_locus_estimate(peanut)
        assert 0.2 < est < 0.5
        with pytest.raises(ValueError, match="cut locus"):
            xd.CollarGrid(peanut, 0.5)

    def test_levels_are_offset_spheres(self):
        sphere = im.round_sphere(sg.SphereGrid(12, 24), radius=1.0)
        collar = xd.CollarGrid(sphere, 0.4, n_levels=4)
        for k, level in enumerate(collar.levels):
            rho = np.linalg.norm(level.X, axis=-1)
            np.testing.assert_allclose(rho, 1.0 + collar.t[k], rtol=1e-12)

    def test_needs_two_levels(self):
        sphere = im.round_sphere(sg.SphereGrid(12, 24), radius=1.0)
        with pytest.raises(ValueError, match="at least 2 levels"):
            xd.CollarGrid(sphere, 0.4, n_levels=1)


class TestExteriorDomain:
    def test_flat_exterior_round(self):
        dom = xd.flat_exterior(nlat=12, nlon=24, r_max=20.0, n_r=16)
        assert dom.is_round
        assert dom.outer.r_inner == pytest.approx(1.0)
        assert dom.outer.r_outer == pytest.approx(20.0)

    def test_rejects_non_star_shaped(self):
        off_center = im.round_sphere(
            sg.SphereGrid(16, 32), radius=1.0, center=(1.2, 0.0, 0.0)
        )
        with pytest.raises(ValueError, match="star-shaped"):
            xd.ExteriorDomain(off_center, 20.0, n_r=16)

    def test_delta_decay_window(self):
        sphere = im.round_sphere(sg.SphereGrid(12, 24), radius=1.0)
        with pytest.raises(ValueError, match="delta_decay"):
            xd.ExteriorDomain(sphere, 20.0, n_r=16, delta_decay=0.5)
        with pytest.raises(ValueError, match="delta_decay"):
            xd.ExteriorDomain(sphere, 20.0, n_r=16, delta_decay=1.0)

    def test_chart_weights_partition(self):
        dom = xd.flat_exterior(nlat=12, nlon=24, r_max=20.0, n_r=16)
        t = np.linspace(0.0, dom.collar.depth, 11)
        wc, wo = dom.chart_weights(t)
        np.testing.assert_allclose(wc + wo, 1.0, atol=1e-14)
        assert wc[0] == pytest.approx(1.0)
        assert wc[-1] == pytest.approx(0.0)


class TestCollarProductMetric:
    def make_collar(self, nlat=16, depth=0.4, n_levels=8):
        sphere = im.round_sphere(sg.SphereGrid(nlat, 2 * nlat), radius=1.0)
        return xd.CollarGrid(sphere, depth, n_levels=n_levels)

    def test_induced_family_has_zero_deviation(self):
        collar = self.make_collar()
        met = xd.CollarProductMetric(collar, collar.induced_metrics())
        assert met.max_base_deviation() == 0.0

    def test_round_collar_scalar_curvature_vanishes(self):
        # dt^2 + (1 + t)^2 (round) is flat space in geodesic-polar form
        collar = self.make_collar()
        met = xd.CollarProductMetric(collar, collar.induced_metrics())
        s = met.scalar_curvature()
        assert s.shape == (collar.n_levels + 1,) + collar.boundary.grid.shape
        assert np.max(np.abs(s)) < 0.12
        fine = self.make_collar(nlat=32, n_levels=16)
        s_fine = xd.CollarProductMetric(fine, fine.induced_metrics()).scalar_curvature()
        assert np.max(np.abs(s)) / np.max(np.abs(s_fine)) > 3.4

    def test_degenerate_levels_rejected(self):
        collar = self.make_collar()
        bad = collar.induced_metrics()
        bad[2, 3, 4] = 0.0
        with pytest.raises(ValueError, match="degenerate"):
            xd.CollarProductMetric(collar, bad)

    def test_interpolated_metric_matches_boundary_data(self):
        collar = self.make_collar()
        gamma0 = collar.induced_metrics()[0] * 1.1
        met = xd.collar_interpolated_metric(collar, gamma0)
        np.testing.assert_allclose(met.boundary_metric(), gamma0, rtol=1e-13)
        # correction dies out by depth/2: outer half is exactly induced
        assert met.max_base_deviation() < 1e-13

    def test_interpolated_metric_zero_blend(self):
        collar = self.make_collar()
        gamma0 = collar.induced_metrics()[0] * 1.1
        met = xd.collar_interpolated_metric(collar, gamma0, blend=0.0)
        np.testing.assert_array_equal(met.gamma_levels, collar.induced_metrics())


class TestMeanCurvatureIdentity:
    def test_round_sphere_residual_small(self):
        # H(t) = 2/(1+t): N(H) = -2 at the boundary, matching
        # (1/2)(s_gamma - |A|^2 - H^2) = (2 - 2 - 4)/2
        sphere = im.round_sphere(sg.SphereGrid(16, 32), radius=1.0)
        collar = xd.CollarGrid(sphere, 0.4, n_levels=8)
        res = xd.mean_curvature_normal_derivative_check(collar)
        assert np.max(np.abs(res)) < 0.06
        fine = xd.CollarGrid(
            im.round_sphere(sg.SphereGrid(32, 64), radius=1.0), 0.4, n_levels=16
        )
        res_fine = xd.mean_curvature_normal_derivative_check(fine)
        assert np.max(np.abs(res)) / np.max(np.abs(res_fine)) > 3.4

    def test_ambient_scalar_shifts_residual(self):
        sphere = im.round_sphere(sg.SphereGrid(16, 32), radius=1.0)
        collar = xd.CollarGrid(sphere, 0.4, n_levels=8)
        res0 = xd.mean_curvature_normal_derivative_check(collar)
        res1 = xd.mean_curvature_normal_derivative_check(collar, ambient_scalar=1.0)
        np.testing.assert_allclose(res1 - res0, 0.5, atol=1e-10)
