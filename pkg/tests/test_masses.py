"""Tests for mass functionals, static-vacuum residuals and the Hamiltonian."""

import numpy as np
import pytest

import exmass.extdomain as xd
import exmass.masses as ms
import exmass.spheregrid as sg
import exmass.tensorcalc as tc
from exmass.common import compact_bump


def make_grid(n_r, nlat, r_outer):
    return xd.RadialGrid(sg.SphereGrid(nlat, 2 * nlat), 1.0, r_outer, n_r)


def varying_background(grid):
    """Non-vacuum conformal background with a known-smooth potential.

    The potential carries a +0.25/r^3 term so its Laplacian has a definite
    sign over the perturbation supports, keeping first-variation pairings
    well away from zero.
    """
    sinth = np.sin(grid.sphere.theta)[None]
    cosph = np.cos(grid.sphere.phi)[None]
    sinph = np.sin(grid.sphere.phi)[None]
    v = (
        1.0
        + 0.15 / grid.rad
        + 0.1 * compact_bump(grid.rad, 1.8, 6.0) * (1.0 + 0.4 * sinth * cosph)
    ) * np.ones(grid.shape)
    u = (
        1.0
        - 0.3 / grid.rad
        + 0.25 / grid.rad**3
        + 0.08 * compact_bump(grid.rad, 2.0, 7.0) * sinth * sinph
    ) * np.ones(grid.shape)
    return xd.ConformalAFMetric(grid, v, v_inf=1.0), u


class TestMassRoutes:
    def test_schwarzschild_all_routes(self):
        grid = make_grid(48, 24, 50.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        u = xd.schwarzschild_potential(grid, 1.0)
        m_flux, radii, values = ms.adm_mass_flux(met)
        assert abs(m_flux - 1.0) < 3e-3
        assert radii.shape == values.shape and radii.size >= 3
        assert abs(ms.adm_mass_bulk(met) - 1.0) < 4e-3
        assert abs(ms.komar_mass(met, u) - 1.0) < 3e-3
        # v = 1 + 0.5/r over the flat metric: base mass 0, shift 2a = 1
        assert abs(ms.adm_mass_conformal(0.0, met) - 1.0) < 4e-3

    def test_mass_scaling(self):
        grid = make_grid(48, 24, 50.0)
        for m in (0.5, 2.0):
            met = xd.schwarzschild_conformal(grid, m)
            assert abs(ms.adm_mass_flux(met)[0] - m) < 5e-3 * m

    def test_mass_report_consistent(self):
        grid = make_grid(48, 24, 50.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        u = xd.schwarzschild_potential(grid, 1.0)
        rep = ms.mass_report(met, u=u, mass_base=0.0, tolerance=0.02)
        assert rep.consistent
        text = "\n".join(rep.lines())
        assert "flux" in text and "komar" in text

    def test_flux_needs_three_shells(self):
        grid = make_grid(48, 24, 50.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        with pytest.raises(ValueError, match="three distinct shells"):
            ms.adm_mass_flux(met, fractions=(0.99, 1.0))

    def test_slow_tail_rejected(self):
        # v - 1 ~ r^(-0.6) gives non-integrable scalar curvature
        grid = make_grid(48, 24, 50.0)
        v = (1.0 + grid.rad**-0.6) * np.ones(grid.shape)
        met = xd.ConformalAFMetric(grid, v, v_inf=1.0)
        with pytest.raises(ValueError, match="not integrable"):
            ms.adm_mass_flux(met)

    def test_conformal_route_rejects_structureless_tail(self):
        grid = make_grid(48, 24, 50.0)
        v = (1.0 + 0.3 * np.sin(3.0 * grid.rad) / grid.rad) * np.ones(grid.shape)
        met = xd.ConformalAFMetric(grid, v, v_inf=1.0)
        with pytest.raises(ValueError, match="no 1/r tail"):
            ms.adm_mass_conformal(0.5, met)


class TestConformalMassLaw:
    def test_monopole_shift_adds_twice_coefficient(self):
        # rescaling by v = 1 + a/r shifts the mass by exactly 2a
        grid = make_grid(48, 24, 50.0)
        met_base = xd.harmonic_factor(grid, 0.3)
        m_base = ms.adm_mass_flux(met_base)[0]
        for a in (0.1, 0.25):
            v_tot = (1.0 + 0.3 / grid.rad + a / grid.rad) * np.ones(grid.shape)
            m_tilde = ms.adm_mass_flux(
                xd.ConformalAFMetric(grid, v_tot, v_inf=1.0)
            )[0]
            assert abs((m_tilde - m_base) - 2.0 * a) < 0.005 * 2.0 * a

    def test_conformal_bookkeeping_route(self):
        grid = make_grid(48, 24, 50.0)
        met_base = xd.harmonic_factor(grid, 0.3)
        m_base = ms.adm_mass_flux(met_base)[0]
        vfac = (1.0 + 0.1 / grid.rad) * np.ones(grid.shape)
        m_conf = ms.adm_mass_conformal(
            m_base, xd.ConformalAFMetric(grid, vfac, v_inf=1.0)
        )
        assert abs(m_conf - (m_base + 0.2)) < 2e-3


class TestStaticVacuumResidual:
    def test_schwarzschild_residuals_second_order(self):
        sups_s, sups_l = [], []
        for (nr, na) in [(24, 12), (48, 24)]:
            grid = make_grid(nr, na, 10.0)
            met = xd.schwarzschild_conformal(grid, 1.0)
            u = xd.schwarzschild_potential(grid, 1.0)
            res = ms.static_vacuum_residual(met, u)
            sups_s.append(res.sup_s_star)
            sups_l.append(res.sup_lap)
        assert sups_s[0] < 4e-3 and sups_l[0] < 7e-4
        assert sups_s[0] / sups_s[1] > 4.0
        assert sups_l[0] / sups_l[1] > 3.0

    def test_requires_conformal_metric(self):
        grid = make_grid(12, 8, 10.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        stored = tc.StoredMetric(grid, met.metric_field())
        with pytest.raises(TypeError, match="ConformalAFMetric"):
            ms.static_vacuum_residual(stored, np.ones(grid.shape))


class TestHamiltonian:
    def test_schwarzschild_value(self):
        # int u s dv vanishes (vacuum) so H = -16 pi m
        grid = make_grid(48, 24, 50.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        u = xd.schwarzschild_potential(grid, 1.0)
        ham = ms.hamiltonian(met, u)
        assert abs(ham + 16.0 * np.pi) / (16.0 * np.pi) < 2e-3

    def test_stored_metric_needs_mass(self):
        grid = make_grid(12, 8, 10.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        stored = tc.StoredMetric(grid, met.metric_field())
        with pytest.raises(ValueError, match="explicit mass"):
            ms.hamiltonian(stored, np.ones(grid.shape))


class TestRandomPerturbation:
    def test_symmetry_support_and_reproducibility(self):
        grid = make_grid(24, 12, 12.0)
        pert = ms.random_compact_perturbation(grid, 3)
        h = pert.h
        np.testing.assert_array_equal(h, np.swapaxes(h, -1, -2))
        far = grid.r > 7.0
        assert np.max(np.abs(h[far])) == 0.0
        assert np.max(np.abs(h[:, [0, -1]])) == 0.0  # clear of the poles
        assert np.max(np.abs(h[0])) == 0.0  # clear of the inner boundary
        again = ms.random_compact_perturbation(grid, 3)
        np.testing.assert_array_equal(h, again.h)
        np.testing.assert_array_equal(pert.u_prime, again.u_prime)


class TestFirstVariation:
    def test_matches_centered_difference(self):
        # full bulk formula against a centered difference of the Hamiltonian
        # at eps = 1e-4; compactly supported directions keep the mass fixed
        grid = make_grid(48, 24, 12.0)
        met, u = varying_background(grid)
        g0 = met.metric_field()
        eps = 1e-4
        for seed, expect in [(0, 4.2e-4), (1, 9.0e-4)]:
            pert = ms.random_compact_perturbation(grid, seed)
            val, parts = ms.hamiltonian_first_variation(met, u, pert)
            hp = ms.hamiltonian(
                tc.StoredMetric(grid, g0 + eps * pert.h), u + eps * pert.u_prime, mass=0.0
            )
            hm = ms.hamiltonian(
                tc.StoredMetric(grid, g0 - eps * pert.h), u - eps * pert.u_prime, mass=0.0
            )
            fd = (hp - hm) / (2.0 * eps)
            rel = abs(val - fd) / abs(fd)
            assert rel < 1.2 * expect, f"seed {seed}: rel {rel:.3e}"
            assert abs(parts["bulk"] + parts["boundary"] - val) < 1e-12 * abs(val)

    def test_static_vacuum_boundary_identity(self):
        # on a static vacuum background with h supported at the inner
        # boundary the variation collapses to 2 oint u H' d(sigma)
        grid = make_grid(48, 24, 12.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        u = xd.schwarzschild_potential(grid, 1.0)
        g0 = met.metric_field()
        r = grid.rad * np.ones(grid.shape)
        th = grid.sphere.theta[None] * np.ones(grid.shape)
        y = np.clip((r - 1.0) / 1.5, 0.0, 1.0 - 1e-12)
        wall = np.exp(-(y**2) / (1.0 - y**2))
        h = np.zeros(grid.shape + (3, 3))
        h[..., 0, 0] = 0.2 * wall * (1.0 + 0.5 * np.cos(th))
        val, parts = ms.hamiltonian_first_variation(met, u, ms.MetricPerturbation(h=h))
        eps = 1e-4
        hp = ms.hamiltonian(tc.StoredMetric(grid, g0 + eps * h), u, mass=0.0)
        hm = ms.hamiltonian(tc.StoredMetric(grid, g0 - eps * h), u, mass=0.0)
        fd = (hp - hm) / (2.0 * eps)
        # normal variation of the mean curvature for radial h at the wall
        gam0, A0, H0 = ms.boundary_forms(grid, g0)
        q = -0.5 * h[0, ..., 0, 0] / g0[0, ..., 0, 0] * H0
        area = np.sqrt(np.linalg.det(gam0)) * grid.sphere.param_weights
        target = float(np.sum(2.0 * u[0] * q * area))
        assert abs(val - fd) / abs(fd) < 1e-2
        assert abs(fd - target) / abs(target) < 1e-2
        assert abs(parts["bulk"]) < 3e-2 * abs(val)

    def test_rejects_stored_metric(self):
        grid = make_grid(12, 8, 10.0)
        met = xd.schwarzschild_conformal(grid, 1.0)
        stored = tc.StoredMetric(grid, met.metric_field())
        with pytest.raises(TypeError, match="ConformalAFMetric"):
            ms.hamiltonian_first_variation(
                stored, np.ones(grid.shape), ms.MetricPerturbation()
            )


class TestBoundaryForms:
    def test_round_flat_sphere(self):
        grid = make_grid(48, 24, 12.0)
        g = np.zeros(grid.shape + (3, 3))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = grid.rad**2
        g[..., 2, 2] = (grid.rad * grid.sin_theta[None]) ** 2
        gam0, A, H = ms.boundary_forms(grid, g)
        assert np.max(np.abs(H - 2.0)) < 5e-3  # unit sphere: H = 2/r = 2
        np.testing.assert_allclose(gam0[..., 0, 0], 1.0, atol=1e-12)

    def test_requires_block_structure(self):
        grid = make_grid(12, 8, 10.0)
        g = np.zeros(grid.shape + (3, 3))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = grid.rad**2
        g[..., 2, 2] = (grid.rad * grid.sin_theta[None]) ** 2
        g[..., 0, 1] = g[..., 1, 0] = 0.2
        with pytest.raises(ValueError, match="block metric"):
            ms.boundary_forms(grid, g)
