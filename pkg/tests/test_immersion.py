"""Tests for immersion families and the cap deformation."""

import numpy as np
import pytest

from exmass.spheregrid import SphereGrid
from exmass.immersion import (
    Immersion,
    deform_immersion,
    ellipsoid,
    min_far_pair_distance,
    radial_graph,
    random_radial_graph,
    revolution_surface,
    round_sphere,
    unit_normal_field,
)


@pytest.fixture(scope="module")
def grid32():
    return SphereGrid(32, 32)


class TestFamilies:
    def test_round_radius_exact(self, grid32):
        F = round_sphere(grid32, radius=2.5)
        np.testing.assert_allclose(np.linalg.norm(F.X, axis=-1), 2.5, atol=1e-13)
        assert F.family == "round"

    def test_round_center_offset(self, grid32):
        F = round_sphere(grid32, radius=1.0, center=(1.0, -2.0, 0.5))
        r = np.linalg.norm(F.X - np.array([1.0, -2.0, 0.5]), axis=-1)
        np.testing.assert_allclose(r, 1.0, atol=1e-13)

    def test_ellipsoid_on_surface(self, grid32):
        F = ellipsoid(grid32, (1.0, 2.0, 3.0))
        lvl = (F.X[..., 0]) ** 2 + (F.X[..., 1] / 2.0) ** 2 + (F.X[..., 2] / 3.0) ** 2
        np.testing.assert_allclose(lvl, 1.0, atol=1e-13)

    def test_radial_graph_validation(self, grid32):
        with pytest.raises(ValueError):
            radial_graph(grid32, np.zeros(grid32.shape))
        with pytest.raises(ValueError):
            radial_graph(grid32, np.ones((4, 4)))

    def test_random_radial_graph_reproducible(self, grid32):
        F1 = random_radial_graph(grid32, amplitude=0.1, rng=11)
        F2 = random_radial_graph(grid32, amplitude=0.1, rng=11)
        np.testing.assert_array_equal(F1.X, F2.X)
        r = np.linalg.norm(F1.X, axis=-1)
        assert 0.5 < r.min() and r.max() < 1.5

    def test_revolution_surface_matches_round(self, grid32):
        F = revolution_surface(grid32, np.sin, np.cos)
        G = round_sphere(grid32)
        np.testing.assert_allclose(F.X, G.X, atol=1e-13)


class TestImmersionChecks:
    def test_degenerate_position_field_raises(self, grid32):
        X = np.zeros(grid32.shape + (3,))
        X[..., 2] = 1.0
        with pytest.raises(ValueError, match=r"not an immersion at node \(0, 0\)"):
            Immersion(grid32, X)

    def test_diameter(self, grid32):
        F = round_sphere(grid32, radius=1.0)
        # axis-aligned bounding box of the unit sphere: diagonal 2*sqrt(3)
        # minus the cell-offset from the poles/equator
        assert 3.2 < F.diameter() < 2.0 * np.sqrt(3.0) + 1e-9

    def test_transformed_requires_orthogonal(self, grid32):
        F = round_sphere(grid32)
        with pytest.raises(ValueError):
            F.transformed(rotation=np.diag([1.0, 1.0, 2.0]))

    def test_unit_normal_outward(self, grid32):
        F = round_sphere(grid32, radius=2.0)
        N = unit_normal_field(F)
        np.testing.assert_allclose(N, F.X / 2.0, atol=1e-12)


class TestDeformation:
    def test_identity_at_t_zero(self, grid32):
        F = round_sphere(grid32)
        Fd = deform_immersion(F, 0.0, (0, 0), 0.3)
        np.testing.assert_array_equal(Fd.X, F.X)

    def test_fixed_outside_support(self, grid32):
        F = round_sphere(grid32)
        Fd = deform_immersion(F, 0.2, (0, 0), 0.3)
        outside = grid32.great_circle_distance(0, 0) >= 0.6
        np.testing.assert_array_equal(Fd.X[outside], F.X[outside])
        assert np.any(Fd.X[~outside] != F.X[~outside])

    def test_north_pole_displacement(self, grid32):
        # unit sphere, t = 0.1, cap at the node nearest the north pole:
        # the centre moves along -N0 to radius 0.9
        F = round_sphere(grid32)
        Fd = deform_immersion(F, 0.1, (0, 0), 0.3)
        moved = Fd.X[0, 0]
        assert np.linalg.norm(F.X[0, 0] - moved) == pytest.approx(0.1, abs=1e-13)
        assert np.linalg.norm(moved) == pytest.approx(0.9, abs=1e-13)
        # node (0, 0) sits at theta = pi / (2 nlat), not exactly at the pole
        assert moved[2] == pytest.approx(0.9 * np.cos(F.grid.theta[0, 0]), abs=1e-13)

    def test_displacement_direction_is_minus_normal(self, grid32):
        F = ellipsoid(grid32, (1.0, 1.0, 2.0))
        N0 = unit_normal_field(F)[5, 7]
        Fd = deform_immersion(F, 0.15, (5, 7), 0.4)
        np.testing.assert_allclose(Fd.X[5, 7], F.X[5, 7] - 0.15 * N0, atol=1e-13)

    def test_params_recorded(self, grid32):
        Fd = deform_immersion(round_sphere(grid32), 0.1, (0, 0), 0.3)
        assert Fd.family == "bump-deformed"
        assert Fd.params["t"] == 0.1
        assert Fd.params["bump_center"] == (0, 0)

    def test_rejects_negative_t(self, grid32):
        with pytest.raises(ValueError):
            deform_immersion(round_sphere(grid32), -0.1, (0, 0), 0.3)

    def test_steep_cap_folds(self, grid32):
        # continuum fold once t |q'| sin(theta) exceeds 1: for delta = 0.3
        # that happens near t = 0.37 on the unit sphere
        F = round_sphere(grid32)
        deform_immersion(F, 0.3, (0, 0), 0.3)  # below the fold: fine
        with pytest.raises(ValueError, match="immersion degenerated at t=0.5"):
            deform_immersion(F, 0.5, (0, 0), 0.3)

    def test_flattened_ellipsoid_folds(self):
        # resolved rim: pushing the top sheet past the rim folds the surface
        g = SphereGrid(64, 64)
        P = ellipsoid(g, (1.0, 1.0, 0.3))
        deform_immersion(P, 0.15, (0, 0), 0.9)
        with pytest.raises(ValueError, match="immersion degenerated"):
            deform_immersion(P, 0.5, (0, 0), 0.9)

    def test_custom_profile_range_checked(self, grid32):
        with pytest.raises(ValueError):
            deform_immersion(
                round_sphere(grid32), 0.1, (0, 0), 0.3, q=lambda d: 2.0 - d
            )


class TestFarPairDistance:
    def test_round_sphere_chord(self, grid32):
        # min chord between directions >= 0.5 rad apart: 2 sin(0.25) = 0.4948
        d = min_far_pair_distance(round_sphere(grid32), min_param_separation=0.5)
        assert d == pytest.approx(2.0 * np.sin(0.25), abs=0.01)

    def test_detects_near_touch(self, grid32):
        # hourglass of revolution with neck radius 0.1: opposite sides of the
        # neck are parameter-far but only 0.2 apart in space
        def rho(u):
            return np.sin(u) * (1.0 - 0.9 * np.exp(-(((u - np.pi / 2) / 0.25) ** 2)))

        F = revolution_surface(grid32, rho, np.cos)
        d = min_far_pair_distance(F, min_param_separation=1.0)
        assert d < 0.25
