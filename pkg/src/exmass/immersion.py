"""Immersed 2-spheres in R^3: built-in families and the cap deformation."""

import numpy as np
from scipy.spatial import cKDTree

from .common import bump_profile
from .spheregrid import SphereGrid

__all__ = [
    "Immersion",
    "round_sphere",
    "ellipsoid",
    "radial_graph",
    "random_radial_graph",
    "revolution_surface",
    "unit_normal_field",
    "deform_immersion",
    "min_far_pair_distance",
]


class Immersion:
    """Position field F: grid -> R^3 with an immersion-condition check.

    Parameters
    ----------
    grid : SphereGrid
    X : (nlat, nlon, 3) array
        Node positions, length units.
    family : str
        Tag: "round" | "ellipsoid" | "bump-deformed" | "revolution" | "user".
    params : dict
        Family parameters (radii, t, bump centre, bump radius, ...).
    """

    def __init__(self, grid, X, family="user", params=None):
        if not isinstance(grid, SphereGrid):
            raise TypeError("grid must be a SphereGrid")
        X = np.asarray(X, dtype=float)
        if X.shape != (grid.nlat, grid.nlon, 3):
            raise ValueError(f"position field shape {X.shape} != {(grid.nlat, grid.nlon, 3)}")
        self.grid = grid
        self.X = X
        self.family = str(family)
        self.params = dict(params or {})
        self._check_immersed()

    def _check_immersed(self):
        Ft, Fp = self.tangents()
        cross = np.cross(Ft, Fp)
        # F_phi degenerates like sin(theta) toward the poles; normalize it out
        scale = self.diameter() ** 2 * np.sin(self.grid.theta)
        bad = np.linalg.norm(cross, axis=-1) <= 1e-10 * scale
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ValueError(f"not an immersion at node ({i}, {j})")

    def tangents(self):
        """Coordinate tangent fields (F_theta, F_phi), each (nlat, nlon, 3)."""
        g = self.grid
        Ft = np.stack([g.d_theta(self.X[..., k]) for k in range(3)], axis=-1)
        Fp = np.stack([g.d_phi(self.X[..., k]) for k in range(3)], axis=-1)
        return Ft, Fp

    def diameter(self):
        ext = self.X.reshape(-1, 3)
        return float(np.linalg.norm(ext.max(axis=0) - ext.min(axis=0)))

    def transformed(self, rotation=None, translation=None):
        """Rigid motion R @ F + T; returns a new Immersion."""
        Y = self.X
        if rotation is not None:
            R = np.asarray(rotation, dtype=float)
            if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12):
                raise ValueError("rotation must be a 3x3 orthogonal matrix")
            Y = Y @ R.T
        if translation is not None:
            Y = Y + np.asarray(translation, dtype=float)
        return Immersion(self.grid, Y, family=self.family, params=self.params)


def round_sphere(grid, radius=1.0, center=(0.0, 0.0, 0.0)):
    X = radius * grid.unit_directions() + np.asarray(center, dtype=float)
    return Immersion(grid, X, family="round", params={"radius": float(radius)})


def ellipsoid(grid, semiaxes):
    a, b, c = (float(s) for s in semiaxes)
    n = grid.unit_directions()
    X = np.stack([a * n[..., 0], b * n[..., 1], c * n[..., 2]], axis=-1)
    return Immersion(grid, X, family="ellipsoid", params={"semiaxes": (a, b, c)})


def radial_graph(grid, rho):
    """Surface F = rho(theta, phi) * rhat for a positive radius field."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != grid.shape:
        raise ValueError("radius field shape mismatch")
    if np.any(rho <= 0):
        raise ValueError("radial graph needs rho > 0")
    X = rho[..., None] * grid.unit_directions()
    return Immersion(grid, X, family="bump-deformed", params={})


def random_radial_graph(grid, amplitude=0.1, rng=None):
    """Smooth random radial graph: rho = 1 + amplitude * (low-degree harmonics).

    The harmonics are polynomials in the Cartesian components of rhat, so the
    field is smooth across the poles.
    """
    rng = np.random.default_rng(rng)
    n = grid.unit_directions()
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    basis = [
        x, y, z,
        x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1,
        z * (x * x - y * y), x * y * z, z * (5 * z * z - 3),
    ]
    coef = rng.standard_normal(len(basis))
    coef /= np.linalg.norm(coef) * np.sqrt(len(basis))
    rho = 1.0 + amplitude * sum(c * b for c, b in zip(coef, basis))
    return radial_graph(grid, rho)


def revolution_surface(grid, rho_of_theta, z_of_theta, params=None):
    """Surface of revolution from a meridian profile (rho(u), z(u)), u = theta.

    The callables are evaluated on the grid latitudes; rho must be positive
    away from the end points and the profile must meet the axis
    perpendicularly there for a smooth pole.
    """
    u = grid.theta1d
    rho = np.asarray(rho_of_theta(u), dtype=float)
    zz = np.asarray(z_of_theta(u), dtype=float)
    cp, sp = np.cos(grid.phi1d), np.sin(grid.phi1d)
    X = np.stack(
        [rho[:, None] * cp[None, :], rho[:, None] * sp[None, :],
         np.broadcast_to(zz[:, None], grid.shape).copy()],
        axis=-1,
    )
    return Immersion(grid, X, family="revolution", params=dict(params or {}))


def unit_normal_field(F):
    """Outward unit normal N = F_theta x F_phi / |...| (nlat, nlon, 3)."""
    Ft, Fp = F.tangents()
    cross = np.cross(Ft, Fp)
    return cross / np.linalg.norm(cross, axis=-1, keepdims=True)


def deform_immersion(F, t, z, delta, q=None):
    """Push a cap of F by the fixed vector -t * N0(z).

    Parameters
    ----------
    F : Immersion
    t : float >= 0, displacement magnitude (length).
    z : (i, j) node index of the cap centre.
    delta : float, cap radius in radians of the round parameter sphere
        (for sphere-parametrized families this is the induced geodesic
        radius up to the sphere-radius factor).
    q : optional profile callable of distance; defaults to the quintic bump
        that is 1 on B_z(delta) and 0 outside B_z(2 delta).

    Returns the deformed Immersion; F is unchanged outside B_z(2 delta) and
    the node z moves by exactly t in the direction -N0(z).
    """
    t = float(t)
    if t < 0:
        raise ValueError("deformation magnitude t must be >= 0")
    i, j = z
    d = F.grid.great_circle_distance(i, j)
    prof = bump_profile(d, delta, 2.0 * delta) if q is None else np.asarray(q(d), dtype=float)
    if prof.min() < -1e-14 or prof.max() > 1.0 + 1e-14:
        raise ValueError("bump profile must take values in [0, 1]")
    N_before = unit_normal_field(F)
    N0 = N_before[i, j]
    Y = F.X - t * prof[..., None] * N0[None, None, :]

    # Fold detection.  Pointwise Jacobian zeros are measure-zero events the
    # nodes always miss; instead compare orientations: if the deformed cross
    # product reverses against the undeformed normal anywhere, continuity in
    # t forces the Jacobian through zero at some t' <= t.
    g = F.grid
    Yt = np.stack([g.d_theta(Y[..., k]) for k in range(3)], axis=-1)
    Yp = np.stack([g.d_phi(Y[..., k]) for k in range(3)], axis=-1)
    signed = np.einsum("...k,...k->...", np.cross(Yt, Yp), N_before)
    scale = F.diameter() ** 2 * np.sin(g.theta)
    bad = signed <= 1e-10 * scale
    if np.any(bad):
        ii, jj = np.argwhere(bad)[0]
        raise ValueError(f"immersion degenerated at t={t}: fold at node ({ii}, {jj})")

    params = dict(F.params)
    params.update({"t": t, "bump_center": (int(i), int(j)), "bump_radius": float(delta)})
    try:
        return Immersion(F.grid, Y, family="bump-deformed", params=params)
    except ValueError as exc:
        raise ValueError(f"immersion degenerated at t={t}: {exc}") from exc


def min_far_pair_distance(F, min_param_separation=0.5, neighbors=48):
    """Minimum ambient distance between parameter-far node pairs.

    Reports min |F(x) - F(y)| over node pairs whose round-parameter distance
    exceeds min_param_separation (radians).  This is the measurable stand-in
    for checking self-intersections: near-touching sheets show up as a small
    value, honest embeddings as O(diameter).
    """
    pts = F.X.reshape(-1, 3)
    dirs = F.grid.unit_directions().reshape(-1, 3)
    tree = cKDTree(pts)
    k = min(int(neighbors), pts.shape[0])
    dist, idx = tree.query(pts, k=k)
    cosmin = np.cos(float(min_param_separation))
    best = np.inf
    for col in range(1, k):
        far = np.einsum("ij,ij->i", dirs, dirs[idx[:, col]]) < cosmin
        if np.any(far):
            best = min(best, float(dist[far, col].min()))
    return best
