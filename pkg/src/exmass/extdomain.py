"""Exterior domains M = R^3 minus a star-shaped body, and their metrics.

Two charts cover M: a boundary collar swept by the normal map of the inner
surface, and an outer spherical chart, log-uniform in radius from the
boundary radius out to R_max.  A smoothstep partition of unity blends the
charts over the outer half of the collar; for a round, centred boundary the
collar levels are coordinate spheres of the outer chart.

Metric containers live here as well: conformally flat asymptotically flat
metrics g = v^4 * flat and collar product metrics dt^2 + gamma_t.

Conventions: units G = c = 1.  The stored normal points into the exterior
region at the inner boundary and along +r on far spheres; mean curvature of
a round boundary is positive in this convention (H = 2/a).
"""

import numpy as np

from .common import fit_inverse_r_tail, validate_in_range, validate_positive, smoothstep
from .forms import fundamental_forms, metric_gauss_curvature, metric_inverse
from .immersion import Immersion, min_far_pair_distance, round_sphere, unit_normal_field
from .spheregrid import SphereGrid

__all__ = [
    "RadialGrid",
    "CollarGrid",
    "ExteriorDomain",
    "ConformalAFMetric",
    "CollarProductMetric",
    "collar_interpolated_metric",
    "mean_curvature_normal_derivative_check",
    "flat_exterior",
    "harmonic_factor",
    "schwarzschild_conformal",
    "schwarzschild_potential",
]


class RadialGrid:
    """Outer spherical chart: log-uniform radius x a SphereGrid.

    Radial nodes are vertex-centred in xi = log(r / r_inner) with n_r
    intervals, so node 0 sits on the inner sphere and node n_r on r_outer.
    Fields have shape (n_r + 1, nlat, nlon).

    Parameters
    ----------
    sphere : SphereGrid
        Angular grid (ungraded; the flux-form stencil assumes uniform theta).
    r_inner, r_outer : float
        Chart radii, 0 < r_inner < r_outer.
    n_r : int
        Number of radial intervals (>= 4).
    """

    def __init__(self, sphere, r_inner, r_outer, n_r):
        if not isinstance(sphere, SphereGrid):
            raise TypeError("sphere must be a SphereGrid")
        if not np.allclose(sphere._mp, 1.0):
            raise ValueError("radial grid requires an ungraded sphere grid")
        r_inner = validate_positive("r_inner", r_inner)
        r_outer = validate_positive("r_outer", r_outer)
        if r_outer <= r_inner:
            raise ValueError(f"need r_outer > r_inner, got ({r_inner}, {r_outer})")
        n_r = int(n_r)
        if n_r < 4:
            raise ValueError("radial grid needs n_r >= 4")
        self.sphere = sphere
        self.n_r = n_r
        self.r_inner = r_inner
        self.r_outer = r_outer
        self.hxi = np.log(r_outer / r_inner) / n_r
        self.xi = np.arange(n_r + 1) * self.hxi
        self.r = r_inner * np.exp(self.xi)
        # faces k = 0..n_r+1 at xi = (k - 1/2) h; the extreme faces lie half a
        # cell outside [r_inner, r_outer] (the outer one carries the Robin
        # ghost cell, the inner one is never used)
        self.r_faces = r_inner * np.exp((np.arange(n_r + 2) - 0.5) * self.hxi)
        self.rad = self.r[:, None, None]

    @property
    def shape(self):
        return (self.n_r + 1, self.sphere.nlat, self.sphere.nlon)

    @property
    def sin_theta(self):
        return np.sin(self.sphere.theta)

    def _check(self, fld):
        fld = np.asarray(fld, dtype=float)
        if fld.shape[:3] != self.shape:
            raise ValueError(f"field shape {fld.shape} != grid {self.shape}")
        return fld

    # ----------------------------------------------------------- derivatives

    def d_xi(self, fld):
        """d/dxi on the log-radial axis.

        Central interior rows.  The end rows use the 4-point one-sided
        stencil (-2, 7/2, -2, 1/2)/h whose leading truncation term is
        +h^2/6 f''' -- the same as the central stencil -- so the error
        varies smoothly across rows and composed second derivatives stay
        second order up to the boundary rows.
        """
        fld = self._check(fld)
        out = np.gradient(fld, self.hxi, axis=0, edge_order=2)
        h = self.hxi
        out[0] = (-2.0 * fld[0] + 3.5 * fld[1] - 2.0 * fld[2] + 0.5 * fld[3]) / h
        out[-1] = (2.0 * fld[-1] - 3.5 * fld[-2] + 2.0 * fld[-3] - 0.5 * fld[-4]) / h
        return out

    def d_r(self, fld):
        """d/dr (chain rule through xi = log r)."""
        fld = self._check(fld)
        ext = (1,) * (fld.ndim - 3)
        return self.d_xi(fld) / self.rad.reshape(self.rad.shape + ext)

    def d_theta(self, fld, parity=1):
        """d/dtheta with pole ghosts; parity as in SphereGrid.d_theta."""
        fld = self._check(fld)
        moved = np.moveaxis(fld, (1, 2), (0, 1))
        out = self.sphere.d_theta(moved, parity=parity)
        return np.moveaxis(out, (0, 1), (1, 2))

    def d_phi(self, fld):
        fld = self._check(fld)
        moved = np.moveaxis(fld, (1, 2), (0, 1))
        return np.moveaxis(self.sphere.d_phi(moved), (0, 1), (1, 2))

    def laplacian_flat(self, fld):
        """Flat Laplacian r^-2 (r^2 f_r)_r + r^-2 Lap_S2 f (scalar fields)."""
        fld = self._check(fld)
        if fld.ndim != 3:
            raise ValueError("laplacian_flat expects a scalar field")
        fx = self.d_xi(fld)
        radial = self.d_xi(self.rad * fx) / self.rad**3
        st = self.sin_theta
        dth = self.d_theta(fld)
        ang = self.d_theta(st * dth, parity=1) / st
        moved = np.moveaxis(fld, (1, 2), (0, 1))
        ang = ang + np.moveaxis(self.sphere.d2_phi(moved), (0, 1), (1, 2)) / st**2
        return radial + ang / self.rad**2

    # ------------------------------------------------------------ quadrature

    def cell_volumes(self):
        """Flat control volumes (r^3 thirds x cell solid angle), end cells
        clipped to [r_inner, r_outer].  Radial thirds are exact; the angular
        midpoint rule carries an O(nlat^-2) defect in the solid angle."""
        lo = np.clip(self.r_faces[:-1], self.r_inner, self.r_outer)
        hi = np.clip(self.r_faces[1:], self.r_inner, self.r_outer)
        w_r = (hi**3 - lo**3) / 3.0
        w_ang = self.sphere.round_area_weights()
        return w_r[:, None, None] * w_ang[None, :, :]

    def volume_integral(self, fld, density=None):
        """Integral over the chart; density multiplies the flat volume
        element (e.g. v^6 for a conformal metric)."""
        fld = self._check(fld)
        w = self.cell_volumes()
        if density is not None:
            w = w * density
        return float(np.sum(fld * w))

    def shell_integral(self, fld, i, area_element=None):
        """Surface integral over the coordinate sphere at node i.

        area_element: per-node area density wrt dOmega on the UNIT sphere
        (defaults to 1, i.e. the flat measure r_i^2 dOmega).
        """
        fld = self._check(fld)
        w = self.sphere.param_weights * np.sin(self.sphere.theta)
        if area_element is not None:
            w = w * np.asarray(area_element)
        return self.r[i] ** 2 * float(np.sum(fld[i] * w))

    def shell_index(self, r_target):
        """Index of the radial node nearest r_target."""
        return int(np.argmin(np.abs(self.r - float(r_target))))


class CollarGrid:
    """Collar of equidistant level surfaces off an inner boundary.

    Levels are F + t * N with N the outward (into the exterior) unit normal
    and t = 0 .. depth in n_levels equal steps.  The construction checks the
    depth against a cut-locus estimate combining the focal radius (from the
    most negative principal curvature) and half the closest far-pair
    distance of the surface.
    """

    def __init__(self, boundary, depth, n_levels=8):
        if not isinstance(boundary, Immersion):
            raise TypeError("boundary must be an Immersion")
        depth = validate_positive("collar depth", depth)
        n_levels = int(n_levels)
        if n_levels < 2:
            raise ValueError("collar needs at least 2 levels")
        est = self.cut_locus_estimate(boundary)
        if depth >= est:
            raise ValueError(
                f"cut locus inside collar: depth {depth:.4g} >= estimate {est:.4g}"
            )
        self.boundary = boundary
        self.depth = depth
        self.n_levels = n_levels
        self.t = np.linspace(0.0, depth, n_levels + 1)
        self.dt = depth / n_levels
        N = unit_normal_field(boundary)
        self.levels = [
            Immersion(
                boundary.grid,
                boundary.X + tl * N,
                family="collar-level",
                params={"t": float(tl)},
            )
            for tl in self.t
        ]
        self._forms = None

    @staticmethod
    def cut_locus_estimate(boundary):
        """Distance-to-cut-locus estimate along the outward normal.

        Combines the focal radius (finite only where a principal curvature
        is negative, i.e. the surface bends away from the normal) with half
        the closest approach between parameter-distant sheets, which guards
        against collars colliding across a neck.
        """
        fo = fundamental_forms(boundary)
        # principal curvatures: eigenvalues of gamma^-1 A
        K_ext = np.linalg.det(fo.A) / np.linalg.det(fo.gamma)
        half = 0.5 * fo.H
        disc = np.sqrt(np.maximum(half**2 - K_ext, 0.0))
        lam_min = np.min(half - disc)
        focal = np.inf if lam_min >= 0.0 else 1.0 / (-lam_min)
        gap = min_far_pair_distance(boundary, min_param_separation=1.5)
        return float(min(focal, gap / 2.0))

    def level_forms(self):
        """FundamentalForms of every level surface (cached)."""
        if self._forms is None:
            self._forms = [fundamental_forms(L) for L in self.levels]
        return self._forms

    def induced_metrics(self):
        """Stack of induced level metrics, shape (n_levels+1, nlat, nlon, 2, 2)."""
        return np.stack([fo.gamma for fo in self.level_forms()])


class ExteriorDomain:
    """Exterior region R^3 minus a star-shaped body, two-chart discretized.

    Parameters
    ----------
    boundary : Immersion
        Inner boundary; must be star-shaped about the origin.
    r_max : float
        Outer truncation radius of the spherical chart.
    n_r : int
        Radial intervals of the outer chart.
    collar_depth : float or None
        Depth of the boundary collar; default 0.45 of the cut-locus estimate.
    n_collar : int
        Collar levels.
    delta_decay : float
        Assumed decay rate of metric tails, must lie in (1/2, 1).
    """

    def __init__(self, boundary, r_max, n_r=96, collar_depth=None, n_collar=8,
                 delta_decay=0.75):
        self.delta_decay = validate_in_range("delta_decay", delta_decay, 0.5, 1.0)
        rho = np.linalg.norm(boundary.X, axis=-1)
        align = np.einsum("ijk,ijk->ij", boundary.X, boundary.grid.unit_directions())
        if np.min(align) <= 0.5 * np.min(rho):
            raise ValueError("inner boundary is not star-shaped about the origin")
        self.boundary = boundary
        if collar_depth is None:
            collar_depth = 0.45 * CollarGrid.cut_locus_estimate(boundary)
        self.collar = CollarGrid(boundary, collar_depth, n_collar)
        rho_max = float(np.max(rho))
        if r_max <= rho_max + collar_depth:
            raise ValueError("r_max must clear the collar region")
        self.outer = RadialGrid(boundary.grid, rho_max, r_max, n_r)
        # round centred boundary: collar levels are coordinate spheres and the
        # outer chart alone covers M, which the 3-d elliptic path requires
        self.is_round = bool(np.ptp(rho) < 1e-12 * rho_max)
        self.normal_convention = "into exterior at boundary, +r on far spheres"

    def chart_weights(self, t):
        """Partition of unity (w_collar, w_outer) at collar coordinate t.

        The blend ramps over [depth/2, depth]; the weights sum to 1 exactly.
        """
        t = np.asarray(t, dtype=float)
        d = self.collar.depth
        w_collar = 1.0 - smoothstep((t - 0.5 * d) / (0.5 * d))
        return w_collar, 1.0 - w_collar


class ConformalAFMetric:
    """Asymptotically flat metric g = v^4 * base on a RadialGrid.

    Parameters
    ----------
    grid : RadialGrid
    v : (n_r+1, nlat, nlon) array
        Conformal factor, strictly positive.
    v_inf : float
        Far-field limit of v (positive).
    base : "flat" or (n_r+1, nlat, nlon, 3, 3) array
        Base metric components in (r, theta, phi) coordinates.
    """

    def __init__(self, grid, v, v_inf=1.0, base="flat"):
        if not isinstance(grid, RadialGrid):
            raise TypeError("grid must be a RadialGrid")
        v = grid._check(v)
        if v.ndim != 3:
            raise ValueError("conformal factor must be a scalar field")
        if np.any(v <= 0.0):
            raise ValueError("conformal factor not positive")
        self.grid = grid
        self.v = v
        self.v_inf = validate_positive("v_inf", v_inf)
        if isinstance(base, str):
            if base != "flat":
                raise ValueError(f"unknown base metric {base!r}")
            self.base = None
        else:
            base = np.asarray(base, dtype=float)
            if base.shape != grid.shape + (3, 3):
                raise ValueError("base metric field has wrong shape")
            self.base = base

    @property
    def flat_base(self):
        return self.base is None

    def base_field(self):
        """Base metric components diag(1, r^2, r^2 sin^2)) if flat."""
        if self.base is not None:
            return self.base
        g = np.zeros(self.grid.shape + (3, 3))
        r2 = self.grid.rad**2
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = r2
        g[..., 2, 2] = r2 * self.grid.sin_theta[None, :, :] ** 2
        return g

    def metric_field(self):
        """Metric components v^4 * base in (r, theta, phi) coordinates."""
        return self.v[..., None, None] ** 4 * self.base_field()

    def tail_fit(self, n_shells=8):
        """Fit of the angular mean of v against v_inf + c1/r on the outer
        shells; returns (c1, r_squared)."""
        g = self.grid
        vbar = self.v.reshape(g.n_r + 1, -1).mean(axis=1)
        sl = slice(g.n_r + 1 - int(n_shells), g.n_r + 1)
        _, c1, r2 = fit_inverse_r_tail(g.r[sl], vbar[sl], v_inf=self.v_inf)
        return float(c1), float(r2)

    def measured_decay_rate(self, n_shells=12):
        """Log-log slope p of |mean v - v_inf| ~ r^-p on the outer shells.

        Returns inf when the tail is already flat to round-off.
        """
        g = self.grid
        vbar = self.v.reshape(g.n_r + 1, -1).mean(axis=1)
        dev = np.abs(vbar - self.v_inf)[-int(n_shells):]
        if np.max(dev) < 1e-14 * self.v_inf:
            return np.inf
        r = g.r[-int(n_shells):]
        keep = dev > 1e-15 * self.v_inf
        slope = np.polyfit(np.log(r[keep]), np.log(dev[keep]), 1)[0]
        return float(-slope)


class CollarProductMetric:
    """Product-form metric dt^2 + gamma_t on a boundary collar.

    gamma_levels holds the per-level boundary metrics; the reference collar
    supplies the geometric (induced) levels used by the base-match check.
    """

    def __init__(self, collar, gamma_levels, r0=None):
        if not isinstance(collar, CollarGrid):
            raise TypeError("collar must be a CollarGrid")
        gamma_levels = np.asarray(gamma_levels, dtype=float)
        want = (collar.n_levels + 1,) + collar.boundary.grid.shape + (2, 2)
        if gamma_levels.shape != want:
            raise ValueError(f"gamma_levels shape {gamma_levels.shape} != {want}")
        det = np.linalg.det(gamma_levels)
        if np.any(det <= 0.0):
            raise ValueError("interpolated collar metric is degenerate")
        self.collar = collar
        self.gamma_levels = gamma_levels
        self.r0 = collar.depth if r0 is None else float(r0)

    def boundary_metric(self):
        return self.gamma_levels[0]

    def max_base_deviation(self, from_depth=None):
        """Sup deviation from the induced (ambient) levels at t >= from_depth
        (default r0/2); zero for a faithful product extension."""
        d = 0.5 * self.r0 if from_depth is None else float(from_depth)
        induced = self.collar.induced_metrics()
        sel = self.collar.t >= d - 1e-12
        return float(np.max(np.abs(self.gamma_levels[sel] - induced[sel])))

    def scalar_curvature(self, ambient_scalar=0.0):
        """Scalar curvature per level from the radial product identity.

        s_g = s_gamma - |A|^2 - H^2 - 2 dH/dt with A = (1/2) d(gamma)/dt;
        ambient_scalar is unused (kept for signature symmetry) and the
        result is the scalar curvature of dt^2 + gamma_t itself.
        """
        grid = self.collar.boundary.grid
        gam = self.gamma_levels
        A = 0.5 * np.gradient(gam, self.collar.dt, axis=0, edge_order=2)
        inv = metric_inverse(gam.reshape((-1,) + grid.shape + (2, 2)))
        inv = inv.reshape(gam.shape)
        H = np.einsum("...ab,...ab->...", inv, A)
        Asq = np.einsum("...ac,...bd,...ab,...cd->...", inv, inv, A, A)
        s_gam = np.stack(
            [2.0 * metric_gauss_curvature(grid, gam[l]) for l in range(gam.shape[0])]
        )
        dH = np.gradient(H, self.collar.dt, axis=0, edge_order=2)
        return s_gam - Asq - H**2 - 2.0 * dH


def collar_interpolated_metric(collar, gamma0, blend=1.0):
    """Product metric whose boundary pullback is exactly gamma0.

    The level metrics interpolate from gamma0 at t = 0 back to the induced
    (ambient) level metrics for t >= depth/2:

        gamma_t = induced_t + blend * chi(t) * (gamma0 - induced_0),

    with chi a smoothstep from 1 to 0 on [0, depth/2].  blend = 0 is the
    no-op returning the induced family.

    Parameters
    ----------
    collar : CollarGrid
    gamma0 : (nlat, nlon, 2, 2) array
        Prescribed boundary metric (e.g. BartnikData.gamma).
    blend : float
        Scale on the correction profile in [0, 1].
    """
    gamma0 = np.asarray(getattr(gamma0, "gamma", gamma0), dtype=float)
    grid = collar.boundary.grid
    if gamma0.shape != grid.shape + (2, 2):
        raise ValueError("gamma0 has wrong shape for the collar boundary grid")
    induced = collar.induced_metrics()
    chi = 1.0 - smoothstep(2.0 * collar.t / collar.depth)
    corr = float(blend) * (gamma0 - induced[0])
    gamma_levels = induced + chi[:, None, None, None, None] * corr[None]
    return CollarProductMetric(collar, gamma_levels)


def mean_curvature_normal_derivative_check(collar, ambient_scalar=0.0):
    """Residual of the radial mean-curvature identity at the boundary.

    Compares the collar finite difference of H against
    (1/2)(s_gamma - s_ambient - |A|^2 - H^2) at t = 0 and returns the
    pointwise difference.  Needs at least 3 collar levels for the one-sided
    second-order difference.
    """
    if collar.n_levels < 2:
        raise ValueError("insufficient collar depth")
    forms = collar.level_forms()
    H = np.stack([fo.H for fo in forms])
    NH = (-3.0 * H[0] + 4.0 * H[1] - H[2]) / (2.0 * collar.dt)
    fo0 = forms[0]
    grid = collar.boundary.grid
    s_gam = 2.0 * metric_gauss_curvature(grid, fo0.gamma)
    inv = metric_inverse(fo0.gamma)
    Asq = np.einsum("...ac,...bd,...ab,...cd->...", inv, inv, fo0.A, fo0.A)
    rhs = 0.5 * (s_gam - ambient_scalar - Asq - fo0.H**2)
    return NH - rhs


def flat_exterior(nlat=48, nlon=48, r_max=100.0, n_r=96, boundary_radius=1.0,
                  collar_depth=None, n_collar=8, delta_decay=0.75):
    """ExteriorDomain outside a round centred sphere (the workhorse domain)."""
    sphere = SphereGrid(nlat, nlon)
    boundary = round_sphere(sphere, radius=boundary_radius)
    if collar_depth is None:
        collar_depth = 0.4 * boundary_radius
    return ExteriorDomain(boundary, r_max, n_r=n_r, collar_depth=collar_depth,
                          n_collar=n_collar, delta_decay=delta_decay)


def harmonic_factor(grid, a, v_inf=1.0):
    """ConformalAFMetric with the pure monopole factor v = v_inf + a/r."""
    v = v_inf + float(a) / grid.rad * np.ones(grid.shape)
    return ConformalAFMetric(grid, v, v_inf=v_inf)


def schwarzschild_conformal(grid, m):
    """Isotropic-coordinates factor v = 1 + m/(2r) as a ConformalAFMetric."""
    validate_positive("mass", m)
    return harmonic_factor(grid, 0.5 * float(m))


def schwarzschild_potential(grid, m):
    """Static potential u = (1 - m/2r) / (1 + m/2r) on the grid."""
    validate_positive("mass", m)
    half = 0.5 * float(m) / grid.rad
    return ((1.0 - half) / (1.0 + half)) * np.ones(grid.shape)
