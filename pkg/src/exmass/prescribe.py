"""Prescribing boundary normal derivatives with layered collar sources.

For an exterior metric g = w^4 * flat the conformal change g -> v^4 g with
v = 1 on the boundary sphere shifts the boundary mean curvature by four
times the normal derivative of v.  This module builds nonnegative source
fields f, supported in a collar of depth d0 inside the boundary, so that
the solution of

    lap_g v - (s/8) v = -f/8,    v = 1 on the boundary,   v -> 1,

attains a requested normal derivative.  The source is a stack of thin
layers: smooth radial profiles times per-layer boundary functions, each
layer function obtained by inverting the (near-identity) map from layer
data to the induced normal derivative.  On top of the raw prescription the
module offers the two derived operations used by the counterexample
pipeline: raising the boundary mean curvature to a target (with a margin
solve that also allows moderate lowering) and conformally removing the
scalar curvature.

Every prescription re-measures the achieved normal derivative from the
solved field; nothing is assumed equal to its target.
"""

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.sparse.linalg import LinearOperator, gmres

from .elliptic import (EllipticProblem, lowest_eigenvalue,
                       metric_scalar_curvature, solve_dirichlet)
from .extdomain import ConformalAFMetric
from .masses import adm_mass_conformal

__all__ = [
    "LayerOperator",
    "LayeredSource",
    "collar_coordinate",
    "collar_depth",
    "lower_margin",
    "mean_curvature",
    "measure_normal_derivative",
    "prescribe_normal_derivative",
    "raise_mean_curvature",
    "scalar_flatten",
    "smoothstep_profile",
]


# ----------------------------------------------------------- collar geometry

def collar_coordinate(metric):
    """Arclength from the boundary sphere along radial rays.

    For g = w^4 * flat the length element along a ray is w^2 dr; the
    cumulative trapezoid of w^2 gives the collar coordinate of every node.
    Exact (rc = r - r_inner) on flat backgrounds.
    """
    if not isinstance(metric, ConformalAFMetric) or not metric.flat_base:
        raise TypeError("collar geometry needs a flat-base ConformalAFMetric")
    return cumulative_trapezoid(metric.v**2, metric.grid.r, axis=0,
                                initial=0.0)


def collar_depth(metric, fraction=0.25):
    """Default collar depth: a quarter of a conservative injectivity range.

    The radial collar of the round boundary sphere stays embedded well past
    the boundary scale for every background this package builds; the range
    is estimated as the shortest arclength from the boundary to three
    boundary radii (capped at half the domain).
    """
    rc = collar_coordinate(metric)
    grid = metric.grid
    k = grid.shell_index(min(3.0 * grid.r_inner, 0.5 * grid.r_outer))
    return float(fraction * rc[k].min())


def smoothstep_profile(depth):
    """Radial layer profile: complement of the quintic smoothstep.

    rho(0) = 1, rho(r) = 0 for r >= depth with two vanishing derivatives at
    both ends, and integral exactly depth/2.
    """
    d0 = float(depth)

    def rho(r):
        t = np.clip(np.asarray(r, dtype=float) / d0, 0.0, 1.0)
        return 1.0 - t**3 * (10.0 + t * (6.0 * t - 15.0))

    return rho


# ------------------------------------------------------- boundary measurers

def measure_normal_derivative(metric, field, reference=None):
    """Normal derivative of a scalar field on the boundary sphere.

    The unit normal of g = w^4 * flat pointing toward infinity is w^-2
    times the radial direction.  Prescription sources load the first
    radial cells, where a one-sided nodal stencil misreads the slope, so
    the derivative is taken from the flux the scheme transports through
    the first cell face, (rf1/h)(V1 - V0), normalized so a pure monopole
    field a + b/r reads off -b/r0^2 exactly.  The balance of the solved
    rows pins this flux to the outer monopole flux plus the exact source
    integral, which keeps the read second order even when sources sit
    against the boundary.  The reference factor (the metric's own by
    default) is measured the same way and subtracted, so constants read
    exactly zero.
    """
    grid = metric.grid
    w = metric.v
    field = grid._check(field)
    V = w * field
    h = grid.hxi
    kappa = 2.0 * np.sinh(0.5 * h) / h
    c = grid.r_faces[1] / (h * kappa * grid.r[0] ** 2)
    if reference is None:
        reference = w
    return (c * ((V[1] - V[0]) - field[0] * (reference[1] - reference[0]))
            / w[0] ** 3)


def mean_curvature(metric):
    """Mean curvature of the boundary sphere, normal toward infinity.

    For g = w^4 * flat on the sphere r = r0 this is the closed form
    (2 / (r0 w^2)) (1 + 2 r0 dw/dr / w); it equals 2/r0 on flat space.
    """
    grid = metric.grid
    w0 = metric.v[0]
    dwdr = grid.d_r(metric.v)[0]
    r0 = grid.r_inner
    return (2.0 / (r0 * w0**2)) * (1.0 + 2.0 * r0 * dwdr / w0)


# ------------------------------------------------------------ layer algebra

def _sheet_profile(grid, rc, depth):
    """Nodal density of a unit sheet at the given collar depth.

    The sheet integrates to one in the collar length along every ray; its
    mass is split linearly over the two bracketing shells.  Weights follow
    the trapezoid rule in the collar coordinate, so pairing with any field
    reproduces the shell average to second order.
    """
    if np.any(rc[1] >= depth):
        raise ValueError("layer depth is inside the first radial cell")
    if np.any(rc[-1] <= depth):
        raise ValueError("layer depth reaches the outer boundary")
    k = np.sum(rc <= depth, axis=0) - 1
    idx = np.indices(grid.shape[1:])
    lo = rc[k, idx[0], idx[1]]
    hi = rc[k + 1, idx[0], idx[1]]
    lam = (hi - depth) / (hi - lo)
    # nodal trapezoid weights in the collar coordinate
    t = np.empty(grid.shape)
    t[1:-1] = 0.5 * (rc[2:] - rc[:-2])
    t[0] = 0.5 * (rc[1] - rc[0])
    t[-1] = 0.5 * (rc[-1] - rc[-2])
    prof = np.zeros(grid.shape)
    prof[k, idx[0], idx[1]] = lam / t[k, idx[0], idx[1]]
    prof[k + 1, idx[0], idx[1]] = (1.0 - lam) / t[k + 1, idx[0], idx[1]]
    return prof


def _layer_profiles(metric, depth, n_layers):
    """Radial densities, identity multiples and knots of the layer stack.

    Layer i carries the density (16/d0) rho(rc) hat_i(rc) where the hats
    are linear in the collar coordinate between Gauss-Legendre knots
    (clamped constant at the ends).  Densities are assembled from per-cell
    masses, with the boundary half-cell lumped into the first interior
    shell, and each ray is rescaled so the layer integrates to exactly
    8 c_i in the collar length; the identity multiples c_i are normalized
    to sum to one.
    """
    grid = metric.grid
    rc = collar_coordinate(metric)
    x, _ = np.polynomial.legendre.leggauss(n_layers)
    knots = 0.5 * depth * (x + 1.0)
    rho = smoothstep_profile(depth)

    rr = np.linspace(0.0, depth, 2049)
    eye = np.eye(n_layers)
    c = np.array([simpson(rho(rr) * np.interp(rr, knots, eye[i]), x=rr)
                  for i in range(n_layers)]) * (2.0 / depth)
    c = c / c.sum()

    # collar coordinate of the cell faces, by linear interpolation per ray
    faces = np.clip(grid.r_faces, grid.r_inner, grid.r_outer)
    flat = rc.reshape(grid.n_r + 1, -1)
    rcf = np.stack([np.interp(faces, grid.r, flat[:, j])
                    for j in range(flat.shape[1])], axis=1)
    rcf = rcf.reshape((grid.n_r + 2,) + grid.shape[1:])
    widths = rcf[1:] - rcf[:-1]

    sub = np.linspace(0.1, 0.9, 5)[:, None, None, None]
    mids = rcf[:-1] + sub * widths          # (5, n_r+1, nlat, nlon)
    profiles = np.empty((n_layers,) + grid.shape)
    t = np.empty(grid.shape)
    t[1:-1] = 0.5 * (rc[2:] - rc[:-2])
    t[0] = 0.5 * (rc[1] - rc[0])
    t[-1] = 0.5 * (rc[-1] - rc[-2])
    for i in range(n_layers):
        dens = rho(mids) * np.interp(mids, knots, eye[i])
        mass = (16.0 / depth) * dens.mean(axis=0) * widths
        mass[1] += mass[0]
        mass[0] = 0.0
        total = mass.sum(axis=0)
        mass *= 8.0 * c[i] / total
        profiles[i] = mass / t
    return profiles, c, knots


class LayerOperator:
    """Map from boundary data to the normal derivative its layer induces.

    Applying the operator to boundary data chi solves the linearized
    problem with source profile * chi (chi extended as a constant along
    rays) and homogeneous boundary data, then reads the normal derivative
    of the solution back off the boundary.  With the default unit-sheet
    profile at the given depth this is the Poisson kernel integrated over
    the level set, which tends to the identity as the depth shrinks;
    prescription layers use smooth hat profiles and record the identity
    multiple they approach in `scale`.
    """

    def __init__(self, problem, depth, profile=None, scale=1.0,
                 solver_tol=1e-9, maxiter=300):
        if not isinstance(problem, EllipticProblem):
            raise TypeError("LayerOperator needs an EllipticProblem")
        self.problem = problem
        self.depth = float(depth)
        self.scale = float(scale)
        self.solver_tol = float(solver_tol)
        self.maxiter = int(maxiter)
        if profile is None:
            rc = collar_coordinate(problem.metric)
            profile = 8.0 * _sheet_profile(problem.grid, rc, self.depth)
        self.profile = np.asarray(profile, dtype=float)
        if self.profile.shape != problem.grid.shape:
            raise ValueError("layer profile shape does not match the grid")
        self.solves = 0

    def apply(self, chi):
        """Normal derivative induced by the layer with boundary data chi."""
        p = self.problem
        chi = np.broadcast_to(np.asarray(chi, dtype=float),
                              p.grid.shape[1:])
        h = self.profile * chi[None]
        cells = p.factor**5 * h / 8.0
        V, info = p._solve_raw(cells, 0.0, 0.0, self.solver_tol,
                               self.maxiter)
        if not info["converged"]:
            raise RuntimeError(
                f"layer solve stalled at depth {self.depth:.4g}")
        self.solves += 1
        return measure_normal_derivative(p.metric, V / p.factor)

    def identity_defect(self, chi):
        """Relative sup-norm distance of apply/scale from the identity."""
        chi = np.broadcast_to(np.asarray(chi, dtype=float),
                              self.problem.grid.shape[1:])
        out = self.apply(chi) / self.scale
        return float(np.max(np.abs(out - chi)) / np.max(np.abs(chi)))

    def invert(self, target, rtol=1e-7, restart=12, maxiter=4):
        """Boundary data chi with apply(chi) = scale * target.

        Solved by GMRES on the scale-normalized operator, warm-started at
        the target itself (the operator is a near-identity for thin
        layers); each matrix action costs one elliptic solve.
        """
        shape = self.problem.grid.shape[1:]
        n = shape[0] * shape[1]

        def matvec(xf):
            return (self.apply(xf.reshape(shape)) / self.scale).ravel()

        b = np.broadcast_to(np.asarray(target, dtype=float), shape)
        x, info = gmres(LinearOperator((n, n), matvec=matvec), b.ravel(),
                        x0=b.ravel().copy(), rtol=rtol, atol=0.0,
                        restart=restart, maxiter=maxiter)
        if info != 0:
            raise RuntimeError(
                f"layer inversion failed at depth {self.depth:.4g}")
        return x.reshape(shape)


class LayeredSource:
    """A collar source stack assembled from solved layer functions.

    Holds the collar depth, the radial profile, the Gauss-Legendre knots
    with their identity multiples, the per-layer boundary functions and
    the assembled source field; the constructor rejects a stack whose
    assembled field dips negative or leaks outside the collar.
    """

    def __init__(self, depth, knots, coefficients, layer_functions, field,
                 background, profile):
        self.depth = float(depth)
        self.knots = np.asarray(knots, dtype=float)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.layer_functions = np.asarray(layer_functions, dtype=float)
        self.field = np.asarray(field, dtype=float)
        self.background = np.asarray(background, dtype=float)
        self.profile = profile
        self.achieved = None
        self.sup_error = None
        self.layer_solves = 0
        # the background curvature itself carries stencil roundoff (worst
        # near the poles), so only layer-induced negativity should trip
        scale = max(float(np.max(np.abs(self.field))), 1e-30)
        noise = 2.0 * max(0.0, -float(self.background.min()))
        if float(self.field.min()) < -max(1e-10 * scale, noise, 1e-13):
            raise RuntimeError("assembled source went negative")

    @property
    def addition(self):
        """The layered part field - background (vanishes off the collar)."""
        return self.field - self.background


# ------------------------------------------------------------- prescription

def _check_background(metric, s):
    scale = max(float(np.max(np.abs(s))), 1e-30)
    if float(s.min()) < -1e-6 * scale and float(s.min()) < -1e-10:
        raise ValueError(
            "prescription needs nonnegative scalar curvature")


def prescribe_normal_derivative(metric, target, depth=None, n_layers=16,
                                solver_tol=1e-9, gmres_tol=1e-7,
                                maxiter=300):
    """Build a collar source whose field attains the target derivative.

    Parameters
    ----------
    metric : ConformalAFMetric
        Background exterior metric with nonnegative scalar curvature.
    target : scalar or (nlat, nlon) array
        Requested nonnegative normal derivative on the boundary sphere.
    depth : float, optional
        Collar depth; defaults to `collar_depth(metric)`.
    n_layers : int
        Number of Gauss-Legendre layers in the collar.

    Returns
    -------
    (LayeredSource, FieldSolution)
        The assembled source with its per-layer data, and the verified
        solve of the full problem.  `source.achieved` holds the measured
        normal derivative and `source.sup_error` its sup-norm distance
        from the target.

    Raises
    ------
    RuntimeError
        When a layer inversion fails, the assembled source dips negative,
        or the mass monotonicity check fails.
    """
    if not isinstance(metric, ConformalAFMetric) or not metric.flat_base:
        raise TypeError("prescription needs a flat-base ConformalAFMetric")
    grid = metric.grid
    target = np.broadcast_to(np.asarray(target, dtype=float),
                             grid.shape[1:]).astype(float)
    if not np.all(np.isfinite(target)):
        raise ValueError("target normal derivative must be finite")
    tscale = float(np.max(np.abs(target)))
    if float(target.min()) < -1e-12 * max(tscale, 1.0):
        raise ValueError("target normal derivative must be nonnegative")

    problem = EllipticProblem(metric)
    s = problem.s_metric
    _check_background(metric, s)

    if depth is None:
        depth = collar_depth(metric)
    depth = float(depth)
    rc = collar_coordinate(metric)
    inside = np.sum(np.all(rc[1:] < depth, axis=(1, 2)))
    if inside < 4:
        raise ValueError(
            "collar depth is not resolved by the radial grid "
            f"({inside} shells inside depth {depth:.3g})")
    if np.any(rc[int(0.7 * grid.n_r)] <= depth):
        raise ValueError("collar depth reaches too far into the domain")

    profiles, coeff, knots = _layer_profiles(metric, depth, n_layers)
    phis = np.zeros((n_layers,) + grid.shape[1:])
    solves = 0
    if tscale > 0.0:
        for i in range(n_layers):
            layer = LayerOperator(problem, knots[i], profile=profiles[i],
                                  scale=coeff[i], solver_tol=solver_tol,
                                  maxiter=maxiter)
            phis[i] = layer.invert(target, rtol=gmres_tol)
            solves += layer.solves

    f = s + np.sum(profiles * phis[:, None, :, :], axis=0)
    outside = np.all(rc >= depth, axis=(1, 2))
    if not np.array_equal(f[outside], s[outside]):
        raise RuntimeError("layered source leaked outside the collar")

    source = LayeredSource(depth, knots, coeff, phis, f, s,
                           smoothstep_profile(depth))
    source.layer_solves = solves

    final = EllipticProblem(metric, source=f, boundary_value=1.0,
                            v_inf=1.0, compact_source=False)
    sol = solve_dirichlet(final, tol=min(solver_tol, 1e-9), maxiter=maxiter)
    source.achieved = measure_normal_derivative(metric, sol.field)
    source.sup_error = float(np.max(np.abs(source.achieved - target)))

    # f >= s, so the mass may only go up: the 1/r tail of v is nonnegative
    if sol.tail_coefficient < -1e-8 * max(1.0, abs(sol.tail_coefficient)):
        raise RuntimeError(
            "mass monotonicity violated: f >= s but the factor tail "
            f"coefficient is {sol.tail_coefficient:.3e}")
    return source, sol


# --------------------------------------------------- mean curvature control

def lower_margin(metric, solver_tol=1e-10, maxiter=300):
    """Pointwise margin by which the boundary mean curvature can drop.

    Solves the g-harmonic interpolation u (u = 1 on the boundary, u -> 1/2
    at infinity) and returns (mu, solution) with mu = -4 N(u) > 0.  On the
    flat exterior of the unit sphere u = (1 + 1/r)/2 and mu = 2.
    """
    grid = metric.grid
    p = EllipticProblem(metric, boundary_value=1.0, v_inf=0.5,
                        scalar_field=np.zeros(grid.shape))
    if not p.certified:
        lam = lowest_eigenvalue(p)
        if lam <= 0.0:
            raise RuntimeError(
                "margin operator is not positive; no margin certificate")
    sol = solve_dirichlet(p, tol=solver_tol, maxiter=maxiter)
    u = sol.field
    if u.min() < 0.5 - 1e-6 or u.max() > 1.0 + 1e-6:
        raise RuntimeError(
            f"harmonic interpolation left [1/2, 1]: "
            f"range [{u.min():.6f}, {u.max():.6f}]")
    mu = -4.0 * measure_normal_derivative(metric, u)
    if mu.min() <= 0.0:
        raise RuntimeError("lowering margin came out nonpositive")
    return mu, sol


def raise_mean_curvature(metric, target, depth=None, n_layers=16,
                         solver_tol=1e-9, gmres_tol=1e-7, maxiter=300):
    """Conformal change attaining a target boundary mean curvature.

    The target may exceed the current mean curvature anywhere and may drop
    below it by at most the lowering margin.  Returns (new_metric, report)
    where the new metric keeps the boundary metric (the factor is 1 on the
    boundary to solver precision), carries nonnegative scalar curvature
    and is asymptotically flat; the report records the measured mean
    curvature error, the mass and the route taken.

    Raises
    ------
    ValueError
        When the target dips below the reachable margin.
    """
    grid = metric.grid
    H = mean_curvature(metric)
    target = np.broadcast_to(np.asarray(target, dtype=float),
                             grid.shape[1:]).astype(float)
    phi = 0.25 * (target - H)
    scale = max(float(np.max(np.abs(phi))), 1e-30)

    margin_route = float(phi.min()) < -1e-12 * scale
    if not margin_route:
        src, sol = prescribe_normal_derivative(
            metric, np.clip(phi, 0.0, None), depth=depth, n_layers=n_layers,
            solver_tol=solver_tol, gmres_tol=gmres_tol, maxiter=maxiter)
        v = sol.field
        f_total = src.field
        v_inf = 1.0
        mu = None
    else:
        mu, usol = lower_margin(metric, solver_tol=min(solver_tol, 1e-10),
                                maxiter=maxiter)
        shifted = phi + 0.25 * mu          # = phi - N(u) >= 0 iff reachable
        if float(shifted.min()) < -1e-9 * scale:
            raise ValueError(
                "target mean curvature drops below the lowering margin "
                f"(worst shortfall {-float(shifted.min()):.3e})")
        src, sol = prescribe_normal_derivative(
            metric, np.clip(shifted, 0.0, None), depth=depth,
            n_layers=n_layers, solver_tol=solver_tol, gmres_tol=gmres_tol,
            maxiter=maxiter)
        v = sol.field + usol.field - 1.0
        f_total = src.field + src.background * (usol.field - 1.0)
        fscale = max(float(np.max(np.abs(f_total))), 1e-30)
        fnoise = 2.0 * max(0.0, -float(src.background.min()))
        if float(f_total.min()) < -max(1e-10 * fscale, fnoise, 1e-13):
            raise RuntimeError("combined source went negative")
        v_inf = 0.5

    drift = float(np.max(np.abs(v[0] - 1.0)))
    if drift > 1e-7:
        raise RuntimeError(
            f"boundary metric drifted: factor off by {drift:.3e}")

    out = ConformalAFMetric(grid, metric.v * v,
                            v_inf=metric.v_inf * v_inf)
    # the measured curvature composes linearly from the measured pieces
    achieved = H + 4.0 * src.achieved
    if margin_route:
        achieved = achieved - mu
    report = {
        "achieved": achieved,
        "sup_error": float(np.max(np.abs(achieved - target))),
        "margin_route": margin_route,
        "margin": mu,
        "mass_in": adm_mass_conformal(0.0, metric),
        "mass_out": adm_mass_conformal(0.0, out),
        "boundary_factor_drift": drift,
        "source": f_total,
        "factor": v,
        "prescription_error": src.sup_error,
    }
    return out, report


# ---------------------------------------------------------- scalar flatten

def scalar_flatten(metric, solver_tol=1e-10, maxiter=300):
    """Conformal change to a scalar-flat exterior metric.

    Solves the source-free problem (f = 0) with factor 1 on the boundary
    and at infinity and returns (new_metric, report).  The mass and the
    boundary mean curvature can only drop.  A metric that is already
    scalar-flat is returned unchanged with a note in the report.

    Raises
    ------
    ValueError
        When the scalar curvature of the input is negative somewhere.
    """
    p = EllipticProblem(metric)
    s = p.s_metric
    sup_s = float(np.max(np.abs(s)))
    m_in = adm_mass_conformal(0.0, metric)
    if sup_s <= 1e-9:
        return metric, {
            "note": "scalar curvature already vanishes; metric unchanged",
            "mass_in": m_in, "mass_out": m_in, "sup_scalar_out": sup_s,
        }
    _check_background(metric, s)

    sol = solve_dirichlet(p, tol=solver_tol, maxiter=maxiter)
    v = sol.field
    if v.max() > 1.0 + 1e-8 or v.min() <= 0.0:
        raise RuntimeError(
            f"flattening factor left (0, 1]: "
            f"range [{v.min():.6f}, {v.max():.6f}]")

    out = ConformalAFMetric(metric.grid, metric.v * v, v_inf=metric.v_inf)
    s_out = metric_scalar_curvature(out)
    m_out = adm_mass_conformal(0.0, out)
    if m_out > m_in + 1e-8 * (1.0 + abs(m_in)):
        raise RuntimeError(
            f"mass increased while flattening ({m_in:.6e} -> {m_out:.6e})")
    H_in = mean_curvature(metric)
    H_out = mean_curvature(out)
    report = {
        "mass_in": m_in,
        "mass_out": m_out,
        "sup_scalar_out": float(np.max(np.abs(s_out))),
        "mean_curvature_drop": float(np.min(H_in - H_out)),
        "factor": v,
        "boundary_factor_drift": float(np.max(np.abs(v[0] - 1.0))),
    }
    return out, report
