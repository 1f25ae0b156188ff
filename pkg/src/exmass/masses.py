"""Mass functionals and static-vacuum diagnostics for exterior metrics.

Four mass routes are kept deliberately independent so they can cross-check
each other: the flux integral of the linearized constraint over a sequence
of far spheres (tail-extrapolated), the bulk-integral form obtained from it
by the divergence theorem, the conformal-shift form reading the 1/r tail of
the conformal factor, and the Komar integral of a static potential over the
inner boundary.  Units G = c = 1; the inner-boundary normal points into the
exterior region (along +r), far-sphere normals point outward.
"""

from dataclasses import dataclass, field

import numpy as np

from .common import compact_bump, fit_inverse_r_tail
from .extdomain import ConformalAFMetric
from . import tensorcalc as tc

__all__ = [
    "MassReport",
    "StaticVacuumResidual",
    "MetricPerturbation",
    "random_compact_perturbation",
    "scalar_curvature",
    "adm_mass_flux",
    "adm_mass_bulk",
    "adm_mass_conformal",
    "komar_mass",
    "mass_report",
    "static_vacuum_residual",
    "hamiltonian",
    "hamiltonian_first_variation",
    "boundary_forms",
]

FLUX_FRACTIONS = (0.5, 0.625, 0.75, 0.875, 1.0)


def _require_conformal(metric, who):
    if not isinstance(metric, ConformalAFMetric):
        raise TypeError(f"{who} expects a ConformalAFMetric")
    if not metric.flat_base:
        raise NotImplementedError(f"{who} implemented for flat-base metrics")


def scalar_curvature(metric):
    """Scalar curvature field of a metric container.

    Conformal metrics use the flat-Laplacian reduction -8 lap(v) / v^5;
    StoredMetric fields go through the finite-difference Ricci trace.
    """
    if isinstance(metric, ConformalAFMetric):
        if not metric.flat_base:
            raise NotImplementedError("stored-base conformal curvature not implemented")
        v = metric.v
        return -8.0 * metric.grid.laplacian_flat(v) / v**5
    if isinstance(metric, tc.StoredMetric):
        return metric.scalar_curvature()
    raise TypeError(f"no scalar curvature rule for {type(metric).__name__}")


def _check_tail_integrable(metric, s_tilde, mass_scale):
    """L1 test for the scalar curvature in the far region.

    Raise when the outermost dyadic shell carries as much |s| dv as the one
    inside it (no decay) AND its weight would shift the mass by more than a
    fraction of the mass scale; the second clause keeps pure stencil noise
    on clean tails from tripping the guard.
    """
    grid = metric.grid
    r = grid.r
    dv = grid.cell_volumes() * metric.v**6
    a_tot = np.sum(np.abs(s_tilde) * dv, axis=(1, 2))
    outer = r >= 0.5 * grid.r_outer
    inner = (r >= 0.25 * grid.r_outer) & (r < 0.5 * grid.r_outer)
    i_out = float(np.sum(a_tot[outer]))
    i_in = float(np.sum(a_tot[inner]))
    mass_effect = i_out / (16.0 * np.pi)
    if i_out > 0.9 * i_in and mass_effect > 0.002 * (abs(mass_scale) + 1.0):
        raise ValueError("mass not defined: scalar curvature not integrable")


def _flux_radii(grid, fractions):
    radii = [grid.r_outer * f for f in fractions]
    idx = sorted({grid.shell_index(rk) for rk in radii})
    if len(idx) < 3:
        raise ValueError("flux extrapolation needs at least three distinct shells")
    return idx


def adm_mass_flux(metric, fractions=FLUX_FRACTIONS, check_integrable=True):
    """ADM mass from the linearized-constraint flux over far spheres.

    For g = v^4 * flat the flux integrand (d_j g_ij - d_i g_jj) nu_i reduces
    to -8 v^3 dv/dr; each sphere value is corrected for the O(1/r) finite
    radius effect by fitting m(r) = m + c / r over the sphere sequence.

    Returns (mass, radii, values).
    """
    _require_conformal(metric, "adm_mass_flux")
    grid = metric.grid
    dvdr = grid.d_r(metric.v)
    integrand = -(metric.v**3) * dvdr / (2.0 * np.pi)
    idx = _flux_radii(grid, fractions)
    radii = grid.r[idx]
    values = np.array([grid.shell_integral(integrand, i) for i in idx])
    mass, _c, _r2 = fit_inverse_r_tail(radii, values)
    if check_integrable:
        _check_tail_integrable(metric, scalar_curvature(metric), mass)
    return float(mass), radii, values


def adm_mass_bulk(metric):
    """ADM mass as inner-boundary flux plus the scalar-curvature bulk term:

        m = -(1/2 pi) oint_{r0} dv/dr dS + (1/16 pi) int s v^5 dV_flat

    Exact for harmonic tails; cross-checks the far-sphere flux route.
    """
    _require_conformal(metric, "adm_mass_bulk")
    grid = metric.grid
    dvdr = grid.d_r(metric.v)
    inner = -grid.shell_integral(dvdr, 0) / (2.0 * np.pi)
    s_tilde = scalar_curvature(metric)
    bulk = grid.volume_integral(s_tilde, density=metric.v**5) / (16.0 * np.pi)
    return float(inner + bulk)


def adm_mass_conformal(mass_base, metric, n_shells=8, min_r2=0.99):
    """Mass after a conformal change, from the 1/r tail of the factor:

        m_new = v_inf^2 * mass_base - (v_inf / 2 pi) * lim oint dv/dr dS

    The limit is extrapolated from the flux q(r) = oint dv/dr dS over the
    outermost shells via q(r) = q_inf + c / r.  Raises if the tail does not
    fit an inverse-r law.
    """
    _require_conformal(metric, "adm_mass_conformal")
    grid = metric.grid
    dvdr = grid.d_r(metric.v)
    idx = np.unique(np.linspace(grid.n_r // 2, grid.n_r, n_shells).astype(int))
    radii = grid.r[idx]
    q = np.array([grid.shell_integral(dvdr, i) for i in idx])
    q_inf, _c, r2 = fit_inverse_r_tail(radii, q)
    scale = max(np.max(np.abs(q)), 4.0 * np.pi * abs(metric.v_inf) * 1e-8)
    spread = np.max(q) - np.min(q)
    if spread > 0.05 * scale and r2 < min_r2:
        raise ValueError("no 1/r tail detected")
    v_inf = metric.v_inf
    return float(v_inf**2 * mass_base - v_inf * q_inf / (2.0 * np.pi))


def komar_mass(metric, u):
    """Komar integral (1/4 pi) oint N(u) d(area) over the inner boundary.

    N is the unit normal of g pointing into the exterior; for g = v^4 flat
    on the sphere r = r0 this is (1/4 pi) oint v^2 du/dr r0^2 dOmega.
    """
    _require_conformal(metric, "komar_mass")
    grid = metric.grid
    u = grid._check(u)
    dudr = grid.d_r(u)
    integrand = metric.v[0] ** 2 * dudr[0] / (4.0 * np.pi)
    w = grid.sphere.param_weights * np.sin(grid.sphere.theta)
    return float(grid.r_inner**2 * np.sum(integrand * w))


@dataclass
class MassReport:
    """Cross-checked mass values for one exterior metric."""

    flux_radii: np.ndarray
    flux_values: np.ndarray
    mass_flux: float
    mass_bulk: float
    mass_conformal: float | None
    mass_komar: float | None
    tolerance: float
    deltas: dict = field(default_factory=dict)

    @property
    def consistent(self):
        scale = max(abs(self.mass_flux), 1e-8)
        return all(abs(d) <= self.tolerance * scale for d in self.deltas.values())

    def lines(self):
        out = [f"mass (flux, extrapolated)  {self.mass_flux: .8f}"]
        out.append(f"mass (bulk integral)       {self.mass_bulk: .8f}")
        if self.mass_conformal is not None:
            out.append(f"mass (conformal shift)     {self.mass_conformal: .8f}")
        if self.mass_komar is not None:
            out.append(f"mass (Komar)               {self.mass_komar: .8f}")
        for k, d in self.deltas.items():
            out.append(f"  delta {k:<18} {d: .3e}")
        out.append(f"cross-checks {'consistent' if self.consistent else 'INCONSISTENT'}"
                   f" at tolerance {self.tolerance:g}")
        return out


def mass_report(metric, u=None, mass_base=0.0, tolerance=0.02):
    """Evaluate every applicable mass route and their pairwise deltas."""
    m_flux, radii, values = adm_mass_flux(metric)
    m_bulk = adm_mass_bulk(metric)
    deltas = {"bulk-flux": m_bulk - m_flux}
    try:
        m_conf = adm_mass_conformal(mass_base, metric)
        deltas["conformal-flux"] = m_conf - m_flux
    except ValueError:
        m_conf = None
    m_komar = None
    if u is not None:
        m_komar = komar_mass(metric, u)
        deltas["komar-flux"] = m_komar - m_flux
    return MassReport(
        flux_radii=radii,
        flux_values=values,
        mass_flux=m_flux,
        mass_bulk=m_bulk,
        mass_conformal=m_conf,
        mass_komar=m_komar,
        tolerance=tolerance,
        deltas=deltas,
    )


@dataclass
class StaticVacuumResidual:
    """How far (g, u) is from the static vacuum system.

    sup norms are taken over the angular band theta in [band, pi - band]
    (pole rows of the spherical chart amplify stencil error) using the
    pointwise g-norm for the tensor field.
    """

    s_star_u: np.ndarray
    lap_u: np.ndarray
    sup_s_star: float
    sup_lap: float
    band: float


def static_vacuum_residual(metric, u, band=0.3):
    """Residual fields S*u = D^2 u - (lap u) g - u Ric and lap u."""
    _require_conformal(metric, "static_vacuum_residual")
    grid = metric.grid
    u = grid._check(u)
    g = tc.StoredMetric(grid, metric.metric_field())
    ric = g.ricci()
    hess = g.hessian(u)
    lap = np.einsum("...ab,...ab->...", g.inverse, hess)
    s_star = hess - lap[..., None, None] * g.field - u[..., None, None] * ric
    nrm = np.sqrt(np.abs(np.einsum(
        "...ac,...bd,...ab,...cd->...", g.inverse, g.inverse, s_star, s_star
    )))
    return StaticVacuumResidual(
        s_star_u=s_star,
        lap_u=lap,
        sup_s_star=tc.band_sup(grid, nrm, band),
        sup_lap=tc.band_sup(grid, lap, band),
        band=band,
    )


def hamiltonian(metric, u, mass=None):
    """Regge-Teitelboim style energy int u s dv - 16 pi m.

    mass defaults to the flux value; pass it explicitly when evaluating a
    perturbed metric whose mass is known to coincide with the background's
    (compactly supported perturbations).
    """
    if isinstance(metric, ConformalAFMetric):
        s = scalar_curvature(metric)
        dens = metric.v**6
        grid = metric.grid
        if mass is None:
            mass = adm_mass_flux(metric)[0]
    elif isinstance(metric, tc.StoredMetric):
        if mass is None:
            raise ValueError("stored metrics need an explicit mass")
        s = metric.scalar_curvature()
        dens = metric.volume_density()
        grid = metric.grid
    else:
        raise TypeError(f"no hamiltonian rule for {type(metric).__name__}")
    return grid.volume_integral(u * s, density=dens) - 16.0 * np.pi * mass


@dataclass
class MetricPerturbation:
    """Direction (h, u') for the first variation of the Hamiltonian.

    h is a symmetric 2-tensor field in coordinate components; u_prime a
    scalar field.  Either may be None (zero).  boundary_h_tangent and
    boundary_h_prime prescribe the induced-metric variation h^T (2x2,
    theta/phi block at the inner boundary) and the mean-curvature variation
    H'; by default both are measured from h itself, which must then keep
    the r-(angular) block structure at the boundary rows.
    """

    h: np.ndarray | None = None
    u_prime: np.ndarray | None = None
    boundary_h_tangent: np.ndarray | None = None
    boundary_h_prime: np.ndarray | None = None


def random_compact_perturbation(grid, seed, amplitude=0.15, include_potential=True):
    """Random smooth perturbation (h, u') compactly supported in the chart.

    h is a sum of two separable modes: a smooth bump in r (support inside
    [2, 6.5]) times a bump in theta (clear of the poles) times a low phi
    harmonic, with a random symmetric coefficient matrix in the orthonormal
    frame scaled back to coordinate components by diag(1, r, r sin(theta)).
    The coefficient matrix carries an O(1) identity part so the direction
    is never accidentally orthogonal to the Hamiltonian gradient.  Assumes
    the chart reaches past r = 7.
    """
    rng = np.random.default_rng(seed)
    r = grid.rad * np.ones(grid.shape)
    th = grid.sphere.theta[None] * np.ones(grid.shape)
    ph = grid.sphere.phi[None] * np.ones(grid.shape)
    frame = np.zeros(grid.shape + (3,))
    frame[..., 0] = 1.0
    frame[..., 1] = r
    frame[..., 2] = r * np.sin(th)
    h = np.zeros(grid.shape + (3, 3))
    for _ in range(2):
        rlo = rng.uniform(2.0, 2.6)
        rhi = rng.uniform(5.0, 6.5)
        tlo = rng.uniform(0.7, 0.9)
        thi = np.pi - rng.uniform(0.7, 0.9)
        k = int(rng.integers(0, 2))
        prof = (
            compact_bump(r, rlo, rhi)
            * compact_bump(th, tlo, thi)
            * np.cos(k * ph + rng.uniform(0.0, 2.0 * np.pi))
        )
        C = 0.25 * rng.normal(size=(3, 3))
        C = 0.5 * (C + C.T) + rng.uniform(0.9, 1.1) * np.eye(3)
        h += amplitude * prof[..., None, None] * (
            frame[..., :, None] * frame[..., None, :]
        ) * C
    u_prime = None
    if include_potential:
        u_prime = amplitude * (
            compact_bump(r, 2.0, 6.0)
            * compact_bump(th, 0.8, np.pi - 0.8)
            * (0.8 + np.cos(ph))
        )
    return MetricPerturbation(h=h, u_prime=u_prime)


def boundary_forms(grid, gfield):
    """Induced metric, second fundamental form and mean curvature of the
    inner-boundary sphere r = r_inner for a block metric field (g_r,ang = 0
    on the boundary rows), normal pointing along +r."""
    if np.max(np.abs(gfield[0, ..., 0, 1:])) > 1e-12 * np.max(np.abs(gfield[0])):
        raise ValueError("boundary_forms needs a block metric at the boundary")
    gamma = np.ascontiguousarray(gfield[..., 1:, 1:])
    dgamma = grid.d_r(gamma)
    lapse = np.sqrt(gfield[0, ..., 0, 0])
    A = 0.5 * dgamma[0] / lapse[..., None, None]
    gam0 = gamma[0]
    H = np.einsum("...ab,...ab->...", np.linalg.inv(gam0), A)
    return gam0, A, H


def hamiltonian_first_variation(metric, u, pert, band=None):
    """First variation of the Hamiltonian at (g, u) in direction (h, u').

        bulk     = int <S*u + (u s / 2) g, h> dv + int s u' dv
        boundary = oint [ <u A - N(u) gamma, h^T> + 2 u H' ] d(sigma)

    Returns (value, parts) with parts = {"bulk": ..., "boundary": ...}.
    h compactly supported in the interior leaves only the bulk term; the
    static-vacuum case kills the bulk and the <., h^T> pairing, leaving
    2 oint u H' d(sigma).
    """
    _require_conformal(metric, "hamiltonian_first_variation")
    grid = metric.grid
    u = grid._check(u)
    g = tc.StoredMetric(grid, metric.metric_field())
    s = g.scalar_curvature()
    dv = grid.cell_volumes() * g.volume_density()

    bulk = 0.0
    if pert.h is not None:
        h = grid._check(pert.h)
        ric = g.ricci()
        hess = g.hessian(u)
        lap = np.einsum("...ab,...ab->...", g.inverse, hess)
        s_star = hess - lap[..., None, None] * g.field - u[..., None, None] * ric
        integrand = s_star + 0.5 * (u * s)[..., None, None] * g.field
        pairing = np.einsum(
            "...ac,...bd,...ab,...cd->...", g.inverse, g.inverse, integrand, h
        )
        bulk += float(np.sum(pairing * dv))
    if pert.u_prime is not None:
        bulk += float(np.sum(s * grid._check(pert.u_prime) * dv))

    gam0, A, H = boundary_forms(grid, g.field)
    if pert.boundary_h_tangent is not None:
        hT = np.asarray(pert.boundary_h_tangent, dtype=float)
    elif pert.h is not None:
        hT = grid._check(pert.h)[0, ..., 1:, 1:]
    else:
        hT = np.zeros_like(gam0)
    if pert.boundary_h_prime is not None:
        h_prime = np.asarray(pert.boundary_h_prime, dtype=float)
    elif pert.h is not None:
        eps = 1e-6
        _, _, h_up = boundary_forms(grid, g.field + eps * grid._check(pert.h))
        _, _, h_dn = boundary_forms(grid, g.field - eps * grid._check(pert.h))
        h_prime = (h_up - h_dn) / (2.0 * eps)
    else:
        h_prime = np.zeros_like(H)

    dudr = grid.d_r(u)
    n_u = dudr[0] / np.sqrt(g.field[0, ..., 0, 0])
    gam_inv = np.linalg.inv(gam0)
    pair_t = np.einsum(
        "...ac,...bd,...ab,...cd->...",
        gam_inv, gam_inv,
        u[0, ..., None, None] * A - n_u[..., None, None] * gam0,
        hT,
    )
    area = np.sqrt(np.linalg.det(gam0)) * grid.sphere.param_weights
    boundary = float(np.sum((pair_t + 2.0 * u[0] * h_prime) * area))
    return bulk + boundary, {"bulk": bulk, "boundary": boundary}
