"""Boundary value problems for the conformally covariant Laplacian.

The operator is Delta_g - s/8 on the exterior grid, for a conformally flat
metric g = w^4 * delta.  Every solve pulls the unknown back to the
flat-measure variable V = w v, where the equation

    Delta_g v - (s/8) v = F

becomes  -Delta V + q V = -w^5 F  with the scalar potential

    q = (Delta w)/w + s w^4 / 8 = (s - s_m) w^4 / 8,

s_m being the scalar curvature of the metric itself.  s_m is defined
residually from the finite-volume operator (metric_scalar_curvature), so
for the default problem with s = s_m the potential vanishes identically:
the discrete operator is the plain flat M-matrix stencil and maximum
principles, kernel signs and the v = 1 solution for f = s hold to solver
tolerance rather than to scheme order.

Green's-function and Poisson-kernel columns are approximated by solving
against narrow hat mollifiers of fixed physical width, which keeps probe
refinement studies independent of the grid sequencing.
"""

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, lobpcg

from .common import fit_inverse_r_tail
from .extdomain import ConformalAFMetric
from .mg import Multigrid, StencilOperator, pcg

__all__ = [
    "EllipticProblem", "FieldSolution", "KernelProbe",
    "metric_scalar_curvature", "solve_dirichlet", "lowest_eigenvalue",
    "greens_probe", "poisson_probe", "reproducing_check",
    "barrier_solution", "harnack_ratio",
]


def _flat_operator(grid, potential=None, outer_bc="robin"):
    op = StencilOperator(grid, potential=potential, outer_bc=outer_bc)
    return op, Multigrid(op)


def metric_scalar_curvature(metric):
    """Scalar curvature field of g = w^4 * delta, finite-volume consistent.

    Defined through the cell residuals of the flat stencil applied to w, so
    that w is the exact discrete solution of L(1) source data.  The inner
    boundary row carries the nodal value instead (its equation row is
    Dirichlet data and never consumes a source).
    """
    if not isinstance(metric, ConformalAFMetric):
        raise TypeError("metric must be a ConformalAFMetric")
    if not metric.flat_base:
        raise ValueError("scalar curvature field needs a flat base metric")
    g = metric.grid
    w = metric.v
    op = StencilOperator(g)
    lap_cell = -(op.apply(w) - op.rhs(inner_value=w[0], u_inf=metric.v_inf))
    s = -8.0 * lap_cell / op.vol / w**5
    s[0] = -8.0 * g.laplacian_flat(w)[0] / w[0] ** 5
    return s


class EllipticProblem:
    """A Dirichlet problem L v = -f/8 with decay data at infinity.

    Parameters
    ----------
    metric : ConformalAFMetric
        Conformally flat exterior metric g = w^4 * delta.
    source : None or (n_r+1, nlat, nlon) array
        The field f; None means f = 0.
    boundary_value : scalar or (nlat, nlon) array
        Dirichlet data for v on the inner sphere.
    v_inf : float
        Limit of v at infinity (Robin far closure).
    scalar_field : None or array
        Explicit s field; None takes the metric's own scalar curvature,
        for which the transformed potential vanishes identically.
    compact_source : bool
        Require the source support to stay away from the outer boundary.
    """

    def __init__(self, metric, source=None, boundary_value=1.0, v_inf=1.0,
                 scalar_field=None, compact_source=True):
        if not isinstance(metric, ConformalAFMetric):
            raise TypeError("metric must be a ConformalAFMetric")
        if not metric.flat_base:
            raise ValueError("elliptic solves need a flat base metric")
        self.metric = metric
        self.grid = metric.grid
        self.factor = metric.v
        shape = self.grid.shape

        if source is None:
            self.source = None
        else:
            source = np.asarray(source, dtype=float)
            if source.shape != shape:
                raise ValueError("source field shape does not match the grid")
            if compact_source:
                tail = source[int(0.85 * self.grid.n_r):]
                if np.any(tail != 0.0):
                    raise ValueError(
                        "source support reaches the outer boundary")
            self.source = source
        self.compact_source = bool(compact_source)

        self.boundary_value = np.broadcast_to(
            np.asarray(boundary_value, dtype=float), shape[1:]).copy()
        self.v_inf = float(v_inf)

        self.s_metric = metric_scalar_curvature(metric)
        if scalar_field is None:
            self.s = self.s_metric
            self._potential = None
        else:
            s = np.asarray(scalar_field, dtype=float)
            if s.shape != shape or not np.all(np.isfinite(s)):
                raise ValueError(
                    "scalar curvature field does not match the metric grid")
            self.s = s
            self._potential = (s - self.s_metric) * self.factor**4 / 8.0

        self._solver_cache = None
        self._eigenvalue = None

    # ------------------------------------------------------------ plumbing

    @property
    def certified(self):
        """Positivity certificate: nonnegative potential counts as one."""
        if self._potential is None:
            return True
        floor = -1e-12 * max(1.0, float(np.abs(self._potential).max()))
        if self._potential.min() >= floor:
            return True
        return self._eigenvalue is not None and self._eigenvalue > 0.0

    def _solver(self):
        if self._solver_cache is None:
            self._solver_cache = _flat_operator(self.grid, self._potential)
        return self._solver_cache

    def _solve_raw(self, source_cells, inner_v, u_inf, tol, maxiter):
        """Solve for the flat variable V = w v and return (V, info)."""
        op, M = self._solver()
        b = op.rhs(source=source_cells, inner_value=self.factor[0] * inner_v,
                   u_inf=u_inf)
        try:
            return pcg(op, b, tol=tol, maxiter=maxiter, M=M)
        except ValueError as err:
            if "positive definite" in str(err):
                raise RuntimeError("positivity failed: lambda_0 <= 0") from err
            raise


def _monopole_tail(grid, fld, v_inf, n_shells=8):
    """Fit the angular mean of fld to v_inf + a/r on the outer shells."""
    means = fld.reshape(grid.n_r + 1, -1).mean(axis=1)
    sl = slice(grid.n_r + 1 - n_shells, grid.n_r + 1)
    scale = abs(v_inf) + np.abs(fld).max()
    if np.ptp(means[sl]) < 1e-9 * max(scale, 1e-30):
        return 0.0, 1.0
    _, a, r2 = fit_inverse_r_tail(grid.r[sl], means[sl], v_inf=v_inf)
    return a, r2


class FieldSolution:
    """A converged solve: field, residual, iterations and far-tail fit."""

    def __init__(self, problem, field, info, tol, tail_r2_min=0.9):
        self.field = field
        self.residual = float(info["residual"])
        self.iterations = int(info["iterations"])
        if not info["converged"]:
            raise RuntimeError(
                f"solver did not converge after {self.iterations} iterations "
                f"(relative residual {self.residual:.3e})")
        self.tail_coefficient, self.tail_r2 = _monopole_tail(
            problem.grid, field, problem.v_inf)
        if self.tail_r2 < tail_r2_min:
            raise RuntimeError(
                f"far tail is not 1/r (fit r^2 = {self.tail_r2:.3f})")


class KernelProbe:
    """A mollified Green's-function or Poisson-kernel column.

    The field is checked against the sign the kernel must carry; data_mass
    holds the integral of the unnormalized mollifier so reconstructions can
    undo the normalization.
    """

    def __init__(self, kind, point, field, width, grid, data_mass=1.0):
        if kind not in ("green", "poisson"):
            raise ValueError(f"unknown probe kind {kind!r}")
        self.kind = kind
        self.point = np.asarray(point, dtype=float)
        self.field = field
        self.width = float(width)
        self.data_mass = float(data_mass)
        self._grid = grid
        slack = 1e-8 * max(np.abs(field).max(), 1e-30)
        if kind == "green" and field.max() > slack:
            raise RuntimeError("Green probe changed sign")
        if kind == "poisson" and field.min() < -slack:
            raise RuntimeError("Poisson probe changed sign")

    def tail_decay(self, n_shells=8):
        """(coefficient, r^2) of the |field| ~ a/r monopole tail."""
        return _monopole_tail(self._grid, np.abs(self.field), 0.0,
                              n_shells=n_shells)


# ------------------------------------------------------------------ solves

def solve_dirichlet(p, tol=1e-10, maxiter=300):
    """Solve L v = -f/8 with v = boundary data on the inner sphere.

    The far closure is the monopole Robin condition toward v_inf.  Raises
    on an indefinite operator and on non-convergence.
    """
    src = None
    if p.source is not None:
        src = p.factor**5 * p.source / 8.0
    V, info = p._solve_raw(src, p.boundary_value, p.v_inf, tol, maxiter)
    return FieldSolution(p, V / p.factor, info, tol)


def barrier_solution(p, tol=1e-10, maxiter=300):
    """Solve L nu = 0 with nu = 0 on the boundary and nu -> 1 at infinity.

    The result is confined to [0, 1] by the discrete maximum principle;
    leaving that range (beyond solver noise) is reported as an error.
    """
    V, info = p._solve_raw(None, np.zeros(p.grid.shape[1:]), 1.0,
                           tol, maxiter)
    prob = _Shadow(p, v_inf=1.0)
    sol = FieldSolution(prob, V / p.factor, info, tol)
    lo, hi = sol.field.min(), sol.field.max()
    if lo < -1e-8 or hi > 1.0 + 1e-8:
        raise RuntimeError(f"barrier left [0, 1]: range [{lo:.3e}, {hi:.3e}]")
    return sol


class _Shadow:
    """Problem stand-in with an overridden far-field value."""

    def __init__(self, p, v_inf):
        self.grid = p.grid
        self.v_inf = v_inf


# -------------------------------------------------------------- eigenvalue

def lowest_eigenvalue(p, tol=1e-7, maxiter=400):
    """Smallest eigenvalue of -L on the truncated domain, L^2(g) metric.

    Homogeneous Dirichlet closure at both ends; returns the generalized
    Rayleigh minimum of the flat-variable operator against the g-volume
    mass matrix.  A positive value certifies the problem for kernel probes.
    """
    g = p.grid
    op = StencilOperator(g, potential=p._potential, outer_bc="dirichlet")
    A = op.to_sparse()
    keep = ~op.dirichlet_mask().ravel()
    Ai = A[keep][:, keep].tocsr()
    Bd = (p.factor**4 * op.vol).ravel()[keep]
    M = Multigrid(op)
    shape = g.shape

    def vcycle(x):
        cols = x.reshape(x.shape[0], -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            full = np.zeros(shape).ravel()
            full[keep] = cols[:, j]
            out[:, j] = M(full.reshape(shape)).ravel()[keep]
        return out.reshape(x.shape)

    n = int(keep.sum())
    prec = LinearOperator((n, n), matvec=vcycle, matmat=vcycle)
    prof = np.sin(np.pi * (g.r - g.r_inner) / (g.r_outer - g.r_inner)) / g.r
    x0 = np.broadcast_to(prof[:, None, None], shape).ravel()[keep]
    vals, vecs = lobpcg(Ai, x0[:, None], B=diags(Bd), M=prec,
                        largest=False, tol=tol, maxiter=maxiter)
    lam = float(vals[0])
    x = vecs[:, 0]
    res = np.linalg.norm(Ai @ x - lam * Bd * x)
    scale = np.linalg.norm(Bd * x) * max(abs(lam), 1.0)
    if res > 1e3 * tol * scale:
        raise RuntimeError(
            f"eigenvalue iteration stagnated (residual {res:.3e})")
    p._eigenvalue = lam
    return lam


# ------------------------------------------------------------------ probes

def _require_certificate(p):
    if not p.certified:
        raise RuntimeError(
            "positivity certificate missing; run lowest_eigenvalue first")


def _node_positions(grid):
    st = grid.sin_theta[None, :, :]
    ct = np.cos(grid.sphere.theta)[None, :, :]
    cp = np.cos(grid.sphere.phi)[None, :, :]
    sp = np.sin(grid.sphere.phi)[None, :, :]
    return np.stack([grid.rad * st * cp, grid.rad * st * sp,
                     grid.rad * ct], axis=-1)


def greens_probe(p, point, width=None, tol=1e-10, maxiter=300):
    """Column of the Green's function at an interior point, mollified.

    Solves L u = m with homogeneous data, m a hat of the given physical
    width normalized to unit g-volume integral.  The returned field is
    <= 0 everywhere for a certified problem.
    """
    _require_certificate(p)
    g = p.grid
    point = np.asarray(point, dtype=float)
    rx = float(np.linalg.norm(point))
    if width is None:
        width = 1.5 * rx * np.hypot(g.hxi, g.sphere.dxi)
    if rx - width <= g.r_inner or rx + width >= g.r_outer:
        raise ValueError(
            "probe point must lie inside the domain with mollifier clearance")
    dist = np.linalg.norm(_node_positions(g) - point, axis=-1)
    hat = np.clip(1.0 - dist / width, 0.0, None)
    mass = float(np.sum(hat * p.factor**6 * g.cell_volumes()))
    if mass <= 0.0:
        raise ValueError("mollifier width too small for the grid")
    hat /= mass
    V, info = p._solve_raw(-p.factor**5 * hat, np.zeros(g.shape[1:]),
                           0.0, tol, maxiter)
    if not info["converged"]:
        raise RuntimeError(
            f"solver did not converge after {info['iterations']} iterations "
            f"(relative residual {info['residual']:.3e})")
    return KernelProbe("green", point, V / p.factor, width, g)


def _boundary_hat(grid, theta, phi, width):
    """Great-circle hat of the given angular width on the inner sphere."""
    x = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                  np.cos(theta)])
    sp = grid.sphere
    st = np.sin(sp.theta)
    nodes = np.stack([st * np.cos(sp.phi), st * np.sin(sp.phi),
                      np.cos(sp.theta)], axis=-1)
    ang = np.arccos(np.clip(nodes @ x, -1.0, 1.0))
    return np.clip(1.0 - ang / width, 0.0, None), x


def poisson_probe(p, theta, phi, width=None, tol=1e-10, maxiter=300):
    """Column of the Poisson kernel at a boundary point, mollified.

    Solves with a normalized hat of the given angular width as boundary
    data and zero source/far field.  The field is >= 0 everywhere for a
    certified problem; data_mass holds the hat's boundary-area integral.
    """
    _require_certificate(p)
    g = p.grid
    if width is None:
        width = 3.0 * g.sphere.dxi
    hat, x = _boundary_hat(g, theta, phi, width)
    area = float(g.sphere.integrate(hat * p.factor[0] ** 4)) * g.r_inner**2
    if area <= 0.0:
        raise ValueError("mollifier width too small for the grid")
    V, info = p._solve_raw(None, hat, 0.0, tol, maxiter)
    if not info["converged"]:
        raise RuntimeError(
            f"solver did not converge after {info['iterations']} iterations "
            f"(relative residual {info['residual']:.3e})")
    return KernelProbe("poisson", g.r_inner * x, V / p.factor / area,
                       width, g, data_mass=area)


def reproducing_check(p, data, partition=(6, 12), tol=1e-10):
    """Reconstruct a Dirichlet solve from Poisson-kernel probes.

    Runs one probe per node of a coarse hat partition of unity on the
    boundary sphere, reconstructs the solution for the given boundary data
    callable data(theta, phi), and returns (reconstructed, direct) fields.
    The two differ by the interpolation error of the partition, so the
    comparison exercises the kernel route end to end.
    """
    _require_certificate(p)
    g = p.grid
    sp = g.sphere
    m, n = partition
    dth, dph = np.pi / m, 2.0 * np.pi / n

    def tri(x):
        return np.clip(1.0 - np.abs(x), 0.0, None)

    rec = np.zeros(g.shape)
    total = np.zeros(sp.theta.shape)
    for a in range(m + 1):
        th_a = a * dth
        wth = tri((sp.theta - th_a) / dth)
        if a in (0, m):
            nodes = [(th_a, 0.0, wth)]
        else:
            nodes = []
            for b in range(n):
                ph_b = b * dph
                dphi = (sp.phi - ph_b + np.pi) % (2.0 * np.pi) - np.pi
                nodes.append((th_a, ph_b, wth * tri(dphi / dph)))
        for th_a, ph_b, hat in nodes:
            total += hat
            V, info = p._solve_raw(None, hat, 0.0, tol, 300)
            rec += (V / p.factor) * float(data(th_a, ph_b))
    if np.abs(total - 1.0).max() > 1e-12:
        raise RuntimeError("boundary partition of unity failed")
    direct = solve_dirichlet(
        _with_data(p, data(sp.theta, sp.phi)), tol=tol).field
    return rec, direct


def _with_data(p, boundary_value):
    q = EllipticProblem.__new__(EllipticProblem)
    q.__dict__.update(p.__dict__)
    q.boundary_value = np.broadcast_to(
        np.asarray(boundary_value, dtype=float), p.grid.shape[1:]).copy()
    q.v_inf = 0.0
    q.source = None
    return q


# ----------------------------------------------------------------- Harnack

def _cap_points(center, radius, n_samples):
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    seed = np.array([0.0, 0.0, 1.0]) if abs(c[2]) < 0.9 else np.array(
        [1.0, 0.0, 0.0])
    e1 = np.cross(c, seed)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    pts = [c]
    for j in range(n_samples - 1):
        al = 2.0 * np.pi * j / (n_samples - 1)
        pts.append(np.cos(radius) * c
                   + np.sin(radius) * (np.cos(al) * e1 + np.sin(al) * e2))
    return pts


def harnack_ratio(p, cap_center, cap_radius, V_mask, K_mask, n_samples=5,
                  width=None, tol=1e-10, return_samples=False):
    """Boundary-Harnack constant sup_V P / inf_K P over a boundary cap.

    Samples probe points on the cap (center plus a ring at half the cap
    radius), measures the kernel ratio between the open set V and the
    compact set K (boolean node masks), and returns the worst ratio.
    """
    V_mask = np.asarray(V_mask, dtype=bool)
    K_mask = np.asarray(K_mask, dtype=bool)
    if V_mask.shape != p.grid.shape or K_mask.shape != p.grid.shape:
        raise ValueError("V and K masks must match the grid shape")
    if not V_mask.any() or not K_mask.any():
        raise ValueError("V and K masks must be nonempty")
    ratios = []
    for pt in _cap_points(cap_center, cap_radius / 2.0, n_samples):
        th = float(np.arccos(np.clip(pt[2], -1.0, 1.0)))
        ph = float(np.arctan2(pt[1], pt[0]) % (2.0 * np.pi))
        probe = poisson_probe(p, th, ph, width=width, tol=tol)
        top = float(probe.field[V_mask].max())
        bottom = float(probe.field[K_mask].min())
        if bottom <= 1e-14 * max(top, 1e-30):
            raise RuntimeError("kernel vanished on K")
        ratios.append(top / bottom)
    worst = float(max(ratios))
    if return_samples:
        return worst, ratios
    return worst
