"""Flux-form 7-point operators on a RadialGrid and a geometric multigrid PCG.

The operator is the finite-volume discretization of

    A u = (-div grad + potential) u,

rows integrated over control cells: vertex-centred radial cells in
xi = log r (the outermost extended half a cell past r_outer, carrying the
monopole-exact Robin closure d/dr (r (u - u_inf)) = 0), cell-centred
latitude cells whose pole faces have zero area (natural closure), periodic
longitude.  All face coefficients are nonnegative and the diagonal dominates
whenever potential >= 0, so A is a symmetric M-matrix and the discrete
maximum principle holds.

The inner radial boundary is a Dirichlet layer kept as identity rows with
symmetrically eliminated couplings; pure monopole solutions u = c0 + c1/r
are reproduced exactly by the scheme including the Robin closure.

The multigrid rediscretizes on coarsened grids (radial intervals and both
angular counts halved), restricts integrated residuals by the transpose of
the prolongation (radial linear, angular piecewise-constant), and smooths
with red-black Gauss-Seidel ordered to keep the V-cycle symmetric, so it
can precondition conjugate gradients.
"""

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from . import kernels
from .extdomain import RadialGrid
from .spheregrid import SphereGrid

__all__ = ["StencilOperator", "Multigrid", "pcg"]


class StencilOperator:
    """FV form of (-div grad + potential) on a RadialGrid.

    Parameters
    ----------
    grid : RadialGrid
    potential : None or (nr+1, nlat, nlon) array
        Zeroth-order coefficient (e.g. s/8 for the conformal Laplacian).
    outer_bc : "robin" or "dirichlet"
        Far closure: monopole-exact Robin toward u_inf, or a Dirichlet layer.
    """

    def __init__(self, grid, potential=None, outer_bc="robin"):
        if not isinstance(grid, RadialGrid):
            raise TypeError("grid must be a RadialGrid")
        if outer_bc not in ("robin", "dirichlet"):
            raise ValueError(f"unknown outer_bc {outer_bc!r}")
        self.grid = grid
        self.outer_bc = outer_bc
        sp = grid.sphere
        nr, nlat, nlon = grid.n_r, sp.nlat, sp.nlon
        shape = grid.shape
        hxi, hth, hph = grid.hxi, sp.dxi, sp.dphi
        sin_c = np.sin(sp.theta1d)
        sin_f = np.sin(np.arange(1, nlat) * hth)
        rf = grid.r_faces
        dr = (rf[1:] - rf[:-1])[:, None, None]
        ang = (sin_c * hth * hph)[None, :, None]

        c_rm = np.zeros(shape)
        c_rp = np.zeros(shape)
        c_rm[1:] = (rf[1:nr + 1] / hxi)[:, None, None] * ang
        c_rp[:nr] = (rf[1:nr + 1] / hxi)[:, None, None] * ang
        c_tm = np.zeros(shape)
        c_tp = np.zeros(shape)
        c_tm[:, 1:, :] = dr * (sin_f * hph / hth)[None, :, None]
        c_tp[:, :-1, :] = dr * (sin_f * hph / hth)[None, :, None]
        c_p = dr * (hth / (sin_c * hph))[None, :, None] * np.ones(shape)
        c_pm = c_p
        c_pp = c_p.copy()

        vol = (rf[1:] ** 3 - rf[:-1] ** 3)[:, None, None] / 3.0 * ang * np.ones(shape)
        self.vol = vol

        if potential is None:
            potential = np.zeros(shape)
        self.potential = np.asarray(potential, dtype=float) + np.zeros(shape)

        diag = c_rm + c_rp + c_tm + c_tp + c_pm + c_pp + self.potential * vol

        self._robin = None
        if outer_bc == "robin":
            robin = (rf[nr + 1] / hxi) * (1.0 - np.exp(-hxi)) * ang[0]
            diag[nr] += robin
            self._robin = robin

        # inner Dirichlet layer: identity rows, couplings eliminated into rhs
        self._inner_coupling = c_rm[1].copy()
        c_rm[1] = 0.0
        for c in (c_rm, c_rp, c_tm, c_tp, c_pm, c_pp):
            c[0] = 0.0
        diag[0] = 1.0

        self._outer_coupling = None
        if outer_bc == "dirichlet":
            self._outer_coupling = c_rp[nr - 1].copy()
            c_rp[nr - 1] = 0.0
            for c in (c_rm, c_rp, c_tm, c_tp, c_pm, c_pp):
                c[nr] = 0.0
            diag[nr] = 1.0

        self.coeffs = tuple(
            np.ascontiguousarray(a)
            for a in (diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp)
        )

    # ------------------------------------------------------------- operator

    def apply(self, u):
        u = np.ascontiguousarray(u, dtype=float)
        return kernels.apply7(*self.coeffs, u)

    def residual(self, u, b):
        u = np.ascontiguousarray(u, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        return kernels.residual7(*self.coeffs, u, b)

    def smooth(self, u, b, reverse=False):
        """One symmetric-ready red-black sweep (both colors), in place."""
        order = (1, 0) if reverse else (0, 1)
        for color in order:
            kernels.rbgs7(*self.coeffs, u, b, color)
        return u

    # ----------------------------------------------------------------- rhs

    def rhs(self, source=None, inner_value=0.0, u_inf=0.0, outer_value=None):
        """Assemble the FV right-hand side.

        source is a nodal density (integrated against cell volumes);
        inner_value the Dirichlet data on the boundary sphere; u_inf the far
        field entering the Robin closure; outer_value the Dirichlet data at
        r_outer when outer_bc == "dirichlet".
        """
        g = self.grid
        b = np.zeros(g.shape)
        if source is not None:
            b += np.asarray(source, dtype=float) * self.vol
        inner = np.broadcast_to(np.asarray(inner_value, dtype=float), g.shape[1:])
        b[0] = inner
        b[1] += self._inner_coupling * inner
        if self.outer_bc == "robin":
            b[g.n_r] += self._robin * float(u_inf)
        else:
            outer = 0.0 if outer_value is None else outer_value
            outer = np.broadcast_to(np.asarray(outer, dtype=float), g.shape[1:])
            b[g.n_r] = outer
            b[g.n_r - 1] += self._outer_coupling * outer
        return b

    def dirichlet_mask(self):
        """Boolean mask of identity (Dirichlet-layer) rows."""
        m = np.zeros(self.grid.shape, dtype=bool)
        m[0] = True
        if self.outer_bc == "dirichlet":
            m[-1] = True
        return m

    def to_sparse(self):
        """Assemble the operator as a scipy CSR matrix (flattened C order)."""
        diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp = self.coeffs
        ni, nj, nk = self.grid.shape
        idx = np.arange(ni * nj * nk).reshape(ni, nj, nk)
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag.ravel()]

        def add(coef, nb):
            sel = coef != 0.0
            rows.append(idx[sel])
            cols.append(nb[sel])
            vals.append(-coef[sel])

        add(c_rm, np.roll(idx, 1, axis=0))
        add(c_rp, np.roll(idx, -1, axis=0))
        add(c_tm, np.roll(idx, 1, axis=1))
        add(c_tp, np.roll(idx, -1, axis=1))
        add(c_pm, np.roll(idx, 1, axis=2))
        add(c_pp, np.roll(idx, -1, axis=2))
        n = ni * nj * nk
        return coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()


def _can_coarsen(grid):
    sp = grid.sphere
    return (
        grid.n_r % 2 == 0 and sp.nlat % 2 == 0 and sp.nlon % 2 == 0
        and grid.n_r >= 8 and sp.nlat >= 8 and sp.nlon >= 8
    )


def _restrict(fine):
    """Transpose of the prolongation on integrated (FV) quantities."""
    y = fine[::2].copy()
    y[:-1] += 0.5 * fine[1::2]
    y[1:] += 0.5 * fine[1::2]
    nrc1, nlat, nlon = y.shape
    return y.reshape(nrc1, nlat // 2, 2, nlon // 2, 2).sum(axis=(2, 4))


def _prolong(coarse, fine_shape):
    """Radial-linear, angular piecewise-constant interpolation."""
    e = np.repeat(np.repeat(coarse, 2, axis=1), 2, axis=2)
    out = np.zeros(fine_shape)
    out[::2] = e
    out[1::2] = 0.5 * (e[:-1] + e[1:])
    return out


class Multigrid:
    """Geometric V-cycle for a StencilOperator; callable as a preconditioner.

    Levels rediscretize the operator on coarsened grids; the potential is
    volume-averaged down.  The coarsest level (about 500 unknowns) is solved
    with a sparse LU factorization.
    """

    def __init__(self, op, n_pre=2, n_post=2):
        self.ops = [op]
        while _can_coarsen(self.ops[-1].grid):
            f = self.ops[-1]
            g = f.grid
            cs = SphereGrid(g.sphere.nlat // 2, g.sphere.nlon // 2)
            cg = RadialGrid(cs, g.r_inner, g.r_outer, g.n_r // 2)
            pc_num = _restrict(f.potential * f.vol)
            coarse = StencilOperator(cg, potential=None, outer_bc=f.outer_bc)
            pot = pc_num / coarse.vol
            self.ops.append(
                StencilOperator(cg, potential=pot, outer_bc=f.outer_bc)
            )
        self.n_pre = int(n_pre)
        self.n_post = int(n_post)
        self._lu = splu(self.ops[-1].to_sparse().tocsc())

    def vcycle(self, b, level=0):
        op = self.ops[level]
        if level == len(self.ops) - 1:
            return self._lu.solve(b.ravel()).reshape(op.grid.shape)
        u = np.zeros(op.grid.shape)
        for _ in range(self.n_pre):
            op.smooth(u, b)
        r = op.residual(u, b)
        rc = _restrict(r)
        rc[0] = 0.0
        if op.outer_bc == "dirichlet":
            rc[-1] = 0.0
        u += _prolong(self.vcycle(rc, level + 1), op.grid.shape)
        for _ in range(self.n_post):
            op.smooth(u, b, reverse=True)
        return u

    def __call__(self, b):
        return self.vcycle(np.ascontiguousarray(b, dtype=float))


def pcg(op, b, tol=1e-10, maxiter=500, M=None, x0=None):
    """Preconditioned conjugate gradients on A x = b.

    Returns (x, info) with info holding iteration count, final relative
    residual and a convergence flag.  M is any linear callable approximating
    the inverse (e.g. a Multigrid V-cycle).
    """
    b = np.ascontiguousarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = op.residual(x, b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0, "converged": True}
    z = M(r) if M is not None else r.copy()
    p = z.copy()
    rz = float(np.sum(r * z))
    info = {"iterations": 0, "residual": float(np.linalg.norm(r)) / bnorm,
            "converged": False}
    for it in range(1, int(maxiter) + 1):
        Ap = op.apply(p)
        pAp = float(np.sum(p * Ap))
        if pAp <= 0.0:
            raise ValueError("operator is not positive definite on this grid")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        relres = float(np.linalg.norm(r)) / bnorm
        info.update(iterations=it, residual=relres)
        if relres < tol:
            info["converged"] = True
            break
        z = M(r) if M is not None else r.copy()
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, info
