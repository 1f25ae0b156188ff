"""Fundamental forms, Gauss-Codazzi residuals, Bonnet comparison, and the
trace-free divergence (quadratic-differential) kernel on sphere grids.

Tensor fields on the parameter sphere are stored in (theta, phi) coordinate
components, shape (nlat, nlon, ...).  Pole ghosts use the antipodal rule with
a sign equal to (-1)^(number of theta indices) of the component.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .immersion import Immersion, unit_normal_field

__all__ = [
    "FundamentalForms",
    "BartnikData",
    "fundamental_forms",
    "metric_inverse",
    "christoffel_symbols",
    "metric_gauss_curvature",
    "tensor_divergence",
    "tensor_norm_gamma",
    "gauss_codazzi_residual",
    "GaussCodazziResidual",
    "BonnetReport",
    "bonnet_compare",
    "QDKernelReport",
    "quadratic_differential_kernel",
    "sup_norm",
]

_THETA, _PHI = 0, 1


def sup_norm(fld, pole_trim=1):
    """Sup norm over nodes, optionally dropping pole_trim rows at each pole.

    Pole-adjacent rows are handled by the antipodal closure and stay bounded,
    but are not guaranteed clean second order; convergence measurements trim
    them so the reported order reflects the interior scheme.
    """
    fld = np.asarray(fld)
    if pole_trim:
        fld = fld[pole_trim:-pole_trim]
    return float(np.max(np.abs(fld)))


def _parity(indices):
    """Ghost-row sign of a component: (-1)^(# theta indices)."""
    return -1 if sum(1 for k in indices if k == _THETA) % 2 else 1


def _d(grid, fld, axis, indices=()):
    """First derivative of a tensor component field along theta or phi."""
    if axis == _THETA:
        return grid.d_theta(fld, parity=_parity(indices))
    return grid.d_phi(fld)


def _d_tensor(grid, fld, axis, indices):
    """Derivative of a smooth tensor-component field along theta or phi.

    A smooth (0,k)-tensor on the sphere has components with one factor of
    sin(theta) per phi index near the poles.  Theta derivatives factor that
    structure out (differentiate fld / sin^k, multiply back), so the
    discretization error vanishes at the same rate as the component itself;
    plain centered stencils would leave O(h^2) absolute errors that the
    inverse metric then amplifies by 1/sin^2."""
    if axis == _PHI:
        return grid.d_phi(fld)
    k = sum(1 for q in indices if q == _PHI)
    if k == 0:
        return grid.d_theta(fld, parity=_parity(indices))
    s = np.sin(grid.theta)
    w = fld / s**k
    dw = grid.d_theta(w, parity=_parity(indices) * (-1) ** k)
    return s**k * dw + k * np.cos(grid.theta) * s ** (k - 1) * w


@dataclass(frozen=True)
class FundamentalForms:
    """First/second fundamental forms of an immersion.

    gamma, A : (nlat, nlon, 2, 2) symmetric tensor fields
    N : (nlat, nlon, 3) unit outward normal
    H : (nlat, nlon) mean curvature, tr_gamma A
    K : (nlat, nlon) intrinsic Gauss curvature of gamma
    """

    grid: object
    gamma: np.ndarray
    N: np.ndarray
    A: np.ndarray
    H: np.ndarray
    K: np.ndarray
    gamma_inv: np.ndarray = field(repr=False, default=None)

    def area_element(self):
        """sqrt(det gamma) per node (area density wrt dtheta dphi)."""
        return np.sqrt(np.linalg.det(self.gamma))

    def area_weights(self):
        return self.area_element() * self.grid.param_weights

    def bartnik_data(self):
        return BartnikData(self.gamma, self.H)


@dataclass(frozen=True)
class BartnikData:
    """Boundary data pair (gamma, H)."""

    gamma: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        det = np.linalg.det(self.gamma)
        if np.any(det <= 0) or np.any(self.gamma[..., 0, 0] <= 0):
            raise ValueError("boundary metric must be positive definite")
        if not np.all(np.isfinite(self.H)):
            raise ValueError("mean curvature must be finite")


def metric_inverse(gamma):
    det = gamma[..., 0, 0] * gamma[..., 1, 1] - gamma[..., 0, 1] ** 2
    if np.any(det <= 0):
        raise ValueError("degenerate metric")
    inv = np.empty_like(gamma)
    inv[..., 0, 0] = gamma[..., 1, 1] / det
    inv[..., 1, 1] = gamma[..., 0, 0] / det
    inv[..., 0, 1] = inv[..., 1, 0] = -gamma[..., 0, 1] / det
    return inv


def _metric_derivatives(grid, gamma, structured=True):
    """dgamma[c, a, b] = partial_c gamma_ab with pole-parity ghosts."""
    deriv = _d_tensor if structured else _d
    dg = np.empty(gamma.shape[:2] + (2, 2, 2))
    for a in range(2):
        for b in range(a, 2):
            for c in range(2):
                dg[..., c, a, b] = deriv(grid, gamma[..., a, b], c, indices=(a, b))
                dg[..., c, b, a] = dg[..., c, a, b]
    return dg


def christoffel_symbols(grid, gamma, gamma_inv=None, structured=True):
    """Gamma^a_{bc} of a 2-metric field, shape (nlat, nlon, 2, 2, 2).

    structured=True factors the sin^k pole vanishing out of theta
    derivatives of the metric (right choice for first-order operators such
    as the divergence); curvature assemblies that rely on cancellation
    between Christoffel products and their derivatives should pass
    structured=False so every term carries the same discrete symbol.
    """
    if gamma_inv is None:
        gamma_inv = metric_inverse(gamma)
    dg = _metric_derivatives(grid, gamma, structured=structured)
    Gr = np.empty(gamma.shape[:2] + (2, 2, 2))
    for a in range(2):
        for b in range(2):
            for c in range(b, 2):
                s = 0.0
                for d in range(2):
                    s = s + gamma_inv[..., a, d] * (
                        dg[..., b, d, c] + dg[..., c, b, d] - dg[..., d, b, c]
                    )
                Gr[..., a, b, c] = 0.5 * s
                Gr[..., a, c, b] = Gr[..., a, b, c]
    return Gr


def metric_gauss_curvature(grid, gamma):
    """Intrinsic Gauss curvature K of a 2-metric field (via R_1212 / det)."""
    ginv = metric_inverse(gamma)
    Gr = christoffel_symbols(grid, gamma, ginv, structured=False)
    # R^a_{phi theta phi} = d_theta Gamma^a_{phi phi} - d_phi Gamma^a_{theta phi}
    #                      + Gamma^a_{theta e} Gamma^e_{phi phi}
    #                      - Gamma^a_{phi e} Gamma^e_{theta phi}
    R_upper = []
    for a in range(2):
        idx_tpp = (a, _PHI, _PHI)
        idx_ttp = (a, _THETA, _PHI)
        term = _d(grid, Gr[..., a, _PHI, _PHI], _THETA, indices=idx_tpp)
        term = term - _d(grid, Gr[..., a, _THETA, _PHI], _PHI, indices=idx_ttp)
        for e in range(2):
            term = term + Gr[..., a, _THETA, e] * Gr[..., e, _PHI, _PHI]
            term = term - Gr[..., a, _PHI, e] * Gr[..., e, _THETA, _PHI]
        R_upper.append(term)
    R_lower = gamma[..., _THETA, 0] * R_upper[0] + gamma[..., _THETA, 1] * R_upper[1]
    det = gamma[..., 0, 0] * gamma[..., 1, 1] - gamma[..., 0, 1] ** 2
    return R_lower / det


def tensor_divergence(grid, gamma, T, gamma_inv=None, christoffels=None):
    """(div T)_b = gamma^{ac} (d_a T_cb - Gamma^d_{ac} T_db - Gamma^d_{ab} T_cd).

    T: symmetric (0,2) tensor field (nlat, nlon, 2, 2); returns a 1-form
    field (nlat, nlon, 2).
    """
    if gamma_inv is None:
        gamma_inv = metric_inverse(gamma)
    if christoffels is None:
        christoffels = christoffel_symbols(grid, gamma, gamma_inv)
    out = np.zeros(T.shape[:2] + (2,))
    for b in range(2):
        acc = np.zeros(T.shape[:2])
        for a in range(2):
            for c in range(2):
                dT = _d_tensor(grid, T[..., c, b], a, indices=(c, b))
                corr = np.zeros_like(dT)
                for d in range(2):
                    corr = corr + christoffels[..., d, a, c] * T[..., d, b]
                    corr = corr + christoffels[..., d, a, b] * T[..., c, d]
                acc = acc + gamma_inv[..., a, c] * (dT - corr)
        out[..., b] = acc
    return out


def tensor_norm_gamma(gamma, T, gamma_inv=None):
    """Pointwise gamma-norm |T|^2 = gamma^{ac} gamma^{bd} T_ab T_cd, sqrt taken."""
    if gamma_inv is None:
        gamma_inv = metric_inverse(gamma)
    up = np.einsum("...ac,...bd,...cd->...ab", gamma_inv, gamma_inv, T)
    return np.sqrt(np.einsum("...ab,...ab->...", up, T))


def fundamental_forms(F):
    """First and second fundamental forms of an immersion.

    Returns gamma, outward unit normal N, A (sign convention: round sphere of
    radius a has A = gamma/a, H = 2/a > 0), H = tr_gamma A, and the intrinsic
    Gauss curvature K of gamma.
    """
    if not isinstance(F, Immersion):
        raise TypeError("fundamental_forms expects an Immersion")
    g = F.grid
    Ft, Fp = F.tangents()
    gamma = np.empty(g.shape + (2, 2))
    gamma[..., 0, 0] = np.einsum("...k,...k->...", Ft, Ft)
    gamma[..., 0, 1] = gamma[..., 1, 0] = np.einsum("...k,...k->...", Ft, Fp)
    gamma[..., 1, 1] = np.einsum("...k,...k->...", Fp, Fp)
    N = unit_normal_field(F)

    # Second coordinate derivatives of the position, as compositions of the
    # first-difference operators (Cartesian components are plain scalars for
    # the pole rule; a first theta derivative flips parity).  Composing keeps
    # the discrete symbol consistent with gamma = <DF, DF>, so round spheres
    # come out exactly umbilic (A proportional to gamma to round-off).
    second = np.empty(g.shape + (2, 2, 3))
    for k in range(3):
        second[..., 0, 0, k] = g.d_theta(Ft[..., k], parity=-1)
        second[..., 0, 1, k] = second[..., 1, 0, k] = g.d_theta(Fp[..., k], parity=1)
        second[..., 1, 1, k] = g.d_phi(Fp[..., k])
    A = -np.einsum("...abk,...k->...ab", second, N)

    ginv = metric_inverse(gamma)
    H = np.einsum("...ab,...ab->...", ginv, A)
    K = metric_gauss_curvature(g, gamma)
    return FundamentalForms(grid=g, gamma=gamma, N=N, A=A, H=H, K=K, gamma_inv=ginv)


@dataclass(frozen=True)
class GaussCodazziResidual:
    """Residual fields of the Gauss and Codazzi equations."""

    codazzi: np.ndarray       # 1-form field delta_gamma(A - H gamma), (nlat, nlon, 2)
    codazzi_norm: np.ndarray  # pointwise gamma-norm of the codazzi field
    gauss: np.ndarray         # scalar field K * det gamma - det A
    codazzi_sup: float
    gauss_sup: float


def gauss_codazzi_residual(forms):
    """delta_gamma(A - H gamma) and the Gauss-equation defect of one immersion.

    The Gauss residual is reported in the multiplied form
    K * det(gamma) - det(A), which stays clean at the coordinate poles
    (dividing by det gamma ~ sin^2 would amplify pole-row errors).  Both
    fields converge to zero at scheme order for analytic immersions.  The
    reported sup norms trim one pole row (see sup_norm).
    """
    gamma, A, H = forms.gamma, forms.A, forms.H
    T = A - H[..., None, None] * gamma
    cod = tensor_divergence(forms.grid, gamma, T, gamma_inv=forms.gamma_inv)
    detg = gamma[..., 0, 0] * gamma[..., 1, 1] - gamma[..., 0, 1] ** 2
    detA = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] ** 2
    gauss = forms.K * detg - detA
    # Norm the 1-form with the metric so the number is parametrization-fair.
    cod_norm = np.sqrt(
        np.einsum("...ab,...a,...b->...", forms.gamma_inv, cod, cod)
    )
    return GaussCodazziResidual(
        codazzi=cod,
        codazzi_norm=cod_norm,
        gauss=gauss,
        codazzi_sup=sup_norm(cod_norm),
        gauss_sup=sup_norm(gauss),
    )


@dataclass(frozen=True)
class BonnetReport:
    """Outcome of comparing two immersions with matching (gamma, H)."""

    congruent: bool
    alignment_rms: float          # proper-rotation Procrustes residual
    reflection_rms: float         # best residual allowing a reflection
    diameter: float
    sup_D: float                  # sup |A1 - A2|_gamma
    trace_norm: float             # sup |tr_gamma D|
    divergence_norm: float        # sup |delta_gamma D|_gamma
    data_gamma_dev: float
    data_H_dev: float
    rotation: np.ndarray
    translation: np.ndarray


def _procrustes(X1, X2, w, proper=True):
    c1 = (w[..., None] * X1).sum((0, 1)) / w.sum()
    c2 = (w[..., None] * X2).sum((0, 1)) / w.sum()
    Y1, Y2 = X1 - c1, X2 - c2
    M = np.einsum("ij,ijk,ijl->kl", w, Y2, Y1)
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    S = np.diag([1.0, 1.0, d if proper else -d])
    R = U @ S @ Vt
    T = c2 - R @ c1
    resid = np.einsum("ijk,lk->ijl", X1, R) + T - X2
    rms = float(np.sqrt((w * np.einsum("...k,...k->...", resid, resid)).sum() / w.sum()))
    return R, T, rms


def bonnet_compare(F1, F2, data_tol=1e-6, congruence_tol=1e-6):
    """Compare two immersions inducing the same Bartnik data.

    Requires (gamma, H) of both to agree within data_tol (relative);
    otherwise raises ValueError("data mismatch...").  Reports the difference
    of second fundamental forms and a congruence verdict from an
    area-weighted Procrustes fit: congruent iff the proper-rotation RMS
    residual is below congruence_tol x diameter.
    """
    if F1.grid is not F2.grid and F1.grid.shape != F2.grid.shape:
        raise ValueError("immersions must live on grids of the same shape")
    f1, f2 = fundamental_forms(F1), fundamental_forms(F2)
    gscale = float(np.max(np.abs(f1.gamma)))
    hscale = float(np.max(np.abs(f1.H)))
    gdev = float(np.max(np.abs(f1.gamma - f2.gamma))) / gscale
    hdev = float(np.max(np.abs(f1.H - f2.H))) / hscale
    if gdev > data_tol or hdev > data_tol:
        raise ValueError(
            f"data mismatch: relative deviations gamma {gdev:.3e}, H {hdev:.3e} "
            f"exceed tolerance {data_tol:.3e}"
        )

    D = f1.A - f2.A
    trD = np.einsum("...ab,...ab->...", f1.gamma_inv, D)
    divD = tensor_divergence(F1.grid, f1.gamma, D, gamma_inv=f1.gamma_inv)
    div_norm = np.sqrt(np.einsum("...ab,...a,...b->...", f1.gamma_inv, divD, divD))

    w = f1.area_weights()
    R, T, rms = _procrustes(F1.X, F2.X, w, proper=True)
    _, _, rms_refl = _procrustes(F1.X, F2.X, w, proper=False)
    diam = max(F1.diameter(), F2.diameter())
    return BonnetReport(
        congruent=bool(rms < congruence_tol * diam),
        alignment_rms=rms,
        reflection_rms=rms_refl,
        diameter=diam,
        sup_D=sup_norm(tensor_norm_gamma(f1.gamma, D, f1.gamma_inv)),
        trace_norm=sup_norm(trD),
        divergence_norm=sup_norm(div_norm),
        data_gamma_dev=gdev,
        data_H_dev=hdev,
        rotation=R,
        translation=T,
    )


# --------------------------------------------------------------------------
# Trace-free divergence system (holomorphic quadratic differentials)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QDKernelReport:
    sigma_min: float
    sigma_median: float
    kernel_dim: int
    smallest: np.ndarray       # a few smallest singular values
    method: str                # "modes" (azimuthal blocks) or "dense"
    threshold: float


def _tracefree_coefficients(grid, gamma):
    """Coefficient fields of the first-order operator u -> div(T[u]).

    The trace-free symmetric tensor is parametrized pointwise by
    u = (T_tt, T_tp), with T_pp = -(g^tt T_tt + 2 g^tp T_tp)/g^pp.
    Returns (C0, Ct, Cp): each (nlat, nlon, 2 outputs, 2 unknowns), the
    coefficients of u, d_theta u, d_phi u.
    """
    ginv = metric_inverse(gamma)
    Gr = christoffel_symbols(grid, gamma, ginv)
    alpha = -ginv[..., 0, 0] / ginv[..., 1, 1]
    beta = -2.0 * ginv[..., 0, 1] / ginv[..., 1, 1]
    # P[c,d,u]: T_cd = sum_u P[c,d,u] * u;  alpha is even, beta odd under the
    # pole reflection (inherits the parity of g^tp).
    P = np.zeros(grid.shape + (2, 2, 2))
    P[..., 0, 0, 0] = 1.0
    P[..., 0, 1, 1] = P[..., 1, 0, 1] = 1.0
    P[..., 1, 1, 0] = alpha
    P[..., 1, 1, 1] = beta
    dP = np.zeros(grid.shape + (2, 2, 2, 2))  # [..., deriv axis, c, d, u]
    dP[..., 0, 1, 1, 0] = grid.d_theta(alpha, parity=1)
    dP[..., 1, 1, 1, 0] = grid.d_phi(alpha)
    dP[..., 0, 1, 1, 1] = grid.d_theta(beta, parity=-1)
    dP[..., 1, 1, 1, 1] = grid.d_phi(beta)

    C0 = np.zeros(grid.shape + (2, 2))
    Ct = np.zeros(grid.shape + (2, 2))
    Cp = np.zeros(grid.shape + (2, 2))
    for b in range(2):
        for u in range(2):
            for a in range(2):
                for c in range(2):
                    gac = ginv[..., a, c]
                    if a == 0:
                        Ct[..., b, u] += gac * P[..., c, b, u]
                    else:
                        Cp[..., b, u] += gac * P[..., c, b, u]
                    C0[..., b, u] += gac * dP[..., a, c, b, u]
                    for d in range(2):
                        C0[..., b, u] -= gac * (
                            Gr[..., d, a, c] * P[..., d, b, u]
                            + Gr[..., d, a, b] * P[..., c, d, u]
                        )
    return C0, Ct, Cp


_UNKNOWN_PARITY = (1, -1)   # (T_tt, T_tp) under the pole reflection
_OUTPUT_PARITY = (-1, 1)    # (div T)_theta, (div T)_phi


class _Triplets:
    """Accumulator for sparse COO triplets."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, r, c, v):
        self.rows.append(np.asarray(r).ravel())
        self.cols.append(np.asarray(c).ravel())
        self.vals.append(np.asarray(v, dtype=float).ravel())

    def matrix(self, shape):
        return sp.csr_matrix(
            (
                np.concatenate(self.vals),
                (np.concatenate(self.rows), np.concatenate(self.cols)),
            ),
            shape=shape,
        )


def _ghost_row(i, j, nlat, half, nlon):
    """Map latitude indices past the poles to their antipodal rows.

    Returns (i_mapped, j_mapped, crossed) where crossed flags nodes whose
    value must additionally be multiplied by the field's parity.
    """
    i = np.asarray(i).copy()
    j = np.asarray(j).copy()
    crossed = (i < 0) | (i >= nlat)
    north = i < 0
    south = i >= nlat
    i[north] = -1 - i[north]
    i[south] = 2 * nlat - 1 - i[south]
    j[crossed] = (j[crossed] + half) % nlon
    return i, j, crossed


def _assemble_tracefree_divergence(grid, gamma):
    """Stacked least-squares collocation of the trace-free divergence.

    Three collocation families are assembled: grid nodes, phi-staggered
    half-points (i, j+1/2), and theta-staggered faces (i+1/2, j) including
    the pole faces.  The square node-collocated system alone inherits ~6
    spurious near-zero singular values from the 6-dimensional continuum
    cokernel (conformal Killing forms); the staggered rows restore the
    discrete lower bound, so singular values converge to the continuum ones.

    Returns (L, Wout_blocks) with L of shape (n_out, 2 N) and Wout_blocks an
    (n_out/2, 2, 2) array of SPD output-weight blocks (area-weighted
    inverse-metric norms, averaged to the collocation points, scaled by 1/3
    per family).
    """
    nlat, nlon = grid.shape
    N = nlat * nlon
    half = nlon // 2
    C0, Ct, Cp = _tracefree_coefficients(grid, gamma)
    dA = np.sqrt(np.linalg.det(gamma)) * grid.param_weights
    ginv = metric_inverse(gamma)
    Wnode = ginv * dA[..., None, None]

    trip = _Triplets()

    def node(i, j):
        return i * nlon + j

    def add_centered_theta(rows, I, J, coef, u, jmap=None):
        """coef * centered d_theta u at rows; J may be phi-shifted via jmap."""
        Jc = J if jmap is None else jmap
        ct = coef / (2.0 * grid.dxi) / grid._mp[I]
        for s, off in ((1.0, 1), (-1.0, -1)):
            ii, jj, crossed = _ghost_row(I + off, Jc, nlat, half, nlon)
            sign = np.where(crossed, _UNKNOWN_PARITY[u], 1.0)
            trip.add(rows, 2 * node(ii, jj) + u, s * ct * sign)

    I, J = np.meshgrid(np.arange(nlat), np.arange(nlon), indexing="ij")

    # ---- family 0: node collocation --------------------------------------
    base = 0
    for b in range(2):
        for u in range(2):
            r = base + 2 * node(I, J) + b
            trip.add(r, 2 * node(I, J) + u, C0[..., b, u])
            cp = Cp[..., b, u] / (2.0 * grid.dphi)
            trip.add(r, 2 * node(I, (J + 1) % nlon) + u, cp)
            trip.add(r, 2 * node(I, (J - 1) % nlon) + u, -cp)
            add_centered_theta(r, I, J, Ct[..., b, u], u)

    # ---- family 1: phi-staggered (i, j + 1/2) ----------------------------
    base1 = 2 * N
    rollm = lambda X: 0.5 * (X + np.roll(X, -1, axis=1))
    for b in range(2):
        for u in range(2):
            C0h = rollm(C0[..., b, u])
            Cth = rollm(Ct[..., b, u])
            Cph = rollm(Cp[..., b, u])
            r = base1 + 2 * node(I, J) + b
            # compact d_phi across the half point
            trip.add(r, 2 * node(I, (J + 1) % nlon) + u, Cph / grid.dphi)
            trip.add(r, 2 * node(I, J) + u, -Cph / grid.dphi)
            # averaged zeroth-order term
            trip.add(r, 2 * node(I, J) + u, 0.5 * C0h)
            trip.add(r, 2 * node(I, (J + 1) % nlon) + u, 0.5 * C0h)
            # averaged centered d_theta
            add_centered_theta(r, I, J, 0.5 * Cth, u)
            add_centered_theta(r, I, J, 0.5 * Cth, u, jmap=(J + 1) % nlon)

    # ---- family 2: theta-staggered faces (f = 0..nlat) -------------------
    base2 = 4 * N
    nfl = nlat + 1
    F, Jf = np.meshgrid(np.arange(nfl), np.arange(nlon), indexing="ij")
    Ia = F - 1          # lower row (may be north ghost)
    Ib = F              # upper row (may be south ghost)
    theta_ext = np.concatenate(
        [[-grid.theta1d[0]], grid.theta1d, [2 * np.pi - grid.theta1d[-1]]]
    )
    # theta(Ib) - theta(Ia) with ghost-row positions; ext index = row + 1
    dth_face = theta_ext[F + 1] - theta_ext[F]

    def face_coeff(C, b, u):
        """Average a coefficient field to faces with ghost-parity rows."""
        par = _OUTPUT_PARITY[b] * _UNKNOWN_PARITY[u]
        pad = np.concatenate(
            [
                par * np.roll(C[0:1], half, axis=1),
                C,
                par * np.roll(C[-1:], half, axis=1),
            ],
            axis=0,
        )
        return 0.5 * (pad[:-1] + pad[1:])

    for b in range(2):
        for u in range(2):
            Cf0 = face_coeff(C0[..., b, u], b, u)
            Cft = face_coeff(Ct[..., b, u], b, u)
            Cfp = face_coeff(Cp[..., b, u], b, u)
            r = base2 + 2 * (F * nlon + Jf) + b
            # compact d_theta across the face
            ia, ja, ca = _ghost_row(Ia, Jf, nlat, half, nlon)
            ib, jb, cb = _ghost_row(Ib, Jf, nlat, half, nlon)
            sa = np.where(ca, _UNKNOWN_PARITY[u], 1.0)
            sb = np.where(cb, _UNKNOWN_PARITY[u], 1.0)
            trip.add(r, 2 * node(ib, jb) + u, Cft / dth_face * sb)
            trip.add(r, 2 * node(ia, ja) + u, -Cft / dth_face * sa)
            # averaged zeroth-order term
            trip.add(r, 2 * node(ia, ja) + u, 0.5 * Cf0 * sa)
            trip.add(r, 2 * node(ib, jb) + u, 0.5 * Cf0 * sb)
            # averaged centered d_phi
            cp = Cfp / (2.0 * grid.dphi)
            for rows_half, ii, jj, sgn in (
                (r, ia, ja, sa),
                (r, ib, jb, sb),
            ):
                trip.add(rows_half, 2 * node(ii, (jj + 1) % nlon) + u, 0.5 * cp * sgn)
                trip.add(rows_half, 2 * node(ii, (jj - 1) % nlon) + u, -0.5 * cp * sgn)

    n_out = 4 * N + 2 * nfl * nlon
    L = trip.matrix((n_out, 2 * N))

    # ---- output weights ---------------------------------------------------
    def face_weight_blocks(W):
        Wf = np.empty((nfl, nlon, 2, 2))
        for b in range(2):
            for bp in range(2):
                par = _OUTPUT_PARITY[b] * _OUTPUT_PARITY[bp]
                C = W[..., b, bp]
                pad = np.concatenate(
                    [
                        par * np.roll(C[0:1], half, axis=1),
                        C,
                        par * np.roll(C[-1:], half, axis=1),
                    ],
                    axis=0,
                )
                Wf[..., b, bp] = 0.5 * (pad[:-1] + pad[1:])
        return Wf

    Wphi = 0.5 * (Wnode + np.roll(Wnode, -1, axis=1))
    Wtheta = face_weight_blocks(Wnode)
    blocks = np.concatenate(
        [
            Wnode.reshape(-1, 2, 2),
            Wphi.reshape(-1, 2, 2),
            Wtheta.reshape(-1, 2, 2),
        ],
        axis=0,
    ) / 3.0
    return L, blocks


def _input_weights(grid, gamma):
    """Per-node 2x2 SPD input-weight blocks.

    Input norm: |T[u]|_gamma^2 node-wise as a quadratic form in the
    parameters u = (T_tt, T_tp), scaled by the node's area weight.
    """
    ginv = metric_inverse(gamma)

    def tnorm2(u0, u1):
        T = np.zeros(grid.shape + (2, 2))
        alpha = -ginv[..., 0, 0] / ginv[..., 1, 1]
        beta = -2.0 * ginv[..., 0, 1] / ginv[..., 1, 1]
        T[..., 0, 0] = u0
        T[..., 0, 1] = T[..., 1, 0] = u1
        T[..., 1, 1] = alpha * u0 + beta * u1
        up = np.einsum("...ac,...bd,...cd->...ab", ginv, ginv, T)
        return np.einsum("...ab,...ab->...", up, T)

    m00 = tnorm2(1.0, 0.0)
    m11 = tnorm2(0.0, 1.0)
    m01 = 0.5 * (tnorm2(1.0, 1.0) - m00 - m11)
    dA = np.sqrt(np.linalg.det(gamma)) * grid.param_weights
    Win = np.empty(grid.shape + (2, 2))
    Win[..., 0, 0] = m00 * dA
    Win[..., 0, 1] = Win[..., 1, 0] = m01 * dA
    Win[..., 1, 1] = m11 * dA
    return Win


def _block_sqrt(W, inverse=False):
    """Analytic square root (or inverse square root) of 2x2 SPD blocks."""
    a, b, c = W[..., 0, 0], W[..., 0, 1], W[..., 1, 1]
    det = a * c - b * b
    tr = a + c
    s = np.sqrt(det)
    t = np.sqrt(tr + 2.0 * s)
    R = np.empty_like(W)
    R[..., 0, 0] = (a + s) / t
    R[..., 0, 1] = R[..., 1, 0] = b / t
    R[..., 1, 1] = (c + s) / t
    if inverse:
        rdet = R[..., 0, 0] * R[..., 1, 1] - R[..., 0, 1] ** 2
        Ri = np.empty_like(R)
        Ri[..., 0, 0] = R[..., 1, 1] / rdet
        Ri[..., 1, 1] = R[..., 0, 0] / rdet
        Ri[..., 0, 1] = Ri[..., 1, 0] = -R[..., 0, 1] / rdet
        return Ri
    return R


def _block_diag_sparse(blocks):
    """Sparse block-diagonal matrix from (M, 2, 2) blocks."""
    B = np.asarray(blocks).reshape(-1, 2, 2)
    n = B.shape[0]
    rows = np.repeat(2 * np.arange(n), 4) + np.tile([0, 0, 1, 1], n)
    cols = np.repeat(2 * np.arange(n), 4) + np.tile([0, 1, 0, 1], n)
    return sp.csr_matrix((B.reshape(n, 4).ravel(), (rows, cols)), shape=(2 * n, 2 * n))


def _is_axisymmetric(gamma):
    dev = np.max(np.abs(gamma - gamma[:, :1]), axis=(1, 2, 3))
    return bool(np.all(dev <= 1e-12 * np.max(np.abs(gamma))))


def _mode_spectrum(Mt, nlat, nlon):
    """All singular values of the weighted operator via azimuthal blocks.

    Valid when the coefficients are phi-independent: the (real) operator
    maps each Fourier mode e^{i m phi} to itself, so its singular values are
    the union of the per-mode block singular values.  Rows of a mode block
    are read off at the j = 0 column of each collocation family (constant
    row phases do not change singular values).
    """
    N = nlat * nlon
    nfl = nlat + 1
    if Mt.shape != (4 * N + 2 * nfl * nlon, 2 * N):
        raise ValueError("unexpected stacked-operator shape")
    lat_rows = 2 * (np.arange(nlat) * nlon)
    face_rows = 2 * (np.arange(nfl) * nlon)
    rows_sel = np.concatenate(
        [
            np.repeat(lat_rows, 2) + np.tile([0, 1], nlat),
            2 * N + np.repeat(lat_rows, 2) + np.tile([0, 1], nlat),
            4 * N + np.repeat(face_rows, 2) + np.tile([0, 1], nfl),
        ]
    )
    phis = 2.0 * np.pi * np.arange(nlon) / nlon
    sigmas = []
    for m in range(nlon):
        wave = np.exp(1j * m * phis)
        vecs = np.zeros((2 * N, 2 * nlat), dtype=complex)
        for i in range(nlat):
            for u in range(2):
                col = np.zeros((nlat, nlon, 2), dtype=complex)
                col[i, :, u] = wave
                vecs[:, 2 * i + u] = col.reshape(-1)
        block = (Mt @ vecs)[rows_sel, :]
        sigmas.append(np.linalg.svd(block, compute_uv=False))
    return np.sort(np.concatenate(sigmas))


def quadratic_differential_kernel(grid, gamma, kernel_threshold=1e-3):
    """Smallest singular value and kernel-dimension estimate of the
    trace-free divergence system on a metric 2-sphere.

    The discrete system acts on trace-free symmetric 2-tensors (the trace
    equation is enforced exactly by the parametrization); its kernel is the
    space of divergence-free trace-free tensors, i.e. holomorphic quadratic
    differentials, which is trivial on S^2.  Singular values are measured in
    the area-weighted gamma-norms so they are stable under refinement.

    kernel_dim counts singular values below kernel_threshold x median.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != grid.shape + (2, 2):
        raise ValueError("metric field shape mismatch")
    L, Wout_blocks = _assemble_tracefree_divergence(grid, gamma)
    Win = _input_weights(grid, gamma)
    Sin_inv = _block_diag_sparse(_block_sqrt(Win, inverse=True))
    Sout = _block_diag_sparse(_block_sqrt(Wout_blocks))
    Mt = (Sout @ L @ Sin_inv).tocsr()

    if _is_axisymmetric(gamma):
        sig = _mode_spectrum(Mt, grid.nlat, grid.nlon)
        method = "modes"
    elif Mt.shape[1] <= 6200:
        sig = np.sort(np.linalg.svd(Mt.toarray(), compute_uv=False))
        method = "dense"
    else:
        raise ValueError(
            "full spectrum needs an axisymmetric metric or <= 3100 nodes; "
            "refine on an axisymmetric representative instead"
        )
    med = float(np.median(sig))
    if med <= 0:
        raise ValueError("degenerate metric")
    thr = kernel_threshold * med
    return QDKernelReport(
        sigma_min=float(sig[0]),
        sigma_median=med,
        kernel_dim=int(np.sum(sig < thr)),
        smallest=sig[:8].copy(),
        method=method,
        threshold=thr,
    )
