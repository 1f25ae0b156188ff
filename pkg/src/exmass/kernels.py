"""Hot stencil sweeps for the 7-point operators, with backend selection.

The multigrid solver spends essentially all its time in four loops: the
7-point operator apply, its residual, damped-Jacobi and red-black
Gauss-Seidel smoothing.  A Cython extension (:mod:`exmass._stencilext`)
implements them as straight C loops; this module holds vectorized numpy
equivalents and picks the backend at import time.  Set EXMASS_PURE=1 in the
environment to force the numpy path (used by the benchmark and CI without a
compiler).

All arrays are C-contiguous float64 of one grid shape (nr+1, nlat, nlon).
Neighbor conventions: axis 0 radial, axis 1 latitude (no wrap; boundary
coupling coefficients must be zero there), axis 2 longitude (periodic).
The operator is A u = diag * u - sum_f c_f * u_neighbor(f).
"""

import os

import numpy as np

__all__ = ["apply7", "residual7", "jacobi7", "rbgs7", "backend_name",
           "numpy_backend", "compiled_backend", "active_backend"]


def _np_apply7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, out=None):
    """out = A u for the 7-point operator (numpy backend)."""
    if out is None:
        out = np.empty_like(u)
    np.multiply(diag, u, out=out)
    out[1:] -= c_rm[1:] * u[:-1]
    out[:-1] -= c_rp[:-1] * u[1:]
    out[:, 1:] -= c_tm[:, 1:] * u[:, :-1]
    out[:, :-1] -= c_tp[:, :-1] * u[:, 1:]
    out -= c_pm * np.roll(u, 1, axis=2)
    out -= c_pp * np.roll(u, -1, axis=2)
    return out


def _np_residual7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, out=None):
    """out = b - A u (numpy backend)."""
    out = _np_apply7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, out=out)
    np.subtract(b, out, out=out)
    return out


def _np_jacobi7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, omega):
    """One damped-Jacobi sweep, in place on u."""
    r = _np_residual7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b)
    u += omega * r / diag
    return u


def _checker(shape, color):
    i = np.arange(shape[0])[:, None, None]
    j = np.arange(shape[1])[None, :, None]
    k = np.arange(shape[2])[None, None, :]
    return ((i + j + k) & 1) == color


def _np_rbgs7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, color):
    """One Gauss-Seidel half-sweep over nodes with (i+j+k) % 2 == color."""
    r = _np_residual7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b)
    mask = _checker(u.shape, color)
    u[mask] += r[mask] / diag[mask]
    return u


class _Backend:
    def __init__(self, name, apply7, residual7, jacobi7, rbgs7):
        self.name = name
        self.apply7 = apply7
        self.residual7 = residual7
        self.jacobi7 = jacobi7
        self.rbgs7 = rbgs7


_NUMPY = _Backend("numpy", _np_apply7, _np_residual7, _np_jacobi7, _np_rbgs7)

_COMPILED = None
if not os.environ.get("EXMASS_PURE"):
    try:
        from . import _stencilext as _ext

        def _ext_apply7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, out=None):
            if out is None:
                out = np.empty_like(u)
            _ext.apply7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, out)
            return out

        def _ext_residual7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, out=None):
            if out is None:
                out = np.empty_like(u)
            _ext.residual7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, out)
            return out

        def _ext_jacobi7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, omega):
            _ext.jacobi7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, float(omega))
            return u

        def _ext_rbgs7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, color):
            _ext.rbgs7(diag, c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, b, int(color))
            return u

        _COMPILED = _Backend("compiled", _ext_apply7, _ext_residual7,
                             _ext_jacobi7, _ext_rbgs7)
    except ImportError:
        _COMPILED = None

_ACTIVE = _COMPILED if _COMPILED is not None else _NUMPY


def numpy_backend():
    return _NUMPY


def compiled_backend():
    """The compiled backend, or None when the extension is unavailable."""
    return _COMPILED


def active_backend():
    return _ACTIVE


def backend_name():
    return _ACTIVE.name


def apply7(*args, **kwargs):
    return _ACTIVE.apply7(*args, **kwargs)


def residual7(*args, **kwargs):
    return _ACTIVE.residual7(*args, **kwargs)


def jacobi7(*args, **kwargs):
    return _ACTIVE.jacobi7(*args, **kwargs)


def rbgs7(*args, **kwargs):
    return _ACTIVE.rbgs7(*args, **kwargs)
