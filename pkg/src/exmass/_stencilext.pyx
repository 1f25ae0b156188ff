# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""C loops for the 7-point stencil sweeps (see exmass.kernels).

Axis 0 is radial and axis 1 latitudinal, both non-periodic: the coupling
coefficients into missing neighbors are zero there, so the guarded reads
never contribute.  Axis 2 is periodic longitude.
"""

import numpy as np

cimport cython


ctypedef double[:, :, ::1] field


cdef inline double _nbsum(field c_rm, field c_rp, field c_tm, field c_tp,
                          field c_pm, field c_pp, field u,
                          Py_ssize_t i, Py_ssize_t j, Py_ssize_t k,
                          Py_ssize_t ni, Py_ssize_t nj, Py_ssize_t nk) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t km = k - 1 if k > 0 else nk - 1
    cdef Py_ssize_t kp = k + 1 if k + 1 < nk else 0
    if i > 0:
        acc += c_rm[i, j, k] * u[i - 1, j, k]
    if i + 1 < ni:
        acc += c_rp[i, j, k] * u[i + 1, j, k]
    if j > 0:
        acc += c_tm[i, j, k] * u[i, j - 1, k]
    if j + 1 < nj:
        acc += c_tp[i, j, k] * u[i, j + 1, k]
    acc += c_pm[i, j, k] * u[i, j, km]
    acc += c_pp[i, j, k] * u[i, j, kp]
    return acc


def apply7(field diag, field c_rm, field c_rp, field c_tm, field c_tp,
           field c_pm, field c_pp, field u, field out):
    cdef Py_ssize_t ni = u.shape[0], nj = u.shape[1], nk = u.shape[2]
    cdef Py_ssize_t i, j, k
    with nogil:
        for i in range(ni):
            for j in range(nj):
                for k in range(nk):
                    out[i, j, k] = diag[i, j, k] * u[i, j, k] - _nbsum(
                        c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, i, j, k, ni, nj, nk)


def residual7(field diag, field c_rm, field c_rp, field c_tm, field c_tp,
              field c_pm, field c_pp, field u, field b, field out):
    cdef Py_ssize_t ni = u.shape[0], nj = u.shape[1], nk = u.shape[2]
    cdef Py_ssize_t i, j, k
    with nogil:
        for i in range(ni):
            for j in range(nj):
                for k in range(nk):
                    out[i, j, k] = b[i, j, k] - diag[i, j, k] * u[i, j, k] + _nbsum(
                        c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, i, j, k, ni, nj, nk)


def jacobi7(field diag, field c_rm, field c_rp, field c_tm, field c_tp,
            field c_pm, field c_pp, field u, field b, double omega):
    """Damped Jacobi, in place on u (reads the previous iterate from a copy)."""
    cdef double[:, :, ::1] old = np.array(u, copy=True)
    cdef Py_ssize_t ni = u.shape[0], nj = u.shape[1], nk = u.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double r
    with nogil:
        for i in range(ni):
            for j in range(nj):
                for k in range(nk):
                    r = b[i, j, k] - diag[i, j, k] * old[i, j, k] + _nbsum(
                        c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, old, i, j, k, ni, nj, nk)
                    u[i, j, k] = old[i, j, k] + omega * r / diag[i, j, k]


def rbgs7(field diag, field c_rm, field c_rp, field c_tm, field c_tp,
          field c_pm, field c_pp, field u, field b, int color):
    """Gauss-Seidel half-sweep over the (i+j+k) % 2 == color checkerboard."""
    cdef Py_ssize_t ni = u.shape[0], nj = u.shape[1], nk = u.shape[2]
    cdef Py_ssize_t i, j, k, k0
    with nogil:
        for i in range(ni):
            for j in range(nj):
                k0 = (color + i + j) & 1
                for k in range(k0, nk, 2):
                    u[i, j, k] = (b[i, j, k] + _nbsum(
                        c_rm, c_rp, c_tm, c_tp, c_pm, c_pp, u, i, j, k, ni, nj, nk
                    )) / diag[i, j, k]
