# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic Jacobi sweep for small dense Hermitian matrices."""

import numpy as np
from libc.math cimport sqrt, fabs, hypot


cdef inline double _offdiag_sq(double complex[:, ::1] a, Py_ssize_t n) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j].real * a[i, j].real + a[i, j].imag * a[i, j].imag
    return s


cdef inline double _total_sq(double complex[:, ::1] a, Py_ssize_t n) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            s += a[i, j].real * a[i, j].real + a[i, j].imag * a[i, j].imag
    return s


cdef int _sweep_loop(double complex[:, ::1] a, double complex[:, ::1] v,
                     Py_ssize_t n, double rtol, int max_sweeps) nogil:
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double g, app, aqq, tau, t, c, s, norm_sq, off
    cdef double complex ph, upp, upq, uqp, uqq, x, y
    norm_sq = _total_sq(a, n)
    if norm_sq == 0.0:
        return 0
    for sweep in range(max_sweeps + 1):
        off = _offdiag_sq(a, n)
        if off <= rtol * rtol * norm_sq:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = hypot(a[p, q].real, a[p, q].imag)
                if g == 0.0:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                # conj of the unit phase of a[p, q]
                ph = (a[p, q].real - 1j * a[p, q].imag) / g
                tau = (aqq - app) / (2.0 * g)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                upp = c
                upq = s
                uqp = -s * ph
                uqq = c * ph
                for k in range(n):
                    x = a[k, p]
                    y = a[k, q]
                    a[k, p] = x * upp + y * uqp
                    a[k, q] = x * upq + y * uqq
                for k in range(n):
                    x = a[p, k]
                    y = a[q, k]
                    a[p, k] = upp.conjugate() * x + uqp.conjugate() * y
                    a[q, k] = upq.conjugate() * x + uqq.conjugate() * y
                for k in range(n):
                    x = v[k, p]
                    y = v[k, q]
                    v[k, p] = x * upp + y * uqp
                    v[k, q] = x * upq + y * uqq
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    return -1


def jacobi_hermitian(a_in, double rtol=1e-15, int max_sweeps=60):
    """Diagonalize a Hermitian matrix in place on a private copy.

    Returns ``(diagonal, eigenvectors, sweeps)``; ``sweeps`` is -1 when the
    sweep cap was reached before the off-diagonal mass fell below ``rtol``.
    Eigenvalues are not sorted.
    """
    a_arr = np.array(a_in, dtype=np.complex128, order="C", copy=True)
    cdef Py_ssize_t n = a_arr.shape[0]
    v_arr = np.eye(n, dtype=np.complex128)
    cdef double complex[:, ::1] a = a_arr
    cdef double complex[:, ::1] v = v_arr
    cdef int sweeps
    with nogil:
        sweeps = _sweep_loop(a, v, n, rtol, max_sweeps)
    return np.real(np.diagonal(a_arr)).copy(), v_arr, sweeps
