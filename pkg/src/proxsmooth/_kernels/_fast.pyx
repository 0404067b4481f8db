# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``pure.py``; see that module for the contracts."""

from libc.math cimport ceil, exp, fabs, floor, isfinite, log, sqrt, M_PI


cdef double LOG_HALF = log(0.5)
cdef double LOG_2PI = log(2.0 * M_PI)


cdef int _moments(const double[::1] v, double x0, double h,
                  Py_ssize_t i_lo, Py_ssize_t i_hi,
                  double z, double sigma_sq, double* out) nogil:
    cdef Py_ssize_t i
    cdef double u, lw
    cdef double m = -1e308
    for i in range(i_lo, i_hi + 1):
        u = (x0 - z) + h * i
        lw = -v[i] - u * u / (2.0 * sigma_sq)
        if i == i_lo or i == i_hi:
            lw += LOG_HALF
        if lw > m:
            m = lw
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, w, u2
    for i in range(i_lo, i_hi + 1):
        u = (x0 - z) + h * i
        lw = -v[i] - u * u / (2.0 * sigma_sq)
        if i == i_lo or i == i_hi:
            lw += LOG_HALF
        w = exp(lw - m)
        u2 = u * u
        s0 += w
        s1 += w * u
        s2 += w * u2
        s3 += w * u2 * u
    cdef double e1 = s1 / s0
    cdef double e2 = s2 / s0
    cdef double e3 = s3 / s0
    out[0] = m + log(s0) + log(h) - 0.5 * (LOG_2PI + log(sigma_sq))
    out[1] = z + e1
    out[2] = e2 - e1 * e1
    out[3] = e3 - 3.0 * e1 * e2 + 2.0 * e1 * e1 * e1
    return 0


def posterior_moments(const double[::1] v, double x0, double h,
                      Py_ssize_t i_lo, Py_ssize_t i_hi, double z, double sigma_sq):
    cdef double out[4]
    _moments(v, x0, h, i_lo, i_hi, z, sigma_sq, out)
    return out[0], out[1], out[2], out[3]


def gaussian_chain(const double[::1] lam, const double[::1] yc,
                   double tau, long k0, double[:, ::1] trace):
    cdef Py_ssize_t n = trace.shape[0] - 1
    cdef Py_ssize_t d = trace.shape[1]
    cdef Py_ssize_t j, i
    cdef long k
    cdef double s2, a
    with nogil:
        for j in range(n):
            k = k0 + j
            s2 = tau / (k + 1.0)
            a = (k + 1.0) / (k + 2.0)
            for i in range(d):
                trace[j + 1, i] = a * (lam[i] / (lam[i] + s2)) * trace[j, i] \
                    + (1.0 - a) * yc[i]
    return -1


def quad_chain(const double[::1] v, double x0, double h, double y,
               double tau, long k0, double[::1] trace,
               double window_sigmas, double tail_sigmas, double guard):
    cdef Py_ssize_t n = trace.shape[0] - 1
    cdef Py_ssize_t ngrid = v.shape[0]
    cdef double x_hi = x0 + h * (ngrid - 1)
    cdef double z = trace[0]
    cdef Py_ssize_t j, i_lo, i_hi
    cdef long k
    cdef long status = -1
    cdef double s2, s, a
    cdef double out[4]
    with nogil:
        for j in range(n):
            k = k0 + j
            s2 = tau / (k + 1.0)
            s = sqrt(s2)
            if z < x0 - tail_sigmas * s or z > x_hi + tail_sigmas * s:
                status = j
                break
            i_lo = <Py_ssize_t>ceil((z - window_sigmas * s - x0) / h)
            if i_lo < 0:
                i_lo = 0
            i_hi = <Py_ssize_t>floor((z + window_sigmas * s - x0) / h)
            if i_hi > ngrid - 1:
                i_hi = ngrid - 1
            if i_hi - i_lo < 2:
                status = j
                break
            _moments(v, x0, h, i_lo, i_hi, z, s2, out)
            a = (k + 1.0) / (k + 2.0)
            z = a * out[1] + (1.0 - a) * y
            if not isfinite(z) or fabs(z) > guard:
                status = j
                break
            trace[j + 1] = z
    return status
