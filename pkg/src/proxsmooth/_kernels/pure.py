"""NumPy implementations of the numerical hot-path kernels.

``_fast.pyx`` mirrors this module function-for-function; the package selects
the compiled version at import time when it is available and falls back to
this module otherwise (``PROX_PURE_PYTHON=1`` forces the fallback).
"""

import math

import numpy as np

LOG_HALF = math.log(0.5)
LOG_2PI = math.log(2.0 * math.pi)


def posterior_moments(v, x0, h, i_lo, i_hi, z, sigma_sq):
    """Trapezoid posterior moments of the tilted density exp(-v(x)) * N(x; z, sigma_sq).

    ``v`` tabulates a potential on the uniform grid ``x0 + h*i``; the integral
    runs over grid indices ``[i_lo, i_hi]`` (endpoints half-weighted).

    Returns ``(log_density, m1, mu2, mu3)``: the smoothed log-density
    ``ln p_sigma(z)`` and the posterior mean plus second/third central moments
    of x given z. Exponents are log-sum-exp stabilised.
    """
    idx = np.arange(i_lo, i_hi + 1)
    u = (x0 - z) + h * idx
    lw = -v[i_lo:i_hi + 1] - u * u / (2.0 * sigma_sq)
    lw[0] += LOG_HALF
    lw[-1] += LOG_HALF
    m = lw.max()
    w = np.exp(lw - m)
    s0 = w.sum()
    e1 = (w @ u) / s0
    u2 = u * u
    e2 = (w @ u2) / s0
    e3 = (w @ (u2 * u)) / s0
    log_density = m + math.log(s0) + math.log(h) - 0.5 * (LOG_2PI + math.log(sigma_sq))
    m1 = z + e1
    mu2 = e2 - e1 * e1
    mu3 = e3 - 3.0 * e1 * e2 + 2.0 * e1 * e1 * e1
    return log_density, m1, mu2, mu3


def gaussian_chain(lam, yc, tau, k0, trace):
    """MMSE-averaging recursion for a Gaussian prior, in centred eigenbasis
    coordinates (state and anchor are U^T(x - mean)).

    ``trace[0]`` holds the start; rows ``1..n`` are filled in place. Step k
    (starting at ``k0``) uses sigma_k^2 = tau/(k+1) and alpha_k = (k+1)/(k+2).
    """
    n = trace.shape[0] - 1
    for j in range(n):
        k = k0 + j
        s2 = tau / (k + 1.0)
        a = (k + 1.0) / (k + 2.0)
        trace[j + 1] = a * (lam / (lam + s2)) * trace[j] + (1.0 - a) * yc
    return -1


def quad_chain(v, x0, h, y, tau, k0, trace, window_sigmas, tail_sigmas, guard):
    """MMSE-averaging recursion for a 1D tabulated prior.

    ``trace[0]`` holds the start; rows ``1..n`` are filled in place. Returns
    -1 on success, otherwise the step index at which the iterate either left
    the grid by more than ``tail_sigmas * sigma`` or tripped the divergence
    guard ``|z| > guard``.
    """
    n = trace.shape[0] - 1
    ngrid = v.shape[0]
    x_hi = x0 + h * (ngrid - 1)
    z = float(trace[0])
    for j in range(n):
        k = k0 + j
        s2 = tau / (k + 1.0)
        s = math.sqrt(s2)
        if z < x0 - tail_sigmas * s or z > x_hi + tail_sigmas * s:
            return j
        i_lo = max(0, int(math.ceil((z - window_sigmas * s - x0) / h)))
        i_hi = min(ngrid - 1, int(math.floor((z + window_sigmas * s - x0) / h)))
        if i_hi - i_lo < 2:
            return j
        _, m1, _, _ = posterior_moments(v, x0, h, i_lo, i_hi, z, s2)
        a = (k + 1.0) / (k + 2.0)
        z = a * m1 + (1.0 - a) * y
        if not math.isfinite(z) or abs(z) > guard:
            return j
        trace[j + 1] = z
    return -1
