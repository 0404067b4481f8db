"""Prior distributions with access to the Gaussian-smoothed family.

Every prior exposes the smoothed log-density ln p_sigma (p convolved with
N(0, sigma^2 I)), its score / Hessian / third derivative, the posterior noise
variance, and the MMSE denoiser E[X | X + sigma*eps = z], at any sigma >= 0
(sigma = 0 meaning the unsmoothed prior).

Conventions:

- ``posterior_variance`` is reported in observation units, i.e.
  Var(sigma*eps | z) = Var(X | z), so that
  -hessian_smoothed = (1/sigma^2) [I - posterior_variance/sigma^2].
- ``log_density_sigma_derivative`` differentiates with respect to sigma^2
  (the heat-equation time variable), not sigma.
- Tabulated 1D priors accept queries with sigma >= 2*grid_step (or exactly 0);
  anything in between is below the grid's resolution and raises GridTooCoarse.
"""

import math

import numpy as np

from . import _kernels
from .errors import GridTooCoarse, NonFinite, NotLogConcave, SigmaZero, TailEscape

# Integration window half-width, and the allowed excursion beyond the grid
# before a query is extrapolation-dominated.
WINDOW_SIGMAS = 16.0
TAIL_SIGMAS = 6.0

LOG_2PI = math.log(2.0 * math.pi)


def _check_sigma(sigma):
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma < 0.0:
        raise ValueError(f"sigma must be finite and nonnegative, got {sigma}")
    return sigma


def _as_point(z, d):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 and d == 1:
        z = z.reshape(1)
    if z.shape != (d,):
        raise ValueError(f"expected a point of dimension {d}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NonFinite(f"non-finite query point {z!r}")
    return z


class PriorModel:
    """Capability interface shared by all priors."""

    dimension = None

    def __init__(self):
        self._m_bound = None

    @property
    def third_derivative_bound(self):
        """Bound M on the third derivative of ln p (certified on first use)."""
        if self._m_bound is None:
            self._m_bound = self.certify_third_derivative_bound()
        return self._m_bound

    @property
    def bound_dimension(self):
        """Dimension entering the sqrt(d) factors of the error bounds.

        Equals the ambient dimension except for priors supported on a
        lower-dimensional subspace, where the intrinsic dimension applies.
        """
        return self.dimension

    def mmse(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        if sigma == 0.0:
            return z.copy()
        return z + sigma * sigma * self.score_smoothed(sigma, z)


class GaussianPrior(PriorModel):
    """N(mean, Sigma) stored through the eigendecomposition of Sigma.

    All smoothed queries are closed forms in the eigenbasis: smoothing by
    sigma shifts every eigenvalue by sigma^2.
    """

    def __init__(self, mean, eigenvalues, eigenvectors):
        super().__init__()
        mean = np.asarray(mean, dtype=float)
        lam = np.asarray(eigenvalues, dtype=float)
        u = np.asarray(eigenvectors, dtype=float)
        d = mean.shape[0]
        if mean.ndim != 1 or lam.shape != (d,) or u.shape != (d, d):
            raise ValueError("mean, eigenvalues and eigenvectors have inconsistent shapes")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(lam))
                and np.all(np.isfinite(u))):
            raise NonFinite("non-finite Gaussian parameters")
        if np.any(lam <= 0.0):
            raise NotLogConcave("covariance eigenvalues must be strictly positive")
        if np.max(np.abs(u.T @ u - np.eye(d))) > 1e-12:
            raise ValueError("eigenvector matrix is not orthonormal to 1e-12")
        self._mean = mean
        self._lam = lam
        self._u = u
        self.dimension = d
        self._m_bound = 0.0

    @classmethod
    def from_covariance(cls, mean, covariance):
        cov = np.asarray(covariance, dtype=float)
        cov = 0.5 * (cov + cov.T)
        lam, u = np.linalg.eigh(cov)
        return cls(mean, lam, u)

    @classmethod
    def from_diagonal(cls, mean, variances):
        mean = np.asarray(mean, dtype=float)
        return cls(mean, variances, np.eye(mean.shape[0]))

    @property
    def mean(self):
        return self._mean.copy()

    @property
    def covariance(self):
        return (self._u * self._lam) @ self._u.T

    def _coords(self, sigma, z):
        c = self._u.T @ (z - self._mean)
        w = self._lam + sigma * sigma
        return c, w

    def log_density_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        c, w = self._coords(sigma, z)
        return float(-0.5 * np.sum(c * c / w) - 0.5 * np.sum(np.log(w))
                     - 0.5 * self.dimension * LOG_2PI)

    def score_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        c, w = self._coords(sigma, z)
        return -(self._u @ (c / w))

    def hessian_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        _as_point(z, self.dimension)
        w = self._lam + sigma * sigma
        return -(self._u / w) @ self._u.T

    def third_deriv_smoothed(self, sigma, z):
        _check_sigma(sigma)
        _as_point(z, self.dimension)
        d = self.dimension
        return np.zeros((d, d, d))

    def posterior_variance(self, sigma, z):
        sigma = _check_sigma(sigma)
        _as_point(z, self.dimension)
        if sigma == 0.0:
            raise SigmaZero("posterior variance is undefined at sigma = 0")
        s2 = sigma * sigma
        w = self._lam + s2
        return (self._u * (s2 * self._lam / w)) @ self._u.T

    def log_density_sigma_derivative(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        c, w = self._coords(sigma, z)
        return float(0.5 * (np.sum(c * c / (w * w)) - np.sum(1.0 / w)))

    def certify_third_derivative_bound(self):
        return 0.0

    def smoothed_prox(self, y, tau, sigma=0.0):
        """argmin_x ||x-y||^2/(2 tau) - ln p_sigma(x), in closed form."""
        sigma = _check_sigma(sigma)
        y = _as_point(y, self.dimension)
        w = self._lam + sigma * sigma
        c = self._u.T @ (y - self._mean)
        return self._mean + self._u @ ((w / (w + tau)) * c)


# Degree-6 interpolation through 7 consecutive grid nodes, in node units.
_STENCIL_NODES = np.arange(-3.0, 4.0)
_STENCIL_INV = np.linalg.inv(np.vander(_STENCIL_NODES, 7, increasing=True))


def _poly_derivatives(coef, t):
    """Value and first three derivatives of sum(coef[p] * t^p) at t."""
    p = np.arange(7.0)
    d0 = float(np.polyval(coef[::-1], t))
    c1 = coef[1:] * p[1:]
    d1 = float(np.polyval(c1[::-1], t))
    c2 = c1[1:] * p[1:6]
    d2 = float(np.polyval(c2[::-1], t))
    c3 = c2[1:] * p[1:5]
    d3 = float(np.polyval(c3[::-1], t))
    return d0, d1, d2, d3


def _third_diff_sup(v, h):
    """Supremum of |V'''| over interior grid nodes (5-point antisymmetric stencil)."""
    d3 = (-v[:-4] + 2.0 * v[1:-3] - 2.0 * v[3:-1] + v[4:]) / (2.0 * h**3)
    return float(np.max(np.abs(d3)))


def _erfcx(a):
    # exp(a^2) * erfc(a) without overflow for large a
    if a < 25.0:
        return math.exp(a * a) * math.erfc(a)
    inv = 1.0 / (2.0 * a * a)
    return (1.0 - inv + 3.0 * inv * inv) / (a * math.sqrt(math.pi))


def _half_gaussian_tail_mass(v0, s, q):
    """Integral of exp(-(v0 + s t + q t^2)) over t in [0, inf)."""
    if q > 1e-300:
        a = s / (2.0 * math.sqrt(q))
        return math.exp(-v0) * 0.5 * math.sqrt(math.pi / q) * _erfcx(a)
    if s > 1e-300:
        return math.exp(-v0) / s
    return math.inf


class QuadraturePrior1D(PriorModel):
    """1D log-concave prior tabulated as V = -ln p on a uniform grid.

    Smoothed queries integrate exp(-V) against the Gaussian kernel by the
    trapezoid rule over a window of +-16 sigma around the query point, in the
    log domain. Outside the grid the potential is continued by a quadratic
    tail model (matching value and slope at the edge, curvature from the edge
    second difference); queries more than 6 sigma beyond the grid raise
    TailEscape. sigma = 0 queries differentiate a local degree-6 fit of the
    table instead.
    """

    dimension = 1

    def __init__(self, x_lo, x_hi, potential, name=None, potential_fn=None):
        super().__init__()
        v = np.ascontiguousarray(potential, dtype=float)
        if v.ndim != 1 or v.shape[0] < 9:
            raise ValueError("potential must be a 1D table with at least 9 points")
        if not np.all(np.isfinite(v)):
            raise NonFinite("non-finite potential values")
        x_lo = float(x_lo)
        x_hi = float(x_hi)
        if not x_hi > x_lo:
            raise ValueError("need x_hi > x_lo")
        n = v.shape[0]
        h = (x_hi - x_lo) / (n - 1)

        # log-concavity of the table
        d2 = v[:-2] - 2.0 * v[1:-1] + v[2:]
        tol = 1e-8 * max(1.0, float(np.max(np.abs(v))))
        if np.min(d2) < -tol:
            i = int(np.argmin(d2))
            raise NotLogConcave(
                f"potential is concave near x = {x_lo + (i + 1) * h:.6g}")

        # renormalise so the grid trapezoid integral of exp(-V) is exactly 1
        m = float(np.max(-v))
        w = np.exp(-v - m)
        log_z = m + math.log((w.sum() - 0.5 * (w[0] + w[-1])) * h)
        v = v + log_z

        # quadratic tail continuation: value/slope continuous, curvature from
        # the one-sided second difference (clipped to keep the tail convex)
        s_r = (v[-1] - v[-2]) / h
        q_r = max((v[-1] - 2.0 * v[-2] + v[-3]) / (h * h), 0.0) / 2.0
        s_l = (v[0] - v[1]) / h
        q_l = max((v[0] - 2.0 * v[1] + v[2]) / (h * h), 0.0) / 2.0

        tail = (_half_gaussian_tail_mass(v[-1], s_r, q_r)
                + _half_gaussian_tail_mass(v[0], s_l, q_l))
        if not tail / (1.0 + tail) <= 1e-10:
            raise GridTooCoarse(
                f"grid misses a tail mass fraction of {tail / (1.0 + tail):.3g}")

        self.x_lo = x_lo
        self.x_hi = x_hi
        self.n_grid = n
        self.grid_step = h
        self.potential = v
        self.tail_model = ((v[0], s_l, q_l), (v[-1], s_r, q_r))
        self.name = name
        self.potential_fn = potential_fn
        self.query_sigma_min = 2.0 * h

    def _moments(self, sigma, z):
        h = self.grid_step
        if sigma < self.query_sigma_min:
            raise GridTooCoarse(
                f"sigma = {sigma:.3g} is below the grid resolution limit "
                f"{self.query_sigma_min:.3g}")
        if z < self.x_lo - TAIL_SIGMAS * sigma or z > self.x_hi + TAIL_SIGMAS * sigma:
            raise TailEscape(f"query at z = {z:.6g} is beyond the grid plus 6 sigma")
        s2 = sigma * sigma
        a = z - WINDOW_SIGMAS * sigma
        b = z + WINDOW_SIGMAS * sigma
        j_lo = int(math.ceil((a - self.x_lo) / h))
        j_hi = int(math.floor((b - self.x_lo) / h))
        if 0 <= j_lo and j_hi <= self.n_grid - 1:
            return _kernels.posterior_moments(self.potential, self.x_lo, h,
                                              j_lo, j_hi, z, s2)
        # window sticks out of the grid: continue the lattice with tail values
        idx = np.arange(j_lo, j_hi + 1)
        v_ext = np.empty(idx.size)
        inside = (idx >= 0) & (idx <= self.n_grid - 1)
        v_ext[inside] = self.potential[idx[inside]]
        (v0_l, s_l, q_l), (v0_r, s_r, q_r) = self.tail_model
        left = idx < 0
        if np.any(left):
            t = -h * idx[left]
            v_ext[left] = v0_l + s_l * t + q_l * t * t
        right = idx > self.n_grid - 1
        if np.any(right):
            t = h * (idx[right] - (self.n_grid - 1))
            v_ext[right] = v0_r + s_r * t + q_r * t * t
        return _kernels.posterior_moments(v_ext, self.x_lo + j_lo * h, h,
                                          0, idx.size - 1, z, s2)

    def _stencil(self, z):
        if z < self.x_lo or z > self.x_hi:
            raise TailEscape(f"sigma = 0 query at z = {z:.6g} is off the grid")
        h = self.grid_step
        j = int(round((z - self.x_lo) / h))
        j = min(max(j, 3), self.n_grid - 4)
        t = (z - (self.x_lo + j * h)) / h
        coef = _STENCIL_INV @ self.potential[j - 3:j + 4]
        d0, d1, d2, d3 = _poly_derivatives(coef, t)
        return d0, d1 / h, d2 / (h * h), d3 / (h * h * h)

    def log_density_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            return -self._stencil(z)[0]
        val = self._moments(sigma, z)[0]
        if not math.isfinite(val):
            raise NonFinite(f"log-density underflow at z = {z:.6g}")
        return float(val)

    def score_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            return np.array([-self._stencil(z)[1]])
        _, m1, _, _ = self._moments(sigma, z)
        return np.array([(m1 - z) / (sigma * sigma)])

    def hessian_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            return np.array([[-self._stencil(z)[2]]])
        s2 = sigma * sigma
        mu2 = self._moments(sigma, z)[2]
        return np.array([[mu2 / (s2 * s2) - 1.0 / s2]])

    def third_deriv_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            return np.array([[[-self._stencil(z)[3]]]])
        s2 = sigma * sigma
        mu3 = self._moments(sigma, z)[3]
        return np.array([[[mu3 / (s2 * s2 * s2)]]])

    def posterior_variance(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            raise SigmaZero("posterior variance is undefined at sigma = 0")
        return np.array([[self._moments(sigma, z)[2]]])

    def log_density_sigma_derivative(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = float(_as_point(z, 1)[0])
        if sigma == 0.0:
            raise SigmaZero("sigma-derivative query needs sigma > 0")
        s2 = sigma * sigma
        _, m1, mu2, _ = self._moments(sigma, z)
        return -0.5 / s2 + (mu2 + (z - m1) ** 2) / (2.0 * s2 * s2)

    def certify_third_derivative_bound(self):
        sup = _third_diff_sup(self.potential, self.grid_step)
        sup_coarse = _third_diff_sup(self.potential[::2], 2.0 * self.grid_step)
        if abs(sup - sup_coarse) > 0.01 * max(sup, 1e-30):
            raise GridTooCoarse(
                f"third-derivative supremum moves by {abs(sup - sup_coarse):.3g} "
                "under 2x coarsening")
        return 1.01 * sup


def _sech_potential(x):
    x = np.asarray(x, dtype=float)
    # V = ln(pi cosh x), written to avoid overflow for large |x|
    return np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x))) + math.log(math.pi / 2.0)


def _logistic_potential(x):
    x = np.asarray(x, dtype=float)
    return x + 2.0 * np.logaddexp(0.0, -x)


def _quartic_potential(x):
    x = np.asarray(x, dtype=float)
    return 0.25 * x**4


BUILTIN_POTENTIALS = {
    "sech": (_sech_potential, -25.0, 25.0),
    "logistic": (_logistic_potential, -25.0, 25.0),
    "quartic": (_quartic_potential, -8.0, 8.0),
}


def builtin_quadrature_prior(name, sigma_min=0.05, x_lo=None, x_hi=None):
    """Build a named 1D prior with the grid sized for queries down to sigma_min.

    The grid step is sigma_min/20 (>= 20 points per kernel standard deviation
    at the smallest scheduled noise level), with an odd point count so 0 is a
    grid node.
    """
    if name not in BUILTIN_POTENTIALS:
        raise ValueError(f"unknown builtin potential {name!r}; "
                         f"choose from {sorted(BUILTIN_POTENTIALS)}")
    fn, lo0, hi0 = BUILTIN_POTENTIALS[name]
    lo = lo0 if x_lo is None else float(x_lo)
    hi = hi0 if x_hi is None else float(x_hi)
    if sigma_min <= 0.0:
        raise ValueError("sigma_min must be positive")
    n = int(math.ceil((hi - lo) / (sigma_min / 20.0))) + 1
    if n % 2 == 0:
        n += 1
    x = np.linspace(lo, hi, n)
    return QuadraturePrior1D(lo, hi, fn(x), name=name, potential_fn=fn)


class EmbeddedSubspacePrior(PriorModel):
    """A base prior of dimension r living on an affine subspace of R^d.

    X = offset + basis @ T with T distributed as the base prior; smoothing by
    sigma acts isotropically in the ambient space, so the smoothed density
    factors into the base's intrinsic smoothing along the subspace and an
    independent N(0, sigma^2) factor across it.
    """

    def __init__(self, base, basis, offset):
        super().__init__()
        u = np.asarray(basis, dtype=float)
        offset = np.asarray(offset, dtype=float)
        if u.ndim != 2:
            raise ValueError("basis must be a d x r matrix")
        d, r = u.shape
        if r > d or offset.shape != (d,):
            raise ValueError("basis and offset have inconsistent shapes")
        if r != base.dimension:
            raise ValueError("basis column count must match the base dimension")
        if np.max(np.abs(u.T @ u - np.eye(r))) > 1e-12:
            raise ValueError("basis columns are not orthonormal to 1e-12")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(offset))):
            raise NonFinite("non-finite basis or offset")
        self.base = base
        self.basis = u
        self.offset = offset
        self.dimension = d
        self.codimension = d - r

    @property
    def bound_dimension(self):
        return self.base.bound_dimension

    def _split(self, z):
        dz = z - self.offset
        t = self.basis.T @ dz
        resid = dz - self.basis @ t
        return t, resid

    def log_density_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        t, resid = self._split(z)
        if sigma == 0.0:
            if np.linalg.norm(resid) > 1e-9 * (1.0 + np.linalg.norm(z)):
                raise NonFinite("sigma = 0 query off the supporting subspace")
            return self.base.log_density_smoothed(0.0, t)
        s2 = sigma * sigma
        return (self.base.log_density_smoothed(sigma, t)
                - float(resid @ resid) / (2.0 * s2)
                - 0.5 * self.codimension * (LOG_2PI + math.log(s2)))

    def score_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        t, resid = self._split(z)
        if sigma == 0.0:
            if np.linalg.norm(resid) > 1e-9 * (1.0 + np.linalg.norm(z)):
                raise NonFinite("sigma = 0 query off the supporting subspace")
            return self.basis @ self.base.score_smoothed(0.0, t)
        return self.basis @ self.base.score_smoothed(sigma, t) - resid / (sigma * sigma)

    def hessian_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        if sigma == 0.0:
            raise NonFinite("ambient Hessian is not finite at sigma = 0 on a subspace")
        t, _ = self._split(z)
        hb = self.base.hessian_smoothed(sigma, t)
        u = self.basis
        proj = u @ u.T
        return u @ hb @ u.T - (np.eye(self.dimension) - proj) / (sigma * sigma)

    def third_deriv_smoothed(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        t, resid = self._split(z)
        if sigma == 0.0 and np.linalg.norm(resid) > 1e-9 * (1.0 + np.linalg.norm(z)):
            raise NonFinite("sigma = 0 query off the supporting subspace")
        tb = self.base.third_deriv_smoothed(sigma, t)
        u = self.basis
        return np.einsum("ia,jb,kc,abc->ijk", u, u, u, tb)

    def posterior_variance(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        if sigma == 0.0:
            raise SigmaZero("posterior variance is undefined at sigma = 0")
        t, _ = self._split(z)
        vb = self.base.posterior_variance(sigma, t)
        return self.basis @ vb @ self.basis.T

    def log_density_sigma_derivative(self, sigma, z):
        sigma = _check_sigma(sigma)
        z = _as_point(z, self.dimension)
        if sigma == 0.0:
            raise SigmaZero("sigma-derivative query needs sigma > 0")
        t, resid = self._split(z)
        s2 = sigma * sigma
        return (self.base.log_density_sigma_derivative(sigma, t)
                + float(resid @ resid) / (2.0 * s2 * s2)
                - 0.5 * self.codimension / s2)

    def certify_third_derivative_bound(self):
        return self.base.third_derivative_bound
