"""Differential structure of the smoothed problems, checked numerically.

The minimiser of F_sigma(x) = ||x - y||^2/(2 tau) - ln p_sigma(x) traces a
smooth path in sigma^2. Its drift has two equivalent forms: the implicit one,
dx/dsigma^2 = -[grad^2 F_sigma]^{-1} d(grad F_sigma)/dsigma^2, valid anywhere,
and a decomposition -(1/tau) Q (x - y) + B obtained by substituting the
first-order condition grad ln p_sigma(x) = (x - y)/tau, with Q positive
semidefinite and ||B|| <= (tau/2) M sqrt(d). This module integrates the path,
verifies its radius and Lipschitz bounds, checks the heat-equation identity
satisfied by ln p_sigma and the maximum principle for its third derivative,
and fits empirical convergence rates from iterate traces.
"""

import math

import numpy as np

from .errors import (
    BoundViolated,
    InsufficientData,
    ManifoldEscape,
    SigmaZero,
)
from .priors import (
    TAIL_SIGMAS,
    EmbeddedSubspacePrior,
    GaussianPrior,
    QuadraturePrior1D,
    _as_point,
    _check_sigma,
    _third_diff_sup,
)
from .prox import exact_smoothed_prox

GRAD_TOL = 1e-10          # manifold tolerance on ||grad F_sigma||
ESCAPE_TOL = 1e-3         # Newton correction above this flags a coarse step
RK4_SUBSTEPS = 16
SIGMA_SQ_FD_STEP = 1e-3   # central difference step for the PDE check


def score_sigma_derivative(prior, sigma, z):
    """d(grad ln p_sigma)/dsigma^2, assembled from prior derivatives.

    Equals (1/2)[grad Laplacian ln p_sigma + 2 (grad^2 ln p_sigma)(grad ln
    p_sigma)]; the first term contracts the third-derivative tensor.
    """
    sigma = _check_sigma(sigma)
    if sigma == 0.0:
        raise SigmaZero("score sigma-derivative needs sigma > 0")
    z = _as_point(z, prior.dimension)
    third = prior.third_deriv_smoothed(sigma, z)
    hess = prior.hessian_smoothed(sigma, z)
    score = prior.score_smoothed(sigma, z)
    return 0.5 * np.einsum("ijj->i", third) + hess @ score


class PathState:
    """One accepted node of the solution path.

    drift is the Q/B decomposition evaluated at the node; Q_term is PSD and
    B_term obeys ||B_term|| <= (tau/2) M sqrt(d) wherever the state sits on
    the critical manifold (grad_norm <= the path tolerance).
    """

    def __init__(self, sigma_sq, point, drift, Q_term, B_term, grad_norm):
        self.sigma_sq = sigma_sq
        self.point = point
        self.drift = drift
        self.Q_term = Q_term
        self.B_term = B_term
        self.grad_norm = grad_norm


def _implicit_drift(problem, sigma_sq, x):
    sigma = math.sqrt(sigma_sq)
    ds = score_sigma_derivative(problem.prior, sigma, x)
    return np.linalg.solve(problem.hessian(x, sigma), problem.tau * ds)


def _path_state(problem, sigma_sq, x):
    sigma = math.sqrt(sigma_sq)
    tau = problem.tau
    prior = problem.prior
    hess = prior.hessian_smoothed(sigma, x)
    third = prior.third_deriv_smoothed(sigma, x)
    grad_lap = np.einsum("ijj->i", third)
    a = np.eye(prior.dimension) / tau - hess
    q = -np.linalg.solve(a, hess)
    b = 0.5 * np.linalg.solve(a, grad_lap)
    drift = -(q @ (x - problem.y)) / tau + b
    grad_norm = float(np.linalg.norm(problem.gradient(x, sigma)))
    return PathState(sigma_sq, x, drift, q, b, grad_norm)


def _validate_grid(problem, sigma_sq_grid):
    grid = np.asarray(sigma_sq_grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 1 or not np.all(np.isfinite(grid)):
        raise ValueError("sigma_sq_grid must be a finite 1D array")
    if grid[-1] <= 0.0 or grid[0] > problem.tau * (1.0 + 1e-12):
        raise ValueError("sigma_sq_grid must lie in (0, tau]")
    if grid.shape[0] > 1 and not np.all(np.diff(grid) < 0.0):
        raise ValueError("sigma_sq_grid must be strictly decreasing")
    return grid


def solve_solution_path(problem, sigma_sq_grid):
    """Integrate the minimiser path of F_sigma backward in sigma^2.

    Starts from the Newton solution at the largest (best-conditioned) noise
    level, runs classical RK4 with 16 fixed substeps per grid interval using
    the implicit drift form, and re-projects onto the critical manifold with
    Newton steps after each interval. Raises ManifoldEscape when the first
    correction exceeds 1e-3 or the projection cannot reach the 1e-10
    gradient tolerance.
    """
    grid = _validate_grid(problem, sigma_sq_grid)
    x = exact_smoothed_prox(problem, math.sqrt(grid[0]), tol=1e-12).point
    states = [_path_state(problem, float(grid[0]), x)]
    for s_hi, s_lo in zip(grid[:-1], grid[1:]):
        h = (s_lo - s_hi) / RK4_SUBSTEPS
        s = s_hi
        for _ in range(RK4_SUBSTEPS):
            k1 = _implicit_drift(problem, s, x)
            k2 = _implicit_drift(problem, s + 0.5 * h, x + 0.5 * h * k1)
            k3 = _implicit_drift(problem, s + 0.5 * h, x + 0.5 * h * k2)
            k4 = _implicit_drift(problem, s + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += h
        sigma = math.sqrt(s_lo)
        for attempt in range(5):
            g = problem.gradient(x, sigma)
            gn = float(np.linalg.norm(g))
            if attempt > 0 and gn <= GRAD_TOL:
                break
            dx = -np.linalg.solve(problem.hessian(x, sigma), g)
            if attempt == 0 and np.linalg.norm(dx) > ESCAPE_TOL:
                raise ManifoldEscape(
                    f"Newton correction {np.linalg.norm(dx):.3g} at "
                    f"sigma^2 = {s_lo:.6g}; the grid interval is too coarse")
            x = x + dx
        else:
            gn = float(np.linalg.norm(problem.gradient(x, sigma)))
            if gn > GRAD_TOL:
                raise ManifoldEscape(
                    f"projection stalled at ||grad|| = {gn:.3g}, "
                    f"sigma^2 = {s_lo:.6g}")
        states.append(_path_state(problem, float(s_lo), x))
    return states


class PathBoundsReport:
    name = "path_bounds"

    def __init__(self, sigma_sq_grid, radius_margins, lipschitz_margins,
                 parameters):
        self.sigma_sq_grid = sigma_sq_grid
        self.radius_margins = radius_margins
        self.lipschitz_margins = lipschitz_margins
        self.parameters = parameters

    @property
    def passed(self):
        return bool(np.all(self.radius_margins >= 0.0)
                    and np.all(self.lipschitz_margins >= 0.0))

    def as_json_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "margins": {
                "radius": self.radius_margins.tolist(),
                "lipschitz": self.lipschitz_margins.tolist(),
            },
            "parameters": self.parameters,
        }


def verify_path_bounds(problem, sigma_sq_grid, raise_on_violation=True):
    """Check the path radius and Lipschitz bounds on every node / node pair.

    Radius: ||x*_sigma - y|| <= ||y - prox|| + tau^2 M sqrt(d)/2 at each
    node. Lipschitz: ||x*_s1 - x*_s2|| <= (s1 - s2)(||y - prox||/tau +
    tau M sqrt(d)) for s1 > s2, pairs in row-major (i < j) order. d is the
    intrinsic dimension for subspace-supported priors.
    """
    grid = _validate_grid(problem, sigma_sq_grid)
    states = solve_solution_path(problem, grid)
    star = problem.reference_prox().point
    dist = float(np.linalg.norm(problem.y - star))
    m = problem.prior.third_derivative_bound
    rd = math.sqrt(problem.prior.bound_dimension)
    tau = problem.tau

    radius = dist + 0.5 * tau * tau * m * rd
    radius_margins = np.array(
        [radius - np.linalg.norm(st.point - problem.y) for st in states])
    lip = dist / tau + tau * m * rd
    pair_margins = []
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            gap = (grid[i] - grid[j]) * lip
            pair_margins.append(
                gap - float(np.linalg.norm(states[i].point - states[j].point)))
    lipschitz_margins = np.array(pair_margins)

    if raise_on_violation:
        for name, margins in (("radius", radius_margins),
                              ("lipschitz", lipschitz_margins)):
            if np.any(margins < 0.0):
                k = int(np.argmin(margins))
                raise BoundViolated(
                    f"path {name} bound violated by {-margins[k]:.3g}", step=k)
    parameters = {
        "prior": type(problem.prior).__name__,
        "tau": tau,
        "y": np.asarray(problem.y).tolist(),
        "third_derivative_bound": m,
        "prox_distance": dist,
        "sigma_sq_grid": grid.tolist(),
    }
    return PathBoundsReport(grid, radius_margins, lipschitz_margins, parameters)


def heat_equation_residual(prior, sigma, z_grid):
    """Worst deviation from d ln p_sigma/dsigma^2 = (Laplacian + ||grad||^2)/2.

    For Gaussian priors the left side is the closed-form sigma^2-derivative;
    elsewhere it is a central difference with step 1e-3 in sigma^2, whose
    truncation error dominates the returned residual. sigma^2 must leave
    room for the difference step.
    """
    sigma = _check_sigma(sigma)
    s2 = sigma * sigma
    h = SIGMA_SQ_FD_STEP
    if s2 < 2.0 * h:
        raise ValueError(f"sigma^2 = {s2:.3g} leaves no room for the "
                         f"central difference step {h:g}")
    pts = np.asarray(z_grid, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if prior.dimension == 1 else pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != prior.dimension:
        raise ValueError("z_grid does not match the prior dimension")

    closed_form = isinstance(prior, GaussianPrior)
    lo = math.sqrt(s2 - h)
    hi = math.sqrt(s2 + h)
    worst = 0.0
    for z in pts:
        if closed_form:
            lhs = prior.log_density_sigma_derivative(sigma, z)
        else:
            lhs = (prior.log_density_smoothed(hi, z)
                   - prior.log_density_smoothed(lo, z)) / (2.0 * h)
        score = prior.score_smoothed(sigma, z)
        lap = float(np.trace(prior.hessian_smoothed(sigma, z)))
        worst = max(worst, abs(lhs - 0.5 * (lap + float(score @ score))))
    return worst


class MaxPrincipleReport:
    name = "max_principle"

    def __init__(self, sigma_sq, suprema, bound, parameters):
        self.sigma_sq = sigma_sq
        self.suprema = suprema
        self.bound = bound
        self.margins = bound - suprema
        self.parameters = parameters

    @property
    def passed(self):
        return bool(np.all(self.margins >= 0.0))

    def as_json_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "margins": self.margins.tolist(),
            "parameters": self.parameters,
        }


def _grad_laplacian_sup(prior, sigma):
    if isinstance(prior, EmbeddedSubspacePrior):
        # the ambient tensor is the basis-lifted base tensor, so the ambient
        # supremum equals the intrinsic one
        return _grad_laplacian_sup(prior.base, sigma)
    if isinstance(prior, GaussianPrior):
        probes = [prior._mean]
        for j in range(prior.dimension):
            step = prior._u[:, j] * math.sqrt(prior._lam[j])
            probes.extend([prior._mean + step, prior._mean - step])
        return max(
            float(np.linalg.norm(
                np.einsum("ijj->i", prior.third_deriv_smoothed(sigma, z))))
            for z in probes)
    if isinstance(prior, QuadraturePrior1D):
        if sigma == 0.0:
            # same stencil and nodes as the certification supremum
            return _third_diff_sup(prior.potential, prior.grid_step)
        h = prior.grid_step
        ext = int(math.floor(0.999 * TAIL_SIGMAS * sigma / h))
        zs = prior.x_lo + h * np.arange(-ext, prior.n_grid + ext)
        return max(
            abs(float(prior.third_deriv_smoothed(sigma, np.array([z]))[0, 0, 0]))
            for z in zs)
    raise ValueError(f"no evaluation grid for {type(prior).__name__}")


def max_principle_check(prior, sigma_sq_list):
    """Verify sup ||grad Laplacian ln p_sigma|| <= sqrt(d) M across noise levels.

    Suprema are taken over the tabulation lattice extended by 6 sigma (the
    tail-mass checks at construction bound what lies beyond); at sigma = 0
    the supremum is the certification stencil's, so it equals the uninflated
    bound M/1.01 exactly when the extremum sits on the grid.
    """
    sig = np.asarray(sigma_sq_list, dtype=float)
    if sig.ndim != 1 or not np.all(np.isfinite(sig)) or np.any(sig < 0.0):
        raise ValueError("sigma_sq_list must be finite and nonnegative")
    m = prior.third_derivative_bound
    bound = math.sqrt(prior.bound_dimension) * m * (1.0 + 1e-3)
    suprema = np.empty(sig.shape[0])
    for i, s2 in enumerate(sig):
        suprema[i] = _grad_laplacian_sup(prior, math.sqrt(s2))
        if suprema[i] > bound:
            raise BoundViolated(
                f"max principle violated at sigma^2 = {s2:.6g}: "
                f"sup {suprema[i]:.6g} > bound {bound:.6g}", step=i)
    parameters = {
        "prior": type(prior).__name__,
        "third_derivative_bound": m,
        "sigma_sq": sig.tolist(),
    }
    return MaxPrincipleReport(sig, suprema, bound, parameters)


class RateReport:
    """Log-log OLS fit of error against iteration count."""

    def __init__(self, slope, intercept, k_range, residuals):
        self.slope = slope
        self.intercept = intercept
        self.k_range = k_range
        self.residuals = residuals


def rate_slope(trace, k_min, k_max):
    """Fit ln(err) ~ intercept + slope ln(k) over k in [k_min, k_max].

    Errors at or below 100x machine epsilon are floored out of the fit; the
    short-k transient is excluded by requiring k_min >= 10.
    """
    if trace.err is None:
        raise ValueError("trace carries no reference errors")
    k_min = int(k_min)
    k_max = int(k_max)
    if k_min < 10:
        raise ValueError("k_min must be at least 10")
    err = np.asarray(trace.err, dtype=float)
    ks = np.arange(1, err.shape[0] + 1)
    usable = ((ks >= k_min) & (ks <= k_max)
              & (err > 100.0 * np.finfo(float).eps))
    n_used = int(usable.sum())
    if n_used < 10:
        raise InsufficientData(f"only {n_used} usable points in "
                               f"[{k_min}, {k_max}]")
    lx = np.log(ks[usable])
    ly = np.log(err[usable])
    xc = lx - lx.mean()
    slope = float((xc @ (ly - ly.mean())) / (xc @ xc))
    intercept = float(ly.mean() - slope * lx.mean())
    residuals = ly - (intercept + slope * lx)
    k_used = ks[usable]
    return RateReport(slope, intercept, (int(k_used[0]), int(k_used[-1])),
                      residuals)
