"""Proximal operator of -tau*ln p via MMSE-denoiser averaging.

The recursion x_{k+1} = alpha_k * MMSE_{sigma_k}(x_k) + (1 - alpha_k) * y is,
for the default schedule, identical to gradient descent on the smoothed
objective F_sigma(x) = ||y - x||^2/2 - tau ln p_sigma(x) with the exact step
size 1/L_sigma. Both step forms are provided, along with damped-Newton exact
oracles for F and F_sigma, a plain gradient-descent baseline on F, and the
evaluator for the convergence bound
((ln k) + 7)/(k+1) * (||y - prox|| + tau^2 M sqrt(d)).
"""

import math
import time

import numpy as np

from . import _kernels, __version__
from .errors import Divergence, GridTooCoarse, MaxIterations, NotLogConcave, TailEscape
from .priors import (
    TAIL_SIGMAS,
    WINDOW_SIGMAS,
    EmbeddedSubspacePrior,
    GaussianPrior,
    QuadraturePrior1D,
    _as_point,
)

DIVERGENCE_FACTOR = 1e8


class ProxProblem:
    """Anchor point y, weight tau and a prior; evaluates F and F_sigma."""

    def __init__(self, prior, y, tau):
        tau = float(tau)
        if not (math.isfinite(tau) and tau > 0.0):
            raise ValueError(f"tau must be positive, got {tau}")
        self.prior = prior
        self.y = _as_point(y, prior.dimension)
        self.tau = tau
        self._reference = None

    def objective(self, x, sigma=0.0):
        r = x - self.y
        return float(0.5 * (r @ r)
                     - self.tau * self.prior.log_density_smoothed(sigma, x))

    def gradient(self, x, sigma=0.0):
        return (x - self.y) - self.tau * self.prior.score_smoothed(sigma, x)

    def hessian(self, x, sigma=0.0):
        return (np.eye(self.prior.dimension)
                - self.tau * self.prior.hessian_smoothed(sigma, x))

    def reference_prox(self, tol=1e-12):
        """Exact prox solution, computed once and cached."""
        if self._reference is None:
            self._reference = exact_prox(self, tol)
        return self._reference


class Schedule:
    """Noise levels sigma_k^2 and averaging weights alpha_k per step.

    The default schedule keeps the smoothness constant L_k = 1 + tau/sigma_k^2
    an exact integer (k+2) and defines gamma_k as its reciprocal, so the
    step-size identity gamma_k * L_k = 1 is structural rather than a rounded
    float product.
    """

    def __init__(self, kind, alpha_fn, sigma_sq_fn, gamma_fn, smoothness_fn=None,
                 tau=None):
        self.kind = kind
        self._alpha_fn = alpha_fn
        self._sigma_sq_fn = sigma_sq_fn
        self._gamma_fn = gamma_fn
        self._smoothness_fn = smoothness_fn
        self.tau = tau

    @classmethod
    def paper_default(cls, tau):
        tau = float(tau)
        if not (math.isfinite(tau) and tau > 0.0):
            raise ValueError(f"tau must be positive, got {tau}")
        return cls(
            "paper_default",
            alpha_fn=lambda k: (k + 1.0) / (k + 2.0),
            sigma_sq_fn=lambda k: tau / (k + 1),
            gamma_fn=lambda k: 1.0 / (k + 2),
            smoothness_fn=lambda k: float(k + 2),
            tau=tau,
        )

    @classmethod
    def custom(cls, alpha, sigma_sq, gamma):
        """Unvalidated user schedule (e.g. alpha_k = k/N averaging)."""
        return cls("custom", alpha, sigma_sq, gamma)

    def alpha(self, k):
        return self._alpha_fn(k)

    def sigma_sq(self, k):
        return self._sigma_sq_fn(k)

    def gamma(self, k):
        return self._gamma_fn(k)

    def smoothness(self, k):
        if self._smoothness_fn is None:
            return 1.0 + self.tau / self.sigma_sq(k) if self.tau else None
        return self._smoothness_fn(k)


class IterateTrace:
    """Iterates x_0..x_n plus per-step diagnostics.

    Row j (j = 0..n-1) describes the step that produced x_{j+1}: the schedule
    quantities at index j, the pre-step objective F_{sigma_j}(x_j), the
    post-step error ||x_{j+1} - reference|| and the bound value at index j+1.
    """

    def __init__(self, iterates, sigma_sq, alpha, gamma, obj, err, bound, metadata):
        self.iterates = iterates
        self.sigma_sq = sigma_sq
        self.alpha = alpha
        self.gamma = gamma
        self.obj = obj
        self.err = err
        self.bound = bound
        self.metadata = metadata

    @property
    def n_steps(self):
        return self.iterates.shape[0] - 1


class ProxSolution:
    def __init__(self, point, gradient_norm, newton_iters):
        self.point = point
        self.gradient_norm = gradient_norm
        self.newton_iters = newton_iters


def _guard_value(y):
    return DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(y)))


def _check_step(x, limit, k):
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
        raise Divergence(f"iterate norm exceeded {limit:.3g} at step {k}", step=k)


def mmse_averaging_step(problem, schedule, k, x):
    """x_{k+1} = alpha_k * MMSE_{sigma_k}(x_k) + (1 - alpha_k) * y."""
    x = _as_point(x, problem.prior.dimension)
    a = schedule.alpha(k)
    sigma = math.sqrt(schedule.sigma_sq(k))
    out = a * problem.prior.mmse(sigma, x) + (1.0 - a) * problem.y
    _check_step(out, _guard_value(problem.y), k)
    return out


def smoothed_gd_step(problem, schedule, k, x):
    """x_{k+1} = x_k - gamma_k * grad F_{sigma_k}(x_k)."""
    x = _as_point(x, problem.prior.dimension)
    sigma = math.sqrt(schedule.sigma_sq(k))
    out = x - schedule.gamma(k) * problem.gradient(x, sigma)
    _check_step(out, _guard_value(problem.y), k)
    return out


def _resolve_reference(problem, reference):
    if isinstance(reference, str):
        if reference != "auto":
            raise ValueError(f"unknown reference mode {reference!r}")
        return problem.reference_prox().point
    if reference is None:
        return None
    return _as_point(reference, problem.prior.dimension)


def _kernel_iterates(problem, schedule, n):
    """Fast path for the default schedule in averaging form, if available."""
    prior = problem.prior
    y = problem.y
    if isinstance(prior, GaussianPrior):
        yc = prior._u.T @ (y - prior._mean)
        ctrace = np.empty((n + 1, prior.dimension))
        ctrace[0] = yc
        _kernels.gaussian_chain(prior._lam, yc, schedule.tau, 0, ctrace)
        iterates = prior._mean + ctrace @ prior._u.T
        iterates[0] = y
        return iterates
    if isinstance(prior, QuadraturePrior1D):
        sigma_last = math.sqrt(schedule.sigma_sq(n - 1))
        if sigma_last < prior.query_sigma_min:
            raise GridTooCoarse(
                f"schedule reaches sigma = {sigma_last:.3g}, below the grid "
                f"resolution limit {prior.query_sigma_min:.3g}")
        trace = np.empty(n + 1)
        trace[0] = y[0]
        limit = _guard_value(y)
        status = _kernels.quad_chain(prior.potential, prior.x_lo, prior.grid_step,
                                     y[0], schedule.tau, 0, trace,
                                     WINDOW_SIGMAS, TAIL_SIGMAS, limit)
        if status >= 0:
            z = trace[status]
            sigma = math.sqrt(schedule.sigma_sq(status))
            if (z < prior.x_lo - TAIL_SIGMAS * sigma
                    or z > prior.x_hi + TAIL_SIGMAS * sigma):
                raise TailEscape(
                    f"iterate left the grid at step {status} (z = {z:.6g})")
            raise Divergence(f"iterate norm exceeded {limit:.3g} at step {status}",
                             step=status)
        return trace.reshape(-1, 1)
    return None


def _python_iterates(problem, schedule, n, form):
    step = mmse_averaging_step if form == "averaging" else smoothed_gd_step
    iterates = np.empty((n + 1, problem.prior.dimension))
    iterates[0] = problem.y
    x = problem.y.copy()
    for j in range(n):
        try:
            x = step(problem, schedule, j, x)
        except Divergence as e:
            e.trace = _assemble_trace(problem, schedule, iterates[:j + 1].copy(),
                                      None, form, 0.0)
            raise
        iterates[j + 1] = x
    return iterates


def _assemble_trace(problem, schedule, iterates, reference, form, wall_time):
    n = iterates.shape[0] - 1
    ks = range(n)
    sigma_sq = np.array([schedule.sigma_sq(k) for k in ks])
    alpha = np.array([schedule.alpha(k) for k in ks])
    gamma = np.array([schedule.gamma(k) for k in ks])
    obj = np.array([problem.objective(iterates[k], math.sqrt(sigma_sq[k]))
                    for k in ks])
    err = bound = None
    if reference is not None:
        err = np.linalg.norm(iterates[1:] - reference, axis=1)
        if schedule.kind == "paper_default":
            kk = np.arange(1.0, n + 1.0)
            bound = (np.log(kk) + 7.0) / (kk + 1.0) * _bound_scale(problem)
    metadata = {
        "schedule": schedule.kind,
        "form": form,
        "prior": type(problem.prior).__name__,
        "dimension": problem.prior.dimension,
        "tau": problem.tau,
        "y": problem.y.tolist(),
        "n_steps": n,
        "backend": _kernels.backend,
        "version": __version__,
        "wall_time": wall_time,
    }
    return IterateTrace(iterates, sigma_sq, alpha, gamma, obj, err, bound, metadata)


def run_prox_iteration(problem, schedule, n_steps, form="averaging",
                       reference="auto"):
    """Run the recursion from x_0 = y and collect the trace.

    ``reference`` is a point, None, or "auto" (exact prox at tolerance 1e-12);
    errors to it and, for the default schedule, the bound values are recorded
    per step.
    """
    n = int(n_steps)
    if n < 1:
        raise ValueError("n_steps must be >= 1")
    if form not in ("averaging", "gradient"):
        raise ValueError(f"unknown step form {form!r}")
    ref = _resolve_reference(problem, reference)
    t0 = time.perf_counter()
    iterates = None
    if form == "averaging" and schedule.kind == "paper_default":
        iterates = _kernel_iterates(problem, schedule, n)
    if iterates is None:
        iterates = _python_iterates(problem, schedule, n, form)
    return _assemble_trace(problem, schedule, iterates, ref, form,
                           time.perf_counter() - t0)


def _bound_scale(problem):
    star = problem.reference_prox().point
    m = problem.prior.third_derivative_bound
    d_eff = problem.prior.bound_dimension
    return (float(np.linalg.norm(problem.y - star))
            + problem.tau**2 * m * math.sqrt(d_eff))


def theorem1_bound(problem, k):
    """((ln k) + 7)/(k+1) * (||y - prox|| + tau^2 M sqrt(d)).

    d is the intrinsic (bound) dimension of the prior.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    return (math.log(k) + 7.0) / (k + 1.0) * _bound_scale(problem)


def exact_prox(problem, tol=1e-12):
    """Minimiser of F(x) = ||y-x||^2/2 - tau ln p(x)."""
    return exact_smoothed_prox(problem, 0.0, tol)


def exact_smoothed_prox(problem, sigma, tol=1e-12):
    """Minimiser of F_sigma; closed form for Gaussians, damped Newton otherwise."""
    sigma = float(sigma)
    prior = problem.prior
    if isinstance(prior, GaussianPrior):
        point = prior.smoothed_prox(problem.y, problem.tau, sigma)
        g = problem.gradient(point, sigma)
        return ProxSolution(point, float(np.linalg.norm(g)), 0)
    if isinstance(prior, EmbeddedSubspacePrior) and sigma == 0.0:
        # the unsmoothed problem separates: perpendicular part snaps to the
        # subspace, the parallel part is the base prior's prox
        u, o = prior.basis, prior.offset
        sub = ProxProblem(prior.base, u.T @ (problem.y - o), problem.tau)
        sol = exact_smoothed_prox(sub, 0.0, tol)
        return ProxSolution(o + u @ sol.point, sol.gradient_norm, sol.newton_iters)
    return _damped_newton(problem, sigma, tol)


def _damped_newton(problem, sigma, tol):
    x = problem.y.copy()
    fx = problem.objective(x, sigma)
    for it in range(200):
        g = problem.gradient(x, sigma)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return ProxSolution(x, gn, it)
        h = problem.hessian(x, sigma)
        eig_min = float(np.linalg.eigvalsh(h)[0])
        if eig_min < 1.0 - 1e-6:
            raise NotLogConcave(
                f"objective Hessian eigenvalue {eig_min:.6g} below 1")
        dx = -np.linalg.solve(h, g)
        decrement = float(g @ dx)
        # sufficient-decrease comparisons are meaningless below the float
        # resolution of F, which would reject full steps on last-bit noise
        noise = 4.0 * np.finfo(float).eps * (1.0 + abs(fx))
        t = 1.0
        for _ in range(60):
            try:
                ft = problem.objective(x + t * dx, sigma)
            except TailEscape:
                ft = math.inf
            if ft <= fx + 0.25 * t * decrement + noise:
                break
            t *= 0.5
        else:
            raise MaxIterations("Newton line search made no progress")
        x = x + t * dx
        fx = ft
    raise MaxIterations("Newton did not reach tolerance in 200 iterations")


def naive_gd(problem, gamma, n_steps, reference=None):
    """Plain gradient descent on the unsmoothed objective F, from x_0 = y."""
    gamma = float(gamma)
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    n = int(n_steps)
    if n < 1:
        raise ValueError("n_steps must be >= 1")
    ref = None if reference is None else _as_point(reference,
                                                   problem.prior.dimension)
    t0 = time.perf_counter()
    d = problem.prior.dimension
    limit = _guard_value(problem.y)
    iterates = np.empty((n + 1, d))
    iterates[0] = problem.y
    obj = np.empty(n)
    x = problem.y.copy()
    for j in range(n):
        obj[j] = problem.objective(x)
        x = x - gamma * problem.gradient(x)
        _check_step(x, limit, j)
        iterates[j + 1] = x
    err = None if ref is None else np.linalg.norm(iterates[1:] - ref, axis=1)
    metadata = {
        "schedule": "none",
        "form": "naive_gd",
        "prior": type(problem.prior).__name__,
        "dimension": d,
        "tau": problem.tau,
        "y": problem.y.tolist(),
        "n_steps": n,
        "gamma": gamma,
        "backend": _kernels.backend,
        "version": __version__,
        "wall_time": time.perf_counter() - t0,
    }
    return IterateTrace(iterates, np.zeros(n), np.zeros(n),
                        np.full(n, gamma), obj, err, None, metadata)
