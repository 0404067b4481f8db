"""MAP estimation J(x) = lambda*f(x) - ln p(x) by proximal gradient descent
with inexact proximal steps.

Each outer step takes a gradient step on the data term and then approximates
prox_{-tau ln p} with n_k MMSE-averaging steps anchored at the gradient-step
point, n_k = floor(c*k^(1+eta)). The explicit constants S, T, B, R of the
convergence bounds are evaluated from the problem data, and verify_theorem2
asserts both displayed bounds step by step against the exact-prox oracle.
"""

import math
import time

import numpy as np

from . import _kernels, __version__
from .errors import (
    BoundViolated,
    Divergence,
    FixedPointNotFound,
    GridTooCoarse,
    MaxIterations,
    NonFinite,
    TailEscape,
)
from .priors import TAIL_SIGMAS, WINDOW_SIGMAS, GaussianPrior, QuadraturePrior1D, _as_point
from .prox import ProxProblem, Schedule, _check_step, _guard_value, exact_prox


class DataFidelity:
    """Data term contract: convex, lower bounded, with L-smooth gradient.

    Implementations provide value(x), gradient(x) and a `smoothness` attribute
    holding the gradient Lipschitz constant L_f.
    """

    smoothness = None

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError


def _largest_gram_eigenvalue(a, tol=1e-10, max_iter=200000):
    """Largest eigenvalue of a.T @ a by power iteration on a generic vector."""
    d = a.shape[1]
    v = 1.0 + np.arange(d) / (2.0 * d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        prev, est = est, nw
        if abs(est - prev) <= tol * est:
            return est
    raise MaxIterations("power iteration did not stabilise")


class LinearGaussianFidelity(DataFidelity):
    """f(x) = ||A x - b||^2 / 2."""

    def __init__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim != 2 or b.shape != (a.shape[0],):
            raise ValueError("operator and observation shapes are inconsistent")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NonFinite("non-finite fidelity parameters")
        self.a = a
        self.b = b
        self.smoothness = _largest_gram_eigenvalue(a)

    def value(self, x):
        r = self.a @ x - self.b
        return float(0.5 * (r @ r))

    def gradient(self, x):
        return self.a.T @ (self.a @ x - self.b)


class InnerSchedule:
    """Inner iteration counts n(k) = floor(c * k^(1+eta))."""

    def __init__(self, c, eta):
        c = float(c)
        eta = float(eta)
        if not (math.isfinite(c) and c >= 1.0):
            raise ValueError(f"c must be >= 1 so that n(1) >= 1, got {c}")
        if not (math.isfinite(eta) and eta > 0.0):
            raise ValueError(f"eta must be positive, got {eta}")
        self.c = c
        self.eta = eta

    def n(self, k):
        if k < 1:
            raise ValueError("the inner schedule is defined for k >= 1")
        return math.floor(self.c * float(k) ** (1.0 + self.eta))

    def epsilon_coefficient(self, k):
        """C_k = ((1+eta) ln k + ln c + 7) / (c * k^(1+eta))."""
        if k < 1:
            raise ValueError("the coefficient is defined for k >= 1")
        k = float(k)
        return ((1.0 + self.eta) * math.log(k) + math.log(self.c) + 7.0) / (
            self.c * k ** (1.0 + self.eta))


class MapSolution:
    def __init__(self, point, residual, steps):
        self.point = point
        self.residual = residual
        self.steps = steps


class MapProblem:
    """Fidelity + prior + weights, with y doubling as the initial point."""

    def __init__(self, fidelity, prior, lam, tau, y):
        lam = float(lam)
        tau = float(tau)
        if not (math.isfinite(lam) and lam >= 0.0):
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        if not (math.isfinite(tau) and tau > 0.0):
            raise ValueError(f"tau must be positive, got {tau}")
        feas = tau * lam * fidelity.smoothness
        if feas > 1.0 + 1e-12:
            raise ValueError(
                f"tau*lambda*L_f = {feas:.12g} exceeds 1; the gradient step "
                "would be expansive")
        self.fidelity = fidelity
        self.prior = prior
        self.lam = lam
        self.tau = tau
        self.y = _as_point(y, prior.dimension)
        self._reference = None

    def objective(self, x):
        return (self.lam * self.fidelity.value(x)
                - self.prior.log_density_smoothed(0.0, x))

    def gradient_step(self, x):
        if self.lam == 0.0:
            return x.copy()
        return x - (self.tau * self.lam) * self.fidelity.gradient(x)

    def prox_problem(self, anchor):
        return ProxProblem(self.prior, anchor, self.tau)

    def reference_map(self, tol=1e-12, max_steps=10**5):
        """x*_MAP: normal equations when quadratic, otherwise exact PGD
        iterated to fixed-point residual `tol`."""
        if self._reference is not None:
            return self._reference
        if (isinstance(self.prior, GaussianPrior)
                and isinstance(self.fidelity, LinearGaussianFidelity)):
            u, lam_p = self.prior._u, self.prior._lam
            cov_inv = (u / lam_p) @ u.T
            a = self.fidelity.a
            lhs = self.lam * (a.T @ a) + cov_inv
            rhs = self.lam * (a.T @ self.b_vec) + cov_inv @ self.prior._mean
            point = np.linalg.solve(lhs, rhs)
            step = exact_prox(self.prox_problem(self.gradient_step(point))).point
            self._reference = MapSolution(point,
                                          float(np.linalg.norm(step - point)), 0)
            return self._reference
        x = self.y.copy()
        for k in range(1, max_steps + 1):
            z = self.gradient_step(x)
            x_new = exact_prox(self.prox_problem(z), tol=min(tol, 1e-12)).point
            disp = float(np.linalg.norm(x_new - x))
            x = x_new
            if disp <= tol * (1.0 + float(np.linalg.norm(x))):
                self._reference = MapSolution(x, disp, k)
                return self._reference
        raise FixedPointNotFound(
            f"exact PGD did not reach residual {tol:.1g} in {max_steps} steps")

    @property
    def b_vec(self):
        return self.fidelity.b


def map_objective(map_problem, x):
    """J(x) = lambda f(x) - ln p(x)."""
    return map_problem.objective(_as_point(x, map_problem.prior.dimension))


class MapTrace:
    """Outer-loop iterates and per-step diagnostics.

    Arrays indexed by outer step k = 1..K live at position k-1; j_hat has one
    extra leading entry for J(x_hat_0). Oracle-dependent fields are None when
    the exact-prox comparison was not requested.
    """

    def __init__(self, iterates, n_inner, j_hat, j_prox, eps, eps_bound,
                 avg_gap, avg_gap_bound, metadata):
        self.iterates = iterates
        self.n_inner = n_inner
        self.j_hat = j_hat
        self.j_prox = j_prox
        self.eps = eps
        self.eps_bound = eps_bound
        self.avg_gap = avg_gap
        self.avg_gap_bound = avg_gap_bound
        self.metadata = metadata

    @property
    def outer_steps(self):
        return self.iterates.shape[0] - 1


class Theorem2Constants:
    """Explicit constants of the convergence bounds for one problem instance."""

    def __init__(self, s, t, a, b, r, x_star, j_star, dist0):
        self.s = s
        self.t = t
        self.a = a
        self.b = b
        self.r = r
        self.x_star = x_star
        self.j_star = j_star
        self.dist0 = dist0


def theorem2_constants(map_problem, inner):
    """S, T, B, R (and A) from the problem data and the reference solution."""
    ref = map_problem.reference_map()
    x_star = ref.point
    grad_norm = float(np.linalg.norm(map_problem.fidelity.gradient(x_star)))
    m = map_problem.prior.third_derivative_bound
    d_eff = map_problem.prior.bound_dimension
    tau = map_problem.tau
    a_const = tau * map_problem.lam * grad_norm + tau * tau * m * math.sqrt(d_eff)
    c, eta = inner.c, inner.eta
    lc = math.log(c) + 7.0
    s = (1.0 + eta) / (c * eta * eta) * (1.0 + eta * lc)
    t = (4.0 * (1.0 + eta) ** 2 / (c * c * (2.0 * eta + 1.0) ** 3)
         + 2.0 * lc * lc / (c * c) * (1.0 + 1.0 / (2.0 * eta + 1.0)))
    dist0 = float(np.linalg.norm(map_problem.y - x_star))
    b = math.exp(2.0 * s) * (dist0 + s * a_const)
    r = 2.0 * b + a_const
    return Theorem2Constants(s, t, a_const, b, r, x_star,
                             map_problem.objective(x_star), dist0)


def _denoise_chain(prior, anchor, start, tau, n):
    """n MMSE-averaging steps anchored at `anchor`, starting from `start`."""
    if isinstance(prior, GaussianPrior):
        trace = np.empty((n + 1, prior.dimension))
        trace[0] = prior._u.T @ (start - prior._mean)
        anchor_c = prior._u.T @ (anchor - prior._mean)
        _kernels.gaussian_chain(prior._lam, anchor_c, tau, 0, trace)
        return prior._mean + prior._u @ trace[n]
    if isinstance(prior, QuadraturePrior1D):
        sigma_last = math.sqrt(tau / n)
        if sigma_last < prior.query_sigma_min:
            raise GridTooCoarse(
                f"inner chain reaches sigma = {sigma_last:.3g}, below the grid "
                f"resolution limit {prior.query_sigma_min:.3g}")
        trace = np.empty(n + 1)
        trace[0] = start[0]
        limit = _guard_value(anchor)
        status = _kernels.quad_chain(prior.potential, prior.x_lo, prior.grid_step,
                                     anchor[0], tau, 0, trace,
                                     WINDOW_SIGMAS, TAIL_SIGMAS, limit)
        if status >= 0:
            z = trace[status]
            sigma = math.sqrt(tau / (status + 1))
            if (z < prior.x_lo - TAIL_SIGMAS * sigma
                    or z > prior.x_hi + TAIL_SIGMAS * sigma):
                raise TailEscape(
                    f"inner iterate left the grid at step {status} (z = {z:.6g})")
            raise Divergence(
                f"inner iterate norm exceeded {limit:.3g} at step {status}",
                step=status)
        return np.array([trace[n]])
    sch = Schedule.paper_default(tau)
    x = start.copy()
    limit = _guard_value(anchor)
    for i in range(n):
        a = sch.alpha(i)
        x = a * prior.mmse(math.sqrt(sch.sigma_sq(i)), x) + (1.0 - a) * anchor
        _check_step(x, limit, i)
    return x


def exact_pgd(map_problem, outer_steps):
    """x_{k+1} = prox_{-tau ln p}(x_k - tau*lambda*grad f(x_k)), exact prox."""
    k_max = int(outer_steps)
    if k_max < 0:
        raise ValueError("outer_steps must be >= 0")
    t0 = time.perf_counter()
    d = map_problem.prior.dimension
    iterates = np.empty((k_max + 1, d))
    iterates[0] = map_problem.y
    j_hat = np.empty(k_max + 1)
    j_hat[0] = map_problem.objective(map_problem.y)
    x = map_problem.y.copy()
    for k in range(1, k_max + 1):
        z = map_problem.gradient_step(x)
        x = exact_prox(map_problem.prox_problem(z)).point
        iterates[k] = x
        j_hat[k] = map_problem.objective(x)
    metadata = _metadata(map_problem, "exact_pgd", k_max,
                         time.perf_counter() - t0)
    return MapTrace(iterates, None, j_hat, None, None, None, None, None,
                    metadata)


def approx_pgd(map_problem, inner, outer_steps, inner_anchor="gradient_point",
               with_oracle=True):
    """Gradient steps on the data term, inexact prox by MMSE averaging.

    With the oracle enabled, each outer step also computes the exact prox of
    the gradient-step point and records the iterate error, its bound and the
    running averaged optimality gap with its bound.
    """
    k_max = int(outer_steps)
    if k_max < 1:
        raise ValueError("outer_steps must be >= 1")
    if inner_anchor not in ("gradient_point", "observation"):
        raise ValueError(f"unknown inner anchor {inner_anchor!r}")
    t0 = time.perf_counter()
    consts = theorem2_constants(map_problem, inner) if with_oracle else None
    prior = map_problem.prior
    tau = map_problem.tau
    d = prior.dimension
    iterates = np.empty((k_max + 1, d))
    iterates[0] = map_problem.y
    n_inner = np.empty(k_max, dtype=int)
    j_hat = np.empty(k_max + 1)
    j_hat[0] = map_problem.objective(map_problem.y)
    j_prox = eps = eps_bound = avg_gap = avg_gap_bound = None
    if with_oracle:
        j_prox = np.empty(k_max)
        eps = np.empty(k_max)
        eps_bound = np.empty(k_max)
        avg_gap = np.empty(k_max)
        avg_gap_bound = np.empty(k_max)
        gap_budget = (consts.dist0**2 + consts.t * consts.r**2
                      + 2.0 * consts.s * consts.r**2)
    x = map_problem.y.copy()
    gap_sum = 0.0
    for k in range(1, k_max + 1):
        z0 = map_problem.gradient_step(x)
        anchor = z0 if inner_anchor == "gradient_point" else map_problem.y
        n = inner.n(k)
        n_inner[k - 1] = n
        x = _denoise_chain(prior, anchor, z0, tau, n)
        iterates[k] = x
        j_hat[k] = map_problem.objective(x)
        if with_oracle:
            x_k = exact_prox(ProxProblem(prior, z0, tau)).point
            eps[k - 1] = float(np.linalg.norm(x - x_k))
            eps_bound[k - 1] = inner.epsilon_coefficient(k) * consts.r
            j_prox[k - 1] = map_problem.objective(x_k)
            gap_sum += j_prox[k - 1] - consts.j_star
            avg_gap[k - 1] = gap_sum / k
            avg_gap_bound[k - 1] = gap_budget / (2.0 * tau * k)
    metadata = _metadata(map_problem, "approx_pgd", k_max,
                         time.perf_counter() - t0)
    metadata["inner_c"] = inner.c
    metadata["inner_eta"] = inner.eta
    metadata["inner_anchor"] = inner_anchor
    if with_oracle:
        metadata["j_star"] = consts.j_star
        metadata["constants"] = {"S": consts.s, "T": consts.t,
                                 "B": consts.b, "R": consts.r, "A": consts.a}
    return MapTrace(iterates, n_inner, j_hat, j_prox, eps, eps_bound,
                    avg_gap, avg_gap_bound, metadata)


def _metadata(map_problem, form, k_max, wall_time):
    return {
        "form": form,
        "prior": type(map_problem.prior).__name__,
        "fidelity": type(map_problem.fidelity).__name__,
        "dimension": map_problem.prior.dimension,
        "lambda": map_problem.lam,
        "tau": map_problem.tau,
        "y": map_problem.y.tolist(),
        "outer_steps": k_max,
        "backend": _kernels.backend,
        "version": __version__,
        "wall_time": wall_time,
    }


class VerificationReport:
    def __init__(self, trace, constants, eps_margin, gap_margin):
        self.trace = trace
        self.constants = constants
        self.eps_margin = eps_margin
        self.gap_margin = gap_margin


def verify_theorem2(map_problem, inner, outer_steps):
    """Run the approximate and exact chains side by side and assert both
    convergence displays; raises BoundViolated at the first failing step."""
    trace = approx_pgd(map_problem, inner, outer_steps, with_oracle=True)
    consts = theorem2_constants(map_problem, inner)
    eps_margin = trace.eps_bound - trace.eps
    gap_margin = trace.avg_gap_bound - trace.avg_gap
    for name, margin in (("iterate-error", eps_margin),
                         ("averaged-gap", gap_margin)):
        bad = np.nonzero(margin < 0.0)[0]
        if bad.size:
            k = int(bad[0]) + 1
            raise BoundViolated(f"{name} bound violated at outer step {k}",
                                step=k)
    return VerificationReport(trace, consts, eps_margin, gap_margin)
