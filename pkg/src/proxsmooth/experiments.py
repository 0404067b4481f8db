"""Registry of runnable experiments emitting plot-ready CSV/JSON artifacts.

Every experiment resolves its parameters from a validated flat config,
writes its files plus a ``manifest.json`` with content digests and embedded
bound-check results, and is byte-reproducible given (config, seed).
"""

import json
import math
import os
from pathlib import Path

import numpy as np

from . import trace_io
from ._kernels import backend as _backend
from .analysis import (
    heat_equation_residual,
    max_principle_check,
    solve_solution_path,
    verify_path_bounds,
)
from .config import ExperimentConfig, parse_config_file
from .errors import AssertionFailed, ConfigInvalid, IoFailure, ProxSmoothError
from .mapsolve import (
    InnerSchedule,
    LinearGaussianFidelity,
    MapProblem,
    approx_pgd,
)
from .priors import (
    EmbeddedSubspacePrior,
    GaussianPrior,
    QuadraturePrior1D,
    builtin_quadrature_prior,
)
from .prox import (
    ProxProblem,
    Schedule,
    exact_smoothed_prox,
    naive_gd,
    run_prox_iteration,
)


class KeySpec:
    def __init__(self, kind, default=None, help="", check=None):
        self.kind = kind
        self.default = default
        self.help = help
        self.check = check


class Experiment:
    def __init__(self, description, keys, runner, extra_validate=None):
        self.description = description
        self.keys = keys
        self.runner = runner
        self.extra_validate = extra_validate


class Check:
    """One embedded assertion: value OP threshold."""

    def __init__(self, name, value, threshold, op):
        if op not in ("<=", ">=", "~="):
            raise ValueError(f"unknown check op {op!r}")
        self.name = name
        self.value = float(value)
        self.threshold = float(threshold)
        self.op = op

    @property
    def margin(self):
        if self.op == "<=":
            return self.threshold - self.value
        if self.op == ">=":
            return self.value - self.threshold
        # relative agreement to 1e-12
        tol = 1e-12 * max(1.0, abs(self.threshold))
        return tol - abs(self.value - self.threshold)

    @property
    def passed(self):
        return self.margin >= 0.0

    def as_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "op": self.op,
            "threshold": self.threshold,
            "margin": self.margin,
            "status": "PASS" if self.passed else "FAIL",
        }


class RunResult:
    def __init__(self, out_dir, files, checks):
        self.out_dir = Path(out_dir)
        self.files = files
        self.checks = checks

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def _positive(name):
    return lambda v: None if v > 0 else f"{name} must be positive"


def _nonneg(name):
    return lambda v: None if v >= 0 else f"{name} must be nonnegative"


def _coerce(key, spec, value):
    kind = spec.kind
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            return None, f"key '{key}' must be an integer"
        out = int(value)
    elif kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None, f"key '{key}' must be a number"
        out = float(value)
    elif kind == "str":
        if not isinstance(value, str):
            return None, f"key '{key}' must be a string"
        out = value
    elif kind == "vec":
        if (not isinstance(value, list) or not value
                or not all(isinstance(v, (int, float))
                           and not isinstance(v, bool) for v in value)):
            return None, f"key '{key}' must be a vector of numbers"
        out = [float(v) for v in value]
    elif kind == "ivec":
        if (not isinstance(value, list) or not value
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in value)):
            return None, f"key '{key}' must be a vector of integers"
        out = [int(v) for v in value]
    elif kind == "mat":
        ok = (isinstance(value, list) and value
              and all(isinstance(r, list) and len(r) == len(value[0])
                      and all(isinstance(v, (int, float))
                              and not isinstance(v, bool) for v in r)
                      for r in value))
        if not ok:
            return None, f"key '{key}' must be a matrix (list of equal rows)"
        out = [[float(v) for v in r] for r in value]
    else:
        raise ValueError(f"unknown key kind {kind!r}")
    if spec.check is not None:
        problem = spec.check(out)
        if problem:
            return None, problem
    return out, None


# ---------------------------------------------------------------------------
# prior descriptions (shared by experiments that take a configurable prior)

PRIOR_KEYS = {
    "prior_kind": KeySpec("str", default="quadrature1d",
                          help="gaussian | quadrature1d | embedded"),
    "prior_mean": KeySpec("vec", help="gaussian mean"),
    "prior_variances": KeySpec("vec",
                               help="gaussian diagonal-covariance shorthand"),
    "prior_eigenvalues": KeySpec("vec", help="gaussian covariance spectrum"),
    "prior_eigenvectors": KeySpec("mat", help="gaussian covariance basis"),
    "prior_potential": KeySpec("str", default="sech",
                               help="sech | logistic | quartic"),
    "prior_sigma_min": KeySpec("float", default=0.1,
                               check=_positive("prior_sigma_min"),
                               help="smallest certified query noise level"),
    "prior_x_lo": KeySpec("float", help="tabulation lower bound"),
    "prior_x_hi": KeySpec("float", help="tabulation upper bound"),
    "prior_basis": KeySpec("mat", help="embedded subspace basis columns"),
    "prior_offset": KeySpec("vec", help="embedded subspace offset"),
}


def prior_from_config(values):
    """Build a prior from the flat ``prior_*`` key group."""
    kind = values.get("prior_kind", "quadrature1d")
    try:
        if kind == "gaussian":
            mean = values.get("prior_mean")
            if mean is None:
                raise ConfigInvalid("gaussian prior needs prior_mean")
            if values.get("prior_variances") is not None:
                return GaussianPrior.from_diagonal(mean,
                                                   values["prior_variances"])
            lam = values.get("prior_eigenvalues")
            vecs = values.get("prior_eigenvectors")
            if lam is None or vecs is None:
                raise ConfigInvalid(
                    "gaussian prior needs prior_variances or "
                    "prior_eigenvalues + prior_eigenvectors")
            return GaussianPrior(np.asarray(mean, float),
                                 np.asarray(lam, float),
                                 np.asarray(vecs, float))
        if kind == "quadrature1d":
            return builtin_quadrature_prior(
                values.get("prior_potential", "sech"),
                sigma_min=values.get("prior_sigma_min", 0.1),
                x_lo=values.get("prior_x_lo"),
                x_hi=values.get("prior_x_hi"))
        if kind == "embedded":
            basis = values.get("prior_basis")
            offset = values.get("prior_offset")
            if basis is None or offset is None:
                raise ConfigInvalid(
                    "embedded prior needs prior_basis and prior_offset")
            base = builtin_quadrature_prior(
                values.get("prior_potential", "sech"),
                sigma_min=values.get("prior_sigma_min", 0.1),
                x_lo=values.get("prior_x_lo"),
                x_hi=values.get("prior_x_hi"))
            return EmbeddedSubspacePrior(base, np.asarray(basis, float),
                                         np.asarray(offset, float))
    except ConfigInvalid:
        raise
    except (ValueError, ProxSmoothError) as e:
        raise ConfigInvalid(f"invalid prior configuration: {e}") from e
    raise ConfigInvalid(f"unknown prior_kind {kind!r}")


def _prior_query_floor(prior):
    if isinstance(prior, QuadraturePrior1D):
        return prior.query_sigma_min
    if isinstance(prior, EmbeddedSubspacePrior):
        return _prior_query_floor(prior.base)
    return 0.0


# ---------------------------------------------------------------------------
# experiment runners


def _run_gaussian_exact_rate(cfg, out, rng):
    v = cfg.values
    tau = v["tau"]
    n = v["n_steps"]
    files, checks = [], []
    for d in v["dims"]:
        lam = np.geomspace(1.0, 1.0 / v["cond_max"], d)
        q = np.linalg.qr(rng.standard_normal((d, d)))[0]
        mean = rng.standard_normal(d)
        prior = GaussianPrior(mean, lam, q)
        y = mean + 2.0 * rng.standard_normal(d)
        prob = ProxProblem(prior, y, tau)
        tr = run_prox_iteration(prob, Schedule.paper_default(tau), n)
        dist = float(np.linalg.norm(y - prob.reference_prox().point))
        ks = np.arange(1.0, n + 1.0)
        predicted = dist / (ks + 1.0)
        rel = np.abs(tr.err - predicted) / predicted
        name = f"exact_rate_d{d}.csv"
        trace_io.write_csv(out / name, ["k", "err", "predicted", "rel_dev"],
                           [[int(k), float(e), float(p), float(r)]
                            for k, e, p, r in zip(ks, tr.err, predicted, rel)])
        files.append(name)
        checks.append(Check(f"exact_rate_rel_dev_d{d}", rel.max(),
                            1e-10, "<="))
    return files, checks


def _run_fig1_levelsets(cfg, out, rng):
    v = cfg.values
    tau = v["tau"]
    l_smooth = v["l_smooth"]
    prior = GaussianPrior.from_diagonal([0.0, 0.0], [1.0, 1.0 / l_smooth])
    prob = ProxProblem(prior, np.asarray(v["y"], float), tau)
    star = prob.reference_prox().point
    center = 0.5 * (prob.y + star)
    hw = v["half_width"]
    ng = v["n_grid"]
    xs = np.linspace(center[0] - hw, center[0] + hw, ng)
    ys = np.linspace(center[1] - hw, center[1] + hw, ng)
    files = []
    for i, s2 in enumerate(v["sigma_sqs"]):
        sigma = math.sqrt(s2)
        rows = []
        for yy in ys:
            for x in xs:
                rows.append([float(x), float(yy),
                             prob.objective(np.array([x, yy]), sigma)])
        name = f"levelsets_{i}.csv"
        trace_io.write_csv(out / name, ["x_1", "x_2", "f_sigma"], rows)
        files.append(name)
    eig = np.linalg.eigvalsh(prob.hessian(star, 0.0))
    checks = [Check("anisotropy_ratio", eig[-1] / eig[0],
                    (1.0 + tau * l_smooth) / (1.0 + tau), "~=")]
    return files, checks


def _run_fig2_comparison(cfg, out, rng):
    v = cfg.values
    tau = v["tau"]
    l_smooth = v["l_smooth"]
    n = v["n_steps"]
    prior = GaussianPrior.from_diagonal([0.0, 0.0], [1.0, 1.0 / l_smooth])
    prob = ProxProblem(prior, np.asarray(v["y"], float), tau)
    star = prob.reference_prox().point
    gamma = v["gamma_frac"] / (1.0 / tau + l_smooth)
    naive = naive_gd(prob, gamma, n, reference=star)
    smoothed = run_prox_iteration(prob, Schedule.paper_default(tau), n)
    files = []
    for label, tr in (("naive", naive), ("smoothed", smoothed)):
        tname = f"trajectory_{label}.csv"
        trace_io.write_csv(out / tname, ["k", "x_1", "x_2"],
                           [[k, float(p[0]), float(p[1])]
                            for k, p in enumerate(tr.iterates)])
        ename = f"errors_{label}.csv"
        trace_io.write_prox_trace(out / ename, tr)
        files += [tname, ename, ename[:-4] + ".json"]
    checks = [Check("error_ratio", naive.err[-1] / smoothed.err[-1],
                    v["ratio_min"], ">=")]
    return files, checks


def _theorem1_instances():
    gauss = GaussianPrior.from_diagonal([0.0], [1.0])
    sech = builtin_quadrature_prior("sech", sigma_min=0.07)
    base = builtin_quadrature_prior("sech", sigma_min=0.07)
    emb = EmbeddedSubspacePrior(base, np.array([[0.6], [0.8], [0.0]]),
                                np.array([0.25, -0.5, 0.3]))
    return [
        ("gaussian", gauss, np.array([2.0]), 1.0),
        ("sech", sech, np.array([1.5]), 0.5),
        ("embedded_sech_r3", emb, np.array([0.44, 0.92, 0.7]), 0.5),
    ]


def _run_theorem1_sweep(cfg, out, rng):
    n = cfg.values["n_steps"]
    files, checks = [], []
    for name, prior, y, tau in _theorem1_instances():
        prob = ProxProblem(prior, y, tau)
        tr = run_prox_iteration(prob, Schedule.paper_default(tau), n)
        fname = f"theorem1_{name}.csv"
        trace_io.write_prox_trace(out / fname, tr)
        files += [fname, fname[:-4] + ".json"]
        checks.append(Check(f"theorem1_margin_{name}",
                            float(np.min(tr.bound - tr.err)), 0.0, ">="))
    return files, checks


def _run_alg1_map(cfg, out, rng):
    v = cfg.values
    prior = prior_from_config(v)
    fidelity = LinearGaussianFidelity(np.asarray(v["a"], float),
                                      np.asarray(v["b"], float))
    mp = MapProblem(fidelity, prior, v["lam"], v["tau"],
                    np.asarray(v["y"], float))
    inner = InnerSchedule(v["c"], v["eta"])
    tr = approx_pgd(mp, inner, v["outer_steps"],
                    inner_anchor=v["inner_anchor"])
    trace_io.write_map_trace(out / "alg1_map.csv", tr)
    checks = [
        Check("eps_margin_min", float(np.min(tr.eps_bound - tr.eps)),
              0.0, ">="),
        Check("avg_gap_margin_min",
              float(np.min(tr.avg_gap_bound - tr.avg_gap)), 0.0, ">="),
    ]
    return ["alg1_map.csv", "alg1_map.json"], checks


def _run_path_ode(cfg, out, rng):
    v = cfg.values
    prior = prior_from_config(v)
    tau = v["tau"]
    prob = ProxProblem(prior, np.asarray(v["y"], float), tau)
    grid = np.geomspace(tau, v["sigma_sq_min_frac"] * tau, v["n_nodes"])
    states = solve_solution_path(prob, grid)
    trace_io.write_path_trace(out / "path_trace.csv", states)
    report = verify_path_bounds(prob, grid, raise_on_violation=False)
    trace_io.write_json(out / "path_bounds.json", report.as_json_dict())

    newton_dev = max(
        float(np.linalg.norm(
            st.point - exact_smoothed_prox(prob, math.sqrt(st.sigma_sq)).point))
        for st in states)
    m = prior.third_derivative_bound
    b_cap = 0.5 * tau * m * math.sqrt(prior.bound_dimension)
    b_excess = max(float(np.linalg.norm(st.B_term)) - b_cap for st in states)
    checks = [
        Check("newton_deviation_max", newton_dev, 1e-6, "<="),
        Check("radius_margin_min", float(report.radius_margins.min()),
              0.0, ">="),
        Check("lipschitz_margin_min", float(report.lipschitz_margins.min()),
              0.0, ">="),
        Check("b_term_excess_max", b_excess, 0.0, "<="),
        Check("grad_norm_max", max(st.grad_norm for st in states),
              1e-10, "<="),
        Check("q_term_min_eigenvalue",
              min(float(np.linalg.eigvalsh(st.Q_term)[0]) for st in states),
              -1e-9, ">="),
    ]
    return ["path_trace.csv", "path_bounds.json"], checks


def _fd_log_density(prior, sigma, z, h):
    up = prior.log_density_smoothed(sigma, np.array([z + h]))
    dn = prior.log_density_smoothed(sigma, np.array([z - h]))
    return up, dn


def _run_pde_suite(cfg, out, rng):
    v = cfg.values
    gauss = GaussianPrior.from_diagonal([0.0], [1.0])
    sech = builtin_quadrature_prior("sech", sigma_min=0.1)
    rows, checks = [], []

    def add(name, prior_name, s2, value, threshold, op):
        c = Check(name, value, threshold, op)
        checks.append(c)
        rows.append([name, prior_name, float(s2), c.value, c.threshold,
                     c.margin, "PASS" if c.passed else "FAIL"])

    add("heat_gaussian", "gaussian", 0.4,
        heat_equation_residual(gauss, math.sqrt(0.4),
                               np.linspace(-3.0, 3.0, 41)),
        1e-8, "<=")
    zs = np.linspace(-4.0, 4.0, 101)
    for s2 in v["heat_sigma_sqs"]:
        add(f"heat_sech_{s2:g}", "sech", s2,
            heat_equation_residual(sech, math.sqrt(s2), zs), 1e-4, "<=")

    # Tweedie identities against finite differences of the log-density table
    s2 = v["tweedie_sigma_sq"]
    sigma = math.sqrt(s2)
    worst1 = worst2 = 0.0
    for z in np.linspace(-3.0, 3.0, 21):
        h = 1e-5
        up, dn = _fd_log_density(sech, sigma, z, h)
        fd_score = (up - dn) / (2.0 * h)
        mmse = float(sech.mmse(sigma, np.array([z]))[0])
        worst1 = max(worst1, abs(mmse - (z + s2 * fd_score)))
        h = 1e-4
        up, dn = _fd_log_density(sech, sigma, z, h)
        mid = sech.log_density_smoothed(sigma, np.array([z]))
        fd_hess = (up - 2.0 * mid + dn) / (h * h)
        var = float(sech.posterior_variance(sigma, np.array([z]))[0, 0])
        worst2 = max(worst2, abs(-fd_hess - (1.0 - var / s2) / s2))
    add("tweedie_first_order", "sech", s2, worst1, 1e-6, "<=")
    add("tweedie_second_order", "sech", s2, worst2, 1e-6, "<=")

    report = max_principle_check(sech, v["mp_sigma_sqs"])
    trace_io.write_json(out / "max_principle.json", report.as_json_dict())
    for s2, margin in zip(report.sigma_sq, report.margins):
        add(f"max_principle_{s2:g}", "sech", s2, float(margin), 0.0, ">=")
    if 0.0 in report.sigma_sq:
        i = list(report.sigma_sq).index(0.0)
        add("max_principle_sigma0_extremum", "sech", 0.0,
            float(report.suprema[i]),
            sech.third_derivative_bound / 1.01, "~=")

    trace_io.write_csv(out / "pde_suite.csv",
                       ["check", "prior", "sigma_sq", "value", "threshold",
                        "margin", "status"], rows)
    return ["pde_suite.csv", "max_principle.json"], checks


def _run_cold_diffusion(cfg, out, rng):
    v = cfg.values
    tau = v["tau"]
    n = v["n_steps"]
    prior = GaussianPrior.from_diagonal([0.0], [1.0])
    prob = ProxProblem(prior, np.asarray(v["y"], float), tau)
    default = run_prox_iteration(prob, Schedule.paper_default(tau), n)
    cold = Schedule.custom(lambda k: k / n,
                           lambda k: tau / (k + 1.0),
                           lambda k: 1.0 - k / n)
    cold_tr = run_prox_iteration(prob, cold, n)
    files = []
    for label, tr in (("default", default), ("cold", cold_tr)):
        name = f"schedule_{label}.csv"
        trace_io.write_prox_trace(out / name, tr)
        files += [name, name[:-4] + ".json"]
    # diagnostics only: the k/N weighting has no guarantee to check
    return files, []


# ---------------------------------------------------------------------------
# registry and validation


def _validate_alg1_map(values):
    problems = []
    if math.floor(values["c"]) < 1:
        problems.append("n(1) = 0; c >= 1 required")
    if values["eta"] <= 0:
        problems.append("eta must be positive")
    if values["inner_anchor"] not in ("gradient_point", "observation"):
        problems.append("inner_anchor must be 'gradient_point' or "
                        "'observation'")
    try:
        prior = prior_from_config(values)
        fidelity = LinearGaussianFidelity(np.asarray(values["a"], float),
                                          np.asarray(values["b"], float))
        if len(values["y"]) != prior.dimension:
            problems.append("y does not match the prior dimension")
        budget = values["tau"] * values["lam"] * fidelity.smoothness
        if budget > 1.0 + 1e-12:
            problems.append(f"tau*lambda*L_f = {budget:.6g} exceeds 1")
    except ConfigInvalid as e:
        problems.append(str(e))
    except (ValueError, ProxSmoothError) as e:
        problems.append(str(e))
    return problems


def _validate_path_ode(values):
    problems = []
    if not 0.0 < values["sigma_sq_min_frac"] < 1.0:
        problems.append("sigma_sq_min_frac must be in (0, 1)")
    try:
        prior = prior_from_config(values)
        floor = _prior_query_floor(prior)
        if math.sqrt(values["sigma_sq_min_frac"] * values["tau"]) < floor:
            problems.append("sigma grid falls below the prior's resolution "
                            f"limit {floor:g}")
        if len(values["y"]) != prior.dimension:
            problems.append("y does not match the prior dimension")
    except ConfigInvalid as e:
        problems.append(str(e))
    return problems


def _validate_sigma_list(key):
    def check(vals):
        if any(s < 0 for s in vals):
            return f"{key} entries must be nonnegative"
        return None
    return check


REGISTRY = {
    "alg1-map": Experiment(
        "MAP solve with per-step denoiser budgets; verifies the inner-error "
        "and averaged-gap bounds",
        {
            **PRIOR_KEYS,
            "a": KeySpec("mat", default=[[1.0]], help="fidelity matrix"),
            "b": KeySpec("vec", default=[2.0], help="fidelity observation"),
            "y": KeySpec("vec", default=[0.0], help="prior anchor point"),
            "tau": KeySpec("float", default=0.5, check=_positive("tau")),
            "lam": KeySpec("float", default=1.0, check=_nonneg("lam")),
            "c": KeySpec("float", default=10.0,
                         help="inner-budget multiplier"),
            "eta": KeySpec("float", default=1.0,
                           help="inner-budget growth exponent"),
            "outer_steps": KeySpec("int", default=10,
                                   check=_positive("outer_steps")),
            "inner_anchor": KeySpec("str", default="gradient_point",
                                    help="gradient_point | observation"),
        },
        _run_alg1_map,
        _validate_alg1_map,
    ),
    "cold-diffusion-schedule": Experiment(
        "Averaging recursion under the diagnostic alpha_k = k/N weighting "
        "next to the default schedule",
        {
            "tau": KeySpec("float", default=1.0, check=_positive("tau")),
            "y": KeySpec("vec", default=[2.0]),
            "n_steps": KeySpec("int", default=200,
                               check=_positive("n_steps")),
        },
        _run_cold_diffusion,
    ),
    "fig1-levelsets": Experiment(
        "Level-set grids of the smoothed proximal objective for an "
        "anisotropic Gaussian prior",
        {
            "tau": KeySpec("float", default=1.0, check=_positive("tau")),
            "l_smooth": KeySpec("float", default=999.0,
                                check=_positive("l_smooth")),
            "y": KeySpec("vec", default=[2.0, 1.0]),
            "sigma_sqs": KeySpec("vec", default=[0.0, 0.25, 0.5, 1.0],
                                 check=_validate_sigma_list("sigma_sqs")),
            "half_width": KeySpec("float", default=3.0,
                                  check=_positive("half_width")),
            "n_grid": KeySpec("int", default=101, check=_positive("n_grid")),
        },
        _run_fig1_levelsets,
    ),
    "fig2-comparison": Experiment(
        "Naive gradient descent vs the smoothed-schedule recursion on a "
        "kappa = 500 quadratic: trajectories and error curves",
        {
            "tau": KeySpec("float", default=1.0, check=_positive("tau")),
            "l_smooth": KeySpec("float", default=999.0,
                                check=_positive("l_smooth")),
            "gamma_frac": KeySpec("float", default=0.8,
                                  check=_positive("gamma_frac")),
            "y": KeySpec("vec", default=[3.0, 3.0]),
            "n_steps": KeySpec("int", default=100,
                               check=_positive("n_steps")),
            "ratio_min": KeySpec("float", default=10.0,
                                 help="required naive/smoothed error ratio"),
        },
        _run_fig2_comparison,
    ),
    "gaussian-exact-rate": Experiment(
        "Exact error recursion err_k = ||y - prox||/(k+1) for Gaussian "
        "priors of several dimensions",
        {
            "dims": KeySpec("ivec", default=[1, 2, 10],
                            check=lambda v: None if all(d >= 1 for d in v)
                            else "dims entries must be >= 1"),
            "tau": KeySpec("float", default=1.0, check=_positive("tau")),
            "n_steps": KeySpec("int", default=1000,
                               check=_positive("n_steps")),
            "cond_max": KeySpec("float", default=1000.0,
                                check=_positive("cond_max")),
        },
        _run_gaussian_exact_rate,
    ),
    "path-ode": Experiment(
        "Solution-path ODE integration with radius/Lipschitz bound margins",
        {
            **PRIOR_KEYS,
            "tau": KeySpec("float", default=0.5, check=_positive("tau")),
            "y": KeySpec("vec", default=[1.5]),
            "n_nodes": KeySpec("int", default=20,
                               check=lambda v: None if v >= 2
                               else "n_nodes must be at least 2"),
            "sigma_sq_min_frac": KeySpec("float", default=1e-3),
        },
        _run_path_ode,
        _validate_path_ode,
    ),
    "pde-suite": Experiment(
        "Heat-equation identity, MMSE/Tweedie consistency, and the "
        "third-derivative maximum principle",
        {
            "heat_sigma_sqs": KeySpec(
                "vec", default=[0.1, 0.5, 1.0],
                check=lambda v: None if all(s >= 2e-3 for s in v)
                else "heat_sigma_sqs entries must be >= 2e-3"),
            "mp_sigma_sqs": KeySpec(
                "vec", default=[0.0, 0.01, 0.05, 0.2, 0.5, 1.0],
                check=_validate_sigma_list("mp_sigma_sqs")),
            "tweedie_sigma_sq": KeySpec("float", default=0.25,
                                        check=_positive("tweedie_sigma_sq")),
        },
        _run_pde_suite,
    ),
    "theorem1-sweep": Experiment(
        "Error-vs-bound traces of the averaging recursion on Gaussian, "
        "tabulated and embedded priors",
        {
            "n_steps": KeySpec("int", default=10000,
                               check=_positive("n_steps")),
        },
        _run_theorem1_sweep,
    ),
}


def build_config(raw, overrides=(), out=None, seed=None):
    """Bind a raw key map to a registry entry, defaulting and validating."""
    raw = dict(raw)
    for key, value in overrides:
        raw[key] = value
    name = raw.pop("experiment", None)
    if name is None:
        raise ConfigInvalid("missing required key 'experiment'",
                            problems=["missing required key 'experiment'"])
    if not isinstance(name, str) or name not in REGISTRY:
        msg = f"unknown experiment {name!r}"
        raise ConfigInvalid(msg, problems=[msg])
    entry = REGISTRY[name]
    problems = []

    cfg_seed = raw.pop("seed", 0)
    if (isinstance(cfg_seed, bool) or not isinstance(cfg_seed, int)
            or not 0 <= cfg_seed < 2**64):
        problems.append("seed must be an unsigned 64-bit integer")
        cfg_seed = 0
    output_dir = raw.pop("output_dir", None)
    if output_dir is not None and not isinstance(output_dir, str):
        problems.append("output_dir must be a string")
        output_dir = None

    values = {}
    for key, spec in entry.keys.items():
        if key in raw:
            coerced, problem = _coerce(key, spec, raw.pop(key))
            if problem:
                problems.append(problem)
            else:
                values[key] = coerced
        else:
            values[key] = spec.default
    for key in sorted(raw):
        problems.append(f"unknown key '{key}' for experiment '{name}'")

    if not problems and entry.extra_validate is not None:
        problems.extend(entry.extra_validate(values))
    if problems:
        raise ConfigInvalid(
            f"invalid configuration for '{name}': " + "; ".join(problems),
            problems=problems)

    return ExperimentConfig(name, values,
                            seed=cfg_seed if seed is None else seed,
                            output_dir=out if out is not None else output_dir)


def validate_config(path):
    """Parse and validate without running; returns a list of problems."""
    raw = parse_config_file(path)
    try:
        build_config(raw)
    except ConfigInvalid as e:
        return e.problems or [str(e)]
    return []


def _resolve_out_dir(config):
    path = config.output_dir or os.environ.get("PROX_OUT_DIR")
    if not path:
        raise ConfigInvalid("no output directory: pass --out, set "
                            "output_dir, or export PROX_OUT_DIR")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create output directory {out}: {e}") from e
    return out


def run_experiment(config):
    """Run one experiment: write artifacts + manifest, then enforce checks.

    Raises AssertionFailed (after all files including the manifest are on
    disk) when an embedded bound check fails.
    """
    entry = REGISTRY[config.experiment]
    out = _resolve_out_dir(config)
    rng = np.random.Generator(np.random.Philox(config.seed))
    files, checks = entry.runner(config, out, rng)
    files = sorted(files)
    manifest = {
        "experiment": config.experiment,
        "seed": config.seed,
        "backend": _backend,
        "parameters": {k: v for k, v in config.values.items()
                       if v is not None},
        "files": [{"name": f,
                   "sha256": trace_io.sha256_file(out / f),
                   "bytes": (out / f).stat().st_size} for f in files],
        "checks": [c.as_dict() for c in checks],
    }
    trace_io.write_json(out / "manifest.json", manifest)
    result = RunResult(out, files, checks)
    if not result.passed:
        failing = [c.name for c in checks if not c.passed]
        e = AssertionFailed("checks failed: " + ", ".join(failing),
                            checks=failing)
        e.result = result
        raise e
    return result


def list_experiments(as_json=False, filt=None):
    names = [n for n in sorted(REGISTRY) if not filt or filt in n]
    if as_json:
        entries = []
        for n in names:
            entry = REGISTRY[n]
            entries.append({
                "name": n,
                "description": entry.description,
                "keys": {k: {"kind": s.kind, "default": s.default,
                             "help": s.help}
                         for k, s in sorted(entry.keys.items())},
            })
        return json.dumps({"experiments": entries}, indent=2, sort_keys=True)
    width = max(len(n) for n in names) if names else 0
    return "\n".join(f"{n:<{width}}  {REGISTRY[n].description}"
                     for n in names)
