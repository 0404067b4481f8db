"""Solution-path ODE, smoothing PDE identities, the third-derivative maximum
principle and empirical rate measurement, verified against closed forms and
finite-difference oracles."""

import json
import math

import numpy as np
import pytest

import oracles
from proxsmooth.analysis import (
    RateReport,
    heat_equation_residual,
    max_principle_check,
    rate_slope,
    score_sigma_derivative,
    solve_solution_path,
    verify_path_bounds,
)
from proxsmooth.errors import (
    BoundViolated,
    InsufficientData,
    ManifoldEscape,
    SigmaZero,
)
from proxsmooth.priors import (
    EmbeddedSubspacePrior,
    GaussianPrior,
    builtin_quadrature_prior,
)
from proxsmooth.prox import (
    IterateTrace,
    ProxProblem,
    Schedule,
    exact_prox,
    exact_smoothed_prox,
    naive_gd,
    run_prox_iteration,
)


def _log_grid(tau, lo_frac, n):
    return np.geomspace(tau, lo_frac * tau, n)


def test_score_sigma_derivative_gaussian_closed_form(std_normal_1d, gauss_3d):
    got = score_sigma_derivative(std_normal_1d, 1.0, np.array([2.0]))
    assert got[0] == pytest.approx(0.5, abs=1e-12)
    mean, cov, prior = gauss_3d
    np.testing.assert_allclose(score_sigma_derivative(prior, 0.7, mean),
                               np.zeros(3), atol=1e-12)
    # d/dsigma^2 of -U c/(lam + sigma^2) is U c/(lam + sigma^2)^2
    z = mean + np.array([0.5, -1.1, 0.3])
    s2 = 0.4
    w, u = np.linalg.eigh(cov)
    c = u.T @ (z - mean)
    want = u @ (c / (w + s2) ** 2)
    np.testing.assert_allclose(score_sigma_derivative(prior, math.sqrt(s2), z),
                               want, atol=1e-10)


def test_score_sigma_derivative_matches_fd(sech_prior, embedded_sech):
    h = 1e-4
    s2 = 0.3
    z = np.array([0.8])
    fd = (sech_prior.score_smoothed(math.sqrt(s2 + h), z)
          - sech_prior.score_smoothed(math.sqrt(s2 - h), z)) / (2.0 * h)
    got = score_sigma_derivative(sech_prior, math.sqrt(s2), z)
    assert abs(got[0] - fd[0]) <= 1e-5
    z2 = np.array([0.9, -0.1])
    fd2 = (embedded_sech.score_smoothed(math.sqrt(s2 + h), z2)
           - embedded_sech.score_smoothed(math.sqrt(s2 - h), z2)) / (2.0 * h)
    got2 = score_sigma_derivative(embedded_sech, math.sqrt(s2), z2)
    np.testing.assert_allclose(got2, fd2, atol=1e-5)


def test_score_sigma_derivative_requires_positive_sigma(std_normal_1d):
    with pytest.raises(SigmaZero):
        score_sigma_derivative(std_normal_1d, 0.0, np.array([1.0]))


def test_solution_path_gaussian_closed_form(std_normal_1d):
    prob = ProxProblem(std_normal_1d, np.array([2.0]), 1.0)
    grid = np.array([1.0, 0.5, 0.1, 0.01])
    states = solve_solution_path(prob, grid)
    assert len(states) == 4
    for st, s2 in zip(states, grid):
        assert st.sigma_sq == s2
        want = 2.0 * (1.0 + s2) / (2.0 + s2)
        assert st.point[0] == pytest.approx(want, abs=1e-8)
        assert st.grad_norm <= 1e-10
        assert st.B_term[0] == pytest.approx(0.0, abs=1e-14)
        assert np.linalg.eigvalsh(st.Q_term)[0] >= -1e-9
        # closed-form drift d/ds [2(1+s)/(2+s)] = 2/(2+s)^2
        assert st.drift[0] == pytest.approx(2.0 / (2.0 + s2) ** 2, rel=1e-6)


def test_solution_path_constant_at_mode(sech_prior):
    prob = ProxProblem(sech_prior, np.array([0.0]), 0.5)
    states = solve_solution_path(prob, _log_grid(0.5, 1e-2, 10))
    for st in states:
        assert abs(st.point[0]) <= 1e-10
        assert abs(st.drift[0]) <= 1e-9


def test_solution_path_matches_newton_oracle(gauss_3d, sech_prior, embedded_sech,
                                             logistic_prior, quartic_prior):
    mean = gauss_3d[0]
    cases = [
        (gauss_3d[2], mean + np.array([1.0, -0.5, 0.2]), 1.0),
        (sech_prior, np.array([1.5]), 0.5),
        (embedded_sech, np.array([1.0, 0.5]), 0.5),
        (logistic_prior, np.array([-0.7]), 1.0),
        (quartic_prior, np.array([1.1]), 0.8),
    ]
    for prior, y, tau in cases:
        prob = ProxProblem(prior, y, tau)
        states = solve_solution_path(prob, _log_grid(tau, 1e-3, 20))
        worst = 0.0
        for st in states:
            ref = exact_smoothed_prox(prob, math.sqrt(st.sigma_sq), tol=1e-12)
            worst = max(worst, float(np.linalg.norm(st.point - ref.point)))
        assert worst <= 1e-6


def test_solution_path_drift_consistency(sech_prior, embedded_sech):
    for prior, y, tau in ((sech_prior, np.array([1.2]), 0.5),
                          (embedded_sech, np.array([0.8, -0.3]), 0.5)):
        prob = ProxProblem(prior, y, tau)
        states = solve_solution_path(prob, _log_grid(tau, 1e-2, 12))
        m = prior.third_derivative_bound
        rd = math.sqrt(prior.bound_dimension)
        for st in states:
            sigma = math.sqrt(st.sigma_sq)
            implicit = np.linalg.solve(
                prob.hessian(st.point, sigma),
                tau * score_sigma_derivative(prior, sigma, st.point))
            np.testing.assert_allclose(st.drift, implicit, atol=1e-10)
            assert np.linalg.norm(st.B_term) <= 0.5 * tau * m * rd
            assert np.linalg.eigvalsh(st.Q_term)[0] >= -1e-9


def test_solution_path_limit_reaches_prox(gauss_3d):
    mean = gauss_3d[0]
    fine_sech = builtin_quadrature_prior("sech", sigma_min=0.007)
    fine_emb = EmbeddedSubspacePrior(fine_sech, np.array([[0.6], [0.8]]),
                                     np.array([0.25, -0.5]))
    cases = [
        (gauss_3d[2], mean + np.array([1.0, -0.5, 0.2]), 1.0),
        (fine_sech, np.array([1.5]), 0.5),
        (fine_emb, np.array([1.0, 0.5]), 0.5),
    ]
    for prior, y, tau in cases:
        prob = ProxProblem(prior, y, tau)
        states = solve_solution_path(prob, _log_grid(tau, 1e-6, 25))
        star = exact_prox(prob).point
        assert np.linalg.norm(states[-1].point - star) <= 1e-4


def test_solution_path_grid_validation(std_normal_1d):
    prob = ProxProblem(std_normal_1d, np.array([2.0]), 1.0)
    with pytest.raises(ValueError):
        solve_solution_path(prob, np.array([0.5, 0.7]))
    with pytest.raises(ValueError):
        solve_solution_path(prob, np.array([2.0, 0.5]))
    with pytest.raises(ValueError):
        solve_solution_path(prob, np.array([0.5, 0.0]))


def test_solution_path_manifold_escape(embedded_sech):
    # a single coarse interval down to the stiff end cannot track the
    # perpendicular relaxation y_perp * s/(s+tau)
    perp = np.array([-0.8, 0.6])
    y = np.array([0.25, -0.5]) + np.array([0.6, 0.8]) * 1.0 + 50.0 * perp
    prob = ProxProblem(embedded_sech, y, 0.5)
    with pytest.raises(ManifoldEscape):
        solve_solution_path(prob, np.array([0.5, 1.2e-4]))


def test_verify_path_bounds_gaussian_closed_form(std_normal_1d):
    prob = ProxProblem(std_normal_1d, np.array([2.0]), 1.0)
    grid = np.array([0.9, 0.5, 0.2, 0.05])
    report = verify_path_bounds(prob, grid)
    assert np.all(report.radius_margins >= 0.0)
    assert np.all(report.lipschitz_margins >= 0.0)
    # pairwise distances have the closed form 2|s1-s2|/((2+s1)(2+s2)) and the
    # Lipschitz coefficient is ||y-prox||/tau = 1
    idx = 0
    for i in range(len(grid)):
        for j in range(i + 1, len(grid)):
            dist = 2.0 * (grid[i] - grid[j]) / ((2.0 + grid[i]) * (2.0 + grid[j]))
            want = (grid[i] - grid[j]) - dist
            assert report.lipschitz_margins[idx] == pytest.approx(want, abs=1e-9)
            idx += 1


def test_verify_path_bounds_at_mode_all_zero(std_normal_1d):
    prob = ProxProblem(std_normal_1d, np.array([0.0]), 1.0)
    report = verify_path_bounds(prob, np.array([0.8, 0.4, 0.1]))
    np.testing.assert_allclose(report.radius_margins, 0.0, atol=1e-12)
    np.testing.assert_allclose(report.lipschitz_margins, 0.0, atol=1e-12)


def test_verify_path_bounds_sech(sech_prior):
    prob = ProxProblem(sech_prior, np.array([1.5]), 0.5)
    report = verify_path_bounds(prob, _log_grid(0.5, 2e-3, 20))
    assert report.radius_margins.shape == (20,)
    assert report.lipschitz_margins.shape == (190,)
    assert np.all(report.radius_margins >= 0.0)
    assert np.all(report.lipschitz_margins >= 0.0)
    blob = json.dumps(report.as_json_dict())
    assert "path_bounds" in blob


def test_heat_equation_residual_gaussian(std_normal_1d, gauss_3d):
    zs = np.linspace(-3.0, 3.0, 41)
    assert heat_equation_residual(std_normal_1d, math.sqrt(0.4), zs) <= 1e-8
    mean = gauss_3d[0]
    pts = mean + 0.5 * np.random.default_rng(2).standard_normal((10, 3))
    assert heat_equation_residual(gauss_3d[2], math.sqrt(0.6), pts) <= 1e-8


def test_heat_equation_residual_sech(sech_prior):
    zs = np.linspace(-4.0, 4.0, 101)
    assert heat_equation_residual(sech_prior, math.sqrt(0.5), zs) <= 1e-4


def test_heat_equation_residual_at_mode(sech_prior):
    assert heat_equation_residual(sech_prior, math.sqrt(0.1),
                                  np.array([0.0])) <= 1e-4


def test_heat_equation_residual_needs_fd_room(sech_prior):
    with pytest.raises(ValueError):
        heat_equation_residual(sech_prior, math.sqrt(1.5e-3), np.array([0.0]))


def test_max_principle_gaussian_zero(gauss_3d):
    report = max_principle_check(gauss_3d[2], [0.09, 1.0])
    np.testing.assert_allclose(report.suprema, 0.0, atol=1e-30)
    assert np.all(report.margins >= 0.0)


def test_max_principle_sech_sigma_zero_extremum(sech_prior):
    report = max_principle_check(sech_prior, [0.0])
    assert report.suprema[0] == pytest.approx(
        sech_prior.third_derivative_bound / 1.01, rel=1e-12)
    # the analytic extremum of the sech third derivative
    assert report.suprema[0] == pytest.approx(4.0 / (3.0 * math.sqrt(3.0)),
                                              rel=1e-4)


def test_max_principle_sech_smoothing_contracts(sech_prior):
    report = max_principle_check(sech_prior, [0.05, 0.2, 0.5])
    sups = report.suprema
    assert np.all(report.margins > 0.0)
    assert sups[0] >= sups[1] >= sups[2]


def test_max_principle_embedded(embedded_sech, sech_prior):
    report = max_principle_check(embedded_sech, [0.0, 0.1, 0.3])
    # intrinsic dimension r = 1: the bound carries sqrt(1) * M of the base
    assert report.bound == pytest.approx(
        sech_prior.third_derivative_bound * 1.001, rel=1e-9)
    assert report.suprema[0] == pytest.approx(
        sech_prior.third_derivative_bound / 1.01, rel=1e-12)
    assert np.all(report.margins >= 0.0)
    blob = report.as_json_dict()
    assert blob["name"] == "max_principle" and blob["passed"] is True


def test_max_principle_violation_raises():
    prior = builtin_quadrature_prior("sech", sigma_min=0.1)
    prior._m_bound = 1e-6
    with pytest.raises(BoundViolated):
        max_principle_check(prior, [0.1])


def test_rate_slope_gaussian_inverse_k(std_normal_1d):
    prob = ProxProblem(std_normal_1d, np.array([2.0]), 1.0)
    tr = run_prox_iteration(prob, Schedule.paper_default(1.0), 2000)
    report = rate_slope(tr, 10, 2000)
    assert -1.01 <= report.slope <= -0.99
    assert report.k_range[0] >= 10
    assert np.max(np.abs(report.residuals)) <= 0.1


def test_rate_slope_constant_error():
    n = 200
    tr = IterateTrace(np.zeros((n + 1, 1)), np.zeros(n), np.zeros(n),
                      np.zeros(n), np.zeros(n), np.full(n, 0.37), None, {})
    report = rate_slope(tr, 10, n)
    assert report.slope == pytest.approx(0.0, abs=1e-12)


def test_rate_slope_matches_ols_oracle():
    prior = GaussianPrior.from_diagonal([0.0, 0.0], [1.0, 1.0 / 999.0])
    prob = ProxProblem(prior, np.array([3.0, 3.0]), 1.0)
    star = np.array([1.5, 3.0 / 1000.0])
    tr = naive_gd(prob, 0.8 / 1000.0, 100, reference=star)
    report = rate_slope(tr, 10, 100)
    ks = np.arange(10, 101)
    want = oracles.ols_slope(np.log(ks), np.log(tr.err[9:]))
    assert report.slope == pytest.approx(want, rel=1e-12)
    # stagnation signature: far shallower than the 1/k decay of the
    # averaging recursion
    assert report.slope > -0.1


def test_rate_slope_floor_guard_and_insufficient_data():
    n = 200
    err = np.full(n, 1e-15)
    err[:50] = np.geomspace(1e-1, 1e-10, 50)
    tr = IterateTrace(np.zeros((n + 1, 1)), np.zeros(n), np.zeros(n),
                      np.zeros(n), np.zeros(n), err, None, {})
    report = rate_slope(tr, 10, n)
    assert report.k_range == (10, 50)
    ks = np.arange(10, 51)
    want = oracles.ols_slope(np.log(ks), np.log(err[9:50]))
    assert report.slope == pytest.approx(want, rel=1e-12)
    with pytest.raises(InsufficientData):
        rate_slope(tr, 45, n)
    with pytest.raises(ValueError):
        rate_slope(tr, 9, n)
    assert isinstance(report, RateReport)
