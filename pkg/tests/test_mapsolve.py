"""Approximate proximal gradient descent for MAP estimation, its exact-PGD
baseline, and the explicit convergence constants, checked against dense linear
algebra, bisection roots and the stated formulas."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from proxsmooth.errors import FixedPointNotFound
from proxsmooth.mapsolve import (
    InnerSchedule,
    LinearGaussianFidelity,
    MapProblem,
    approx_pgd,
    exact_pgd,
    map_objective,
    theorem2_constants,
    verify_theorem2,
)
from proxsmooth.priors import GaussianPrior, PriorModel, builtin_quadrature_prior
from proxsmooth.prox import ProxProblem, Schedule, run_prox_iteration

LOG_2PI = math.log(2.0 * math.pi)


def _gaussian_1d_instance(y=0.0):
    prior = GaussianPrior.from_diagonal([0.0], [1.0])
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    return MapProblem(fid, prior, lam=1.0, tau=1.0, y=np.array([y]))


def _sech_instance(sigma_min=0.04):
    prior = builtin_quadrature_prior("sech", sigma_min=sigma_min)
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([2.0]))
    return MapProblem(fid, prior, lam=1.0, tau=0.5, y=np.array([0.0]))


class CountingPrior(PriorModel):
    """Delegating wrapper that counts denoiser evaluations."""

    def __init__(self, inner):
        super().__init__()
        self.inner = inner
        self.dimension = inner.dimension
        self.mmse_calls = 0

    def mmse(self, sigma, z):
        self.mmse_calls += 1
        return self.inner.mmse(sigma, z)

    def log_density_smoothed(self, sigma, z):
        return self.inner.log_density_smoothed(sigma, z)

    def score_smoothed(self, sigma, z):
        return self.inner.score_smoothed(sigma, z)

    def hessian_smoothed(self, sigma, z):
        return self.inner.hessian_smoothed(sigma, z)

    def certify_third_derivative_bound(self):
        return self.inner.certify_third_derivative_bound()


def test_linear_gaussian_fidelity_value_gradient_smoothness():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    fid = LinearGaussianFidelity(a, b)
    x = rng.standard_normal(3)
    r = a @ x - b
    assert fid.value(x) == pytest.approx(0.5 * r @ r, rel=1e-14)
    np.testing.assert_allclose(fid.gradient(x), a.T @ r, rtol=1e-14)
    lam_max = float(np.linalg.eigvalsh(a.T @ a)[-1])
    assert fid.smoothness == pytest.approx(lam_max, rel=2e-9)
    fid1 = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    assert fid1.smoothness == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_fidelity_directional_derivative_and_convexity(seed):
    rng = np.random.default_rng(seed)
    m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    fid = LinearGaussianFidelity(rng.standard_normal((m, d)),
                                 rng.standard_normal(m))
    x = rng.standard_normal(d)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    h = 1e-5
    fd = (fid.value(x + h * v) - fid.value(x - h * v)) / (2.0 * h)
    assert abs(fd - fid.gradient(x) @ v) <= 1e-5
    x2 = rng.standard_normal(d)
    assert (fid.gradient(x) - fid.gradient(x2)) @ (x - x2) >= -1e-12


def test_map_problem_step_size_validation():
    prior = GaussianPrior.from_diagonal([0.0], [1.0])
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    MapProblem(fid, prior, lam=1.0, tau=1.0, y=np.array([0.0]))
    with pytest.raises(ValueError):
        MapProblem(fid, prior, lam=1.0, tau=1.0 + 1e-9, y=np.array([0.0]))
    with pytest.raises(ValueError):
        MapProblem(fid, prior, lam=-0.5, tau=0.1, y=np.array([0.0]))
    with pytest.raises(ValueError):
        MapProblem(fid, prior, lam=1.0, tau=0.0, y=np.array([0.0]))
    # lam = 0 removes the data term entirely, any tau is feasible
    MapProblem(fid, prior, lam=0.0, tau=100.0, y=np.array([0.0]))


def test_inner_schedule_counts():
    inner = InnerSchedule(c=10.0, eta=1.0)
    assert [inner.n(k) for k in range(1, 6)] == [10, 40, 90, 160, 250]
    frac = InnerSchedule(c=1.5, eta=0.5)
    assert [frac.n(k) for k in (1, 2, 3)] == [
        math.floor(1.5 * k**1.5) for k in (1, 2, 3)]
    ns = [frac.n(k) for k in range(1, 101)]
    assert ns[0] >= 1 and all(b >= a for a, b in zip(ns, ns[1:]))
    with pytest.raises(ValueError):
        InnerSchedule(c=0.5, eta=1.0)
    with pytest.raises(ValueError):
        InnerSchedule(c=10.0, eta=0.0)
    with pytest.raises(ValueError):
        inner.n(0)


def test_map_objective_examples(sech_prior):
    prob = _gaussian_1d_instance()
    want = 0.5 * (1.5 - 3.0) ** 2 + 0.5 * 1.5**2 + 0.5 * LOG_2PI
    assert map_objective(prob, np.array([1.5])) == pytest.approx(want, abs=1e-12)
    prior = GaussianPrior.from_diagonal([0.0], [1.0])
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    free = MapProblem(fid, prior, lam=0.0, tau=1.0, y=np.array([0.0]))
    assert map_objective(free, np.array([0.0])) == pytest.approx(
        0.5 * LOG_2PI, abs=1e-12)
    fid2 = LinearGaussianFidelity(np.array([[1.0]]), np.array([2.0]))
    sech = MapProblem(fid2, sech_prior, lam=2.0, tau=0.25, y=np.array([0.0]))
    assert map_objective(sech, np.array([0.0])) == pytest.approx(
        4.0 + math.log(math.pi), abs=1e-9)


def test_exact_pgd_gaussian_fixed_point():
    prob = _gaussian_1d_instance(y=0.2)
    tr = exact_pgd(prob, 3)
    # gradient step sends any x to 3, the prox halves it
    np.testing.assert_allclose(tr.iterates[1:, 0], 1.5, atol=1e-12)
    assert tr.iterates[0, 0] == 0.2
    star = prob.reference_map().point
    assert star[0] == pytest.approx(1.5, abs=1e-12)
    empty = exact_pgd(prob, 0)
    assert empty.iterates.shape == (1, 1)


def test_exact_pgd_matches_affine_recursion():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal(3)
    mean = np.array([0.3, -0.7])
    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    prior = GaussianPrior.from_covariance(mean, cov)
    fid = LinearGaussianFidelity(a, b)
    lam = 0.8
    tau = 0.9 / (lam * fid.smoothness)
    y = np.array([2.0, 1.0])
    prob = MapProblem(fid, prior, lam=lam, tau=tau, y=y)
    tr = exact_pgd(prob, 20)
    cov_inv = np.linalg.inv(cov)
    prox_mat = np.linalg.inv(np.eye(2) + tau * cov_inv)
    x = y.copy()
    for k in range(1, 21):
        z = x - tau * lam * (a.T @ (a @ x - b))
        x = prox_mat @ (z + tau * cov_inv @ mean)
        np.testing.assert_allclose(tr.iterates[k], x, atol=1e-12)


def test_exact_pgd_classical_averaged_rate(sech_prior):
    cases = [_gaussian_1d_instance(y=0.2)]
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([2.0]))
    cases.append(MapProblem(fid, sech_prior, lam=1.0, tau=0.5,
                            y=np.array([0.0])))
    for prob in cases:
        ref = prob.reference_map()
        j_star = map_objective(prob, ref.point)
        dist0_sq = float(np.sum((prob.y - ref.point) ** 2))
        for steps in (10, 100):
            tr = exact_pgd(prob, steps)
            gaps = np.array([map_objective(prob, tr.iterates[k])
                             for k in range(1, steps + 1)]) - j_star
            assert gaps.mean() <= dist0_sq / (2.0 * prob.tau * steps) + 1e-12


def test_map_reference_normal_equations():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((4, 2))
    b = rng.standard_normal(4)
    mean = np.array([0.1, 0.4])
    cov = np.array([[0.9, -0.2], [-0.2, 0.6]])
    prior = GaussianPrior.from_covariance(mean, cov)
    fid = LinearGaussianFidelity(a, b)
    lam = 0.7
    prob = MapProblem(fid, prior, lam=lam, tau=0.5 / (lam * fid.smoothness),
                      y=np.array([0.0, 0.0]))
    cov_inv = np.linalg.inv(cov)
    want = np.linalg.solve(lam * a.T @ a + cov_inv, lam * a.T @ b + cov_inv @ mean)
    np.testing.assert_allclose(prob.reference_map().point, want, atol=1e-10)


def test_map_reference_sech_matches_stationarity():
    prob = _sech_instance()
    star = prob.reference_map().point[0]
    root = oracles.bisect(lambda x: (x - 2.0) + math.tanh(x), 0.0, 2.0, tol=5e-15)
    assert star == pytest.approx(root, abs=1e-9)


def test_map_reference_fixed_point_not_found():
    prior = builtin_quadrature_prior("sech", sigma_min=0.1)
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([2.0]))
    prob = MapProblem(fid, prior, lam=1.0, tau=1e-6, y=np.array([0.0]))
    with pytest.raises(FixedPointNotFound):
        prob.reference_map(max_steps=60)


def test_gradient_step_is_nonexpansive_at_feasibility_boundary():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((5, 3))
    fid = LinearGaussianFidelity(a, rng.standard_normal(5))
    lam = 1.3
    tau = 1.0 / (lam * fid.smoothness)
    prior = GaussianPrior.from_diagonal(np.zeros(3), np.ones(3))
    prob = MapProblem(fid, prior, lam=lam, tau=tau, y=np.zeros(3))
    for _ in range(20):
        x, x2 = rng.standard_normal(3), rng.standard_normal(3)
        gap = np.linalg.norm(prob.gradient_step(x) - prob.gradient_step(x2))
        assert gap <= np.linalg.norm(x - x2) * (1.0 + 1e-10)


def test_approx_pgd_inner_counts():
    base = GaussianPrior.from_diagonal([0.0], [1.0])
    prior = CountingPrior(base)
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    prob = MapProblem(fid, prior, lam=1.0, tau=1.0, y=np.array([0.0]))
    inner = InnerSchedule(c=10.0, eta=1.0)
    tr = approx_pgd(prob, inner, 3)
    assert list(tr.n_inner) == [10, 40, 90]
    assert prior.mmse_calls == 140


def test_approx_pgd_gaussian_inner_schedule_example():
    prob = _gaussian_1d_instance()
    tr = approx_pgd(prob, InnerSchedule(c=10.0, eta=1.0), 5)
    assert list(tr.n_inner) == [10, 40, 90, 160, 250]
    assert tr.iterates.shape == (6, 1)


def test_approx_pgd_lambda_zero_reduces_to_prox_recursion(std_normal_1d):
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([3.0]))
    prob = MapProblem(fid, std_normal_1d, lam=0.0, tau=1.0, y=np.array([2.0]))
    inner = InnerSchedule(c=10.0, eta=1.0)
    tr = approx_pgd(prob, inner, 1, with_oracle=False)
    sub = ProxProblem(std_normal_1d, np.array([2.0]), 1.0)
    want = run_prox_iteration(sub, Schedule.paper_default(1.0), inner.n(1),
                              reference=None)
    np.testing.assert_array_equal(tr.iterates[1], want.iterates[-1])


def test_approx_pgd_tracks_exact_prox_iterate():
    prob = _gaussian_1d_instance()
    inner = InnerSchedule(c=10.0, eta=1.0)
    tr = approx_pgd(prob, inner, 5)
    # tau*lambda = 1 sends every gradient step to 3, so the theorem's exact
    # iterate is 1.5 throughout
    np.testing.assert_allclose(
        tr.eps, np.abs(tr.iterates[1:, 0] - 1.5), atol=1e-14)
    assert np.all(tr.eps <= tr.eps_bound)
    assert np.all(np.diff(tr.n_inner) > 0)


def test_theorem2_constants_formulas():
    prob = _gaussian_1d_instance()
    consts = theorem2_constants(prob, InnerSchedule(c=10.0, eta=1.0))
    s_want = 0.2 * (1.0 + math.log(10.0) + 7.0)
    assert consts.s == pytest.approx(s_want, rel=1e-12)
    assert consts.s == pytest.approx(2.0605, abs=5e-4)
    t_want = (16.0 / 2700.0
              + 2.0 * (math.log(10.0) + 7.0) ** 2 / 100.0 * (4.0 / 3.0))
    assert consts.t == pytest.approx(t_want, rel=1e-12)
    assert consts.t == pytest.approx(2.3136, abs=5e-4)
    # generic eta, c against a direct transcription
    inner = InnerSchedule(c=3.0, eta=0.4)
    c2 = theorem2_constants(prob, inner)
    lc = math.log(3.0) + 7.0
    assert c2.s == pytest.approx(1.4 / (3.0 * 0.16) * (1.0 + 0.4 * lc), rel=1e-12)
    assert c2.t == pytest.approx(
        4.0 * 1.4**2 / (9.0 * 1.8**3) + 2.0 * lc**2 / 9.0 * (1.0 + 1.0 / 1.8),
        rel=1e-12)


def test_theorem2_constants_vanish_at_optimum():
    prior = GaussianPrior.from_diagonal([0.0], [1.0])
    fid = LinearGaussianFidelity(np.array([[1.0]]), np.array([0.0]))
    prob = MapProblem(fid, prior, lam=1.0, tau=1.0, y=np.array([0.0]))
    consts = theorem2_constants(prob, InnerSchedule(c=10.0, eta=1.0))
    assert consts.b == 0.0
    assert consts.r == 0.0


def test_theorem2_constants_composition():
    prob = _sech_instance()
    inner = InnerSchedule(c=10.0, eta=1.0)
    consts = theorem2_constants(prob, inner)
    ref = prob.reference_map()
    grad_norm = float(np.linalg.norm(prob.fidelity.gradient(ref.point)))
    m = prob.prior.third_derivative_bound
    a_want = prob.tau * prob.lam * grad_norm + prob.tau**2 * m
    b_want = math.exp(2.0 * consts.s) * (
        float(np.linalg.norm(prob.y - ref.point)) + consts.s * a_want)
    assert consts.a == pytest.approx(a_want, rel=1e-12)
    assert consts.b == pytest.approx(b_want, rel=1e-12)
    assert consts.r == pytest.approx(2.0 * b_want + a_want, rel=1e-12)


def test_verify_theorem2_gaussian():
    prob = _gaussian_1d_instance()
    report = verify_theorem2(prob, InnerSchedule(c=10.0, eta=1.0), 50)
    assert report.eps_margin.shape == (50,)
    assert np.all(report.eps_margin > 0.0)
    assert np.all(report.gap_margin > 0.0)


def test_verify_theorem2_first_step_bound():
    prob = _gaussian_1d_instance()
    inner = InnerSchedule(c=10.0, eta=1.0)
    report = verify_theorem2(prob, inner, 1)
    consts = theorem2_constants(prob, inner)
    want = (math.log(10.0) + 7.0) / 10.0 * consts.r
    assert report.trace.eps_bound[0] == pytest.approx(want, rel=1e-12)
    assert report.trace.eps[0] <= want


def test_verify_theorem2_sech_averaged_gap():
    prob = _sech_instance()
    inner = InnerSchedule(c=10.0, eta=1.0)
    for steps in (10, 50):
        report = verify_theorem2(prob, inner, steps)
        assert np.all(report.trace.avg_gap <= report.trace.avg_gap_bound)
        assert np.all(report.eps_margin > 0.0)
