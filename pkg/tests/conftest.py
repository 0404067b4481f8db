import numpy as np
import pytest

from proxsmooth.priors import (
    EmbeddedSubspacePrior,
    GaussianPrior,
    builtin_quadrature_prior,
)


@pytest.fixture(scope="session")
def std_normal_1d():
    return GaussianPrior.from_diagonal([0.0], [1.0])


@pytest.fixture(scope="session")
def gauss_3d():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 3))
    cov = a @ a.T + 0.5 * np.eye(3)
    mean = np.array([0.4, -1.0, 2.0])
    return mean, cov, GaussianPrior.from_covariance(mean, cov)


@pytest.fixture(scope="session")
def sech_prior():
    return builtin_quadrature_prior("sech", sigma_min=0.1)


@pytest.fixture(scope="session")
def logistic_prior():
    return builtin_quadrature_prior("logistic", sigma_min=0.1)


@pytest.fixture(scope="session")
def quartic_prior():
    return builtin_quadrature_prior("quartic", sigma_min=0.05)


@pytest.fixture(scope="session")
def embedded_sech():
    base = builtin_quadrature_prior("sech", sigma_min=0.1)
    basis = np.array([[0.6], [0.8]])
    offset = np.array([0.25, -0.5])
    return EmbeddedSubspacePrior(base, basis, offset)
