"""Distribution log-densities against analytic values and a high-precision
oracle (mpmath), samplers against their support and moment contracts."""

import math

import mpmath
import numpy as np
import pytest

from adex.nn import dists
from adex.nn.rng import RngStream


# -- standard normal cdf ------------------------------------------------------

def test_cdf_at_zero():
    assert dists.std_normal_cdf(0.0) == pytest.approx(0.5, abs=1e-16)


def test_cdf_tends_to_one():
    assert dists.std_normal_cdf(10.0) >= 1 - 1e-15


def test_cdf_against_mpmath_series():
    # oracle: arbitrary-precision error-function evaluation
    for z in (-3.2, -1.0, -0.31, 0.7, 1.96, 2.9):
        exact = float(mpmath.ncdf(z))
        assert dists.std_normal_cdf(z) == pytest.approx(exact, abs=1e-12)
    assert dists.std_normal_cdf(1.96) == pytest.approx(0.9750, abs=1e-4)


def test_cdf_monotone():
    z = np.linspace(-6, 6, 400)
    v = dists.std_normal_cdf(z)
    assert np.all(np.diff(v) > 0)
    assert np.all((v > 0) & (v < 1))


# -- log densities --------------------------------------------------------------

def test_normal_logpdf_at_mean():
    assert dists.normal_logpdf(0.0, 0.0, 1.0) == pytest.approx(-0.9189385, abs=1e-7)


def test_bernoulli_logpmf():
    assert dists.bernoulli_logpmf(1.0, 0.5) == pytest.approx(math.log(0.5), rel=1e-12)
    assert dists.bernoulli_logpmf(0.0, 0.25) == pytest.approx(math.log(0.75), rel=1e-12)
    assert dists.bernoulli_logpmf(0.5, 0.5) == -np.inf


def test_binomial_certain_event():
    assert dists.binomial_logpmf(0.0, 50, 0.0) == 0.0
    assert dists.binomial_logpmf(3.0, 50, 0.0) == -np.inf
    assert dists.binomial_logpmf(50.0, 50, 1.0) == 0.0


def test_binomial_against_exact_combinatorics():
    # oracle: exact rational pmf via mpmath binomial
    n, eta, y = 50, 0.37, 19
    exact = float(mpmath.log(mpmath.binomial(n, y) * mpmath.mpf(eta) ** y *
                             (1 - mpmath.mpf(eta)) ** (n - y)))
    assert dists.binomial_logpmf(float(y), n, eta) == pytest.approx(exact, rel=1e-12)


def test_invalid_params_raise():
    with pytest.raises(dists.ParameterError):
        dists.normal_logpdf(0.0, 0.0, -1.0)
    with pytest.raises(dists.ParameterError):
        dists.bernoulli_logpmf(1.0, 1.5)
    with pytest.raises(dists.ParameterError):
        dists.binomial_logpmf(1.0, 50, -0.1)
    with pytest.raises(dists.ParameterError):
        dists.truncated_normal_logpdf(1.0, 0.0, 1.0, lo=2.0, hi=1.0)


@pytest.mark.parametrize("family,params,support", [
    ("normal", {"mu": 0.3, "sigma": 0.7}, None),
    ("truncated_normal", {"mu": 1.0, "sigma": 1.0, "lo": 0.0}, (0.0, 12.0)),
    ("half_normal", {"sigma": 2.0}, (0.0, 24.0)),
])
def test_continuous_densities_integrate_to_one(family, params, support):
    lo, hi = support if support else (-12.0, 12.0)
    grid = np.linspace(lo, hi, 200001)
    dens = np.exp(dists.log_prob(family, params, grid))
    total = np.trapezoid(dens, grid)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("family,params,values", [
    ("bernoulli", {"p": 0.73}, np.array([0.0, 1.0])),
    ("binomial", {"n": 50, "eta": 0.41}, np.arange(51.0)),
])
def test_discrete_masses_sum_to_one(family, params, values):
    total = np.exp([dists.log_prob(family, params, v) for v in values]).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


# -- samplers ---------------------------------------------------------------------

def test_binomial_certain_zero_draws(rng):
    draws = dists.sample_binomial(rng.gen, 50, np.zeros(1000))
    assert np.all(draws == 0)


def test_truncated_normal_support(rng):
    draws = dists.sample_truncated_normal(rng.gen, 1.0, 1.0, lo=0.0, size=100_000)
    assert np.all(draws >= 0.0)


def test_half_normal_support(rng):
    draws = dists.sample_half_normal(rng.gen, 2.0, size=50_000)
    assert np.all(draws >= 0.0)


def test_normal_mean_clt_bound(rng):
    draws = dists.sample_normal(rng.gen, 0.0, 1.0, size=1_000_000)
    assert abs(draws.mean()) < 0.004   # ~4 sigma of the sample mean


def test_truncated_normal_matches_cdf(rng):
    # oracle: inverse-CDF identity, empirical CDF at fixed quantiles
    draws = dists.sample_truncated_normal(rng.gen, 1.0, 1.0, lo=0.0, size=200_000)
    from scipy import special as sp
    for q in (0.5, 1.0, 1.5, 2.5):
        expected = (sp.ndtr(q - 1.0) - sp.ndtr(-1.0)) / (1 - sp.ndtr(-1.0))
        assert (draws <= q).mean() == pytest.approx(expected, abs=0.005)


def test_seeded_samplers_bitwise_reproducible():
    a = dists.sample_truncated_normal(RngStream(5).gen, 1.0, 1.0, lo=0.0, size=100)
    b = dists.sample_truncated_normal(RngStream(5).gen, 1.0, 1.0, lo=0.0, size=100)
    assert np.array_equal(a, b)
    c = dists.sample_binomial(RngStream(6).gen, 50, np.full(64, 0.3))
    d = dists.sample_binomial(RngStream(6).gen, 50, np.full(64, 0.3))
    assert np.array_equal(c, d)


def test_reparametrized_drawing():
    eps = np.array([0.5, -1.0])
    out = dists.sample("normal", {"mu": 1.0, "sigma": 2.0}, gen=None,
                       reparametrized=True, eps=eps)
    assert np.allclose(out, [2.0, -1.0])


def test_discrete_reparametrization_rejected(rng):
    with pytest.raises(dists.UnsupportedReparametrization):
        dists.sample("binomial", {"n": 50, "eta": 0.2}, rng.gen, reparametrized=True)
    with pytest.raises(dists.UnsupportedReparametrization):
        dists.sample("bernoulli", {"p": 0.5}, rng.gen, reparametrized=True)


def test_binomial_sampler_matches_pmf(rng):
    eta = 0.35
    draws = dists.sample_binomial(rng.gen, 50, np.full(200_000, eta))
    expected_mean = 50 * eta
    assert draws.mean() == pytest.approx(expected_mean, abs=0.05)
    assert draws.min() >= 0 and draws.max() <= 50
