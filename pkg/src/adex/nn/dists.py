"""Probability families: log-densities and seeded samplers.

Log-densities accept Tensors or ndarrays (see ``tensor`` module dispatch).
Samplers draw from a ``numpy.random.Generator`` and are deterministic given
the generator state. Continuous families with bounded support sample by
inverse CDF so draws are exact, reproducible and respect the support.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

from . import tensor as T

__all__ = [
    "ParameterError",
    "UnsupportedReparametrization",
    "std_normal_cdf",
    "normal_logpdf",
    "bernoulli_logpmf",
    "binomial_logpmf",
    "truncated_normal_logpdf",
    "half_normal_logpdf",
    "sample_normal",
    "sample_bernoulli",
    "sample_binomial",
    "sample_truncated_normal",
    "sample_half_normal",
    "log_prob",
    "sample",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ParameterError(ValueError):
    """Distribution parameters outside the family's valid set."""


class UnsupportedReparametrization(TypeError):
    """Requested a pathwise sample from a family without a noise-separated form."""


def std_normal_cdf(z):
    """Phi(z), the standard normal CDF."""
    return T.normal_cdf(z)


# -- log densities -----------------------------------------------------------

def _check_sigma(sigma):
    if np.any(np.asarray(T._data(sigma)) <= 0):
        raise ParameterError("sigma must be positive")


def normal_logpdf(x, mu, sigma):
    _check_sigma(sigma)
    z = T.div(T.sub(x, mu), sigma)
    return T.sub(T.mul(-0.5, T.mul(z, z)), np.log(sigma) + 0.5 * _LOG_2PI)


def bernoulli_logpmf(y, p):
    """log P(y) for y in {0,1}; out-of-support y maps to -inf."""
    pd = np.asarray(T._data(p))
    if np.any(pd < 0) or np.any(pd > 1):
        raise ParameterError("bernoulli p must lie in [0,1]")
    yd = np.asarray(T._data(y))
    with np.errstate(divide="ignore"):
        lp, lq = np.log(pd), np.log1p(-pd)
    if T.is_tensor(p):
        lp, lq = T.log(p), T.log1p(T.neg(p))
    core = T.add(
        T.where_mask(yd == 1, T.mul(np.ones_like(yd), lp), 0.0),
        T.where_mask(yd == 0, T.mul(np.ones_like(yd), lq), 0.0),
    )
    return T.where_mask((yd == 0) | (yd == 1), core, -np.inf)


def binomial_logpmf(y, n, eta):
    """log P(y | n, eta); handles eta in {0,1} and out-of-support y via -inf."""
    if int(n) != n or n < 0:
        raise ParameterError("binomial n must be a non-negative integer")
    n = int(n)
    yd = np.asarray(T._data(y))
    ed = np.asarray(T._data(eta))
    if np.any(ed < 0) or np.any(ed > 1):
        raise ParameterError("binomial eta must lie in [0,1]")
    support = (yd >= 0) & (yd <= n) & (np.floor(yd) == yd)
    ysafe = np.where(support, yd, 0.0)
    lchoose = _sp.gammaln(n + 1) - _sp.gammaln(ysafe + 1) - _sp.gammaln(n - ysafe + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp, lq = np.log(ed), np.log1p(-ed)
    if T.is_tensor(eta):
        lp, lq = T.log(eta), T.log1p(T.neg(eta))
    t1 = T.mul(ysafe, T.where_mask(ysafe > 0, lp, 0.0))
    t2 = T.mul(n - ysafe, T.where_mask(ysafe < n, lq, 0.0))
    core = T.add(np.asarray(lchoose), T.add(t1, t2))
    return T.where_mask(support, core, -np.inf)


def _trunc_bounds(mu, sigma, lo, hi):
    if not lo < hi:
        raise ParameterError("truncation bounds must satisfy lo < hi")
    a = -np.inf if lo == -np.inf else (lo - mu) / sigma
    b = np.inf if hi == np.inf else (hi - mu) / sigma
    ca = 0.0 if a == -np.inf else _sp.ndtr(a)
    cb = 1.0 if b == np.inf else _sp.ndtr(b)
    mass = cb - ca
    if mass <= 0:
        raise ParameterError("truncation interval carries no mass")
    return ca, mass


def truncated_normal_logpdf(x, mu, sigma, lo=-np.inf, hi=np.inf):
    _check_sigma(sigma)
    _, mass = _trunc_bounds(mu, sigma, lo, hi)
    xd = np.asarray(T._data(x))
    inside = (xd >= lo) & (xd <= hi)
    core = T.sub(normal_logpdf(x, mu, sigma), math.log(mass))
    return T.where_mask(inside, core, -np.inf)


def half_normal_logpdf(x, sigma):
    """HalfNormal(0, sigma): a normal truncated at zero."""
    return truncated_normal_logpdf(x, 0.0, sigma, lo=0.0)


# -- samplers ----------------------------------------------------------------

def sample_normal(gen, mu, sigma, size=None, eps=None):
    """Draw N(mu, sigma); pass ``eps`` for the reparametrized form mu+sigma*eps."""
    _check_sigma(sigma)
    if eps is None:
        eps = gen.standard_normal(size)
    return T.add(T.mul(sigma, eps), mu)


def sample_bernoulli(gen, p, size=None):
    pd = np.asarray(p)
    if np.any(pd < 0) or np.any(pd > 1):
        raise ParameterError("bernoulli p must lie in [0,1]")
    u = gen.random(size if size is not None else pd.shape)
    return (u < pd).astype(np.int64)

sample_bernoulli.reparametrizable = False


def sample_binomial(gen, n, eta, size=None):
    """Binomial by CDF inversion (exact for small n)."""
    if int(n) != n or n < 0:
        raise ParameterError("binomial n must be a non-negative integer")
    n = int(n)
    ed = np.asarray(eta, dtype=np.float64)
    if np.any(ed < 0) or np.any(ed > 1):
        raise ParameterError("binomial eta must lie in [0,1]")
    shape = ed.shape if size is None else size
    ed = np.broadcast_to(ed, shape)
    flat = ed.reshape(-1)
    ys = np.arange(n + 1, dtype=np.float64)
    logpmf = binomial_logpmf(ys[None, :], n, flat[:, None])
    cdf = np.cumsum(np.exp(logpmf), axis=1)
    u = gen.random(flat.shape)
    draw = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(draw, n).reshape(shape).astype(np.int64)

sample_binomial.reparametrizable = False


def sample_truncated_normal(gen, mu, sigma, lo=-np.inf, hi=np.inf, size=None):
    """Inverse-CDF sampling; draws are clipped onto [lo, hi] against rounding."""
    _check_sigma(sigma)
    ca, mass = _trunc_bounds(mu, sigma, lo, hi)
    u = gen.random(size)
    x = mu + sigma * _sp.ndtri(ca + u * mass)
    return np.clip(x, lo, hi)


def sample_half_normal(gen, sigma, size=None):
    return sample_truncated_normal(gen, 0.0, sigma, lo=0.0, size=size)


# -- generic family surface ---------------------------------------------------

_FAMILIES = {
    "normal": (normal_logpdf, sample_normal, True),
    "bernoulli": (bernoulli_logpmf, sample_bernoulli, False),
    "binomial": (binomial_logpmf, sample_binomial, False),
    "truncated_normal": (truncated_normal_logpdf, sample_truncated_normal, False),
    "half_normal": (half_normal_logpdf, sample_half_normal, False),
}


def log_prob(family: str, params: dict, value):
    if family not in _FAMILIES:
        raise ParameterError(f"unknown family {family!r}")
    return _FAMILIES[family][0](value, **params)


def sample(family: str, params: dict, gen, size=None, reparametrized=False, eps=None):
    if family not in _FAMILIES:
        raise ParameterError(f"unknown family {family!r}")
    _, sampler, reparam_ok = _FAMILIES[family]
    if reparametrized:
        if not reparam_ok:
            raise UnsupportedReparametrization(
                f"{family} has no noise-separated sampling form")
        return sampler(gen, size=size, eps=eps, **params)
    return sampler(gen, size=size, **params)
