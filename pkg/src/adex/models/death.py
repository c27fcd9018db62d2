"""Death process: binomial counts of infected individuals.

Healthy individuals from a population of size N become infected at rate
theta; observing at time xi > 0 yields y ~ Binomial(N, 1 - exp(-xi * theta)).
Each observation restarts an independent process, so likelihood terms
multiply across steps.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

from ..nn import dists
from ..nn import tensor as T
from ..nn.rng import RngStream
from .base import ExperimentModel, OutcomeSupport, SupportError, SupportKind

__all__ = ["DeathModel"]


class DeathModel(ExperimentModel):
    name = "death"
    transform = "softplus"

    def __init__(self, population: int = 50, prior_mean: float = 1.0,
                 prior_sd: float = 1.0):
        if population < 1 or int(population) != population:
            raise ValueError("population must be a positive integer")
        self.population = int(population)
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.theta_dim = 1
        self.design_dim = 1
        self.design_box = np.array([[1e-9, 10.0]])

    # -- latent ---------------------------------------------------------------

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        draw = dists.sample_truncated_normal(
            rng.gen, self.prior_mean, self.prior_sd, lo=0.0, size=n)
        return draw[:, None]

    def log_prior(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        return dists.truncated_normal_logpdf(
            theta[..., 0], self.prior_mean, self.prior_sd, lo=0.0)

    # -- infection probability ---------------------------------------------------

    def eta(self, theta, xi):
        """Infection probability 1 - exp(-xi * theta) in [0, 1)."""
        theta = np.asarray(theta)
        z = np.asarray(T._data(xi))[..., 0] * theta[..., 0]
        return -np.expm1(-z)

    # -- likelihood --------------------------------------------------------------

    def log_likelihood(self, y, theta, xi):
        """Binomial log-pmf written on the log scale via z = xi * theta.

        log eta = log(1 - e^-z) and log(1 - eta) = -z, so no probability is
        ever exponentiated; z = 0 cleanly gives log p(0) = 0 and -inf else.
        """
        theta = np.asarray(theta)
        n = self.population
        z = T.mul(xi[..., 0], theta[..., 0])
        yd = np.asarray(T._data(y))
        support = (yd >= 0) & (yd <= n) & (np.floor(yd) == yd)
        ysafe = np.where(support, yd, 0.0)
        lchoose = _sp.gammaln(n + 1) - _sp.gammaln(ysafe + 1) - _sp.gammaln(n - ysafe + 1)
        logeta = T.where_mask(ysafe > 0, T.log1mexp(z), 0.0)
        core = T.add(np.asarray(lchoose), T.sub(T.mul(ysafe, logeta), T.mul(n - ysafe, z)))
        return T.where_mask(support, core, -np.inf)

    def sample_outcome(self, theta, xi, rng: RngStream) -> np.ndarray:
        eta = self.eta(np.asarray(theta), np.asarray(xi))
        return dists.sample_binomial(rng.gen, self.population, eta).astype(np.float64)

    def outcome_support(self) -> OutcomeSupport:
        return OutcomeSupport(
            SupportKind.FINITE, np.arange(self.population + 1, dtype=np.float64))

    # -- policy plumbing --------------------------------------------------------

    def encoder_design_input(self, xi):
        return xi

    def encode_outcome(self, y):
        """Counts normalized to [0, 1] to keep encoder input scales comparable."""
        return T.div(y, float(self.population))

    def validate_design(self, xi) -> None:
        if not np.all(np.asarray(xi) > 0):
            raise SupportError("death-process designs require xi > 0")

    def __repr__(self):
        return f"DeathModel(population={self.population})"
