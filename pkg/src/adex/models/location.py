"""Source-location model: K hidden emitters in R^d, inverse-square signals.

A measurement at point xi observes the log of the total intensity

    mu(theta, xi) = b + sum_k alpha_k / (m + ||theta_k - xi||^2)

corrupted by Gaussian noise. Outcomes are stored in log-intensity space; the
change-of-variables term depends only on y, so it cancels in every likelihood
ratio and posterior this package computes.
"""

from __future__ import annotations

import numpy as np

from ..nn import dists
from ..nn import tensor as T
from ..nn.rng import RngStream
from .base import ExperimentModel, OutcomeSupport, SupportError, SupportKind

__all__ = ["LocationModel"]


class LocationModel(ExperimentModel):
    name = "location"
    transform = "identity"
    reparametrizable = True

    def __init__(self, n_sources: int = 2, dim: int = 2, base_signal: float = 0.1,
                 max_signal: float = 1e-4, alpha: float = 1.0, noise_sd: float = 0.5):
        if n_sources < 1 or base_signal <= 0 or max_signal <= 0 or noise_sd <= 0:
            raise ValueError("require n_sources >= 1 and b, m, sigma > 0")
        self.n_sources = int(n_sources)
        self.dim = int(dim)
        self.base_signal = float(base_signal)
        self.max_signal = float(max_signal)
        self.alpha = float(alpha)
        self.noise_sd = float(noise_sd)
        self.theta_dim = self.n_sources * self.dim
        self.design_dim = self.dim
        self.design_box = np.array([[-4.0, 4.0]] * self.dim)

    # -- latent ---------------------------------------------------------------

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        return rng.gen.standard_normal((n, self.theta_dim))

    def log_prior(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        return dists.normal_logpdf(theta, 0.0, 1.0).sum(axis=-1)

    # -- signal ----------------------------------------------------------------

    def intensity(self, theta, xi):
        """Total intensity mu(theta, xi) > b; broadcasts over leading axes."""
        th = T.reshape(theta, np.shape(T._data(theta))[:-1] + (self.n_sources, self.dim))
        x = T.reshape(xi, np.shape(T._data(xi))[:-1] + (1, self.dim))
        diff = T.sub(th, x)
        sq = T.tsum(T.mul(diff, diff), axis=-1)
        per_source = T.div(self.alpha, T.add(sq, self.max_signal))
        return T.add(T.tsum(per_source, axis=-1), self.base_signal)

    # -- likelihood --------------------------------------------------------------

    def log_likelihood(self, y, theta, xi):
        mu = self.intensity(theta, xi)
        return dists.normal_logpdf(y, T.log(mu), self.noise_sd)

    def sample_outcome(self, theta, xi, rng: RngStream) -> np.ndarray:
        mu = self.intensity(np.asarray(theta), np.asarray(xi))
        eps = rng.gen.standard_normal(np.shape(mu))
        return np.log(mu) + self.noise_sd * eps

    def sample_outcome_reparam(self, theta, xi, eps):
        mu = self.intensity(theta, xi)
        return T.add(T.log(mu), T.mul(self.noise_sd, eps))

    def sample_outcome_noise(self, shape, rng: RngStream) -> np.ndarray:
        return rng.gen.standard_normal(shape)

    def outcome_support(self) -> OutcomeSupport:
        return OutcomeSupport(SupportKind.CONTINUOUS)

    # -- policy plumbing --------------------------------------------------------

    def encoder_design_input(self, xi):
        return xi

    def validate_design(self, xi) -> None:
        if not np.all(np.isfinite(xi)):
            raise SupportError("location designs must be finite")

    def __repr__(self):
        return (f"LocationModel(n_sources={self.n_sources}, dim={self.dim}, "
                f"noise_sd={self.noise_sd})")
