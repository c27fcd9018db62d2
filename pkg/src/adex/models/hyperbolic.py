"""Hyperbolic temporal discounting: binary choices between two offers.

A participant with latent (log k, alpha) compares "R today" against "100 in
D days", valuing the delayed offer at V1 = 100 / (1 + k D). The probability
of choosing the delayed option is eps + (1 - 2 eps) * Phi((V1 - V0) / alpha),
so choice probabilities always stay inside [eps, 1 - eps].
"""

from __future__ import annotations

import numpy as np

from ..nn import dists
from ..nn import tensor as T
from ..nn.rng import RngStream
from .base import ExperimentModel, OutcomeSupport, SupportError, SupportKind

__all__ = ["HyperbolicModel"]


class HyperbolicModel(ExperimentModel):
    """Design is (R, D) with 0 < R < 100 and D > 0; outcome y in {0, 1}."""

    name = "hyperbolic"
    transform = "exp_sigmoid"

    def __init__(self, lapse: float = 0.01, delayed_reward: float = 100.0,
                 logk_mean: float = -4.25, logk_sd: float = 1.5, alpha_sd: float = 2.0):
        if not 0 <= lapse < 0.5:
            raise ValueError("lapse rate must lie in [0, 0.5)")
        self.lapse = float(lapse)
        self.delayed_reward = float(delayed_reward)
        self.logk_mean = float(logk_mean)
        self.logk_sd = float(logk_sd)
        self.alpha_sd = float(alpha_sd)
        self.theta_dim = 2
        self.design_dim = 2
        self.design_box = np.array([[1e-9, 100.0], [0.5, 365.0]])

    # -- latent ---------------------------------------------------------------

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        logk = dists.sample_normal(rng.child("logk").gen, self.logk_mean,
                                   self.logk_sd, size=n)
        alpha = dists.sample_half_normal(rng.child("alpha").gen, self.alpha_sd, size=n)
        return np.stack([logk, alpha], axis=-1)

    def log_prior(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        lp = dists.normal_logpdf(theta[..., 0], self.logk_mean, self.logk_sd)
        return lp + dists.half_normal_logpdf(theta[..., 1], self.alpha_sd)

    # -- choice mechanics -------------------------------------------------------

    def values(self, theta, xi):
        """Immediate and delayed perceived values (V0, V1)."""
        theta = np.asarray(theta)
        r = xi[..., 0]
        d = xi[..., 1]
        k = T.exp(theta[..., 0])
        v1 = T.div(self.delayed_reward, T.add(T.mul(k, d), 1.0))
        return r, v1

    def choice_prob(self, theta, xi):
        """P(choose the delayed option); alpha = 0 degenerates to a step."""
        theta = np.asarray(theta)
        v0, v1 = self.values(theta, xi)
        alpha = theta[..., 1]
        gap = T.sub(v1, v0)
        if T.is_tensor(gap) or np.all(alpha > 0):
            z = T.div(gap, alpha)
            phi = T.normal_cdf(z)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                phi = dists.std_normal_cdf(gap / alpha)
            step = np.where(gap > 0, 1.0, np.where(gap < 0, 0.0, 0.5))
            phi = np.where(alpha > 0, phi, step)
        return T.add(T.mul(1.0 - 2.0 * self.lapse, phi), self.lapse)

    # -- likelihood --------------------------------------------------------------

    def log_likelihood(self, y, theta, xi):
        p1 = self.choice_prob(theta, xi)
        yd = np.asarray(T._data(y))
        core = T.add(
            T.where_mask(yd == 1, T.log(p1), 0.0),
            T.where_mask(yd == 0, T.log1p(T.neg(p1)), 0.0),
        )
        return T.where_mask((yd == 0) | (yd == 1), core, -np.inf)

    def sample_outcome(self, theta, xi, rng: RngStream) -> np.ndarray:
        p1 = self.choice_prob(np.asarray(theta), np.asarray(xi))
        u = rng.gen.random(np.shape(p1))
        return (u < p1).astype(np.float64)

    def outcome_support(self) -> OutcomeSupport:
        return OutcomeSupport(SupportKind.FINITE, np.array([0.0, 1.0]))

    # -- policy plumbing --------------------------------------------------------

    def encoder_design_input(self, xi):
        """Unconstrained (xi_d, xi_r) coordinates recovered from (R, D)."""
        r = xi[..., 0]
        d = xi[..., 1]
        q = T.clip(T.div(r, self.delayed_reward), 1e-12, 1.0 - 1e-7)
        xi_r = T.sub(T.log(q), T.log1p(T.neg(q)))
        xi_d = T.log(d)
        return T.stack([xi_d, xi_r], axis=-1)

    def validate_design(self, xi) -> None:
        xi = np.asarray(xi)
        r, d = xi[..., 0], xi[..., 1]
        if not (np.all(r > 0) and np.all(r < self.delayed_reward) and np.all(d > 0)):
            raise SupportError(
                f"hyperbolic designs require 0 < R < {self.delayed_reward} and D > 0")

    def __repr__(self):
        return f"HyperbolicModel(lapse={self.lapse})"
