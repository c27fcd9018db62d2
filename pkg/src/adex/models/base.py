"""Common contract for experiment models.

A model bundles a prior over the latent, a likelihood for one experiment
iteration, an outcome sampler, and an outcome-space descriptor. All methods
broadcast over leading axes and are pure given an rng stream, so models are
safe to share read-only across threads and sessions.
"""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass

import numpy as np

from ..nn import dists
from ..nn.rng import RngStream

__all__ = ["SupportKind", "OutcomeSupport", "History", "ExperimentModel", "SupportError"]


class SupportError(ValueError):
    """Value outside a declared support."""


class SupportKind(enum.Enum):
    CONTINUOUS = "continuous"
    FINITE = "finite"


@dataclass(frozen=True)
class OutcomeSupport:
    """Outcome-space descriptor: continuous line or a finite ordered set."""

    kind: SupportKind
    values: np.ndarray | None = None

    @property
    def cardinality(self) -> int:
        if self.kind is not SupportKind.FINITE:
            raise SupportError("continuous outcome spaces have no cardinality")
        return len(self.values)

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y)
        if self.kind is SupportKind.CONTINUOUS:
            return np.isfinite(y)
        return np.isin(y, self.values)


@dataclass(frozen=True)
class History:
    """Ordered (design, outcome) pairs observed so far."""

    designs: np.ndarray   # (t, design_dim)
    outcomes: np.ndarray  # (t, 1)

    @staticmethod
    def empty(design_dim: int) -> "History":
        return History(np.zeros((0, design_dim)), np.zeros((0, 1)))

    def append(self, design, outcome) -> "History":
        d = np.atleast_1d(np.asarray(design, dtype=np.float64))
        y = np.atleast_1d(np.asarray(outcome, dtype=np.float64))
        return History(
            np.concatenate([self.designs, d[None, :]], axis=0),
            np.concatenate([self.outcomes, y[None, :]], axis=0),
        )

    def permuted(self, order) -> "History":
        order = np.asarray(order)
        return History(self.designs[order], self.outcomes[order])

    def __len__(self) -> int:
        return self.designs.shape[0]


class ExperimentModel(abc.ABC):
    """Prior + likelihood + outcome sampler for one experiment family."""

    name: str
    theta_dim: int
    design_dim: int
    transform: str           # design transform identifier used by policies
    reparametrizable: bool = False

    # Uniform sampling box for the random baseline, shape (design_dim, 2).
    design_box: np.ndarray

    @abc.abstractmethod
    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        """n draws from p(theta), shape (n, theta_dim)."""

    @abc.abstractmethod
    def log_prior(self, theta) -> np.ndarray:
        """log p(theta) for theta (..., theta_dim), returned as (...)."""

    @abc.abstractmethod
    def log_likelihood(self, y, theta, xi):
        """log p(y | theta, xi); broadcasts, traced when xi/y are Tensors.

        Out-of-support outcomes for discrete models yield -inf, not errors.
        """

    @abc.abstractmethod
    def sample_outcome(self, theta, xi, rng: RngStream) -> np.ndarray:
        """One outcome per (theta, xi) row; seeded-deterministic."""

    def sample_outcome_reparam(self, theta, xi, eps):
        raise dists.UnsupportedReparametrization(
            f"{self.name} outcomes are discrete; use the score-function or "
            "enumeration gradient estimators")

    def sample_outcome_noise(self, shape, rng: RngStream) -> np.ndarray:
        raise dists.UnsupportedReparametrization(
            f"{self.name} has no reparametrized outcome sampler")

    @abc.abstractmethod
    def outcome_support(self) -> OutcomeSupport:
        ...

    @abc.abstractmethod
    def encoder_design_input(self, xi):
        """Map a constrained design onto the encoder's input coordinates."""

    def encode_outcome(self, y):
        """Outcome as a real-valued encoder input column (identity default)."""
        return y

    @abc.abstractmethod
    def validate_design(self, xi) -> None:
        """Raise SupportError when a design violates the model constraints."""

    def validate_outcome(self, y) -> None:
        if not np.all(self.outcome_support().contains(y)):
            raise SupportError(f"outcome {y!r} outside the {self.name} support")

    # -- conveniences -------------------------------------------------------

    def history_from_pairs(self, pairs) -> History:
        h = History.empty(self.design_dim)
        for design, outcome in pairs:
            h = h.append(design, outcome)
        return h

    def __repr__(self):
        return f"{type(self).__name__}()"
