"""Experiment models and the registry used by configs, the CLI and the service."""

from __future__ import annotations

from .base import ExperimentModel, History, OutcomeSupport, SupportError, SupportKind
from .death import DeathModel
from .hyperbolic import HyperbolicModel
from .location import LocationModel

__all__ = [
    "ExperimentModel",
    "History",
    "OutcomeSupport",
    "SupportError",
    "SupportKind",
    "DeathModel",
    "HyperbolicModel",
    "LocationModel",
    "MODEL_NAMES",
    "get_model",
]

_REGISTRY = {
    "location": LocationModel,
    "hyperbolic": HyperbolicModel,
    "death": DeathModel,
}

MODEL_NAMES = tuple(sorted(_REGISTRY))


def get_model(name: str, **params) -> ExperimentModel:
    """Build a model by name with optional hyperparameter overrides.

    Recognized keys mirror each model's constructor, e.g.
    ``get_model("location", n_sources=1, dim=2)`` or
    ``get_model("death", population=50)``.
    """
    if name not in _REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    return _REGISTRY[name](**params)
