"""Amortized adaptive experimental design.

Train a permutation-invariant design-policy network offline against
contrastive information bounds, then deploy it to pick adaptive designs in
milliseconds — from the CLI, the evaluation toolkit, or the live HTTP
session service.
"""

__version__ = "0.1.0"
