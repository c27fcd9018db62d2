"""Live adaptive-experiment HTTP service."""

from .app import create_app
from .store import SessionBusy, SessionStore, UnknownCheckpoint

__all__ = ["create_app", "SessionStore", "SessionBusy", "UnknownCheckpoint"]
