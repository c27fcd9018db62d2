"""Session state: in-memory index, per-session write locks, append-only journal.

A live experiment is unrepeatable, so every mutation is journaled (JSONL,
flushed) before it is acknowledged; restarting the service replays the
journal and no participant loses progress. Policies recompute the pooled
history representation from the stored history on every request, keeping the
journal the single source of truth.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checkpoint import load_checkpoint, policy_from_checkpoint
from ..models import get_model
from ..models.base import History

__all__ = ["SessionStore", "Session", "SessionBusy", "UnknownCheckpoint"]


class SessionBusy(RuntimeError):
    """Another mutation is in flight for this session."""


class UnknownCheckpoint(KeyError):
    pass


@dataclass
class Session:
    id: str
    model_name: str
    checkpoint_ref: str
    checkpoint_checksum: str
    T: int
    created_at: float
    history: History
    status: str = "active"          # active | complete
    current_design: np.ndarray | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """Loads checkpoints lazily, owns sessions, journals every mutation."""

    def __init__(self, checkpoint_dir, journal_path=None):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.journal_path = Path(journal_path) if journal_path else None
        self._policies: dict[str, tuple] = {}
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._journal_lock = threading.Lock()
        if self.journal_path is not None and self.journal_path.exists():
            self._replay_journal()

    # -- checkpoint registry ---------------------------------------------------

    def list_checkpoints(self) -> list[str]:
        if not self.checkpoint_dir.exists():
            return []
        return sorted(p.stem for p in self.checkpoint_dir.glob("*.ckpt"))

    def resolve(self, ref: str):
        """(policy, model, checksum) for a checkpoint reference (file stem)."""
        with self._registry_lock:
            if ref in self._policies:
                return self._policies[ref]
        path = self.checkpoint_dir / f"{ref}.ckpt"
        if not path.exists():
            raise UnknownCheckpoint(ref)
        ckpt = load_checkpoint(path)
        model = get_model(ckpt.model_name, **ckpt.model_params)
        policy = policy_from_checkpoint(ckpt, model, allow_any_horizon=True)
        entry = (policy, model, ckpt.checksum())
        with self._registry_lock:
            self._policies[ref] = entry
        return entry

    # -- journaling --------------------------------------------------------------

    def _journal(self, record: dict) -> None:
        if self.journal_path is None:
            return
        with self._journal_lock:
            with open(self.journal_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()

    def _replay_journal(self) -> None:
        with open(self.journal_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["event"] == "created":
                    sess = Session(
                        id=rec["id"], model_name=rec["model"],
                        checkpoint_ref=rec["checkpoint"],
                        checkpoint_checksum=rec["checksum"], T=rec["T"],
                        created_at=rec["ts"],
                        history=History.empty(rec["design_dim"]),
                        status=rec["status"],
                        current_design=None if rec["design"] is None
                        else np.asarray(rec["design"]))
                    self._sessions[sess.id] = sess
                elif rec["event"] == "outcome":
                    sess = self._sessions[rec["id"]]
                    sess.history = sess.history.append(
                        np.asarray(rec["design"]), [rec["value"]])
                    sess.status = rec["status"]
                    sess.current_design = (None if rec["next_design"] is None
                                           else np.asarray(rec["next_design"]))

    # -- session lifecycle ----------------------------------------------------------

    def create_session(self, model_name: str, checkpoint_ref: str, T: int) -> Session:
        policy, model, checksum = self.resolve(checkpoint_ref)
        if model.name != model_name:
            from ..checkpoint import ModelMismatchError
            raise ModelMismatchError(
                f"checkpoint {checkpoint_ref!r} was trained for "
                f"{model.name!r}, not {model_name!r}")
        sid = uuid.uuid4().hex
        history = History.empty(model.design_dim)
        design = None
        status = "active"
        if T == 0:
            status = "complete"
        else:
            design = np.asarray(policy.apply(history), dtype=np.float64)
        sess = Session(id=sid, model_name=model_name,
                       checkpoint_ref=checkpoint_ref,
                       checkpoint_checksum=checksum, T=T,
                       created_at=time.time(), history=history,
                       status=status, current_design=design)
        self._sessions[sid] = sess
        self._journal({
            "event": "created", "id": sid, "model": model_name,
            "checkpoint": checkpoint_ref, "checksum": checksum, "T": T,
            "design_dim": model.design_dim, "status": status,
            "design": None if design is None else design.tolist(),
            "ts": sess.created_at,
        })
        return sess

    def get(self, sid: str) -> Session | None:
        return self._sessions.get(sid)

    def __len__(self) -> int:
        return len(self._sessions)

    def submit_outcome(self, sess: Session, value: float):
        """Append an outcome and compute the next design (or complete).

        One in-flight mutation per session: concurrent calls get SessionBusy
        and should retry.
        """
        if not sess.lock.acquire(blocking=False):
            raise SessionBusy(sess.id)
        try:
            policy, model, _ = self.resolve(sess.checkpoint_ref)
            model.validate_outcome(value)
            new_history = sess.history.append(sess.current_design, [value])
            if len(new_history) >= sess.T:
                next_design = None
                status = "complete"
            else:
                next_design = np.asarray(policy.apply(new_history), dtype=np.float64)
                status = "active"
            self._journal({
                "event": "outcome", "id": sess.id, "value": float(value),
                "design": sess.current_design.tolist(), "status": status,
                "next_design": None if next_design is None else next_design.tolist(),
            })
            sess.history = new_history
            sess.status = status
            sess.current_design = next_design
            return sess
        finally:
            sess.lock.release()
