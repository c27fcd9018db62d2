"""HTTP session service: create a session, fetch designs, submit outcomes,
inspect history and (1-D latents) the running grid posterior."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse

from .. import evaluation
from ..checkpoint import CheckpointError, ModelMismatchError
from ..models import MODEL_NAMES
from ..models.base import SupportError
from .schemas import (
    API_VERSION,
    DESIGN_COORDINATE_NAMES,
    CreateSessionRequest,
    DesignPayload,
    HealthResponse,
    HistoryPair,
    OutcomeRequest,
    PosteriorResponse,
    SessionCreated,
    SessionView,
    StepResponse,
)
from .store import SessionBusy, SessionStore, UnknownCheckpoint

__all__ = ["create_app"]


def _design_payload(model_name: str, design) -> DesignPayload | None:
    if design is None:
        return None
    return DesignPayload(coordinates=[float(v) for v in np.atleast_1d(design)],
                         names=DESIGN_COORDINATE_NAMES[model_name])


def create_app(checkpoint_dir, journal_path=None) -> FastAPI:
    store = SessionStore(checkpoint_dir, journal_path)
    app = FastAPI(title="adaptive design session service", version=str(API_VERSION))
    app.state.store = store

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok", checkpoints=store.list_checkpoints(),
                              sessions=len(store))

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session(req: CreateSessionRequest):
        if req.model not in MODEL_NAMES:
            raise HTTPException(404, f"unknown model {req.model!r}")
        try:
            sess = store.create_session(req.model, req.checkpoint, req.T)
        except UnknownCheckpoint:
            raise HTTPException(404, f"unknown checkpoint {req.checkpoint!r}")
        except ModelMismatchError as exc:
            raise HTTPException(409, str(exc))
        except CheckpointError as exc:
            raise HTTPException(500, f"checkpoint unreadable: {exc}")
        return SessionCreated(
            id=sess.id, model=sess.model_name, T=sess.T,
            step=len(sess.history), status=sess.status,
            checkpoint_checksum=sess.checkpoint_checksum,
            design=_design_payload(sess.model_name, sess.current_design))

    def _get_session(sid: str):
        sess = store.get(sid)
        if sess is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return sess

    @app.post("/sessions/{sid}/outcomes", response_model=StepResponse)
    def submit_outcome(sid: str, req: OutcomeRequest):
        sess = _get_session(sid)
        if sess.status == "complete":
            raise HTTPException(409, "session already complete")
        try:
            store.submit_outcome(sess, req.value)
        except SupportError as exc:
            raise HTTPException(422, str(exc))
        except SessionBusy:
            return JSONResponse(
                status_code=409,
                content={"error": "busy", "retry": True,
                         "detail": "another outcome is being processed"})
        return StepResponse(
            id=sess.id, step=len(sess.history), status=sess.status,
            design=_design_payload(sess.model_name, sess.current_design))

    @app.get("/sessions/{sid}", response_model=SessionView)
    def get_session(sid: str):
        sess = _get_session(sid)
        return SessionView(
            id=sess.id, model=sess.model_name, T=sess.T,
            step=len(sess.history), status=sess.status,
            checkpoint_checksum=sess.checkpoint_checksum,
            history=[HistoryPair(design=[float(v) for v in sess.history.designs[t]],
                                 outcome=float(sess.history.outcomes[t, 0]))
                     for t in range(len(sess.history))],
            current_design=_design_payload(sess.model_name, sess.current_design))

    @app.get("/sessions/{sid}/posterior", response_model=PosteriorResponse)
    def get_posterior(sid: str, points: int = Query(default=None, ge=16, le=20000)):
        sess = _get_session(sid)
        _, model, _ = store.resolve(sess.checkpoint_ref)
        if model.theta_dim != 1:
            return PosteriorResponse(
                available=False,
                reason=f"{model.name} latent is {model.theta_dim}-D; "
                       "grid posteriors cover 1-D latents only")
        post = evaluation.grid_posterior(model, sess.history, points=points)
        return PosteriorResponse(
            available=True, grid=post.grid.tolist(), mass=post.masses.tolist(),
            prior_mass=post.prior_masses.tolist(), entropy=post.entropy,
            prior_entropy=post.prior_entropy)

    return app
