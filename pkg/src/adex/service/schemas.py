"""Request/response models for the live-session API (wire format v1)."""

from __future__ import annotations

from pydantic import BaseModel, Field

API_VERSION = 1

DESIGN_COORDINATE_NAMES = {
    "location": ["x", "y"],
    "hyperbolic": ["reward_today", "delay_days"],
    "death": ["observation_time"],
}


class DesignPayload(BaseModel):
    coordinates: list[float]
    names: list[str]


class CreateSessionRequest(BaseModel):
    model: str
    checkpoint: str
    T: int = Field(ge=0, description="number of experiment iterations")


class SessionCreated(BaseModel):
    api_version: int = API_VERSION
    id: str
    model: str
    T: int
    step: int
    status: str
    checkpoint_checksum: str
    design: DesignPayload | None


class OutcomeRequest(BaseModel):
    value: float


class StepResponse(BaseModel):
    api_version: int = API_VERSION
    id: str
    step: int
    status: str
    design: DesignPayload | None


class HistoryPair(BaseModel):
    design: list[float]
    outcome: float


class SessionView(BaseModel):
    api_version: int = API_VERSION
    id: str
    model: str
    T: int
    step: int
    status: str
    checkpoint_checksum: str
    history: list[HistoryPair]
    current_design: DesignPayload | None


class PosteriorResponse(BaseModel):
    api_version: int = API_VERSION
    available: bool
    reason: str | None = None
    grid: list[float] | None = None
    mass: list[float] | None = None
    prior_mass: list[float] | None = None
    entropy: float | None = None
    prior_entropy: float | None = None


class HealthResponse(BaseModel):
    api_version: int = API_VERSION
    status: str
    checkpoints: list[str]
    sessions: int
