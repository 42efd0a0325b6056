"""Session service: HTTP API over the dialogue engine with write-ahead
snapshot persistence (the snapshot lands on disk before the turn is
acknowledged). Sessions are independent; per-session turns serialize on a
lock while the fixture bundle is shared read-only."""

from __future__ import annotations

import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .engine import DialogueEngine, Session
from .errors import MilepostError, SessionNotActive, UnknownSession
from .model import (
    EducationLevel,
    ExternalKind,
    LanguageProficiency,
    RegistrationFact,
    SessionConfig,
    SessionStatus,
    UserProfile,
)
from .snapshot import SnapshotStore, outcome_to_dict, utterance_to_dict


class RegistrationFactBody(BaseModel):
    kind: str
    description: str
    resolved: bool = True


class ProfileBody(BaseModel):
    user_id: str
    education_level: str = "Intermediate"
    language_proficiency: str = "Medium"
    registration_facts: list[RegistrationFactBody] = Field(default_factory=list)


class ConfigBody(BaseModel):
    w_progress: float = 0.4
    w_relevance: float = 0.4
    w_external: float = 0.2
    tau: float = 0.5
    drift_new_entity_ratio: float = 0.7
    repeat_state_limit: int = 3
    max_response_chunks: int = 4


class CreateSessionBody(BaseModel):
    profile: ProfileBody
    config: Optional[ConfigBody] = None


class UtteranceBody(BaseModel):
    text: str


class SessionService:
    """Holds live sessions, their locks, and the snapshot store."""

    def __init__(self, fixtures, snapshot_dir, config_defaults: Optional[SessionConfig] = None):
        self.fixtures = fixtures
        self.engine = DialogueEngine(fixtures)
        self.store = SnapshotStore(snapshot_dir)
        self.config_defaults = config_defaults or SessionConfig()
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def get_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            # fall back to disk so a restarted service resumes where it stopped
            session = self.store.load(session_id, self.fixtures)
            self.sessions[session_id] = session
        return session

    def create_session(self, profile: UserProfile, config: Optional[SessionConfig]) -> Session:
        session_id = uuid.uuid4().hex[:12]
        session = self.engine.create_session(
            session_id, profile, config or self.config_defaults
        )
        self.sessions[session_id] = session
        self.store.save(session, self.fixtures)
        return session

    def post_utterance(self, session_id: str, text: str):
        lock = self._lock_for(session_id)
        with lock:
            session = self.get_session(session_id)
            outcome = self.engine.step(session, text)
            # write-ahead: persist before acknowledging the turn
            self.store.save(session, self.fixtures)
            return session, outcome

    def delete_session(self, session_id: str) -> None:
        self.sessions.pop(session_id, None)
        self.store.delete(session_id)


def _session_summary(session: Session) -> dict:
    milestones = [
        {
            "id": m.id,
            "description": m.description,
            "progress": m.progress,
            "priority": m.priority,
        }
        for m in session.milestones.values()
    ]
    external = [
        {
            "id": m.id,
            "kind": m.kind.value,
            "description": m.description,
            "resolved": m.resolved,
            "clarified": m.clarified,
        }
        for m in session.external.values()
    ]
    last_responses = []
    if session.last_outcome is not None:
        last_responses = [u.text for u in session.last_outcome.system_utterances]
    return {
        "id": session.id,
        "status": session.status.value,
        "turn_clock": session.clock,
        "state_id": session.current_state_id,
        "milestones": milestones,
        "external_milestones": external,
        "last_responses": last_responses,
        "goals": [
            {"id": g.id, "description": g.description, "achieved": g.achieved}
            for g in session.goals.values()
        ],
    }


def _profile_from_body(body: ProfileBody) -> UserProfile:
    try:
        return UserProfile(
            user_id=body.user_id,
            education_level=EducationLevel(body.education_level),
            language_proficiency=LanguageProficiency(body.language_proficiency),
            registration_facts=tuple(
                RegistrationFact(
                    kind=ExternalKind(f.kind),
                    description=f.description,
                    resolved=f.resolved,
                )
                for f in body.registration_facts
            ),
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


def create_app(
    fixtures,
    snapshot_dir,
    config_defaults: Optional[SessionConfig] = None,
    ui_dir: Optional[str] = None,
) -> FastAPI:
    service = SessionService(fixtures, snapshot_dir, config_defaults)
    app = FastAPI(title="milepost", version="1")
    app.state.service = service

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        profile = _profile_from_body(body.profile)
        config = None
        if body.config is not None:
            try:
                config = SessionConfig(**body.config.model_dump())
            except (ValueError, MilepostError) as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        session = service.create_session(profile, config)
        return {
            "session_id": session.id,
            "status": session.status.value,
            "turn_clock": session.clock,
            "state_id": session.current_state_id,
        }

    @app.post("/v1/sessions/{session_id}/utterances")
    def post_utterance(session_id: str, body: UtteranceBody):
        try:
            session, outcome = service.post_utterance(session_id, body.text)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except SessionNotActive as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except MilepostError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        payload = outcome_to_dict(outcome)
        payload["status"] = session.status.value
        payload["turn_clock"] = session.clock
        payload["state_id"] = session.current_state_id
        return payload

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            session = service.get_session(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return _session_summary(session)

    @app.get("/v1/sessions/{session_id}/history")
    def get_history(session_id: str):
        try:
            session = service.get_session(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "status": session.status.value,
            "turn_clock": session.clock,
            "utterances": [utterance_to_dict(u) for u in session.history.utterances],
        }

    @app.delete("/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        service.delete_session(session_id)
        return {"deleted": session_id}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

        @app.get("/")
        def index():
            return FileResponse(Path(ui_dir) / "index.html")

    return app
