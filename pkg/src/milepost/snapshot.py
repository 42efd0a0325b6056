"""Session snapshot format: one versioned JSON document per session.

Serialization is canonical (sorted keys, fixed separators, UTF-8), so equal
sessions produce byte-identical documents and the round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .engine import (
    EntityRecord,
    Session,
    TurnDecisions,
    TurnOutcome,
)
from .errors import FixtureLoadError, UnknownSession
from .model import (
    ConversationHistory,
    EducationLevel,
    Entity,
    EntitySet,
    ExternalKind,
    ExternalMilestone,
    Goal,
    IntentResult,
    LanguageProficiency,
    Milestone,
    EntityRequirement,
    RegistrationFact,
    SessionConfig,
    SessionStatus,
    Speaker,
    Transition,
    UserProfile,
    Utterance,
)

SNAPSHOT_VERSION = 1


def dumps_canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# --- model encoding -----------------------------------------------------------


def utterance_to_dict(u: Utterance) -> dict:
    return {
        "id": u.id,
        "timestamp": u.timestamp,
        "speaker": u.speaker.value,
        "text": u.text,
        "speaker_id": u.speaker_id,
    }


def utterance_from_dict(d: dict) -> Utterance:
    return Utterance(
        id=d["id"],
        timestamp=d["timestamp"],
        speaker=Speaker(d["speaker"]),
        text=d["text"],
        speaker_id=d.get("speaker_id", ""),
    )


def intent_to_dict(i: IntentResult) -> dict:
    return {
        "conversational": i.conversational,
        "domain": i.domain,
        "score": i.score,
        "timestamp": i.timestamp,
        "utterance_id": i.utterance_id,
    }


def intent_from_dict(d: dict) -> IntentResult:
    return IntentResult(
        conversational=d["conversational"],
        domain=d["domain"],
        score=d["score"],
        timestamp=d["timestamp"],
        utterance_id=d["utterance_id"],
    )


def entity_to_dict(e: Entity) -> dict:
    return {
        "type": e.type,
        "value": e.value,
        "priority": e.priority,
        "source_utterance_id": e.source_utterance_id,
    }


def entity_from_dict(d: dict) -> Entity:
    return Entity(
        type=d["type"],
        value=d["value"],
        priority=d["priority"],
        source_utterance_id=d["source_utterance_id"],
    )


def external_to_dict(m: ExternalMilestone) -> dict:
    return {
        "id": m.id,
        "kind": m.kind.value,
        "description": m.description,
        "resolved": m.resolved,
        "source_utterance_id": m.source_utterance_id,
        "clarified": m.clarified,
    }


def external_from_dict(d: dict) -> ExternalMilestone:
    return ExternalMilestone(
        id=d["id"],
        kind=ExternalKind(d["kind"]),
        description=d["description"],
        resolved=d["resolved"],
        source_utterance_id=d.get("source_utterance_id"),
        clarified=d.get("clarified", False),
    )


def milestone_to_dict(m: Milestone) -> dict:
    return {
        "id": m.id,
        "description": m.description,
        "prerequisites": [
            {"label": r.label, "type": r.entity_type, "value": r.value}
            for r in m.prerequisites
        ],
        "progress": m.progress,
        "priority": m.priority,
        "hierarchy_node": m.hierarchy_node,
    }


def milestone_from_dict(d: dict) -> Milestone:
    return Milestone(
        id=d["id"],
        description=d["description"],
        prerequisites=tuple(
            EntityRequirement(label=r["label"], entity_type=r["type"], value=r.get("value"))
            for r in d["prerequisites"]
        ),
        progress=d["progress"],
        priority=d["priority"],
        hierarchy_node=d.get("hierarchy_node"),
    )


def goal_to_dict(g: Goal) -> dict:
    return {
        "id": g.id,
        "description": g.description,
        "subgoal_ids": list(g.subgoal_ids),
        "external_dep_ids": list(g.external_dep_ids),
        "achieved": g.achieved,
    }


def goal_from_dict(d: dict) -> Goal:
    return Goal(
        id=d["id"],
        description=d["description"],
        subgoal_ids=tuple(d["subgoal_ids"]),
        external_dep_ids=tuple(d["external_dep_ids"]),
        achieved=d["achieved"],
    )


def profile_to_dict(p: UserProfile) -> dict:
    return {
        "user_id": p.user_id,
        "education_level": p.education_level.value,
        "language_proficiency": p.language_proficiency.value,
        "registration_facts": [
            {"kind": f.kind.value, "description": f.description, "resolved": f.resolved}
            for f in p.registration_facts
        ],
    }


def profile_from_dict(d: dict) -> UserProfile:
    return UserProfile(
        user_id=d["user_id"],
        education_level=EducationLevel(d["education_level"]),
        language_proficiency=LanguageProficiency(d["language_proficiency"]),
        registration_facts=tuple(
            RegistrationFact(
                kind=ExternalKind(f["kind"]),
                description=f["description"],
                resolved=f.get("resolved", True),
            )
            for f in d.get("registration_facts", [])
        ),
    )


def config_to_dict(c: SessionConfig) -> dict:
    return {
        "w_progress": c.w_progress,
        "w_relevance": c.w_relevance,
        "w_external": c.w_external,
        "tau": c.tau,
        "drift_new_entity_ratio": c.drift_new_entity_ratio,
        "repeat_state_limit": c.repeat_state_limit,
        "max_response_chunks": c.max_response_chunks,
    }


def config_from_dict(d: dict) -> SessionConfig:
    return SessionConfig(**d)


def history_to_dict(h: ConversationHistory) -> dict:
    return {
        "utterances": [utterance_to_dict(u) for u in h.utterances],
        "intents": [intent_to_dict(i) for i in h.intents],
        "entities": [
            {
                "utterance_id": es.utterance_id,
                "entities": [entity_to_dict(e) for e in es.entities],
            }
            for es in h.entities
        ],
        "external": [external_to_dict(m) for m in h.external],
    }


def history_from_dict(d: dict) -> ConversationHistory:
    return ConversationHistory(
        utterances=tuple(utterance_from_dict(u) for u in d["utterances"]),
        intents=tuple(intent_from_dict(i) for i in d["intents"]),
        entities=tuple(
            EntitySet(
                utterance_id=es["utterance_id"],
                entities=tuple(entity_from_dict(e) for e in es["entities"]),
            )
            for es in d["entities"]
        ),
        external=tuple(external_from_dict(m) for m in d["external"]),
    )


# --- turn outcomes ----------------------------------------------------------------


def outcome_to_dict(outcome: TurnOutcome) -> dict:
    d = outcome.decisions
    return {
        "system_utterances": [utterance_to_dict(u) for u in outcome.system_utterances],
        "fired_transition": None
        if outcome.fired_transition is None
        else {
            "id": outcome.fired_transition.id,
            "from": outcome.fired_transition.from_state,
            "to": outcome.fired_transition.to_state,
            "action": outcome.fired_transition.action.kind.value,
        },
        "decisions": {
            "adapt_decision": d.adapt_decision,
            "applied_adapt": d.applied_adapt,
            "drift_flags": list(d.drift_flags),
            "milestones_added": list(d.milestones_added),
            "clarifications": d.clarifications,
            "retrievals": d.retrievals,
            "axes": list(d.axes),
            "state_id": d.state_id,
            "terminated_reason": d.terminated_reason,
        },
    }


def outcome_bytes(outcome: TurnOutcome) -> bytes:
    return dumps_canonical(outcome_to_dict(outcome)).encode("utf-8")


# --- whole session -----------------------------------------------------------------


def session_to_dict(session: Session, fixtures) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "id": session.id,
        "profile": profile_to_dict(session.profile),
        "config": config_to_dict(session.config),
        "history": history_to_dict(session.history),
        "goals": [goal_to_dict(g) for g in session.goals.values()],
        "milestones": [milestone_to_dict(m) for m in session.milestones.values()],
        "external": [external_to_dict(m) for m in session.external.values()],
        "entities": [
            {
                "entity": entity_to_dict(record.entity),
                "last_referenced_turn": record.last_referenced_turn,
            }
            for record in session.entities.values()
        ],
        "current_state_id": session.current_state_id,
        "status": session.status.value,
        "clock": session.clock,
        "turn_index": session.turn_index,
        "masked_nodes": list(session.masked_nodes),
        "pending_adapt": session.pending_adapt,
        "repeat_count": session.repeat_count,
        "fixture_fingerprint": fixtures.fingerprint() if fixtures else {},
    }


def session_from_dict(data: dict, fixtures, verify_fixtures: bool = True) -> Session:
    if data.get("version") != SNAPSHOT_VERSION:
        raise FixtureLoadError("snapshot", f"unsupported version {data.get('version')}")
    if verify_fixtures and data.get("fixture_fingerprint"):
        current = fixtures.fingerprint()
        if data["fixture_fingerprint"] != current:
            raise FixtureLoadError(
                "snapshot", "fixture files changed since this snapshot was written"
            )
    session = Session(
        data["id"],
        profile_from_dict(data["profile"]),
        config_from_dict(data["config"]),
        fixtures,
    )
    session.history = history_from_dict(data["history"])
    session.goals = {g["id"]: goal_from_dict(g) for g in data["goals"]}
    session.milestones = {m["id"]: milestone_from_dict(m) for m in data["milestones"]}
    session.external = {m["id"]: external_from_dict(m) for m in data["external"]}
    session.entities = {
        entity_from_dict(r["entity"]).key: EntityRecord(
            entity=entity_from_dict(r["entity"]),
            last_referenced_turn=r["last_referenced_turn"],
        )
        for r in data["entities"]
    }
    session.current_state_id = data["current_state_id"]
    session.status = SessionStatus(data["status"])
    session.clock = data["clock"]
    session.turn_index = data["turn_index"]
    session.masked_nodes = tuple(data["masked_nodes"])
    session.pending_adapt = data["pending_adapt"]
    session.repeat_count = data["repeat_count"]
    return session


class SnapshotStore:
    """One JSON file per session under a flat directory: <dir>/<session id>.json.
    Writes go to a temp file first and rename into place."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.json"

    def save(self, session: Session, fixtures) -> Path:
        payload = dumps_canonical(session_to_dict(session, fixtures))
        target = self.path_for(session.id)
        temp = target.with_suffix(".json.tmp")
        temp.write_text(payload, encoding="utf-8")
        temp.replace(target)
        return target

    def load(self, session_id: str, fixtures, verify_fixtures: bool = True) -> Session:
        target = self.path_for(session_id)
        if not target.exists():
            raise UnknownSession(f"no snapshot for session {session_id!r}")
        data = json.loads(target.read_text(encoding="utf-8"))
        return session_from_dict(data, fixtures, verify_fixtures=verify_fixtures)

    def delete(self, session_id: str) -> None:
        target = self.path_for(session_id)
        if target.exists():
            target.unlink()

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))
