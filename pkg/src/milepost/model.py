"""Core data model: transcripts, goals, milestones, states, and transitions.

All types are immutable values; the four conversation logs grow by producing
a new history object, so any retained reference stays a valid snapshot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

from .errors import (
    AlternationViolation,
    DanglingReference,
    InvalidWeights,
    NonMonotonicTimestamp,
)
from .taxonomy import ENTITY_TYPES, canonicalize

_WS = re.compile(r"\s+")


def canonical_text(text: str) -> str:
    """Case-folded, whitespace-collapsed form used for dedup keys."""
    return _WS.sub(" ", text.strip()).casefold()


class Speaker(str, Enum):
    USER = "user"
    SYSTEM = "system"


class ExternalKind(str, Enum):
    USER_STATE = "UserState"
    BUSINESS = "Business"


class EducationLevel(str, Enum):
    BASIC = "Basic"
    INTERMEDIATE = "Intermediate"
    ADVANCED = "Advanced"


class LanguageProficiency(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class SessionStatus(str, Enum):
    ACTIVE = "Active"
    REFERRED = "Referred"
    TERMINATED = "Terminated"


class ActionKind(str, Enum):
    RESPOND = "Respond"
    CLARIFY = "Clarify"
    QUERY = "Query"
    REFER = "Refer"
    TERMINATE = "Terminate"


@dataclass(frozen=True)
class Utterance:
    """One transcript turn. Timestamps are a logical turn clock, not wall time."""

    id: str
    timestamp: int
    speaker: Speaker
    text: str
    speaker_id: str = ""


@dataclass(frozen=True)
class IntentResult:
    """Recognition output: speech-act category plus optional hierarchy node."""

    conversational: str
    domain: Optional[str]
    score: float
    timestamp: int
    utterance_id: str


@dataclass(frozen=True)
class Entity:
    type: str
    value: str  # canonical form, see taxonomy.canonicalize
    priority: float
    source_utterance_id: str

    def __post_init__(self):
        if self.type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.type!r}")
        if not 0.0 <= self.priority <= 1.0:
            raise ValueError("entity priority must be in [0, 1]")
        if self.value != canonicalize(self.type, self.value):
            raise ValueError(f"entity value {self.value!r} is not canonical")

    @property
    def key(self) -> str:
        return f"{self.type}:{self.value}"


@dataclass(frozen=True)
class EntitySet:
    """Entities extracted from a single user utterance."""

    utterance_id: str
    entities: tuple[Entity, ...] = ()


@dataclass(frozen=True)
class ExternalMilestone:
    """A real-world prerequisite the user can complete outside the conversation."""

    id: str
    kind: ExternalKind
    description: str
    resolved: bool = False
    source_utterance_id: Optional[str] = None
    clarified: bool = False

    def __post_init__(self):
        if self.resolved and not self.source_utterance_id:
            raise ValueError(
                f"resolved external milestone {self.id!r} must carry a source"
            )

    @property
    def dedup_key(self) -> tuple[str, str]:
        return (self.kind.value, canonical_text(self.description))


def external_milestone_id(kind: ExternalKind, description: str) -> str:
    slug = canonical_text(description).replace(" ", "_")
    prefix = "user_state" if kind is ExternalKind.USER_STATE else "business"
    return f"{prefix}:{slug}"


@dataclass(frozen=True)
class ConversationHistory:
    """The four append-only session logs."""

    utterances: tuple[Utterance, ...] = ()
    intents: tuple[IntentResult, ...] = ()
    entities: tuple[EntitySet, ...] = ()
    external: tuple[ExternalMilestone, ...] = ()

    def with_utterance(self, u: Utterance) -> "ConversationHistory":
        if self.utterances:
            last = self.utterances[-1]
            if u.timestamp <= last.timestamp:
                raise NonMonotonicTimestamp(
                    f"timestamp {u.timestamp} not after {last.timestamp}"
                )
            if u.speaker is last.speaker:
                raise AlternationViolation(
                    f"two consecutive {u.speaker.value} utterances"
                )
        elif u.speaker is not Speaker.USER:
            raise AlternationViolation("transcript must open with a user utterance")
        return replace(self, utterances=self.utterances + (u,))

    def with_intent(self, intent: IntentResult) -> "ConversationHistory":
        return replace(self, intents=self.intents + (intent,))

    def with_entities(self, entity_set: EntitySet) -> "ConversationHistory":
        return replace(self, entities=self.entities + (entity_set,))

    def with_external(self, m: ExternalMilestone) -> "ConversationHistory":
        if any(existing.dedup_key == m.dedup_key for existing in self.external):
            raise ValueError(f"external milestone {m.dedup_key} already logged")
        return replace(self, external=self.external + (m,))

    def last_user_utterance(self) -> Optional[Utterance]:
        for u in reversed(self.utterances):
            if u.speaker is Speaker.USER:
                return u
        return None


def append_utterance(history: ConversationHistory, u: Utterance) -> ConversationHistory:
    """Append one utterance to the transcript; all other logs are untouched."""
    return history.with_utterance(u)


@dataclass(frozen=True)
class EntityRequirement:
    """A milestone prerequisite: an entity type, optionally pinned to a value."""

    label: str
    entity_type: str
    value: Optional[str] = None  # canonical; None accepts any value of the type

    def __post_init__(self):
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.entity_type!r}")

    def satisfied_by(self, entities) -> bool:
        for e in entities:
            if e.type != self.entity_type:
                continue
            if self.value is None or e.value == self.value:
                return True
        return False


@dataclass(frozen=True)
class Milestone:
    id: str
    description: str
    prerequisites: tuple[EntityRequirement, ...]
    progress: float
    priority: float
    hierarchy_node: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.progress <= 1.0:
            raise ValueError("progress must be in [0, 1]")
        if not 0.0 <= self.priority <= 1.0:
            raise ValueError("priority must be in [0, 1]")
        if not self.prerequisites and self.progress not in (0.0, 1.0):
            raise ValueError("milestone without prerequisites needs progress 0 or 1")

    def recompute_progress(self, entities) -> float:
        """Satisfied-prerequisite ratio; prerequisite-free milestones keep theirs."""
        if not self.prerequisites:
            return self.progress
        satisfied = sum(1 for req in self.prerequisites if req.satisfied_by(entities))
        return satisfied / len(self.prerequisites)

    @property
    def complete(self) -> bool:
        return self.progress >= 1.0


@dataclass(frozen=True)
class Goal:
    id: str
    description: str
    subgoal_ids: tuple[str, ...] = ()
    external_dep_ids: tuple[str, ...] = ()
    achieved: bool = False


def goal_achieved(
    g: Goal,
    milestones: Mapping[str, Milestone],
    external: Mapping[str, ExternalMilestone],
    known_external: frozenset[str] = frozenset(),
) -> bool:
    """True iff every subgoal is complete and every external dependency resolved.

    External dependencies that were declared but never raised count as
    unresolved; undeclared ids are dangling.
    """
    for mid in g.subgoal_ids:
        if mid not in milestones:
            raise DanglingReference(f"goal {g.id} references unknown milestone {mid}")
        if milestones[mid].progress < 1.0:
            return False
    for eid in g.external_dep_ids:
        if eid in external:
            if not external[eid].resolved:
                return False
        elif eid in known_external:
            return False
        else:
            raise DanglingReference(f"goal {g.id} references unknown external {eid}")
    return True


@dataclass(frozen=True)
class DialogueState:
    """Point-in-time snapshot of where the conversation stands."""

    id: str
    context_entities: tuple[str, ...]  # entity keys, sorted
    goal_id: str
    milestone_progress: Mapping[str, float]
    external_resolved: Mapping[str, bool]


@dataclass(frozen=True)
class TriggerCondition:
    """Pure conjunctive predicate over the turn's recognition output and logs."""

    conversational: tuple[str, ...] = ()
    domain_subtree: Optional[str] = None
    entity_types: tuple[str, ...] = ()
    milestones_complete: tuple[str, ...] = ()
    external_resolved: tuple[str, ...] = ()
    no_prior_domain: Optional[str] = None
    prior_domain: Optional[str] = None


@dataclass(frozen=True)
class ActionSpec:
    kind: ActionKind
    template: Optional[str] = None


@dataclass(frozen=True)
class Transition:
    id: str
    from_state: str
    to_state: str
    trigger: TriggerCondition
    action: ActionSpec

    def __post_init__(self):
        if self.from_state == self.to_state and self.action.kind is not ActionKind.CLARIFY:
            raise ValueError(
                f"transition {self.id}: self-loops are only allowed for Clarify"
            )


@dataclass(frozen=True)
class HierarchyNode:
    id: str
    label: str
    parent: Optional[str]
    vocab: tuple[str, ...] = ()  # entity types this content area talks about


@dataclass(frozen=True)
class IntentHierarchy:
    """Forest of dotted-id content areas ("3.2" is a child of "3")."""

    nodes: Mapping[str, HierarchyNode]

    def __post_init__(self):
        for node in self.nodes.values():
            segments = node.id.split(".")
            expected_parent = ".".join(segments[:-1]) if len(segments) > 1 else None
            if node.parent != expected_parent:
                raise ValueError(
                    f"node {node.id}: parent {node.parent!r} inconsistent with id"
                )
            if node.parent is not None and node.parent not in self.nodes:
                raise ValueError(f"node {node.id}: missing parent {node.parent!r}")

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(sorted(n.id for n in self.nodes.values() if n.parent is None))

    def depth(self, node_id: str) -> int:
        return len(node_id.split("."))

    def ancestors_and_self(self, node_id: str):
        """Yield node_id, then each ancestor up to its root."""
        current = self.nodes[node_id]
        while True:
            yield current.id
            if current.parent is None:
                return
            current = self.nodes[current.parent]

    def in_subtree(self, node_id: str, root_id: str) -> bool:
        return node_id == root_id or node_id.startswith(root_id + ".")

    def subtree(self, root_id: str) -> tuple[str, ...]:
        return tuple(
            sorted(nid for nid in self.nodes if self.in_subtree(nid, root_id))
        )


@dataclass(frozen=True)
class RegistrationFact:
    """External milestone seeded from registration-time data."""

    kind: ExternalKind
    description: str
    resolved: bool = True


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    education_level: EducationLevel
    language_proficiency: LanguageProficiency
    registration_facts: tuple[RegistrationFact, ...] = ()


@dataclass(frozen=True)
class SessionConfig:
    w_progress: float = 0.4
    w_relevance: float = 0.4
    w_external: float = 0.2
    tau: float = 0.5
    drift_new_entity_ratio: float = 0.7
    repeat_state_limit: int = 3
    max_response_chunks: int = 4

    def __post_init__(self):
        weights = (self.w_progress, self.w_relevance, self.w_external)
        if any(w < 0 for w in weights):
            raise InvalidWeights("priority weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise InvalidWeights(f"priority weights sum to {sum(weights)}, not 1")
        if not 0.0 < self.drift_new_entity_ratio <= 1.0:
            raise ValueError("drift_new_entity_ratio must be in (0, 1]")
        if self.repeat_state_limit < 1:
            raise ValueError("repeat_state_limit must be positive")
        if self.max_response_chunks < 1:
            raise ValueError("max_response_chunks must be positive")


@dataclass(frozen=True)
class MachineState:
    """Declared conversation stage: owning goal plus gating milestones."""

    id: str
    label: str
    goal_id: str
    gates: tuple[str, ...] = ()
