"""Deterministic rule/gazetteer NLU: intent recognition, entity extraction,
and external-milestone detection behind a provider seam.

Scores are additive over matched rule weights plus a history bonus per
entity type already seen that the content area's vocabulary names. The
bonus unit and the domain-score floor live in the lexicon alongside the
rule weights, so scaling the lexicon scales every score component.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .errors import EmptyHierarchy, EmptyUtterance, UnsupportedCapability
from .model import (
    ConversationHistory,
    DialogueState,
    Entity,
    EntitySet,
    ExternalKind,
    ExternalMilestone,
    IntentHierarchy,
    IntentResult,
    Speaker,
    Utterance,
    external_milestone_id,
)
from .taxonomy import canonicalize, is_entity_type

CAP_INTENT = "Intent"
CAP_ENTITY = "Entity"
CAP_MILESTONE = "Milestone"

TARGET_CATEGORY = "category"
TARGET_NODE = "node"
TARGET_ENTITY = "entity"


@dataclass(frozen=True)
class LexiconRule:
    pattern: str
    target_kind: str  # category | node | entity
    target: str
    weight: float

    def __post_init__(self):
        if self.weight <= 0 or self.weight != self.weight or self.weight in (
            float("inf"),
            float("-inf"),
        ):
            raise ValueError(f"rule {self.pattern!r}: weight must be finite and > 0")
        re.compile(self.pattern)  # patterns must compile at construction

    @property
    def regex(self) -> re.Pattern:
        return re.compile(self.pattern, re.IGNORECASE)


@dataclass(frozen=True)
class Lexicon:
    rules: tuple[LexiconRule, ...]
    categories: tuple[str, ...]
    context_bonus_weight: float = 1.0
    domain_floor: float = 1.0
    opening_category: str = "factual-question"
    followup_category: str = "opinion"

    def __post_init__(self):
        for cat in (self.opening_category, self.followup_category):
            if cat not in self.categories:
                raise ValueError(f"fallback category {cat!r} not in category list")

    def scaled(self, factor: float) -> "Lexicon":
        """Multiply every weight-typed value (rule weights, bonus, floor)."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return replace(
            self,
            rules=tuple(replace(r, weight=r.weight * factor) for r in self.rules),
            context_bonus_weight=self.context_bonus_weight * factor,
            domain_floor=self.domain_floor * factor,
        )


@dataclass(frozen=True)
class MilestoneRule:
    pattern: str
    kind: ExternalKind
    description: str
    resolved: bool

    def __post_init__(self):
        re.compile(self.pattern)

    @property
    def regex(self) -> re.Pattern:
        return re.compile(self.pattern, re.IGNORECASE)


@dataclass(frozen=True)
class GazetteerEntry:
    term: str
    entity_type: str
    value: str  # canonical


def build_gazetteer(kb, type_map: dict[str, str]) -> tuple[GazetteerEntry, ...]:
    """Gazetteer terms from knowledge-graph node labels, per node-type mapping."""
    entries = []
    for node in kb.nodes.values():
        entity_type = type_map.get(node.type)
        if entity_type is None:
            continue
        label = str(node.attrs.get("label", node.id))
        entries.append(
            GazetteerEntry(
                term=label,
                entity_type=entity_type,
                value=canonicalize(entity_type, label),
            )
        )
    return tuple(sorted(entries, key=lambda e: (-len(e.term), e.entity_type, e.term)))


# --- intent recognition --------------------------------------------------------


def _require_user_text(u: Utterance) -> str:
    if u.speaker is not Speaker.USER:
        raise ValueError("only user utterances are analyzed")
    if not u.text.strip():
        raise EmptyUtterance("utterance text is empty")
    return u.text


def score_domain_nodes(
    text: str,
    hierarchy: IntentHierarchy,
    lexicon: Lexicon,
    history: ConversationHistory,
) -> dict[str, float]:
    """Additive rule score plus history bonus for every hierarchy node."""
    scores = {nid: 0.0 for nid in hierarchy.nodes}
    for rule in lexicon.rules:
        if rule.target_kind != TARGET_NODE or rule.target not in scores:
            continue
        if rule.regex.search(text):
            scores[rule.target] += rule.weight
    seen_types = {
        e.type for entity_set in history.entities for e in entity_set.entities
    }
    for nid, node in hierarchy.nodes.items():
        bonus = sum(1 for t in node.vocab if t in seen_types)
        if bonus and scores[nid] > 0:
            scores[nid] += lexicon.context_bonus_weight * bonus
    return scores


def recognize_intent(
    u: Utterance,
    hierarchy: IntentHierarchy,
    lexicon: Lexicon,
    history: ConversationHistory,
    masked: frozenset[str] = frozenset(),
    turn_index: int = 1,
) -> IntentResult:
    """Argmax over conversational categories and hierarchy nodes.

    Node ties break by shallower depth then lexicographic id. A best domain
    score below the floor leaves the domain absent; with no category rule
    matched, the conversational label falls back to the latest prior label,
    then to the turn-position default.
    """
    text = _require_user_text(u)
    if not hierarchy.nodes:
        raise EmptyHierarchy("intent hierarchy has no nodes")

    category_scores: dict[str, float] = {}
    for rule in lexicon.rules:
        if rule.target_kind != TARGET_CATEGORY:
            continue
        if rule.regex.search(text):
            category_scores[rule.target] = (
                category_scores.get(rule.target, 0.0) + rule.weight
            )
    if category_scores:
        best_cat_score = max(category_scores.values())
        conversational = next(
            c for c in lexicon.categories if category_scores.get(c) == best_cat_score
        )
    else:
        best_cat_score = 0.0
        prior = history.intents[-1].conversational if history.intents else None
        if prior is not None:
            conversational = prior
        else:
            conversational = (
                lexicon.opening_category if turn_index <= 1 else lexicon.followup_category
            )

    node_scores = score_domain_nodes(text, hierarchy, lexicon, history)
    visible = [
        (nid, s) for nid, s in node_scores.items() if nid not in masked and s > 0
    ]
    domain: Optional[str] = None
    best_node_score = 0.0
    if visible:
        best_node_score = max(s for _, s in visible)
        if best_node_score >= lexicon.domain_floor:
            winners = [nid for nid, s in visible if s == best_node_score]
            winners.sort(key=lambda nid: (hierarchy.depth(nid), nid))
            domain = winners[0]
    if domain is None:
        best_node_score = 0.0

    return IntentResult(
        conversational=conversational,
        domain=domain,
        score=max(best_cat_score, best_node_score),
        timestamp=u.timestamp,
        utterance_id=u.id,
    )


# --- entity extraction -----------------------------------------------------------


def _known_entities(history: ConversationHistory) -> dict[str, Entity]:
    known = {}
    for entity_set in history.entities:
        for e in entity_set.entities:
            known.setdefault(e.key, e)
    return known


def extract_entities(
    u: Utterance,
    history: ConversationHistory,
    gazetteer: Iterable[GazetteerEntry],
    lexicon: Lexicon,
    initial_priority: float = 0.5,
) -> EntitySet:
    """Gazetteer and pattern matches, canonicalized; repeat mentions of an
    entity already in the transcript logs return the existing record."""
    text = _require_user_text(u)

    spans: list[tuple[int, int, str, str]] = []  # (start, end, type, value)
    for entry in gazetteer:
        pattern = re.compile(rf"\b{re.escape(entry.term)}\b", re.IGNORECASE)
        for m in pattern.finditer(text):
            spans.append((m.start(), m.end(), entry.entity_type, entry.value))
    for rule in lexicon.rules:
        if rule.target_kind != TARGET_ENTITY:
            continue
        for m in rule.regex.finditer(text):
            raw = m.group(1) if m.groups() else m.group(0)
            spans.append(
                (m.start(), m.end(), rule.target, canonicalize(rule.target, raw))
            )

    # drop matches wholly contained in a longer match of the same type
    spans.sort(key=lambda s: (s[0], -(s[1] - s[0]), s[2], s[3]))
    kept: list[tuple[int, int, str, str]] = []
    for span in spans:
        start, end, etype, _ = span
        if any(
            k_start <= start and end <= k_end and k_type == etype and (k_start, k_end) != (start, end)
            for k_start, k_end, k_type, _ in kept
        ):
            continue
        kept.append(span)

    known = _known_entities(history)
    out: list[Entity] = []
    seen_keys: set[str] = set()
    for _, _, etype, value in kept:
        key = f"{etype}:{value}"
        if key in seen_keys:
            continue
        seen_keys.add(key)
        existing = known.get(key)
        if existing is not None:
            out.append(existing)
        else:
            out.append(
                Entity(
                    type=etype,
                    value=value,
                    priority=initial_priority,
                    source_utterance_id=u.id,
                )
            )
    return EntitySet(utterance_id=u.id, entities=tuple(out))


# --- external milestone extraction ----------------------------------------------


def match_milestone_rules(
    text: str, rules: Iterable[MilestoneRule], source_utterance_id: str
) -> list[tuple[MilestoneRule, ExternalMilestone]]:
    """All rule hits for an utterance, as candidate milestone records."""
    hits = []
    for rule in rules:
        if rule.regex.search(text):
            hits.append(
                (
                    rule,
                    ExternalMilestone(
                        id=external_milestone_id(rule.kind, rule.description),
                        kind=rule.kind,
                        description=rule.description,
                        resolved=rule.resolved,
                        source_utterance_id=source_utterance_id if rule.resolved else None,
                    ),
                )
            )
    return hits


def extract_milestones(
    u: Utterance,
    state: Optional[DialogueState],
    history: ConversationHistory,
    logged: Iterable[ExternalMilestone],
    rules: Iterable[MilestoneRule],
) -> tuple[ExternalMilestone, ...]:
    """New external milestones only: hits already logged (by kind and
    canonical description) are suppressed."""
    text = _require_user_text(u)
    logged_keys = {m.dedup_key for m in logged}
    out: dict[str, ExternalMilestone] = {}
    for rule, milestone in match_milestone_rules(text, rules, u.id):
        if milestone.dedup_key in logged_keys or milestone.id in out:
            # a resolved phrasing outranks an unresolved one for the same item
            if milestone.id in out and milestone.resolved and not out[milestone.id].resolved:
                out[milestone.id] = milestone
            continue
        out[milestone.id] = milestone
    return tuple(out.values())


# --- provider seam ----------------------------------------------------------------


class NluProvider:
    """Base provider: declares capabilities; the engine refuses undeclared calls."""

    name = "base"
    capabilities: frozenset[str] = frozenset()

    def require(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise UnsupportedCapability(
                f"provider {self.name!r} does not support {capability}"
            )

    def recognize_intent(self, u, hierarchy, history, masked, turn_index):
        raise NotImplementedError

    def extract_entities(self, u, history):
        raise NotImplementedError

    def extract_milestones(self, u, state, history, logged):
        raise NotImplementedError

    def milestone_hits(self, u):
        """Hits including already-known items; lets the engine flip an
        unresolved milestone to resolved on a completed phrasing."""
        return ()


class RuleNluProvider(NluProvider):
    """Default deterministic provider backed by the lexicon and rule tables."""

    name = "rules"
    capabilities = frozenset({CAP_INTENT, CAP_ENTITY, CAP_MILESTONE})

    def __init__(self, lexicon: Lexicon, milestone_rules, gazetteer):
        self.lexicon = lexicon
        self.milestone_rules = tuple(milestone_rules)
        self.gazetteer = tuple(gazetteer)

    def recognize_intent(self, u, hierarchy, history, masked, turn_index):
        return recognize_intent(
            u, hierarchy, self.lexicon, history, masked=masked, turn_index=turn_index
        )

    def extract_entities(self, u, history):
        return extract_entities(u, history, self.gazetteer, self.lexicon)

    def extract_milestones(self, u, state, history, logged):
        return extract_milestones(u, state, history, logged, self.milestone_rules)

    def milestone_hits(self, u):
        """All rule hits including already-known items (for resolution updates)."""
        return match_milestone_rules(_require_user_text(u), self.milestone_rules, u.id)
