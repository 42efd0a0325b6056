"""Deterministic response rendering: per-axis templates at three readability
levels, chunked into bite-sized pieces, plus clarification questions.

Every projected fact value is injected verbatim, so the rendered response
cannot state a fact the retrieval did not return.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .errors import ChunkOverflow, EmptyMissingSet, MissingTemplate, SlotUnfilled
from .model import (
    EducationLevel,
    EntityRequirement,
    ExternalKind,
    ExternalMilestone,
    LanguageProficiency,
    UserProfile,
)
from .taxonomy import MONEY_TYPES, format_money

LEVELS = ("Basic", "Intermediate", "Advanced")

MAX_CHUNK_CHARS = 400

_SLOT = re.compile(r"\{([a-z_][a-z0-9_]*)\}")
_SENTENCE_SPLIT = re.compile(r"(?<=[.?!])\s+")


@dataclass(frozen=True)
class LevelVariant:
    text: str
    followup: Optional[str] = None
    empty_text: Optional[str] = None


@dataclass(frozen=True)
class ResponseTemplate:
    id: str
    axis: str
    level_variants: Mapping[str, LevelVariant]
    max_slots: int = 8
    defaults: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        missing = [lvl for lvl in LEVELS if lvl not in self.level_variants]
        if missing:
            raise ValueError(f"template {self.id}: missing levels {missing}")
        for lvl, variant in self.level_variants.items():
            slots = set(_SLOT.findall(variant.text))
            if variant.followup:
                slots |= set(_SLOT.findall(variant.followup))
            if len(slots) > self.max_slots:
                raise ValueError(
                    f"template {self.id}/{lvl}: {len(slots)} slots exceed "
                    f"max_slots={self.max_slots}"
                )


@dataclass(frozen=True)
class JargonList:
    """Terms Basic-level text may only use alongside a glossary expansion."""

    glossary: tuple[tuple[str, str], ...]  # term -> plain-language expansion

    def violations(self, text: str) -> list[str]:
        found = []
        lowered = text.casefold()
        for term, expansion in self.glossary:
            if re.search(rf"\b{re.escape(term.casefold())}\b", lowered):
                if expansion.casefold() not in lowered:
                    found.append(term)
        return found


def validate_basic_variants(templates: Iterable[ResponseTemplate], jargon: JargonList):
    """Reject templates whose Basic text uses jargon without its expansion."""
    for template in templates:
        variant = template.level_variants["Basic"]
        for text in (variant.text, variant.followup or "", variant.empty_text or ""):
            bad = jargon.violations(text)
            if bad:
                raise ValueError(
                    f"template {template.id}: Basic variant uses jargon "
                    f"{bad} without glossary expansion"
                )


_EDU_RANK = {
    EducationLevel.BASIC: 0,
    EducationLevel.INTERMEDIATE: 1,
    EducationLevel.ADVANCED: 2,
}
_LANG_RANK = {
    LanguageProficiency.LOW: 0,
    LanguageProficiency.MEDIUM: 1,
    LanguageProficiency.HIGH: 2,
}


def readability_level(profile: UserProfile) -> str:
    """The more limiting of education and language proficiency wins."""
    rank = min(_EDU_RANK[profile.education_level], _LANG_RANK[profile.language_proficiency])
    return LEVELS[rank]


def _display(entity_type: str, canonical: str) -> str:
    if entity_type in MONEY_TYPES:
        return format_money(canonical)
    if entity_type == "Location":
        return canonical.title()
    return canonical


def build_context_slots(entities) -> dict[str, str]:
    """Slot values from accumulated entities, keyed by lowercase type name."""
    slots: dict[str, str] = {}
    ranked = sorted(entities, key=lambda e: (e.priority, e.value), reverse=True)
    for e in ranked:
        slots.setdefault(e.type.lower(), _display(e.type, e.value))
    return slots


def _fill(text: str, slots: Mapping[str, str], template_id: str) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots or slots[name] is None:
            raise SlotUnfilled(f"template {template_id}: no value for slot {{{name}}}")
        return str(slots[name])

    return _SLOT.sub(sub, text)


def _fact_slots(factsets) -> dict[str, str]:
    """Projected values keyed by short attribute name; multi-row values join
    with '; ' in row order."""
    slots: dict[str, list[str]] = {}
    for fs in factsets:
        for row in fs.rows:
            for projection, value in row.values:
                if value is None:
                    continue
                short = projection.split(".", 1)[-1]
                bucket = slots.setdefault(short, [])
                if str(value) not in bucket:
                    bucket.append(str(value))
    return {name: "; ".join(values) for name, values in slots.items()}


def chunk_text(text: str, max_chunks: int) -> list[str]:
    """Pack sentences into at most max_chunks chunks of <= 400 characters."""
    sentences = [s for s in _SENTENCE_SPLIT.split(text.strip()) if s]
    chunks: list[str] = []
    current = ""
    for sentence in sentences:
        if len(sentence) > MAX_CHUNK_CHARS:
            raise ChunkOverflow(f"sentence exceeds {MAX_CHUNK_CHARS} characters")
        if current and len(current) + 1 + len(sentence) <= MAX_CHUNK_CHARS:
            current = f"{current} {sentence}"
        else:
            if current:
                chunks.append(current)
            current = sentence
    if current:
        chunks.append(current)
    if len(chunks) > max_chunks:
        raise ChunkOverflow(f"{len(chunks)} chunks exceed limit {max_chunks}")
    return chunks


def generate_response(
    factsets,
    templates: Mapping[str, ResponseTemplate],
    profile: UserProfile,
    context_slots: Mapping[str, str],
    active_milestone_incomplete: bool,
    max_chunks: int,
) -> list[str]:
    """Render each axis FactSet at the profile's readability level and chunk.

    Ends with exactly one follow-up question while the active milestone is
    incomplete; otherwise the response carries no question.
    """
    level = readability_level(profile)
    pieces: list[str] = []
    followup: Optional[str] = None
    for fs in factsets:
        template = templates.get(fs.axis)
        if template is None:
            raise MissingTemplate(f"no response template for axis {fs.axis!r}")
        variant = template.level_variants[level]
        slots = dict(context_slots)
        slots.update(_fact_slots([fs]))
        if fs.empty:
            if variant.empty_text is None:
                raise MissingTemplate(
                    f"axis {fs.axis!r}: empty result and no empty-result variant"
                )
            pieces.append(_fill(variant.empty_text, slots, template.id))
            continue
        for key, default in template.defaults:
            slots.setdefault(key, default)
        pieces.append(_fill(variant.text, slots, template.id))
        if variant.followup:
            followup = _fill(variant.followup, slots, template.id)
    if active_milestone_incomplete and followup:
        pieces.append(followup)
    return chunk_text(" ".join(pieces), max_chunks)


def render_plain(
    template: ResponseTemplate,
    profile: UserProfile,
    context_slots: Mapping[str, str],
    max_chunks: int,
) -> list[str]:
    """Render a fact-free template (farewell, referral) from context slots."""
    variant = template.level_variants[readability_level(profile)]
    slots = dict(context_slots)
    for key, default in template.defaults:
        slots.setdefault(key, default)
    return chunk_text(_fill(variant.text, slots, template.id), max_chunks)


# --- clarifications -----------------------------------------------------------


@dataclass(frozen=True)
class ClarificationTable:
    """Deterministic question wording per entity type and external kind."""

    entity_questions: Mapping[str, str]  # entity type -> question with {label}
    external_questions: Mapping[str, str]  # ExternalKind value -> question
    fallback_question: str

    def for_requirement(self, req: EntityRequirement) -> str:
        wording = self.entity_questions.get(req.entity_type)
        if wording is None:
            return self.fallback_question.format(label=req.label.lower())
        return wording.format(label=req.label.lower())

    def for_external(self, m: ExternalMilestone) -> str:
        wording = self.external_questions[m.kind.value]
        return wording.format(label=m.description)


def get_clarification(
    missing,
    table: ClarificationTable,
) -> str:
    """One question covering the single highest-priority missing item.

    `missing` is an ordered sequence (highest priority first) of
    EntityRequirement or ExternalMilestone items.
    """
    items = list(missing)
    if not items:
        raise EmptyMissingSet("nothing to clarify")
    item = items[0]
    if isinstance(item, ExternalMilestone):
        return table.for_external(item)
    return table.for_requirement(item)
