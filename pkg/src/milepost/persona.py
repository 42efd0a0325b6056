"""Scripted-persona harness: drives a fresh session through a YAML script
and checks per-turn assertions against what the engine actually did."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .engine import DialogueEngine, TurnOutcome
from .errors import ScriptParseError
from .model import (
    EducationLevel,
    ExternalKind,
    LanguageProficiency,
    RegistrationFact,
    SessionConfig,
    UserProfile,
)


@dataclass(frozen=True)
class TurnExpectation:
    state: Optional[str] = None
    status: Optional[str] = None
    fragments: tuple[str, ...] = ()
    not_fragments: tuple[str, ...] = ()
    flags: Optional[tuple[str, ...]] = None
    external: tuple[dict, ...] = ()
    clarifications: Optional[int] = None
    retrievals: Optional[int] = None


@dataclass(frozen=True)
class PersonaTurn:
    user: str
    expect: TurnExpectation


@dataclass(frozen=True)
class PersonaScript:
    name: str
    profile: UserProfile
    turns: tuple[PersonaTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ScriptParseError(f"script {self.name!r} has no turns")


@dataclass
class AssertionResult:
    turn: int
    check: str
    passed: bool
    expected: object
    actual: object


@dataclass
class PersonaReport:
    script: str
    results: list[AssertionResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            mark = "PASS" if r.passed else "FAIL"
            line = f"[{mark}] turn {r.turn} {r.check}: expected {r.expected!r}"
            if not r.passed:
                line += f", actual {r.actual!r}"
            out.append(line)
        verdict = "OK" if self.ok else "FAILED"
        out.append(f"{self.script}: {verdict} ({len(self.results)} assertions)")
        return out


def load_script(path) -> PersonaScript:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ScriptParseError(f"{path}: {exc}")
    if not isinstance(data, dict):
        raise ScriptParseError(f"{path}: script must be a mapping")
    try:
        raw_profile = data["profile"]
        profile = UserProfile(
            user_id=str(raw_profile["user_id"]),
            education_level=EducationLevel(raw_profile["education_level"]),
            language_proficiency=LanguageProficiency(raw_profile["language_proficiency"]),
            registration_facts=tuple(
                RegistrationFact(
                    kind=ExternalKind(f["kind"]),
                    description=str(f["description"]),
                    resolved=bool(f.get("resolved", True)),
                )
                for f in raw_profile.get("registration_facts", [])
            ),
        )
        turns = []
        for raw_turn in data["turns"]:
            raw_expect = raw_turn.get("expect", {}) or {}
            flags = raw_expect.get("flags")
            turns.append(
                PersonaTurn(
                    user=str(raw_turn["user"]),
                    expect=TurnExpectation(
                        state=raw_expect.get("state"),
                        status=raw_expect.get("status"),
                        fragments=tuple(raw_expect.get("fragments", ())),
                        not_fragments=tuple(raw_expect.get("not_fragments", ())),
                        flags=None if flags is None else tuple(flags),
                        external=tuple(raw_expect.get("external", ())),
                        clarifications=raw_expect.get("clarifications"),
                        retrievals=raw_expect.get("retrievals"),
                    ),
                )
            )
        return PersonaScript(
            name=str(data.get("name", path.stem)), profile=profile, turns=tuple(turns)
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScriptParseError(f"{path}: {exc}")


def run_persona(
    script: PersonaScript,
    fixtures,
    config: Optional[SessionConfig] = None,
    session_id: Optional[str] = None,
) -> PersonaReport:
    engine = DialogueEngine(fixtures)
    session = engine.create_session(
        session_id or f"persona-{script.name}", script.profile, config
    )
    report = PersonaReport(script=script.name)
    for index, turn in enumerate(script.turns, start=1):
        outcome = engine.step(session, turn.user)
        _check_turn(report, index, turn.expect, outcome, session)
    return report


def _check_turn(report, index, expect, outcome: TurnOutcome, session) -> None:
    def record(check, passed, expected, actual):
        report.results.append(AssertionResult(index, check, passed, expected, actual))

    if expect.state is not None:
        record(
            "state",
            session.current_state_id == expect.state,
            expect.state,
            session.current_state_id,
        )
    if expect.status is not None:
        record(
            "status",
            session.status.value == expect.status,
            expect.status,
            session.status.value,
        )
    all_text = "\n".join(u.text for u in outcome.system_utterances)
    for fragment in expect.fragments:
        record("fragment", fragment in all_text, fragment, all_text)
    for fragment in expect.not_fragments:
        record("not-fragment", fragment not in all_text, f"absent: {fragment}", all_text)
    if expect.flags is not None:
        record(
            "flags",
            tuple(outcome.decisions.drift_flags) == tuple(expect.flags),
            tuple(expect.flags),
            tuple(outcome.decisions.drift_flags),
        )
    for item in expect.external:
        actual = session.external.get(item["id"])
        ok = actual is not None and (
            "resolved" not in item or actual.resolved == item["resolved"]
        )
        record(
            "external",
            ok,
            item,
            None
            if actual is None
            else {"id": actual.id, "resolved": actual.resolved},
        )
    if expect.clarifications is not None:
        record(
            "clarifications",
            outcome.decisions.clarifications == expect.clarifications,
            expect.clarifications,
            outcome.decisions.clarifications,
        )
    if expect.retrievals is not None:
        record(
            "retrievals",
            outcome.decisions.retrievals == expect.retrievals,
            expect.retrievals,
            outcome.decisions.retrievals,
        )
