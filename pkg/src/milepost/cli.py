"""Command line entry points: serve, chat, replay, validate-fixtures."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from .engine import DialogueEngine
from .errors import MilepostError
from .fixtures import FixtureSet, default_fixture_dir
from .model import (
    EducationLevel,
    LanguageProficiency,
    SessionConfig,
    SessionStatus,
    UserProfile,
)
from .persona import load_script, run_persona

ENV_PREFIX = "MILEPOST_"


def config_from_env(base: SessionConfig | None = None) -> SessionConfig:
    """Session config with MILEPOST_* environment overrides applied."""
    base = base or SessionConfig()
    overrides = {}
    for name, caster in (
        ("w_progress", float),
        ("w_relevance", float),
        ("w_external", float),
        ("tau", float),
        ("drift_new_entity_ratio", float),
        ("repeat_state_limit", int),
        ("max_response_chunks", int),
    ):
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            overrides[name] = caster(raw)
    if not overrides:
        return base
    values = {
        "w_progress": base.w_progress,
        "w_relevance": base.w_relevance,
        "w_external": base.w_external,
        "tau": base.tau,
        "drift_new_entity_ratio": base.drift_new_entity_ratio,
        "repeat_state_limit": base.repeat_state_limit,
        "max_response_chunks": base.max_response_chunks,
    }
    values.update(overrides)
    return SessionConfig(**values)


def _fixture_options(fn):
    base = default_fixture_dir()
    fn = click.option(
        "--kb", type=click.Path(), default=str(base / "kb.jsonl"), show_default=True
    )(fn)
    fn = click.option(
        "--hierarchy",
        type=click.Path(),
        default=str(base / "hierarchy.yaml"),
        show_default=True,
    )(fn)
    fn = click.option(
        "--machine",
        type=click.Path(),
        default=str(base / "machine.yaml"),
        show_default=True,
    )(fn)
    fn = click.option(
        "--templates",
        type=click.Path(),
        default=str(base),
        show_default=True,
        help="Directory holding lexicon, rule, and template files.",
    )(fn)
    return fn


def _load_fixtures(kb, hierarchy, machine, templates) -> FixtureSet:
    try:
        return FixtureSet.load(kb, hierarchy, machine, templates)
    except MilepostError as exc:
        raise click.ClickException(str(exc))


@click.group()
def main():
    """Milestone-driven consultation dialogue engine."""


@main.command()
@_fixture_options
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--snapshot-dir",
    type=click.Path(),
    default="./snapshots",
    show_default=True,
    help="Directory for per-session snapshot files.",
)
@click.option("--ui-dir", type=click.Path(), default=None, help="Built UI to serve at /ui.")
def serve(kb, hierarchy, machine, templates, port, host, snapshot_dir, ui_dir):
    """Run the HTTP session service."""
    import uvicorn

    from .service import create_app

    fixtures = _load_fixtures(kb, hierarchy, machine, templates)
    app = create_app(
        fixtures, snapshot_dir, config_defaults=config_from_env(), ui_dir=ui_dir
    )
    uvicorn.run(app, host=host, port=port)


@main.command()
@_fixture_options
@click.option("--user-id", default="guest", show_default=True)
@click.option(
    "--education",
    type=click.Choice([e.value for e in EducationLevel]),
    default="Intermediate",
    show_default=True,
)
@click.option(
    "--language",
    type=click.Choice([p.value for p in LanguageProficiency]),
    default="Medium",
    show_default=True,
)
def chat(kb, hierarchy, machine, templates, user_id, education, language):
    """Interactive terminal session against the local engine."""
    fixtures = _load_fixtures(kb, hierarchy, machine, templates)
    engine = DialogueEngine(fixtures)
    profile = UserProfile(
        user_id=user_id,
        education_level=EducationLevel(education),
        language_proficiency=LanguageProficiency(language),
    )
    session = engine.create_session("chat", profile, config_from_env())
    click.echo("Type your message ('/quit' to exit).")
    while session.status is SessionStatus.ACTIVE:
        try:
            text = click.prompt("you", prompt_suffix="> ")
        except (EOFError, click.Abort):
            break
        if text.strip() in ("/quit", "/exit"):
            break
        if not text.strip():
            continue
        outcome = engine.step(session, text)
        for utterance in outcome.system_utterances:
            click.echo(f"advisor> {utterance.text}")
        if outcome.decisions.drift_flags:
            click.echo(f"[flags: {', '.join(outcome.decisions.drift_flags)}]")
    click.echo(f"[session {session.status.value.lower()}]")


@main.command()
@_fixture_options
@click.option("--script", type=click.Path(exists=True), required=True)
def replay(kb, hierarchy, machine, templates, script):
    """Run a persona script and report each assertion; nonzero exit on failure."""
    fixtures = _load_fixtures(kb, hierarchy, machine, templates)
    try:
        persona = load_script(script)
        report = run_persona(persona, fixtures, config=config_from_env())
    except MilepostError as exc:
        raise click.ClickException(str(exc))
    for line in report.lines():
        click.echo(line)
    if not report.ok:
        sys.exit(1)


@main.command(name="validate-fixtures")
@_fixture_options
def validate_fixtures(kb, hierarchy, machine, templates):
    """Load and validate all fixture files, reporting the first error."""
    fixtures = _load_fixtures(kb, hierarchy, machine, templates)
    click.echo(
        "ok: "
        f"{len(fixtures.kb.nodes)} nodes, {len(fixtures.kb.edges)} edges, "
        f"{len(fixtures.hierarchy.nodes)} hierarchy nodes, "
        f"{len(fixtures.machine_states)} states, "
        f"{len(fixtures.machine_transitions)} transitions"
    )


if __name__ == "__main__":
    main()
