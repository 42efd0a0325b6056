"""Milestone-driven consultation dialogue engine."""

from ._match import BACKEND_NAME as MATCH_BACKEND
from .engine import DialogueEngine, Session, TurnOutcome
from .fixtures import FixtureSet, load_default_fixtures
from .model import SessionConfig, UserProfile

__version__ = "0.1.0"

__all__ = [
    "DialogueEngine",
    "FixtureSet",
    "MATCH_BACKEND",
    "Session",
    "SessionConfig",
    "TurnOutcome",
    "UserProfile",
    "load_default_fixtures",
    "__version__",
]
