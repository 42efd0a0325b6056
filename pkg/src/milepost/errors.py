"""Exception hierarchy for the milepost engine."""


class MilepostError(Exception):
    """Base class for all engine errors."""


# --- history / model ---------------------------------------------------


class NonMonotonicTimestamp(MilepostError):
    """An utterance timestamp did not strictly increase along the transcript."""


class AlternationViolation(MilepostError):
    """Transcript speakers must strictly alternate user/system."""


class DanglingReference(MilepostError):
    """A record referenced an id that does not exist in the session registry."""


class InvalidWeights(MilepostError):
    """Priority weights must be non-negative and sum to 1."""


# --- NLU ----------------------------------------------------------------


class EmptyUtterance(MilepostError):
    pass


class EmptyHierarchy(MilepostError):
    pass


class UnsupportedCapability(MilepostError):
    """The provider was asked for a capability it did not declare."""


class ProviderError(MilepostError):
    """An NLU provider failed; the turn was rolled back and is safe to retry."""


# --- knowledge store -----------------------------------------------------


class SchemaMismatch(MilepostError):
    """A query pattern referenced a type or relation the graph does not have."""


class NoTemplate(MilepostError):
    """No query template is registered for the intent or any of its ancestors."""


class NothingToExpand(MilepostError):
    pass


class NothingToRefine(MilepostError):
    pass


# --- response generation --------------------------------------------------


class MissingTemplate(MilepostError):
    pass


class SlotUnfilled(MilepostError):
    """A response template slot had no fact value or context entity to fill it."""


class EmptyMissingSet(MilepostError):
    pass


class ChunkOverflow(MilepostError):
    """Rendered response exceeded the chunk count or size bounds."""


# --- service / fixtures -----------------------------------------------------


class SessionNotActive(MilepostError):
    pass


class UnknownSession(MilepostError):
    pass


class FixtureLoadError(MilepostError):
    """A fixture file failed validation; carries file and line when known."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ScriptParseError(MilepostError):
    pass
