"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CogrecError(Exception):
    """Base class for all package errors."""


# -- working memory ---------------------------------------------------------

class VariableInWM(CogrecError):
    """A rule variable was stored where only ground values are legal."""


class UnknownTimetag(CogrecError):
    """Referenced timetag does not name a live working-memory element."""


class FrozenMemory(CogrecError):
    """Mutation attempted on an immutable snapshot."""


# -- rule DSL ---------------------------------------------------------------

class RuleSyntaxError(CogrecError):
    """Text does not conform to the rule grammar."""

    def __init__(self, message: str, line: int, col: int, expected: str = ""):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col
        self.expected = expected


class ValidationError(CogrecError):
    """Structurally parsed rule violates a static constraint.

    ``reason`` is one of: UnboundVariable, DisconnectedCondition,
    DuplicateName, EmptyActions, MissingRootCondition.
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class AllLinesRejected(CogrecError):
    """Non-empty bootstrap rule text yielded zero parsable rules."""


# -- rule engine ------------------------------------------------------------

class DuplicateName(CogrecError):
    """A production with this name is already registered."""


class CycleLimitExceeded(CogrecError):
    """Decision cycles exceeded the configured per-session limit."""

    def __init__(self, limit: int):
        super().__init__(f"decision cycle limit of {limit} exceeded")
        self.limit = limit


# -- chunk compilation ------------------------------------------------------

class UngroundedCondition(CogrecError):
    """A cited condition triple is absent from the impasse snapshot."""

    def __init__(self, triple: str):
        super().__init__(f"condition not grounded in snapshot: {triple}")
        self.triple = triple


class EmptyConditions(CogrecError):
    """A chunk must cite at least one condition."""


# -- bridge -----------------------------------------------------------------

class EmptyContext(CogrecError):
    """Snapshot carries no goal element; nothing to query about."""


class ParseFailure(CogrecError):
    """Model response does not follow the response grammar.

    ``reason`` is one of: NoRecommendLine, UnknownItem, NoConditions,
    UnknownAttribute, BadConditionLine, NoRankLine.
    """

    def __init__(self, reason: str, offending_lines: list[str] | None = None):
        lines = offending_lines or []
        suffix = f" ({'; '.join(lines)})" if lines else ""
        super().__init__(f"{reason}{suffix}")
        self.reason = reason
        self.offending_lines = lines


# -- gateway ----------------------------------------------------------------

class ProviderUnavailable(CogrecError):
    """Provider could not be reached after the configured retries."""


class ProviderTimeout(CogrecError):
    """Provider did not answer within the configured timeout."""


class BootstrapEmpty(CogrecError):
    """Bootstrap produced zero rules; agent cannot start in bootstrap mode."""


# -- dataset ----------------------------------------------------------------

class FormatError(CogrecError):
    """Malformed record in a dataset file."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyAfterFilter(CogrecError):
    """Interaction filtering removed every user or item."""
