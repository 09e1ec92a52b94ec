"""Symbol values stored in working memory and mentioned in rules.

Four kinds exist: identifiers (opaque object handles such as ``u1``),
atoms (interned string constants such as ``sci-fi``), 64-bit float
numbers, and variables (``?g`` / ``<g>``). Variables are legal only
inside rules, never inside working memory.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass

__all__ = [
    "Identifier",
    "Atom",
    "Number",
    "Variable",
    "SymbolValue",
    "GroundValue",
    "render_value",
]


@dataclass(frozen=True, slots=True)
class Identifier:
    """Opaque handle for an object in working memory, e.g. ``u1``."""

    name: str

    def __str__(self) -> str:
        return f"<{self.name}>"


@dataclass(frozen=True, slots=True)
class Atom:
    """Interned string constant; comparison is case-sensitive exact match."""

    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", sys.intern(self.text))

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True, slots=True, eq=False)
class Number:
    """64-bit float. Equality and hashing use the exact bit pattern,
    so NaN == NaN and 0.0 != -0.0 here."""

    value: float

    def _bits(self) -> bytes:
        return struct.pack("<d", self.value)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Number) and self._bits() == other._bits()

    def __hash__(self) -> int:
        return hash(self._bits())

    def __str__(self) -> str:
        return render_number(self.value)


@dataclass(frozen=True, slots=True)
class Variable:
    """Rule variable, written ``?g`` or ``<g>`` in rule text."""

    name: str

    def __str__(self) -> str:
        return f"<{self.name}>"


SymbolValue = Identifier | Atom | Number | Variable
GroundValue = Identifier | Atom | Number


def render_number(value: float) -> str:
    """Minimal decimal form: integral floats drop the trailing ``.0``."""
    if value != value or value in (float("inf"), float("-inf")):
        return repr(value)
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def render_value(value: SymbolValue) -> str:
    """Dump-format rendering: identifiers in angle brackets, atoms bare,
    numbers in minimal decimal form."""
    return str(value)
