"""Working memory: a journaled, indexed store of attribute triples.

Each element (WME) is an ``(identifier ^attribute value)`` triple with a
unique, monotonically increasing timetag. Triples obey set semantics:
re-adding an existing triple is a no-op returning the original timetag.
An attribute may hold many values for the same identifier.

Every mutation is journaled with the decision-cycle number so a memory
can be reconstructed exactly by replaying its journal, and so traces can
report per-cycle deltas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import FrozenMemory, UnknownTimetag, VariableInWM
from .symbols import Atom, GroundValue, Identifier, Variable, render_value

__all__ = ["WME", "JournalEvent", "WorkingMemory"]


@dataclass(frozen=True, slots=True)
class WME:
    """One working-memory element."""

    id: Identifier
    attribute: Atom
    value: GroundValue
    timetag: int

    def triple(self) -> tuple[Identifier, Atom, GroundValue]:
        return (self.id, self.attribute, self.value)

    def render(self) -> str:
        return f"({render_value(self.id)} ^{self.attribute.text} {render_value(self.value)})"


@dataclass(frozen=True, slots=True)
class JournalEvent:
    """Add or Remove event; ``cycle`` is the decision cycle it happened in."""

    kind: str  # "add" | "remove"
    wme: WME
    cycle: int


class WorkingMemory:
    """Single-writer triple store with id / (id, attribute) / attribute
    indexes. Snapshots are immutable and safe to share across threads."""

    def __init__(self) -> None:
        self._by_timetag: dict[int, WME] = {}
        self._by_triple: dict[tuple, int] = {}
        self._by_id: dict[Identifier, set[int]] = {}
        self._by_id_attr: dict[tuple[Identifier, Atom], set[int]] = {}
        self._by_attr: dict[Atom, set[int]] = {}
        self._next_timetag = 1
        self._id_counters: dict[str, int] = {}
        self._journal: list[JournalEvent] = []
        self._frozen = False
        self.current_cycle = 0

    # -- identifiers --------------------------------------------------------

    def new_id(self, prefix: str) -> Identifier:
        """Mint a fresh identifier ``<prefix><n>``; the counter lives here."""
        self._check_mutable()
        n = self._id_counters.get(prefix, 0) + 1
        self._id_counters[prefix] = n
        return Identifier(f"{prefix}{n}")

    # -- mutation ------------------------------------------------------------

    def add(self, id: Identifier, attr: Atom, value: GroundValue) -> int:
        """Insert a triple; returns its timetag. Re-adding an existing
        triple returns the existing timetag and leaves the journal alone."""
        self._check_mutable()
        if isinstance(value, Variable):
            raise VariableInWM(f"variable {value} cannot be stored in working memory")
        key = (id, attr, value)
        existing = self._by_triple.get(key)
        if existing is not None:
            return existing
        tt = self._next_timetag
        self._next_timetag += 1
        wme = WME(id, attr, value, tt)
        self._insert(wme)
        self._journal.append(JournalEvent("add", wme, self.current_cycle))
        return tt

    def remove(self, timetag: int) -> WME:
        """Remove the element with this timetag."""
        self._check_mutable()
        wme = self._by_timetag.get(timetag)
        if wme is None:
            raise UnknownTimetag(f"no element with timetag {timetag}")
        self._delete(wme)
        self._journal.append(JournalEvent("remove", wme, self.current_cycle))
        return wme

    def remove_triple(self, id: Identifier, attr: Atom, value: GroundValue) -> WME | None:
        """Remove by content if present; returns the removed element."""
        tt = self._by_triple.get((id, attr, value))
        return self.remove(tt) if tt is not None else None

    # -- queries -------------------------------------------------------------

    def query(
        self,
        id: Identifier | None = None,
        attr: Atom | None = None,
        value: GroundValue | None = None,
    ) -> list[WME]:
        """All elements matching the bound fields, ordered by timetag.
        ``None`` fields are wildcards."""
        if id is not None and attr is not None:
            tags: Iterable[int] = self._by_id_attr.get((id, attr), ())
        elif id is not None:
            tags = self._by_id.get(id, ())
        elif attr is not None:
            tags = self._by_attr.get(attr, ())
        else:
            tags = self._by_timetag.keys()
        out = [self._by_timetag[t] for t in sorted(tags)]
        if value is not None:
            out = [w for w in out if w.value == value]
        return out

    def contains(self, id: Identifier, attr: Atom, value: GroundValue) -> bool:
        return (id, attr, value) in self._by_triple

    def values_of(self, id: Identifier, attr: Atom) -> list[GroundValue]:
        return [w.value for w in self.query(id=id, attr=attr)]

    def first_value(self, id: Identifier, attr: Atom) -> GroundValue | None:
        vals = self.values_of(id, attr)
        return vals[0] if vals else None

    def attributes_present(self) -> set[Atom]:
        return {a for a in self._by_attr if self._by_attr[a]}

    def __len__(self) -> int:
        return len(self._by_timetag)

    def __iter__(self):
        return iter(self.elements())

    def elements(self) -> list[WME]:
        return [self._by_timetag[t] for t in sorted(self._by_timetag)]

    @property
    def journal(self) -> tuple[JournalEvent, ...]:
        return tuple(self._journal)

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- snapshot and replay ---------------------------------------------------

    def snapshot(self) -> "WorkingMemory":
        """Immutable copy, independent of later mutations of the source."""
        snap = WorkingMemory.__new__(WorkingMemory)
        snap._by_timetag = dict(self._by_timetag)
        snap._by_triple = dict(self._by_triple)
        snap._by_id = {k: set(v) for k, v in self._by_id.items()}
        snap._by_id_attr = {k: set(v) for k, v in self._by_id_attr.items()}
        snap._by_attr = {k: set(v) for k, v in self._by_attr.items()}
        snap._next_timetag = self._next_timetag
        snap._id_counters = dict(self._id_counters)
        snap._journal = list(self._journal)
        snap._frozen = True
        snap.current_cycle = self.current_cycle
        return snap

    @classmethod
    def replay(cls, journal: Iterable[JournalEvent]) -> "WorkingMemory":
        """Reconstruct a memory from a journal; timetags are preserved."""
        wm = cls()
        for ev in journal:
            wm.current_cycle = ev.cycle
            if ev.kind == "add":
                wm._insert(ev.wme)
                wm._journal.append(ev)
                wm._next_timetag = max(wm._next_timetag, ev.wme.timetag + 1)
            elif ev.kind == "remove":
                wm._delete(ev.wme)
                wm._journal.append(ev)
            else:
                raise ValueError(f"unknown journal event kind {ev.kind!r}")
        return wm

    def dump(self) -> str:
        """One triple per line, sorted by timetag."""
        return "\n".join(w.render() for w in self.elements())

    # -- internals -------------------------------------------------------------

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrozenMemory("snapshot is immutable")

    def _insert(self, wme: WME) -> None:
        self._by_timetag[wme.timetag] = wme
        self._by_triple[wme.triple()] = wme.timetag
        self._by_id.setdefault(wme.id, set()).add(wme.timetag)
        self._by_id_attr.setdefault((wme.id, wme.attribute), set()).add(wme.timetag)
        self._by_attr.setdefault(wme.attribute, set()).add(wme.timetag)

    def _delete(self, wme: WME) -> None:
        if self._by_timetag.get(wme.timetag) is None:
            raise UnknownTimetag(f"no element with timetag {wme.timetag}")
        del self._by_timetag[wme.timetag]
        del self._by_triple[wme.triple()]
        self._by_id[wme.id].discard(wme.timetag)
        self._by_id_attr[(wme.id, wme.attribute)].discard(wme.timetag)
        self._by_attr[wme.attribute].discard(wme.timetag)
