"""Chunk compilation: turn an impasse resolution into a permanent,
generalized production, and deduplicate against procedural memory.

A raw chunk is the ground causal pair extracted from a model response:
condition triples that must all exist in the impasse snapshot, plus the
proposed operator. Compilation variableizes identifiers and the atoms
shared by two or more cited triples (the pattern that makes the rule
transfer to new users and items), prepends the root-state and linkage
conditions that connect it, and attaches a numeric-indifferent score so
the learned rule decides future selections outright.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .dsl import (
    BindTest, Chunked, ConditionPattern, EqualsTest, NumericIndifferent,
    Production, ProposeOperator, lower_actions, serialize_production,
    validate_production,
)
from .engine import ProceduralMemory
from .errors import DuplicateName, EmptyConditions, UngroundedCondition
from .memory import WorkingMemory
from .symbols import Atom, GroundValue, Identifier, Number, Variable

__all__ = [
    "ChunkRaw", "ChunkOutcome", "build_chunk", "internalize",
    "canonical_form", "alpha_equivalent", "chunk_file_entry",
]

Triple = tuple[Identifier, Atom, GroundValue]

STATE_FLAG = Atom("state-is-valid")
TRUE_ATOM = Atom("true")


@dataclass(frozen=True)
class ChunkRaw:
    """Ground causal pair: cited condition triples and the proposed
    operator, plus the model's stated reasons for the explanation trail."""

    conditions: tuple[Triple, ...]
    operator_name: Atom
    parameters: tuple[tuple[Atom, GroundValue], ...]
    impasse_id: str
    justification_text: str = ""

    def item_id(self) -> Identifier | None:
        for attr, val in self.parameters:
            if attr.text == "item" and isinstance(val, Identifier):
                return val
        return None


@dataclass(frozen=True, slots=True)
class ChunkOutcome:
    status: str  # "added" | "duplicate"
    name: str    # the registered or pre-existing production name

    @property
    def added(self) -> bool:
        return self.status == "added"


def check_grounding(raw: ChunkRaw, snapshot: WorkingMemory) -> None:
    """Hallucination guard: every cited triple must exist in the snapshot."""
    if not raw.conditions:
        raise EmptyConditions(f"chunk from {raw.impasse_id} cites no conditions")
    for id_, attr, value in raw.conditions:
        if not snapshot.contains(id_, attr, value):
            raise UngroundedCondition(
                f"({id_} ^{attr.text} {value})")


def build_chunk(raw: ChunkRaw, wm_snapshot: WorkingMemory,
                default_score: float = 0.8) -> Production:
    """Compile a grounded raw chunk into a generalized production.

    Identifiers cited in conditions become variables; the session user
    gets ``<u>``, the recommended item ``<i>``. Atom values occurring in
    two or more cited triples generalize to ``?g``-style variables;
    singleton atoms stay literal. The result is rooted at the state via
    the ``state-is-valid`` / ``^user`` / ``^candidate-item`` linkage so
    it matches future working memories, and carries a numeric score so
    it wins selection without another model call.
    """
    check_grounding(raw, wm_snapshot)

    item = raw.item_id()
    cond_ids: list[Identifier] = []
    for id_, _, value in raw.conditions:
        if id_ not in cond_ids:
            cond_ids.append(id_)
        if isinstance(value, Identifier) and value not in cond_ids:
            cond_ids.append(value)

    id_map: dict[Identifier, Variable] = {}
    if item is not None and item in cond_ids:
        id_map[item] = Variable("i")
    others = [i for i in cond_ids if i not in id_map]
    for n, ident in enumerate(others):
        id_map[ident] = Variable("u" if n == 0 else f"x{n}")

    atom_counts: dict[Atom, int] = {}
    for _, _, value in raw.conditions:
        if isinstance(value, Atom):
            atom_counts[value] = atom_counts.get(value, 0) + 1
    atom_map: dict[Atom, Variable] = {}
    g_index = 0
    for _, _, value in raw.conditions:
        if isinstance(value, Atom) and atom_counts[value] >= 2 and value not in atom_map:
            g_index += 1
            atom_map[value] = Variable("g" if g_index == 1 else f"g{g_index}")

    def value_test(value: GroundValue):
        if isinstance(value, Identifier):
            mapped = id_map.get(value)
            return BindTest(mapped) if mapped is not None else EqualsTest(value)
        if isinstance(value, Atom) and value in atom_map:
            return BindTest(atom_map[value])
        return EqualsTest(value)

    s = Variable("s")
    conditions: list[ConditionPattern] = [
        ConditionPattern(s, STATE_FLAG, EqualsTest(TRUE_ATOM))]
    user_var = id_map.get(others[0]) if others else None
    if user_var is not None:
        conditions.append(ConditionPattern(s, Atom("user"), BindTest(user_var)))
    if item is not None:
        item_term = id_map.get(item)
        conditions.append(ConditionPattern(
            s, Atom("candidate-item"),
            BindTest(item_term) if item_term is not None else EqualsTest(item)))
    for id_, attr, value in raw.conditions:
        conditions.append(ConditionPattern(id_map[id_], attr, value_test(value)))

    params = []
    for attr, value in raw.parameters:
        if isinstance(value, Identifier) and value in id_map:
            params.append((attr, id_map[value]))
        elif isinstance(value, Atom) and value in atom_map:
            params.append((attr, atom_map[value]))
        else:
            params.append((attr, value))
    action = ProposeOperator(Variable("o"), raw.operator_name, tuple(params),
                             NumericIndifferent(Number(default_score)))

    prod = Production(
        name=f"chunk-{raw.impasse_id}",
        conditions=tuple(conditions),
        actions=(action,),
        provenance=Chunked(raw.impasse_id),
        creation_cycle=wm_snapshot.current_cycle,
    )
    validate_production(prod)
    return prod


# ---------------------------------------------------------------------------
# Alpha-equivalence
# ---------------------------------------------------------------------------

def _cond_shape(c: ConditionPattern) -> tuple:
    attr = ("var",) if isinstance(c.attribute, Variable) else ("atom", c.attribute.text)
    t = c.value_test
    if isinstance(t, EqualsTest):
        shape = ("eq", type(t.value).__name__, str(t.value))
    elif isinstance(t, BindTest):
        shape = ("bind",)
    else:
        shape = ("rel", t.op, str(t.number))
    idt = ("var",) if isinstance(c.id_test, Variable) else ("id", c.id_test.name)
    return (c.negated, not c.state_marked, idt, attr, shape)


def _render_with(c: ConditionPattern, names: dict[str, str]) -> str:
    def v(x):
        if isinstance(x, Variable):
            return names.get(x.name, "?")
        return str(x)

    t = c.value_test
    if isinstance(t, EqualsTest):
        vt = str(t.value)
    elif isinstance(t, BindTest):
        vt = v(t.var)
    else:
        vt = f"{{{t.op} {t.number}}}"
    neg = "-" if c.negated else ""
    st = "state " if c.state_marked else ""
    attr = v(c.attribute) if isinstance(c.attribute, Variable) else c.attribute.text
    return f"{neg}({st}{v(c.id_test)} ^{attr} {vt})"


def canonical_form(p: Production, ignore_preferences: bool = True) -> str:
    """Order- and renaming-insensitive form: sort conditions by shape,
    rename variables in traversal order, refine once by re-sorting on the
    renamed text. Equal canonical strings mean alpha-equivalent rules."""
    conds = sorted(p.conditions, key=_cond_shape)
    actions = lower_actions(p)

    def assign(conds_order) -> dict[str, str]:
        names: dict[str, str] = {}

        def see(x):
            if isinstance(x, Variable) and x.name not in names:
                names[x.name] = f"v{len(names) + 1}"

        for c in conds_order:
            see(c.id_test)
            see(c.attribute)
            if isinstance(c.value_test, BindTest):
                see(c.value_test.var)
        for a in actions:
            see(a.id_term)
            see(a.value_term)
        return names

    for _ in range(2):
        names = assign(conds)
        conds = sorted(conds, key=lambda c: _render_with(c, names))
    names = assign(conds)

    lines = [_render_with(c, names) for c in conds]
    for a in actions:
        idt = names.get(a.id_term.name, "?") if isinstance(a.id_term, Variable) else str(a.id_term)
        val = names.get(a.value_term.name, "?") if isinstance(a.value_term, Variable) \
            else str(a.value_term)
        pref = ""
        if not ignore_preferences and a.preference is not None:
            pref = " " + a.preference.token()
        lines.append(f"=> ({idt} ^{a.attribute.text} {val}{pref})")
    return "\n".join(lines)


def alpha_equivalent(p1: Production, p2: Production,
                     ignore_preferences: bool = True) -> bool:
    """Equal up to variable renaming and condition order; preference
    annotations are selection metadata and ignored by default."""
    return canonical_form(p1, ignore_preferences) == canonical_form(p2, ignore_preferences)


# ---------------------------------------------------------------------------
# Internalization
# ---------------------------------------------------------------------------

def internalize(pm: ProceduralMemory, p: Production,
                lock: threading.Lock | None = None) -> ChunkOutcome:
    """Register unless an alpha-equivalent production already exists."""
    canonical = canonical_form(p)
    if lock is not None:
        with lock:
            return _internalize(pm, p, canonical)
    return _internalize(pm, p, canonical)


def _internalize(pm: ProceduralMemory, p: Production, canonical: str) -> ChunkOutcome:
    existing = pm.find_canonical(canonical)
    if existing is not None:
        return ChunkOutcome("duplicate", existing)
    if p.name in pm:
        raise DuplicateName(p.name)
    pm.register(p, canonical)
    return ChunkOutcome("added", p.name)


def chunk_file_entry(p: Production, impasse_id: str, cycle: int) -> str:
    """Rule-file snippet recording a learned chunk with its provenance."""
    return f"# chunked from impasse {impasse_id} at cycle {cycle}\n{serialize_production(p)}\n"
