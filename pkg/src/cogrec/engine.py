"""Rule engine: procedural memory, condition matching, preference
resolution, impasse detection and the five-phase decision cycle
(input, propose, select, apply, output).

Matching is an indexed join, condition by condition, left to right;
each condition pulls its candidate elements from the working-memory
indexes and extends the bindings found so far. Negated conditions
filter: they pass a binding only when no element matches under it.

Proposals with the same operator name and parameters merge for
selection; numeric-indifferent scores add up across the merged group,
rejects kill the whole group. Selection keeps undominated groups under
best/better-than ordering, then picks the top numeric score; two or
more unscored survivors are a tie impasse, zero survivors a no-change
impasse, a domination cycle a conflict impasse.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

from .dsl import (
    Acceptable, Best, BetterThan, BindTest, ConditionPattern, EqualsTest,
    MakeWME, NumericIndifferent, Preference, Production, Reject,
    RelationalTest, lower_actions,
)
from .errors import CogrecError, CycleLimitExceeded, DuplicateName
from .memory import WME, WorkingMemory
from .symbols import Atom, GroundValue, Identifier, Number, Variable, render_value

__all__ = [
    "Binding", "ProceduralMemory", "OperatorProposal", "Impasse",
    "ResolutionNote", "DecisionCycleRecord", "Engine", "match_all",
    "match_production", "resolve_preferences", "render_trace",
    "binding_text", "proposal_text",
]

OPERATOR_ATTR = Atom("operator")
NAME_ATTR = Atom("name")
STATE_FLAG = Atom("state-is-valid")
TRUE_ATOM = Atom("true")
GOAL_TYPE_ATTR = Atom("type")
RECOMMEND_ATOM = Atom("recommend")

Binding = dict[str, GroundValue]
BindingItems = tuple[tuple[str, GroundValue], ...]


def binding_items(binding: Binding) -> BindingItems:
    return tuple(sorted(binding.items(), key=lambda kv: kv[0]))


def binding_text(binding: Binding | BindingItems) -> str:
    items = binding_items(binding) if isinstance(binding, dict) else binding
    return " ".join(f"<{k}>={render_value(v)}" for k, v in items)


# ---------------------------------------------------------------------------
# Procedural memory
# ---------------------------------------------------------------------------

class ProceduralMemory:
    """Name-unique production store with an attribute match index."""

    def __init__(self) -> None:
        self.productions: dict[str, Production] = {}
        self.notes: dict[str, str] = {}  # per-rule justification texts
        self._literal_attrs: dict[str, frozenset[Atom]] = {}
        self._pos_attrs: dict[str, frozenset[Atom]] = {}
        self._neg_attrs: dict[str, frozenset[Atom]] = {}
        self._pos_attr_var: set[str] = set()
        self._neg_attr_var: set[str] = set()
        self._canonical: dict[str, str] = {}  # canonical form -> name

    def register(self, p: Production, canonical: str | None = None) -> None:
        if p.name in self.productions:
            raise DuplicateName(p.name)
        self.productions[p.name] = p
        self._literal_attrs[p.name] = frozenset(
            c.attribute for c in p.conditions
            if not c.negated and isinstance(c.attribute, Atom))
        pos, neg = set(), set()
        for c in p.conditions:
            if isinstance(c.attribute, Atom):
                (neg if c.negated else pos).add(c.attribute)
            elif c.negated:
                self._neg_attr_var.add(p.name)
            else:
                self._pos_attr_var.add(p.name)
            if c.state_marked:
                pos.add(STATE_FLAG)
        self._pos_attrs[p.name] = frozenset(pos)
        self._neg_attrs[p.name] = frozenset(neg)
        if canonical is not None:
            self._canonical.setdefault(canonical, p.name)

    def find_canonical(self, canonical: str) -> str | None:
        return self._canonical.get(canonical)

    def __len__(self) -> int:
        return len(self.productions)

    def __contains__(self, name: str) -> bool:
        return name in self.productions

    def attributes_tested(self, name: str) -> frozenset[Atom]:
        return self._literal_attrs[name]

    def affected_by(self, added: set[Atom], removed: set[Atom]) -> list[str]:
        """Productions that may gain matches after the given attribute
        changes: additions feed positive conditions, removals negated
        ones; either change can never grow the matches of the other
        polarity."""
        out = [name for name in self.productions
               if (added and (name in self._pos_attr_var
                              or self._pos_attrs[name] & added))
               or (removed and (name in self._neg_attr_var
                                or self._neg_attrs[name] & removed))]
        out.sort()
        return out

    def clone(self) -> "ProceduralMemory":
        """Cheap copy sharing the immutable productions."""
        pm = ProceduralMemory()
        pm.productions = dict(self.productions)
        pm.notes = dict(self.notes)
        pm._literal_attrs = dict(self._literal_attrs)
        pm._pos_attrs = dict(self._pos_attrs)
        pm._neg_attrs = dict(self._neg_attrs)
        pm._pos_attr_var = set(self._pos_attr_var)
        pm._neg_attr_var = set(self._neg_attr_var)
        pm._canonical = dict(self._canonical)
        return pm


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _value_test_ok(test, value: GroundValue, binding: Binding) -> Binding | None:
    """Check a value test against a ground value; returns the (possibly
    extended) binding, or None on failure."""
    if isinstance(test, EqualsTest):
        return binding if value == test.value else None
    if isinstance(test, BindTest):
        name = test.var.name
        if name in binding:
            return binding if binding[name] == value else None
        out = dict(binding)
        out[name] = value
        return out
    if isinstance(test, RelationalTest):
        if not isinstance(value, Number):
            return None
        a, b = value.value, test.number.value
        ok = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "<>": a != b}[test.op]
        return binding if ok else None
    raise CogrecError(f"unknown value test {test!r}")


def _state_ids(wm: WorkingMemory) -> set[Identifier]:
    return {w.id for w in wm.query(attr=STATE_FLAG, value=TRUE_ATOM)}


def _condition_matches(cond: ConditionPattern, wm: WorkingMemory,
                       binding: Binding, states: set[Identifier]) -> list[Binding]:
    """All extensions of ``binding`` that satisfy one positive condition."""
    # resolve id
    if isinstance(cond.id_test, Identifier):
        id_val: Identifier | None = cond.id_test
    else:
        bound = binding.get(cond.id_test.name)
        if bound is not None and not isinstance(bound, Identifier):
            return []
        id_val = bound

    attr_val: Atom | None
    if isinstance(cond.attribute, Atom):
        attr_val = cond.attribute
    else:
        bound = binding.get(cond.attribute.name)
        if bound is not None and not isinstance(bound, Atom):
            return []
        attr_val = bound

    # fully ground test: a hash probe instead of an index walk
    if id_val is not None and attr_val is not None \
            and isinstance(cond.value_test, EqualsTest):
        if not wm.contains(id_val, attr_val, cond.value_test.value):
            return []
        if cond.state_marked and id_val not in states:
            return []
        return [binding]

    candidates = wm.query(id=id_val, attr=attr_val)
    out: list[Binding] = []
    for wme in candidates:
        if cond.state_marked and wme.id not in states:
            continue
        b = binding
        if isinstance(cond.id_test, Variable) and id_val is None:
            b = dict(b)
            b[cond.id_test.name] = wme.id
        if isinstance(cond.attribute, Variable) and attr_val is None:
            if b is binding:
                b = dict(b)
            b[cond.attribute.name] = wme.attribute
        b2 = _value_test_ok(cond.value_test, wme.value, b)
        if b2 is not None:
            out.append(b2 if b2 is not b or b is not binding else dict(b2))
    return out


def match_production(p: Production, wm: WorkingMemory,
                     states: set[Identifier] | None = None) -> list[Binding]:
    """All consistent bindings of one production against the memory."""
    if states is None:
        states = _state_ids(wm)
    bindings: list[Binding] = [{}]
    for cond in p.conditions:
        if not bindings:
            return []
        if cond.negated:
            bindings = [b for b in bindings
                        if not _condition_matches(cond, wm, b, states)]
        else:
            nxt: list[Binding] = []
            for b in bindings:
                nxt.extend(_condition_matches(cond, wm, b, states))
            bindings = nxt
    return bindings


def match_all(pm: ProceduralMemory, wm: WorkingMemory,
              only: list[str] | None = None) -> list[tuple[Production, Binding]]:
    """Every (production, binding) pair whose positive conditions all
    unify with some element and whose negated conditions unify with none,
    ordered by production name then canonical binding. ``only`` restricts
    matching to the named productions."""
    present = wm.attributes_present()
    states = _state_ids(wm)
    out: list[tuple[Production, Binding]] = []
    names = sorted(pm.productions) if only is None else sorted(only)
    for name in names:
        p = pm.productions[name]
        if not pm.attributes_tested(name) <= present:
            continue
        for b in match_production(p, wm, states):
            out.append((p, b))
    out.sort(key=lambda pb: (pb[0].name,
                             tuple((k, render_value(v)) for k, v in binding_items(pb[1]))))
    return out


# ---------------------------------------------------------------------------
# Proposals and preference resolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class OperatorProposal:
    operator_id: Identifier
    state: Identifier
    name: Atom
    parameters: tuple[tuple[Atom, GroundValue], ...]
    preference: Preference
    source_production: str
    binding: BindingItems

    def key(self) -> tuple:
        return (self.name.text,
                tuple((a.text, render_value(v)) for a, v in self.parameters))


def proposal_text(p: OperatorProposal) -> str:
    params = ", ".join(f"{a.text}={render_value(v)}" for a, v in p.parameters)
    return f"{p.name.text}({params})"


@dataclass(frozen=True, slots=True)
class Impasse:
    """Why selection could not proceed, plus the frozen context."""

    kind: str  # "tie" | "no-change" | "conflict"
    cycle: int
    context: WorkingMemory
    goal_id: Identifier | None
    id: str
    proposals: tuple[OperatorProposal, ...] = ()

    def tied_items(self) -> list[Identifier]:
        items = []
        for p in self.proposals:
            for attr, val in p.parameters:
                if attr.text == "item" and isinstance(val, Identifier):
                    items.append(val)
        return items


@dataclass(slots=True)
class _Group:
    representative: OperatorProposal
    members: list[OperatorProposal]
    acceptable: bool = False
    rejected: bool = False
    best: bool = False
    better_than: set[str] = field(default_factory=set)
    score: float | None = None


def _merge(proposals: list[OperatorProposal]) -> list[_Group]:
    ordered = sorted(
        proposals,
        key=lambda p: (p.key(), p.source_production,
                       tuple((k, render_value(v)) for k, v in p.binding)))
    groups: dict[tuple, _Group] = {}
    for p in ordered:
        g = groups.get(p.key())
        if g is None:
            g = _Group(representative=p, members=[])
            groups[p.key()] = g
        g.members.append(p)
        pref = p.preference
        if isinstance(pref, Acceptable):
            g.acceptable = True
        elif isinstance(pref, Reject):
            g.rejected = True
        elif isinstance(pref, Best):
            g.best = True
        elif isinstance(pref, BetterThan):
            g.better_than.add(pref.other.text)
        elif isinstance(pref, NumericIndifferent):
            score = pref.score.value if isinstance(pref.score, Number) else None
            if score is None:
                raise CogrecError("unresolved numeric preference at selection")
            g.score = (g.score or 0.0) + score
    return [groups[k] for k in sorted(groups)]


def _dominates(a: _Group, b: _Group) -> bool:
    if a is b:
        return False
    if a.best and not b.best:
        return True
    return b.representative.name.text in a.better_than \
        and a.representative.name.text != b.representative.name.text


def _has_cycle(groups: list[_Group]) -> bool:
    n = len(groups)
    edges = {i: [j for j in range(n) if _dominates(groups[i], groups[j])]
             for i in range(n)}
    color = [0] * n  # 0 unseen, 1 in progress, 2 done

    def dfs(i: int) -> bool:
        color[i] = 1
        for j in edges[i]:
            if color[j] == 1:
                return True
            if color[j] == 0 and dfs(j):
                return True
        color[i] = 2
        return False

    return any(color[i] == 0 and dfs(i) for i in range(n))


def resolve_preferences(
    proposals: list[OperatorProposal],
) -> tuple[OperatorProposal | None, str | None, list[OperatorProposal]]:
    """Select among proposals. Returns ``(winner, impasse_kind, survivors)``
    where exactly one of winner / impasse_kind is set.

    Procedure: drop rejected groups; a better-than domination cycle is a
    conflict; keep undominated groups; groups carrying numeric scores
    outrank unscored ones and the highest summed score wins with a
    lexicographic tie-break on (score, operator name, parameters); one
    unscored survivor wins; two or more tie; zero is a no-change.
    """
    groups = [g for g in _merge(proposals) if not g.rejected]
    if not groups:
        return None, "no-change", []
    if _has_cycle(groups):
        return None, "conflict", [g.representative for g in groups]
    survivors = [g for g in groups
                 if not any(_dominates(other, g) for other in groups)]
    if not survivors:
        return None, "no-change", []
    scored = [g for g in survivors if g.score is not None]
    if scored:
        scored.sort(key=lambda g: (-g.score, g.representative.key()))
        return scored[0].representative, None, [g.representative for g in survivors]
    if len(survivors) == 1:
        return survivors[0].representative, None, [survivors[0].representative]
    return None, "tie", [g.representative for g in survivors]


# ---------------------------------------------------------------------------
# Decision cycle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ResolutionNote:
    """How an impasse was resolved mid-cycle."""

    source: str  # "llm" | "chunk-duplicate" | "fallback"
    operator_name: Atom
    parameters: tuple[tuple[Atom, GroundValue], ...]
    chunk_name: str | None = None
    chunk_outcome: str | None = None
    justification: str = ""
    query_text: str | None = None
    response_text: str | None = None


@dataclass(frozen=True, slots=True)
class DecisionCycleRecord:
    cycle: int
    fired: tuple[tuple[str, BindingItems], ...]
    proposals: tuple[OperatorProposal, ...]
    selected: OperatorProposal | None
    impasse: Impasse | None
    resolution: ResolutionNote | None
    wm_added: tuple[WME, ...]
    wm_removed: tuple[WME, ...]


def find_goal(wm: WorkingMemory) -> Identifier | None:
    goals = wm.query(attr=GOAL_TYPE_ATTR, value=RECOMMEND_ATOM)
    return goals[0].id if goals else None


class Engine:
    """One agent's reasoning loop over a procedural memory and a working
    memory. Single-threaded; run many engines for parallel sessions."""

    def __init__(self, pm: ProceduralMemory, wm: WorkingMemory,
                 cycle_limit: int = 200, session_tag: str = "s"):
        self.pm = pm
        self.wm = wm
        self.cycle_limit = cycle_limit
        self.session_tag = session_tag
        self.records: list[DecisionCycleRecord] = []
        self.pm_lock: threading.Lock | None = None  # set when pm is shared

    @property
    def cycle(self) -> int:
        return len(self.records)

    def run_cycle(self, on_impasse=None) -> DecisionCycleRecord:
        """Run one decision cycle. ``on_impasse(impasse, engine)`` may
        return a ResolutionNote whose operator is then applied this same
        cycle; returning None leaves the impasse standing."""
        if len(self.records) >= self.cycle_limit:
            raise CycleLimitExceeded(self.cycle_limit)
        if find_goal(self.wm) is None:
            raise CogrecError("no recommend goal in working memory")
        cycle = len(self.records) + 1
        self.wm.current_cycle = cycle
        journal_start = len(self.wm.journal)
        fired: list[tuple[str, BindingItems]] = []
        fired_keys: set[tuple[str, BindingItems]] = set()
        proposals: list[OperatorProposal] = []

        # propose: elaboration waves to fixpoint, proposals buffered
        self._wave_loop(fired_keys, fired, proposals)

        winner, impasse_kind, survivors = resolve_preferences(proposals)
        impasse: Impasse | None = None
        resolution: ResolutionNote | None = None
        if impasse_kind is not None:
            impasse = Impasse(
                kind=impasse_kind,
                cycle=cycle,
                context=self.wm.snapshot(),
                goal_id=find_goal(self.wm),
                id=f"{self.session_tag}-c{cycle}-{impasse_kind}",
                proposals=tuple(survivors),
            )
            if on_impasse is not None:
                resolution = on_impasse(impasse, self)
            if resolution is not None:
                state = survivors[0].state if survivors else self._default_state()
                self._apply_operator(state, resolution.operator_name,
                                     resolution.parameters, fired_keys, fired)
        elif winner is not None:
            self._apply_operator(winner.state, winner.name, winner.parameters,
                                 fired_keys, fired)

        deltas = self.wm.journal[journal_start:]
        record = DecisionCycleRecord(
            cycle=cycle,
            fired=tuple(fired),
            proposals=tuple(proposals),
            selected=winner,
            impasse=impasse,
            resolution=resolution,
            wm_added=tuple(e.wme for e in deltas if e.kind == "add"),
            wm_removed=tuple(e.wme for e in deltas if e.kind == "remove"),
        )
        self.records.append(record)
        return record

    # -- internals ------------------------------------------------------------

    def _wave_loop(self, fired_keys: set, fired: list,
                   proposals: list[OperatorProposal] | None,
                   initial_added: set[Atom] | None = None) -> None:
        """Fire new instantiations in waves until quiescence. After the
        first full wave, only productions whose conditions could gain
        matches from the attributes changed in the previous wave are
        re-matched. When ``initial_added`` is given even the first wave
        is restricted."""
        wave: list[str] | None = None
        if initial_added is not None:
            wave = self.pm.affected_by(initial_added, set())
            if not wave:
                return
        journal_mark = len(self.wm.journal)
        while True:
            matches = match_all(self.pm, self.wm, only=wave)
            new = [(p, binding_items(b)) for p, b in matches
                   if (p.name, binding_items(b)) not in fired_keys]
            if not new:
                return
            for p, items in new:
                fired_keys.add((p.name, items))
                fired.append((p.name, items))
                self._fire(p, dict(items), proposals)
            events = self.wm.journal[journal_mark:]
            journal_mark = len(self.wm.journal)
            added = {e.wme.attribute for e in events if e.kind == "add"}
            removed = {e.wme.attribute for e in events if e.kind == "remove"}
            if not added and not removed:
                return
            wave = self.pm.affected_by(added, removed)
            if not wave:
                return

    def _default_state(self) -> Identifier:
        states = sorted(_state_ids(self.wm), key=lambda i: i.name)
        if not states:
            raise CogrecError("no state identifier in working memory")
        return states[0]

    def _fire(self, p: Production, binding: Binding,
              proposals: list[OperatorProposal] | None) -> None:
        """Instantiate one production's actions. Proposal triples are
        buffered (unless proposals is None, as in the apply phase);
        everything else mutates working memory."""
        fresh: dict[str, Identifier] = {}

        def term(t):
            if isinstance(t, Variable):
                if t.name in binding:
                    return binding[t.name]
                if t.name not in fresh:
                    prefix = t.name[0] if t.name else "x"
                    fresh[t.name] = self.wm.new_id(prefix)
                return fresh[t.name]
            return t

        pending: list[tuple[Identifier, Atom, GroundValue, Preference | None]] = []
        proposal_heads: list[tuple[Identifier, Identifier, Preference]] = []
        for act in lower_actions(p):
            id_val = term(act.id_term)
            if not isinstance(id_val, Identifier):
                raise CogrecError(f"{p.name}: action id resolved to non-identifier")
            value = term(act.value_term)
            pref = act.preference
            if isinstance(pref, NumericIndifferent) and isinstance(pref.score, Variable):
                score = binding.get(pref.score.name)
                if not isinstance(score, Number):
                    raise CogrecError(f"{p.name}: numeric score did not bind a number")
                pref = NumericIndifferent(score)
            if act.attribute == OPERATOR_ATTR and pref is not None:
                if not isinstance(value, Identifier):
                    raise CogrecError(f"{p.name}: proposed operator is not an identifier")
                proposal_heads.append((id_val, value, pref))
            else:
                pending.append((id_val, act.attribute, value, pref))

        op_ids = {op for _, op, _ in proposal_heads}
        elaborations: dict[Identifier, list[tuple[Atom, GroundValue]]] = {o: [] for o in op_ids}
        for id_val, attr, value, pref in pending:
            if id_val in op_ids:
                elaborations[id_val].append((attr, value))
                continue
            if isinstance(pref, Reject):
                self.wm.remove_triple(id_val, attr, value)
            else:
                self.wm.add(id_val, attr, value)

        if proposals is None:
            return
        for state, op_id, pref in proposal_heads:
            name: Atom | None = None
            params: list[tuple[Atom, GroundValue]] = []
            for attr, value in elaborations.get(op_id, []):
                if attr == NAME_ATTR and isinstance(value, Atom):
                    name = value
                else:
                    params.append((attr, value))
            if name is None:
                raise CogrecError(f"{p.name}: operator proposal without ^name")
            params.sort(key=lambda av: (av[0].text, render_value(av[1])))
            proposals.append(OperatorProposal(
                operator_id=op_id, state=state, name=name,
                parameters=tuple(params), preference=pref,
                source_production=p.name, binding=binding_items(binding)))

    def _apply_operator(self, state: Identifier, name: Atom,
                        parameters: tuple[tuple[Atom, GroundValue], ...],
                        fired_keys: set, fired: list) -> None:
        """Install the selected operator, fire application rules to
        fixpoint, then retract the operator structure."""
        op_id = self.wm.new_id("o")
        installed: list[tuple[Identifier, Atom, GroundValue]] = [
            (state, OPERATOR_ATTR, op_id), (op_id, NAME_ATTR, name)]
        installed += [(op_id, attr, val) for attr, val in parameters]
        for triple in installed:
            self.wm.add(*triple)
        self._wave_loop(fired_keys, fired, None,
                        initial_added={attr for _, attr, _ in installed})
        for triple in installed:
            self.wm.remove_triple(*triple)


# ---------------------------------------------------------------------------
# Trace rendering
# ---------------------------------------------------------------------------

def render_trace(records: list[DecisionCycleRecord]) -> str:
    """Line-oriented deterministic trace; the golden-test surface."""
    lines: list[str] = []
    for r in records:
        head = f"CYCLE {r.cycle}"
        for name, items in r.fired:
            lines.append(f"{head} | FIRE {name}({binding_text(items)})")
        for p in r.proposals:
            lines.append(f"{head} | PROPOSE {proposal_text(p)} "
                         f"{p.preference.token()} [{p.source_production}]")
        if r.impasse is not None:
            tied = ", ".join(proposal_text(p) for p in r.impasse.proposals)
            lines.append(f"{head} | IMPASSE {r.impasse.kind}{{{tied}}}")
        if r.resolution is not None:
            res = r.resolution
            params = ", ".join(f"{a.text}={render_value(v)}" for a, v in res.parameters)
            extra = f" chunk={res.chunk_name}" if res.chunk_name else ""
            lines.append(f"{head} | RESOLVE {res.source} "
                         f"{res.operator_name.text}({params}){extra}")
        if r.selected is not None:
            lines.append(f"{head} | SELECT {proposal_text(r.selected)}")
        for w in r.wm_added:
            lines.append(f"{head} | WM+ {w.render()}")
        for w in r.wm_removed:
            lines.append(f"{head} | WM- {w.render()}")
    return "\n".join(lines)
