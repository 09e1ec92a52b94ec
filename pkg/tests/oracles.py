"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive: the matcher backtracks over the
full element list with no indexes, the preference resolver enumerates
outcomes directly, filtering repeats full passes until nothing changes.
None of it shares code with the implementations under test.
"""

from __future__ import annotations

from cogrec.dsl import (Acceptable, BindTest, EqualsTest, Production, Reject,
                        RelationalTest)
from cogrec.memory import WorkingMemory
from cogrec.symbols import Atom, Identifier, Number, Variable

STATE_FLAG = Atom("state-is-valid")
TRUE = Atom("true")


def _unify_condition(cond, wme, binding, states):
    if cond.state_marked and wme.id not in states:
        return None
    out = dict(binding)
    if isinstance(cond.id_test, Identifier):
        if wme.id != cond.id_test:
            return None
    else:
        name = cond.id_test.name
        if name in out:
            if out[name] != wme.id:
                return None
        else:
            out[name] = wme.id
    if isinstance(cond.attribute, Atom):
        if wme.attribute != cond.attribute:
            return None
    else:
        name = cond.attribute.name
        if name in out:
            if out[name] != wme.attribute:
                return None
        else:
            out[name] = wme.attribute
    test = cond.value_test
    if isinstance(test, EqualsTest):
        if wme.value != test.value:
            return None
    elif isinstance(test, BindTest):
        name = test.var.name
        if name in out:
            if out[name] != wme.value:
                return None
        else:
            out[name] = wme.value
    elif isinstance(test, RelationalTest):
        if not isinstance(wme.value, Number):
            return None
        a, b = wme.value.value, test.number.value
        ok = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
              "<>": a != b}[test.op]
        if not ok:
            return None
    return out


def brute_force_match(production: Production, wm: WorkingMemory) -> list[dict]:
    """All consistent bindings by exhaustive backtracking; negations are
    existence checks evaluated after the positive conditions bind."""
    elements = wm.elements()
    states = {w.id for w in elements
              if w.attribute == STATE_FLAG and w.value == TRUE}
    positives = [c for c in production.conditions if not c.negated]
    negatives = [c for c in production.conditions if c.negated]

    results: list[dict] = []

    def backtrack(i: int, binding: dict) -> None:
        if i == len(positives):
            results.append(binding)
            return
        for wme in elements:
            extended = _unify_condition(positives[i], wme, binding, states)
            if extended is not None:
                backtrack(i + 1, extended)

    backtrack(0, {})

    def blocked(binding: dict) -> bool:
        for cond in negatives:
            if any(_unify_condition(cond, wme, binding, states) is not None
                   for wme in elements):
                return True
        return False

    return [b for b in results if not blocked(b)]


def brute_force_match_all(productions, wm) -> list[tuple[str, tuple]]:
    """(name, sorted-binding-items) pairs for every production, in the
    same canonical order the engine promises."""
    out = []
    for p in productions:
        for b in brute_force_match(p, wm):
            out.append((p.name, tuple(sorted((k, str(v)) for k, v in b.items()))))
    out.sort()
    return out


def enumerate_selection(proposals) -> tuple[str | None, str | None]:
    """Expected (winner-key, impasse-kind) for proposals carrying only
    acceptable/reject preferences; the truth table for small multisets."""
    groups: dict[tuple, dict] = {}
    for p in proposals:
        g = groups.setdefault(p.key(), {"acc": False, "rej": False})
        if isinstance(p.preference, Acceptable):
            g["acc"] = True
        elif isinstance(p.preference, Reject):
            g["rej"] = True
    survivors = [k for k, g in sorted(groups.items()) if not g["rej"]]
    if not survivors:
        return None, "no-change"
    if len(survivors) == 1:
        return str(survivors[0]), None
    return None, "tie"


def iterated_filter(interactions, min_user: int, min_item: int):
    """Fixpoint filtering by repeated full passes, one entity at a time."""
    current = list(interactions)
    while True:
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        for it in current:
            users[it.user] = users.get(it.user, 0) + 1
            items[it.item] = items.get(it.item, 0) + 1
        bad_users = {u for u, n in users.items() if n < min_user}
        nxt = [it for it in current if it.user not in bad_users]
        items = {}
        for it in nxt:
            items[it.item] = items.get(it.item, 0) + 1
        bad_items = {i for i, n in items.items() if n < min_item}
        nxt = [it for it in nxt if it.item not in bad_items]
        if len(nxt) == len(current):
            return nxt
        current = nxt


def brute_force_metrics(ranks, k: int) -> tuple[float, float]:
    """Mean (HR@k, NDCG@k) computed directly from the definitions."""
    import math

    hits = 0
    gain = 0.0
    for rank in ranks:
        if rank is not None and rank <= k:
            hits += 1
            gain += 1.0 / math.log2(rank + 1)
    n = len(ranks)
    return (hits / n if n else 0.0, gain / n if n else 0.0)
