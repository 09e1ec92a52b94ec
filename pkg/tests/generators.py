"""Seeded random generators for fuzz and property tests."""

from __future__ import annotations

import random
import string

from cogrec.dsl import (
    Acceptable, Best, BetterThan, BindTest, ConditionPattern, EqualsTest,
    MakeWME, NumericIndifferent, Production, RelationalTest, Reject,
    validate_production,
)
from cogrec.memory import WorkingMemory
from cogrec.symbols import Atom, Identifier, Number, Variable

ATTRS = ["color", "size", "genre", "kind", "owner", "count", "linked-to",
         "mood", "zone", "label"]
ATOMS = ["red", "blue", "tiny", "vast", "sci-fi", "romance", "crisp",
         "plain atom", "quoted\"mark", "x2"]
RELOPS = ["<", "<=", ">", ">=", "<>"]


def random_atom(rng: random.Random) -> Atom:
    if rng.random() < 0.8:
        return Atom(rng.choice(ATOMS))
    length = rng.randint(1, 8)
    return Atom("".join(rng.choice(string.ascii_letters + " -_.!") for _ in range(length)))


def random_number(rng: random.Random) -> Number:
    if rng.random() < 0.5:
        return Number(float(rng.randint(-50, 50)))
    return Number(round(rng.uniform(-100, 100), 3))


def random_working_memory(rng: random.Random, size: int,
                          with_state: bool = True) -> WorkingMemory:
    wm = WorkingMemory()
    ids = [Identifier(f"n{i}") for i in range(max(2, size // 6))]
    if with_state:
        state = Identifier("s1")
        ids.append(state)
        wm.add(state, Atom("state-is-valid"), Atom("true"))
    while len(wm) < size:
        id_ = rng.choice(ids)
        attr = Atom(rng.choice(ATTRS))
        roll = rng.random()
        if roll < 0.45:
            value = Atom(rng.choice(ATOMS))
        elif roll < 0.7:
            value = random_number(rng)
        else:
            value = rng.choice(ids)
        wm.add(id_, attr, value)
    return wm


def random_rule(rng: random.Random, name: str, max_conditions: int = 4) -> Production:
    """A validator-passing production exercising literals, variable
    bindings, attribute variables, relational tests and negations."""
    root = Variable("s")
    bound = [root]
    conditions: list[ConditionPattern] = []
    first_attr = Atom(rng.choice(ATTRS))
    conditions.append(ConditionPattern(root, first_attr, _value_test(rng, bound),
                                       state_marked=True))
    for _ in range(rng.randint(0, max_conditions - 1)):
        id_var = rng.choice([v for v in bound]) if rng.random() < 0.85 else root
        attr: Atom | Variable
        if rng.random() < 0.15:
            attr = Variable(f"a{len(bound)}")
            bound.append(attr)
        else:
            attr = Atom(rng.choice(ATTRS))
        negated = rng.random() < 0.2
        if negated:
            # only already-bound or purely local variables may appear
            if rng.random() < 0.5:
                test = EqualsTest(Atom(rng.choice(ATOMS)))
            else:
                test = BindTest(Variable(f"local{rng.randint(0, 3)}"))
            if isinstance(attr, Variable):
                attr = Atom(rng.choice(ATTRS))
            conditions.append(ConditionPattern(id_var, attr, test, negated=True))
        else:
            conditions.append(ConditionPattern(id_var, attr, _value_test(rng, bound)))

    actions = [MakeWME(root, Atom(rng.choice(ATTRS)),
                       rng.choice([Atom(rng.choice(ATOMS)),
                                   random_number(rng),
                                   rng.choice(bound) if bound else root]))]
    prod = Production(name, tuple(conditions), tuple(actions))
    validate_production(prod)
    return prod


def _value_test(rng: random.Random, bound: list[Variable]):
    roll = rng.random()
    if roll < 0.35:
        var = Variable(f"v{len(bound)}")
        bound.append(var)
        return BindTest(var)
    if roll < 0.45 and bound:
        return BindTest(rng.choice(bound))
    if roll < 0.6:
        return RelationalTest(rng.choice(RELOPS), random_number(rng))
    if roll < 0.8:
        return EqualsTest(Atom(rng.choice(ATOMS)))
    return EqualsTest(random_number(rng))


def random_instance(rng: random.Random, max_rules: int = 30,
                    max_wmes: int = 80) -> tuple[list[Production], WorkingMemory]:
    n_rules = rng.randint(1, max_rules)
    n_wmes = rng.randint(1, max_wmes)
    rules = [random_rule(rng, f"rule-{i}") for i in range(n_rules)]
    wm = random_working_memory(rng, n_wmes)
    return rules, wm


# ---------------------------------------------------------------------------
# DSL round-trip generator: productions shaped like the text grammar
# ---------------------------------------------------------------------------

def random_text_production(rng: random.Random, name_n: int) -> Production:
    """Valid production whose actions are plain triples, covering the
    serializable surface: quoted atoms, numbers, ground identifiers,
    negation, relational tests, every preference kind."""
    root = Variable("s")
    bound = [root]
    conditions = [ConditionPattern(root, Atom(rng.choice(ATTRS)),
                                   _value_test(rng, bound), state_marked=True)]
    for _ in range(rng.randint(0, 4)):
        use_ground = rng.random() < 0.1
        if use_ground:
            # a ground-id condition stays connected through a bound value var
            conditions.append(ConditionPattern(
                Identifier(f"g{rng.randint(1, 3)}"), Atom(rng.choice(ATTRS)),
                BindTest(rng.choice(bound))))
            continue
        id_test = rng.choice(bound)
        attr = Variable(f"a{len(bound)}") if rng.random() < 0.1 else Atom(rng.choice(ATTRS))
        if isinstance(attr, Variable):
            bound.append(attr)
        if rng.random() < 0.25:
            conditions.append(ConditionPattern(
                id_test, attr if isinstance(attr, Atom) else Atom(rng.choice(ATTRS)),
                EqualsTest(random_atom(rng)), negated=True))
        else:
            conditions.append(ConditionPattern(id_test, attr, _value_test(rng, bound)))

    actions = []
    for _ in range(rng.randint(1, 3)):
        pref = rng.choice([
            None, None, Acceptable(), Reject(), Best(),
            BetterThan(Atom(rng.choice(ATOMS).replace(" ", "-").replace('"', ""))),
            NumericIndifferent(random_number(rng)),
        ])
        value = rng.choice([random_atom(rng), random_number(rng),
                            rng.choice(bound), Identifier(f"g{rng.randint(1, 3)}")])
        actions.append(MakeWME(rng.choice([v for v in bound if isinstance(v, Variable)]),
                               Atom(rng.choice(ATTRS)), value, pref))
    prod = Production(f"gen-{name_n}", tuple(conditions), tuple(actions))
    validate_production(prod)
    return prod


def random_garbage(rng: random.Random, max_len: int = 160) -> str:
    """Arbitrary bytes decoded leniently; parser fodder."""
    n = rng.randint(0, max_len)
    raw = bytes(rng.randrange(256) for _ in range(n))
    return raw.decode("latin-1")


def mutated_rule_text(rng: random.Random, text: str) -> str:
    """Structured corruption of valid rule text."""
    ops = rng.randint(1, 4)
    out = text
    for _ in range(ops):
        if not out:
            break
        kind = rng.randrange(4)
        pos = rng.randrange(len(out))
        if kind == 0:
            out = out[:pos] + out[pos + 1:]
        elif kind == 1:
            out = out[:pos] + rng.choice("(){}^<>?@-=\"' ") + out[pos:]
        elif kind == 2:
            out = out[:pos] + out[pos:][::-1]
        else:
            out = out[:pos] + rng.choice(["sp", "-->", "}", "{{", "^^"]) + out[pos:]
    return out
