from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogrec.errors import FrozenMemory, UnknownTimetag, VariableInWM
from cogrec.memory import WorkingMemory
from cogrec.symbols import Atom, Identifier, Number, Variable


def wm_with(*triples):
    wm = WorkingMemory()
    for t in triples:
        wm.add(*t)
    return wm


def test_first_insertion_gets_timetag_one():
    wm = WorkingMemory()
    tt = wm.add(Identifier("u1"), Atom("likes-genre"), Atom("sci-fi"))
    assert tt == 1


def test_reinsert_is_noop_with_same_timetag():
    wm = WorkingMemory()
    tt1 = wm.add(Identifier("u1"), Atom("likes-genre"), Atom("sci-fi"))
    before = len(wm.journal)
    tt2 = wm.add(Identifier("u1"), Atom("likes-genre"), Atom("sci-fi"))
    assert tt1 == tt2
    assert len(wm.journal) == before


def test_goal_then_history_timetags():
    wm = WorkingMemory()
    t1 = wm.add(Identifier("g1"), Atom("type"), Atom("recommend"))
    t2 = wm.add(Identifier("u1"), Atom("history"), Identifier("h1"))
    assert (t1, t2) == (1, 2)


def test_variable_value_rejected():
    wm = WorkingMemory()
    with pytest.raises(VariableInWM):
        wm.add(Identifier("u1"), Atom("x"), Variable("g"))


def test_multi_valued_attribute():
    wm = WorkingMemory()
    c = Identifier("c1")
    wm.add(c, Atom("items"), Identifier("v1"))
    wm.add(c, Atom("items"), Identifier("v2"))
    assert len(wm.values_of(c, Atom("items"))) == 2


def test_remove_only_element_empties_memory():
    wm = wm_with((Identifier("u1"), Atom("x"), Atom("y")))
    wm.remove(1)
    assert len(wm) == 0


def test_remove_then_readd_gets_fresh_timetag():
    wm = wm_with((Identifier("u1"), Atom("x"), Atom("y")))
    wm.remove(1)
    tt = wm.add(Identifier("u1"), Atom("x"), Atom("y"))
    assert tt == 2


def test_remove_unknown_timetag():
    wm = WorkingMemory()
    with pytest.raises(UnknownTimetag):
        wm.remove(99)


def test_remove_keeps_indexes_consistent_with_scan():
    wm = wm_with((Identifier("a"), Atom("x"), Atom("p")),
                 (Identifier("b"), Atom("x"), Atom("q")))
    wm.remove(1)
    scan = [w for w in wm.elements() if w.attribute == Atom("x")]
    assert wm.query(attr=Atom("x")) == scan


def test_query_by_id_on_goal_memory():
    wm = wm_with((Identifier("g1"), Atom("type"), Atom("recommend")),
                 (Identifier("u1"), Atom("history"), Identifier("h1")))
    got = wm.query(id=Identifier("u1"))
    assert [w.value for w in got] == [Identifier("h1")]


def test_query_everything_on_empty():
    assert WorkingMemory().query() == []


def test_query_equals_scan_on_random_memory():
    rng = random.Random(11)
    wm = WorkingMemory()
    ids = [Identifier(f"n{i}") for i in range(6)]
    attrs = [Atom(a) for a in ("x", "y", "z")]
    vals = [Atom("p"), Atom("q"), Number(3.0)]
    for _ in range(50):
        wm.add(rng.choice(ids), rng.choice(attrs), rng.choice(vals))
    for _ in range(40):
        id_ = rng.choice(ids + [None])
        attr = rng.choice(attrs + [None])
        value = rng.choice(vals + [None])
        scan = [w for w in wm.elements()
                if (id_ is None or w.id == id_)
                and (attr is None or w.attribute == attr)
                and (value is None or w.value == value)]
        assert wm.query(id=id_, attr=attr, value=value) == scan


def test_snapshot_is_independent_and_frozen():
    wm = wm_with((Identifier("u1"), Atom("x"), Atom("y")))
    snap = wm.snapshot()
    wm.add(Identifier("u1"), Atom("x"), Atom("z"))
    assert len(snap) == 1
    with pytest.raises(FrozenMemory):
        snap.add(Identifier("u1"), Atom("w"), Atom("v"))


def test_snapshot_of_empty_is_empty():
    assert len(WorkingMemory().snapshot()) == 0


def test_snapshot_journal_length_matches_capture_point():
    wm = wm_with((Identifier("u1"), Atom("x"), Atom("y")))
    wm.remove(1)
    snap = wm.snapshot()
    assert len(snap.journal) == 2
    wm.add(Identifier("u1"), Atom("x"), Atom("y"))
    assert len(snap.journal) == 2


def test_dump_format_and_ordering():
    wm = wm_with((Identifier("g1"), Atom("type"), Atom("recommend")),
                 (Identifier("u1"), Atom("score"), Number(5.0)),
                 (Identifier("u1"), Atom("history"), Identifier("h1")))
    assert wm.dump() == ("(<g1> ^type recommend)\n"
                         "(<u1> ^score 5)\n"
                         "(<u1> ^history <h1>)")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.integers(0, 4),
                          st.booleans()),
                min_size=1, max_size=80))
def test_property_interleaved_ops_keep_invariants(ops):
    wm = WorkingMemory()
    live = []
    last_tt = 0
    for id_n, attr_n, val_n, is_remove in ops:
        if is_remove and live:
            wm.remove(live.pop(0))
        else:
            tt = wm.add(Identifier(f"n{id_n}"), Atom(f"a{attr_n}"), Atom(f"v{val_n}"))
            if tt > last_tt:
                assert tt == last_tt + 1  # strict monotonicity, no reuse
                last_tt = tt
                live.append(tt)
    # index/scan equivalence on every (id, attr) combination
    for id_n in range(6):
        for attr_n in range(4):
            id_, attr = Identifier(f"n{id_n}"), Atom(f"a{attr_n}")
            scan = [w for w in wm.elements() if w.id == id_ and w.attribute == attr]
            assert wm.query(id=id_, attr=attr) == scan
    # journal replay reconstructs the live state exactly
    replayed = WorkingMemory.replay(wm.journal)
    assert replayed.elements() == wm.elements()


def test_large_interleaved_sequence_replay_and_indexes():
    rng = random.Random(7)
    wm = WorkingMemory()
    live: list[int] = []
    for step in range(1200):
        if live and rng.random() < 0.4:
            victim = live.pop(rng.randrange(len(live)))
            wm.remove(victim)
        else:
            tt = wm.add(Identifier(f"n{rng.randrange(12)}"),
                        Atom(f"a{rng.randrange(6)}"),
                        Atom(f"v{rng.randrange(9)}"))
            if tt not in live:
                live.append(tt)
    assert WorkingMemory.replay(wm.journal).elements() == wm.elements()
    for attr_n in range(6):
        attr = Atom(f"a{attr_n}")
        scan = [w for w in wm.elements() if w.attribute == attr]
        assert wm.query(attr=attr) == scan
