"""Neuro-symbolic bridge: render an impasse snapshot as a structured
prompt, and parse model responses back into grounded chunk material.

Both directions are pure functions. The prompt renderer is a
deterministic function of the snapshot and impasse (element order
follows timetags), and every user-preference or candidate line it emits
corresponds to an element of the snapshot, so a well-behaved model can
only cite facts the reasoner already holds. The response parser enforces
that: a recommendation outside the candidate list or a cited fact absent
from the snapshot is rejected, never silently accepted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .chunking import ChunkRaw, check_grounding
from .data import DomainSchema
from .engine import Impasse, find_goal
from .errors import EmptyContext, ParseFailure
from .memory import WorkingMemory
from .symbols import Atom, GroundValue, Identifier, Number

__all__ = [
    "StructuredQuery", "symbol_to_text", "text_to_chunk",
    "parse_rank_response", "load_template", "render_template",
]

STATE_FLAG = Atom("state-is-valid")
TRUE_ATOM = Atom("true")
USER_ATTR = Atom("user")
PREFERENCE_ATTR = Atom("preference")
HISTORY_ATTR = Atom("history")
ITEM_ATTR = Atom("item")
TITLE_ATTR = Atom("title")
CANDIDATE_ATTR = Atom("candidate-item")

_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?\Z")
_BECAUSE_LINE = re.compile(r"^-\s*(user|item)\.([A-Za-z0-9_-]+)\s*=\s*(.+?)\s*$")


def load_template(name: str) -> str:
    return resources.files("cogrec.templates").joinpath(name).read_text(encoding="utf-8")


def render_template(template: str, values: dict[str, str]) -> str:
    """Plain ``{placeholder}`` substitution; brace-safe for content."""
    out = template
    for key, val in values.items():
        out = out.replace("{" + key + "}", val)
    return out


@dataclass(frozen=True)
class StructuredQuery:
    """A rendered impasse prompt plus the context needed to check the
    response against the closed world it was asked about."""

    impasse_id: str
    impasse_kind: str
    rendered: str
    candidates: tuple[Identifier, ...]
    user_id: Identifier | None


def _quote_if_spaced(text: str) -> str:
    return f'"{text}"' if any(ch.isspace() for ch in text) else text


def _value_text(value: GroundValue) -> str:
    if isinstance(value, Atom):
        return _quote_if_spaced(value.text)
    return str(value)


def symbol_to_text(snapshot: WorkingMemory, impasse: Impasse,
                   schema: DomainSchema) -> StructuredQuery:
    """Render the frozen impasse context as a sectioned prompt. Tie
    impasses list exactly the tied candidates; other kinds list the full
    candidate set."""
    goal = find_goal(snapshot)
    if goal is None:
        raise EmptyContext("snapshot has no recommendation goal")

    states = sorted({w.id for w in snapshot.query(attr=STATE_FLAG, value=TRUE_ATOM)},
                    key=lambda i: i.name)
    state = states[0] if states else None
    user = None
    if state is not None:
        value = snapshot.first_value(state, USER_ATTR)
        if isinstance(value, Identifier):
            user = value
    if user is None:
        owners = snapshot.query(attr=PREFERENCE_ATTR)
        user = owners[0].id if owners else None

    profile_lines: list[str] = []
    if user is not None:
        for wme in snapshot.query(id=user, attr=PREFERENCE_ATTR):
            profile_lines.append(f"- user.preference = {_value_text(wme.value)}")
        for hist in snapshot.query(id=user, attr=HISTORY_ATTR):
            if not isinstance(hist.value, Identifier):
                continue
            for entry in snapshot.query(id=hist.value, attr=ITEM_ATTR):
                if not isinstance(entry.value, Identifier):
                    continue
                title = snapshot.first_value(entry.value, TITLE_ATTR)
                shown = title.text if isinstance(title, Atom) else entry.value.name
                profile_lines.append(f'- history item "{shown}"')
    if not profile_lines:
        profile_lines.append("- (no profile facts)")

    if impasse.kind == "tie":
        candidates = impasse.tied_items()
    else:
        candidates = []
        if state is not None:
            for wme in snapshot.query(id=state, attr=CANDIDATE_ATTR):
                if isinstance(wme.value, Identifier):
                    candidates.append(wme.value)

    candidate_lines: list[str] = []
    for cand in candidates:
        title = snapshot.first_value(cand, TITLE_ATTR)
        shown = f' "{title.text}"' if isinstance(title, Atom) else ""
        facts = []
        for wme in snapshot.query(id=cand):
            if wme.attribute == TITLE_ATTR:
                continue
            facts.append(f"{wme.attribute.text} = {_value_text(wme.value)}")
        fact_text = "; ".join(facts) if facts else "(no attributes)"
        candidate_lines.append(f"- item {cand.name}{shown}: {fact_text}")
    if not candidate_lines:
        candidate_lines.append("- (no candidates)")

    if impasse.kind == "tie":
        impasse_text = (f"A tie among {len(candidates)} candidates: "
                        f"{', '.join(c.name for c in candidates)}. Pick exactly one.")
    elif impasse.kind == "no-change":
        impasse_text = ("No operator could be proposed for the goal. "
                        "Pick one candidate to recommend.")
    else:
        impasse_text = ("Conflicting preferences ordered the proposals in a cycle. "
                        "Pick exactly one candidate.")

    response_format = load_template("response_format.txt").rstrip("\n")
    rendered = render_template(load_template("impasse_prompt.txt"), {
        "user_profile": "\n".join(profile_lines),
        "goal": f"Recommend items for the session user (goal {goal.name}, type recommend).",
        "candidates": "\n".join(candidate_lines),
        "impasse": impasse_text,
        "response_format": response_format,
    })
    return StructuredQuery(
        impasse_id=impasse.id,
        impasse_kind=impasse.kind,
        rendered=rendered,
        candidates=tuple(candidates),
        user_id=user,
    )


def _strip_quotes(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _resolve_item(ref: str, query: StructuredQuery,
                  snapshot: WorkingMemory) -> Identifier:
    ref = _strip_quotes(ref)
    by_id = {c.name: c for c in query.candidates}
    if ref in by_id:
        return by_id[ref]
    for cand in query.candidates:
        title = snapshot.first_value(cand, TITLE_ATTR)
        if isinstance(title, Atom) and title.text == ref:
            return cand
    raise ParseFailure("UnknownItem", [ref])


def _parse_value(raw: str) -> GroundValue:
    raw = _strip_quotes(raw)
    if _NUMBER_RE.match(raw):
        return Number(float(raw))
    return Atom(raw)


def text_to_chunk(response: str, query: StructuredQuery,
                  snapshot: WorkingMemory, schema: DomainSchema) -> ChunkRaw:
    """Parse the response grammar into a grounded causal pair.

    Tolerates surrounding free text: the last well-formed
    ``RECOMMEND:`` / ``BECAUSE:`` block wins. Raises
    :class:`ParseFailure` on grammar violations and
    :class:`UngroundedCondition` when a cited fact is not in the
    snapshot.
    """
    lines = [ln.strip() for ln in response.splitlines()]
    rec_idx = None
    for idx, line in enumerate(lines):
        if line.startswith("RECOMMEND:"):
            rec_idx = idx
    if rec_idx is None:
        raise ParseFailure("NoRecommendLine")
    item = _resolve_item(lines[rec_idx].partition(":")[2], query, snapshot)

    idx = rec_idx + 1
    while idx < len(lines) and not lines[idx]:
        idx += 1
    if idx >= len(lines) or not lines[idx].startswith("BECAUSE"):
        raise ParseFailure("NoConditions")
    idx += 1

    conditions: list[tuple[Identifier, Atom, GroundValue]] = []
    block_lines = [lines[rec_idx], "BECAUSE:"]
    while idx < len(lines):
        line = lines[idx]
        if not line:
            idx += 1
            continue
        m = _BECAUSE_LINE.match(line)
        if m is None:
            break
        subject, attr, raw_value = m.groups()
        if subject == "item":
            if attr != TITLE_ATTR.text and not schema.knows(attr):
                raise ParseFailure("UnknownAttribute", [line])
            subject_id = item
        else:
            if query.user_id is None:
                raise ParseFailure("BadConditionLine", [line])
            subject_id = query.user_id
        conditions.append((subject_id, Atom(attr), _parse_value(raw_value)))
        block_lines.append(line)
        idx += 1
    if not conditions:
        raise ParseFailure("NoConditions")

    raw = ChunkRaw(
        conditions=tuple(conditions),
        operator_name=Atom("select-item"),
        parameters=((Atom("item"), item),),
        impasse_id=query.impasse_id,
        justification_text="\n".join(block_lines),
    )
    check_grounding(raw, snapshot)
    return raw


def parse_rank_response(response: str, candidates: tuple[str, ...]) -> list[str]:
    """Parse the ``RANK: id, id, …`` grammar of the direct-ranking path.
    Unknown ids are dropped; an empty result is a failure."""
    rank_line = None
    for line in response.splitlines():
        line = line.strip()
        if line.startswith("RANK:"):
            rank_line = line
    if rank_line is None:
        raise ParseFailure("NoRankLine")
    known = set(candidates)
    out: list[str] = []
    for token in re.split(r"[,\s]+", rank_line.partition(":")[2].strip()):
        token = _strip_quotes(token)
        if token and token in known and token not in out:
            out.append(token)
    if not out:
        raise ParseFailure("UnknownItem", [rank_line])
    return out
