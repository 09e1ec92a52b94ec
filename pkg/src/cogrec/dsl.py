"""Rule language: AST, parser, validator and serializer.

A production is written as an ``sp { … }`` block::

    sp { prefer-matching-genre
      (state <s> ^user <u>)
      (<u> ^preference ?g)
      (<s> ^candidate-item ?i)
      (?i ^genre ?g)
      -->
      (<s> ^operator <o> +)
      (<o> ^name select-item)
      (<o> ^item ?i)
    }

Grammar (normative)::

    sp_block   := "sp" "{" name condition+ "-->" action+ "}"
    condition  := ["-"] "(" id_test ("^" attr value_test)+ ")"
    id_test    := "state" var | var | "@" identifier
    value_test := constant | var | "{" relop number "}"
    action     := "(" var ("^" attr value_term)+ [pref] ")"
    pref       := "+" | "-" | ">" [atom] | "=" (number | var)
    relop      := "<" | "<=" | ">" | ">=" | "<>"

Variables are written ``<g>`` or ``?g``; both normalize to one namespace.
Atoms are bare words or quoted strings; ground identifiers use an ``@``
sigil (``@u1``). A ``-`` before a condition negates it. A group with
several ``^attr value`` pairs expands into one pattern per pair. The
preference ``>`` alone marks best-of; ``> name`` dominates proposals of
that operator name; ``= n`` attaches a numeric-indifferent score (a
variable score must be bound by the conditions). Rule files are UTF-8
with ``#`` line comments.

This module also parses the closed IF-THEN grammar used for knowledge
bootstrapping (see :func:`parse_if_then_rules`).
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace

from .errors import AllLinesRejected, RuleSyntaxError, ValidationError
from .symbols import Atom, Identifier, Number, Variable, render_number

__all__ = [
    "EqualsTest", "BindTest", "RelationalTest", "ConditionTest",
    "ConditionPattern", "MakeWME", "ProposeOperator", "ActionPattern",
    "Acceptable", "Reject", "Best", "BetterThan", "NumericIndifferent",
    "Preference", "Bootstrap", "Manual", "Chunked", "Provenance",
    "Production", "parse_production", "parse_rules_file",
    "serialize_production", "lower_actions", "validate_production",
    "parse_if_then_rules", "OPERATOR_VOCABULARY",
]

RELOPS = ("<=", ">=", "<>", "<", ">")

STATE_FLAG_ATTR = Atom("state-is-valid")

# Operator names a PROPOSE bootstrap line may use; anything else would
# select an operator nothing can apply.
OPERATOR_VOCABULARY = ("filter-by-attribute", "halt", "score-item", "select-item")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class EqualsTest:
    value: Identifier | Atom | Number


@dataclass(frozen=True, slots=True)
class BindTest:
    var: Variable


@dataclass(frozen=True, slots=True)
class RelationalTest:
    op: str
    number: Number


ConditionTest = EqualsTest | BindTest | RelationalTest


@dataclass(frozen=True, slots=True)
class ConditionPattern:
    """One ``(id ^attribute value)`` test, possibly negated.

    ``state_marked`` records the ``state`` keyword: the id must resolve
    to an identifier carrying ``^state-is-valid true``.
    """

    id_test: Variable | Identifier
    attribute: Atom | Variable
    value_test: ConditionTest
    negated: bool = False
    state_marked: bool = False


@dataclass(frozen=True, slots=True)
class Acceptable:
    def token(self) -> str:
        return "+"


@dataclass(frozen=True, slots=True)
class Reject:
    def token(self) -> str:
        return "-"


@dataclass(frozen=True, slots=True)
class Best:
    def token(self) -> str:
        return ">"


@dataclass(frozen=True, slots=True)
class BetterThan:
    other: Atom

    def token(self) -> str:
        return f"> {self.other.text}"


@dataclass(frozen=True, slots=True)
class NumericIndifferent:
    score: Number | Variable

    def token(self) -> str:
        if isinstance(self.score, Variable):
            return f"= {self.score}"
        return f"= {self.score}"


Preference = Acceptable | Reject | Best | BetterThan | NumericIndifferent

ValueTerm = Variable | Identifier | Atom | Number


@dataclass(frozen=True, slots=True)
class MakeWME:
    """Create (or, with a reject preference, remove) one triple.

    A preference on the ``operator`` attribute turns the triple into an
    operator proposal instead of a working-memory change.
    """

    id_term: Variable | Identifier
    attribute: Atom
    value_term: ValueTerm
    preference: Preference | None = None


@dataclass(frozen=True, slots=True)
class ProposeOperator:
    """High-level proposal action used by compiled bootstrap rules and
    chunks; lowers to the ``(<s> ^operator <o> pref)`` triple idiom."""

    operator_var: Variable
    name: Atom
    parameters: tuple[tuple[Atom, ValueTerm], ...]
    preference: Preference


ActionPattern = MakeWME | ProposeOperator


@dataclass(frozen=True, slots=True)
class Bootstrap:
    pass


@dataclass(frozen=True, slots=True)
class Manual:
    pass


@dataclass(frozen=True, slots=True)
class Chunked:
    impasse_id: str


Provenance = Bootstrap | Manual | Chunked


@dataclass(frozen=True)
class Production:
    name: str
    conditions: tuple[ConditionPattern, ...]
    actions: tuple[ActionPattern, ...]
    provenance: Provenance = field(default_factory=Manual)
    creation_cycle: int = 0

    @property
    def root_var(self) -> Variable:
        id_test = self.conditions[0].id_test
        if not isinstance(id_test, Variable):
            raise ValidationError("MissingRootCondition",
                                  f"{self.name}: root condition id is not a variable")
        return id_test

    def condition_variables(self) -> set[str]:
        out: set[str] = set()
        for c in self.conditions:
            out.update(v.name for v in _condition_vars(c))
        return out


def _condition_vars(c: ConditionPattern) -> list[Variable]:
    out = []
    if isinstance(c.id_test, Variable):
        out.append(c.id_test)
    if isinstance(c.attribute, Variable):
        out.append(c.attribute)
    if isinstance(c.value_test, BindTest):
        out.append(c.value_test.var)
    return out


def _action_vars(a: ActionPattern) -> list[Variable]:
    out = []
    if isinstance(a, MakeWME):
        if isinstance(a.id_term, Variable):
            out.append(a.id_term)
        if isinstance(a.value_term, Variable):
            out.append(a.value_term)
        if isinstance(a.preference, NumericIndifferent) and isinstance(a.preference.score, Variable):
            out.append(a.preference.score)
    else:
        out.append(a.operator_var)
        for _, term in a.parameters:
            if isinstance(term, Variable):
                out.append(term)
        if isinstance(a.preference, NumericIndifferent) and isinstance(a.preference.score, Variable):
            out.append(a.preference.score)
    return out


def lower_actions(production: Production) -> tuple[MakeWME, ...]:
    """Expand ProposeOperator actions into their triple idiom against the
    production's root state variable."""
    root = production.root_var
    out: list[MakeWME] = []
    for a in production.actions:
        if isinstance(a, MakeWME):
            out.append(a)
        else:
            out.append(MakeWME(root, Atom("operator"), a.operator_var, a.preference))
            out.append(MakeWME(a.operator_var, Atom("name"), a.name))
            for attr, term in a.parameters:
                out.append(MakeWME(a.operator_var, attr, term))
    return tuple(out)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_VAR_ANGLE = re.compile(r"<([A-Za-z0-9_*-]+)>")
_VAR_QMARK = re.compile(r"\?([A-Za-z0-9_*-]+)")
_IDENT = re.compile(r"@([A-Za-z0-9_-]+)")
_NUMBER = re.compile(r"-?(\d+\.\d+|\d+\.?|\.\d+)([eE][+-]?\d+)?")
_BARE = re.compile(r"[A-Za-z][A-Za-z0-9_.:/-]*")


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # punct kinds use their text; else VAR, IDENT, NUMBER, ATOM, QATOM, EOF
    text: str
    line: int
    col: int


def _lex(text: str) -> list[_Token]:
    toks: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def push(kind: str, s: str):
        toks.append(_Token(kind, s, line, col))

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("-->", i):
            push("-->", "-->")
            i += 3
            col += 3
            continue
        if ch in "(){}^+":
            push(ch, ch)
            i += 1
            col += 1
            continue
        if ch in "\"'":
            quote = ch
            j = i + 1
            buf = []
            while j < n and text[j] != quote:
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise RuleSyntaxError("unterminated string", line, col, expected=quote)
            push("QATOM", "".join(buf))
            col += j + 1 - i
            i = j + 1
            continue
        m = _VAR_ANGLE.match(text, i)
        if m:
            push("VAR", m.group(1))
            col += m.end() - i
            i = m.end()
            continue
        for op in RELOPS:
            if text.startswith(op, i):
                push("OP", op)
                i += len(op)
                col += len(op)
                break
        else:
            m = _VAR_QMARK.match(text, i)
            if m:
                push("VAR", m.group(1))
                col += m.end() - i
                i = m.end()
                continue
            m = _IDENT.match(text, i)
            if m:
                push("IDENT", m.group(1))
                col += m.end() - i
                i = m.end()
                continue
            if ch == "-" and i + 1 < n and (text[i + 1].isdigit() or text[i + 1] == "."):
                m = _NUMBER.match(text, i)
                if m:
                    push("NUMBER", m.group(0))
                    col += m.end() - i
                    i = m.end()
                    continue
            if ch == "-":
                push("-", "-")
                i += 1
                col += 1
                continue
            if ch == "=":
                push("=", "=")
                i += 1
                col += 1
                continue
            if ch.isdigit() or ch == ".":
                m = _NUMBER.match(text, i)
                if m:
                    push("NUMBER", m.group(0))
                    col += m.end() - i
                    i = m.end()
                    continue
                raise RuleSyntaxError(f"bad number at {ch!r}", line, col, expected="number")
            m = _BARE.match(text, i)
            if m:
                push("ATOM", m.group(0))
                col += m.end() - i
                i = m.end()
                continue
            raise RuleSyntaxError(f"unexpected character {ch!r}", line, col, expected="token")
        continue
    toks.append(_Token("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def next(self) -> _Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind: str, what: str = "") -> _Token:
        t = self.next()
        if t.kind != kind:
            raise RuleSyntaxError(
                f"expected {what or kind}, got {t.text!r}", t.line, t.col, expected=kind)
        return t

    def at_end(self) -> bool:
        return self.peek().kind == "EOF"

    # -- productions ----------------------------------------------------------

    def parse_block(self) -> Production:
        t = self.expect("ATOM", "'sp'")
        if t.text != "sp":
            raise RuleSyntaxError(f"expected 'sp', got {t.text!r}", t.line, t.col, expected="sp")
        self.expect("{")
        name_tok = self.next()
        if name_tok.kind not in ("ATOM", "QATOM"):
            raise RuleSyntaxError("expected rule name", name_tok.line, name_tok.col,
                                  expected="name")
        conditions: list[ConditionPattern] = []
        while self.peek().kind in ("(", "-"):
            conditions.extend(self.parse_condition_group())
        self.expect("-->", "'-->'")
        actions: list[MakeWME] = []
        while self.peek().kind == "(":
            actions.extend(self.parse_action_group())
        self.expect("}")
        if not conditions:
            t = self.peek()
            raise RuleSyntaxError("production has no conditions", t.line, t.col,
                                  expected="condition")
        if not actions:
            raise ValidationError("EmptyActions", f"{name_tok.text}: no actions")
        return Production(name_tok.text, tuple(conditions), tuple(actions))

    def parse_condition_group(self) -> list[ConditionPattern]:
        negated = False
        if self.peek().kind == "-":
            self.next()
            negated = True
        self.expect("(")
        state_marked = False
        t = self.next()
        if t.kind == "ATOM" and t.text == "state":
            state_marked = True
            t = self.next()
        if t.kind == "VAR":
            id_test: Variable | Identifier = Variable(t.text)
        elif t.kind == "IDENT":
            id_test = Identifier(t.text)
        else:
            raise RuleSyntaxError(f"expected id test, got {t.text!r}", t.line, t.col,
                                  expected="variable or @identifier")
        patterns: list[ConditionPattern] = []
        while self.peek().kind == "^":
            self.next()
            attr = self.parse_attr()
            vtest = self.parse_value_test()
            patterns.append(ConditionPattern(id_test, attr, vtest, negated, state_marked))
        if not patterns:
            t = self.peek()
            raise RuleSyntaxError("condition needs at least one ^attribute test",
                                  t.line, t.col, expected="^")
        self.expect(")")
        return patterns

    def parse_attr(self) -> Atom | Variable:
        t = self.next()
        if t.kind in ("ATOM", "QATOM"):
            return Atom(t.text)
        if t.kind == "VAR":
            return Variable(t.text)
        raise RuleSyntaxError(f"expected attribute, got {t.text!r}", t.line, t.col,
                              expected="attribute")

    def parse_value_test(self) -> ConditionTest:
        t = self.next()
        if t.kind == "VAR":
            return BindTest(Variable(t.text))
        if t.kind == "IDENT":
            return EqualsTest(Identifier(t.text))
        if t.kind == "NUMBER":
            return EqualsTest(Number(float(t.text)))
        if t.kind in ("ATOM", "QATOM"):
            return EqualsTest(Atom(t.text))
        if t.kind == "{":
            op_tok = self.next()
            if op_tok.kind != "OP" or op_tok.text not in RELOPS:
                raise RuleSyntaxError(f"expected relational operator, got {op_tok.text!r}",
                                      op_tok.line, op_tok.col, expected="relop")
            num = self.expect("NUMBER", "number")
            self.expect("}")
            return RelationalTest(op_tok.text, Number(float(num.text)))
        raise RuleSyntaxError(f"expected value test, got {t.text!r}", t.line, t.col,
                              expected="value")

    def parse_action_group(self) -> list[MakeWME]:
        self.expect("(")
        t = self.next()
        if t.kind == "VAR":
            id_term: Variable | Identifier = Variable(t.text)
        elif t.kind == "IDENT":
            id_term = Identifier(t.text)
        else:
            raise RuleSyntaxError(f"expected action id, got {t.text!r}", t.line, t.col,
                                  expected="variable or @identifier")
        pairs: list[tuple[Atom, ValueTerm]] = []
        pref: Preference | None = None
        while True:
            nxt = self.peek()
            if nxt.kind == "^":
                self.next()
                attr_tok = self.next()
                if attr_tok.kind not in ("ATOM", "QATOM"):
                    raise RuleSyntaxError("action attribute must be an atom",
                                          attr_tok.line, attr_tok.col, expected="atom")
                pairs.append((Atom(attr_tok.text), self.parse_value_term()))
            elif nxt.kind in ("+", "-", "=") or (nxt.kind == "OP" and nxt.text == ">"):
                pref = self.parse_preference()
            elif nxt.kind == ")":
                self.next()
                break
            else:
                raise RuleSyntaxError(f"unexpected {nxt.text!r} in action", nxt.line,
                                      nxt.col, expected="^ or preference or )")
        if not pairs:
            t = self.peek()
            raise RuleSyntaxError("action needs at least one ^attribute value",
                                  t.line, t.col, expected="^")
        out = [MakeWME(id_term, a, v) for a, v in pairs]
        if pref is not None:
            out[-1] = replace(out[-1], preference=pref)
        return out

    def parse_value_term(self) -> ValueTerm:
        t = self.next()
        if t.kind == "VAR":
            return Variable(t.text)
        if t.kind == "IDENT":
            return Identifier(t.text)
        if t.kind == "NUMBER":
            return Number(float(t.text))
        if t.kind in ("ATOM", "QATOM"):
            return Atom(t.text)
        raise RuleSyntaxError(f"expected value term, got {t.text!r}", t.line, t.col,
                              expected="value")

    def parse_preference(self) -> Preference:
        t = self.next()
        if t.kind == "+":
            return Acceptable()
        if t.kind == "-":
            return Reject()
        if t.kind == "OP" and t.text == ">":
            if self.peek().kind in ("ATOM", "QATOM"):
                return BetterThan(Atom(self.next().text))
            return Best()
        if t.kind == "=":
            val = self.next()
            if val.kind == "NUMBER":
                return NumericIndifferent(Number(float(val.text)))
            if val.kind == "VAR":
                return NumericIndifferent(Variable(val.text))
            raise RuleSyntaxError("expected score after '='", val.line, val.col,
                                  expected="number or variable")
        raise RuleSyntaxError(f"bad preference {t.text!r}", t.line, t.col,
                              expected="preference")


def parse_production(text: str) -> Production:
    """Parse one ``sp { … }`` block and validate it."""
    parser = _Parser(_lex(text))
    prod = parser.parse_block()
    tail = parser.peek()
    if tail.kind != "EOF":
        raise RuleSyntaxError(f"trailing input {tail.text!r}", tail.line, tail.col,
                              expected="end of input")
    validate_production(prod)
    return prod


def parse_rules_file(text: str) -> list[Production]:
    """Parse a rules file containing any number of sp blocks."""
    parser = _Parser(_lex(text))
    out = []
    while not parser.at_end():
        prod = parser.parse_block()
        validate_production(prod)
        out.append(prod)
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_production(p: Production) -> None:
    """Static checks: a root state condition comes first, conditions form
    a connected variable graph, negations only constrain already-bound or
    purely local variables, and action variables are either condition-bound
    or fresh action-local identifiers."""
    if not p.actions:
        raise ValidationError("EmptyActions", p.name)
    first = p.conditions[0]
    if first.negated:
        raise ValidationError("MissingRootCondition",
                              f"{p.name}: first condition may not be negated")
    if not isinstance(first.id_test, Variable):
        raise ValidationError("MissingRootCondition",
                              f"{p.name}: first condition must bind the state variable")
    if not first.state_marked and first.attribute != STATE_FLAG_ATTR:
        raise ValidationError(
            "MissingRootCondition",
            f"{p.name}: first condition must test the state "
            f"(use 'state <s>' or ^{STATE_FLAG_ATTR.text})")

    # Positive bindings accumulate left to right.
    bound: set[str] = set()
    positive_vars: set[str] = set()
    for c in p.conditions:
        if not c.negated:
            positive_vars.update(v.name for v in _condition_vars(c))
    for c in p.conditions:
        names = {v.name for v in _condition_vars(c)}
        if c.negated:
            shared = names & positive_vars
            for v in sorted(shared):
                if v not in bound:
                    raise ValidationError(
                        "UnboundVariable",
                        f"{p.name}: negated condition uses {v!r} before it is bound")
        else:
            bound.update(names)

    # Connectivity: conditions reachable from the root variable through
    # shared variables. Ground or variable-free conditions are floating.
    root = p.conditions[0].id_test.name
    reached_vars = {root}
    pending = list(p.conditions)
    progress = True
    reached_conds: set[int] = set()
    while progress:
        progress = False
        for idx, c in enumerate(p.conditions):
            if idx in reached_conds:
                continue
            names = {v.name for v in _condition_vars(c)}
            if not names:
                continue
            if names & reached_vars:
                reached_conds.add(idx)
                reached_vars.update(names)
                progress = True
    for idx, c in enumerate(p.conditions):
        if idx not in reached_conds:
            raise ValidationError(
                "DisconnectedCondition",
                f"{p.name}: condition {idx + 1} does not connect to the state variable")

    # Action variables: bound by a positive condition, or action-local
    # fresh identifiers used only in id/value positions.
    condition_bound = {v.name for c in p.conditions if not c.negated
                       for v in _condition_vars(c)}
    for a in p.actions:
        for v in _action_vars(a):
            if v.name in condition_bound:
                continue
            # fresh action-local identifier variable
            if isinstance(a, MakeWME) and isinstance(a.preference, NumericIndifferent) \
                    and a.preference.score is v:
                raise ValidationError(
                    "UnboundVariable",
                    f"{p.name}: numeric score variable {v} is not condition-bound")
            if isinstance(a, ProposeOperator) and isinstance(a.preference, NumericIndifferent) \
                    and a.preference.score is v:
                raise ValidationError(
                    "UnboundVariable",
                    f"{p.name}: numeric score variable {v} is not condition-bound")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_SAFE_ATOM = re.compile(r"[A-Za-z][A-Za-z0-9_.:/-]*\Z")
_KEYWORDS = {"sp", "state"}


def _atom_text(a: Atom) -> str:
    if _SAFE_ATOM.match(a.text) and a.text not in _KEYWORDS:
        return a.text
    escaped = a.text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def _term_text(t: ValueTerm) -> str:
    if isinstance(t, Variable):
        return f"<{t.name}>"
    if isinstance(t, Identifier):
        return f"@{t.name}"
    if isinstance(t, Atom):
        return _atom_text(t)
    return render_number(t.value)


def _vtest_text(v: ConditionTest) -> str:
    if isinstance(v, BindTest):
        return f"<{v.var.name}>"
    if isinstance(v, EqualsTest):
        return _term_text(v.value)
    return f"{{ {v.op} {render_number(v.number.value)} }}"


def _condition_text(c: ConditionPattern) -> str:
    neg = "-" if c.negated else ""
    idt = f"<{c.id_test.name}>" if isinstance(c.id_test, Variable) else f"@{c.id_test.name}"
    if c.state_marked:
        idt = f"state {idt}"
    attr = f"<{c.attribute.name}>" if isinstance(c.attribute, Variable) else _atom_text(c.attribute)
    return f"{neg}({idt} ^{attr} {_vtest_text(c.value_test)})"


def _pref_text(p: Preference | None) -> str:
    if p is None:
        return ""
    if isinstance(p, NumericIndifferent):
        score = _term_text(p.score) if isinstance(p.score, Variable) \
            else render_number(p.score.value)
        return f" = {score}"
    if isinstance(p, BetterThan):
        return f" > {_atom_text(p.other)}"
    if isinstance(p, Best):
        return " >"
    return f" {p.token()}"


def serialize_production(p: Production) -> str:
    """Canonical text: one condition per line, ``-->`` on its own line,
    one action triple per line. Byte-stable for equal inputs."""
    lines = [f"sp {{ {p.name}"]
    for c in p.conditions:
        lines.append(f"  {_condition_text(c)}")
    lines.append("  -->")
    for a in lower_actions(p):
        idt = _term_text(a.id_term)
        lines.append(f"  ({idt} ^{_atom_text(a.attribute)} {_term_text(a.value_term)}"
                     f"{_pref_text(a.preference)})")
    lines.append("}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Bootstrap IF-THEN grammar
# ---------------------------------------------------------------------------

_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"|\'((?:[^\'\\]|\\.)*)\'')


def _if_then_tokens(line: str) -> list[str]:
    """Split a bootstrap line into words, keeping quoted titles whole."""
    out = []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        m = _QUOTED.match(line, i)
        if m:
            raw = m.group(1) if m.group(1) is not None else m.group(2)
            out.append('"' + raw.replace('\\"', '"').replace("\\'", "'"))
            i = m.end()
            continue
        j = i
        while j < n and not line[j].isspace():
            j += 1
        out.append(line[i:j])
        i = j
    return out


def _is_quoted(tok: str) -> bool:
    return tok.startswith('"')


def _boot_name(line: str) -> str:
    digest = hashlib.sha1(line.encode("utf-8")).hexdigest()[:10]
    return f"boot-{digest}"


def parse_if_then_rules(text: str, schema, boot_score: float = 0.6):
    """Parse bootstrap rule lines into productions.

    Grammar, one rule per line::

        IF <clause> [AND <clause>]... THEN <consequent>
        clause     := user LIKES <atom>
                    | user LIKES-ITEM "<title>"
                    | item HAS <attribute> <atom>
        consequent := RECOMMEND-GENRE <atom>
                    | RECOMMEND-ITEM "<title>"
                    | PROPOSE <operator> [<attr>=<value>]...

    Malformed lines are collected, not fatal. Returns
    ``(productions, rejected)`` where ``rejected`` is a list of
    ``(line_number, line, reason)``. Raises :class:`AllLinesRejected`
    only when the input had candidate lines and none parsed.

    ``schema`` is a :class:`cogrec.data.DomainSchema`; item attributes
    are checked against it and RECOMMEND-GENRE targets its primary
    attribute.
    """
    productions: list[Production] = []
    rejected: list[tuple[int, str, str]] = []
    candidates = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        candidates += 1
        try:
            productions.append(_compile_if_then(line, schema, boot_score))
        except ValueError as exc:
            rejected.append((lineno, line, str(exc)))
    if candidates and not productions:
        raise AllLinesRejected(f"{candidates} lines, none parsable")
    return productions, rejected


def _compile_if_then(line: str, schema, boot_score: float) -> Production:
    toks = _if_then_tokens(line)
    pos = 0

    def need(i: int, what: str) -> str:
        if i >= len(toks):
            raise ValueError(f"missing {what}")
        return toks[i]

    if need(0, "IF").upper() != "IF":
        raise ValueError("line must start with IF")
    pos = 1

    clauses: list[tuple[str, ...]] = []
    while True:
        subject = need(pos, "clause subject").lower()
        if subject == "user":
            verb = need(pos + 1, "clause verb").upper()
            if verb == "LIKES":
                val = need(pos + 2, "liked value")
                clauses.append(("likes", val.lstrip('"')))
                pos += 3
            elif verb == "LIKES-ITEM":
                val = need(pos + 2, "liked title")
                if not _is_quoted(val):
                    raise ValueError("LIKES-ITEM title must be quoted")
                clauses.append(("likes-item", val[1:]))
                pos += 3
            else:
                raise ValueError(f"unknown user clause verb {verb!r}")
        elif subject == "item":
            verb = need(pos + 1, "clause verb").upper()
            if verb != "HAS":
                raise ValueError(f"unknown item clause verb {verb!r}")
            attr = need(pos + 2, "item attribute")
            val = need(pos + 3, "item attribute value")
            if attr not in schema.attributes:
                raise ValueError(f"unknown attribute {attr!r}")
            clauses.append(("has", attr, val.lstrip('"')))
            pos += 4
        else:
            raise ValueError(f"unknown clause subject {subject!r}")
        nxt = need(pos, "AND or THEN").upper()
        if nxt == "AND":
            pos += 1
            continue
        if nxt == "THEN":
            pos += 1
            break
        raise ValueError(f"expected AND or THEN, got {toks[pos]!r}")

    consequent = need(pos, "consequent").upper()
    s, u, o, i = Variable("s"), Variable("u"), Variable("o"), Variable("i")
    conditions: list[ConditionPattern] = [
        ConditionPattern(s, Atom("user"), BindTest(u), state_marked=True),
    ]
    hist_count = 0
    needs_candidate = False
    has_clauses: list[tuple[str, str]] = []
    for clause in clauses:
        if clause[0] == "likes":
            conditions.append(ConditionPattern(u, Atom("preference"), EqualsTest(Atom(clause[1]))))
        elif clause[0] == "likes-item":
            hist_count += 1
            h = Variable("h")
            hi = Variable(f"hi{hist_count}")
            if hist_count == 1:
                conditions.append(ConditionPattern(u, Atom("history"), BindTest(h)))
            conditions.append(ConditionPattern(h, Atom("item"), BindTest(hi)))
            conditions.append(ConditionPattern(hi, Atom("title"), EqualsTest(Atom(clause[1]))))
        else:
            needs_candidate = True
            has_clauses.append((clause[1], clause[2]))

    if consequent == "RECOMMEND-GENRE":
        target = need(pos + 1, "genre value").lstrip('"')
        if pos + 2 != len(toks):
            raise ValueError("trailing words after consequent")
        conditions.append(ConditionPattern(s, Atom("candidate-item"), BindTest(i)))
        conditions.append(ConditionPattern(i, Atom(schema.primary), EqualsTest(Atom(target))))
        _append_has(conditions, has_clauses, i)
        # attribute evidence is scored; scores sum, so multi-attribute
        # matches outrank single ones
        action = ProposeOperator(o, Atom("select-item"), ((Atom("item"), i),),
                                 NumericIndifferent(Number(boot_score)))
    elif consequent == "RECOMMEND-ITEM":
        target = need(pos + 1, "item title")
        if not _is_quoted(target):
            raise ValueError("RECOMMEND-ITEM title must be quoted")
        if pos + 2 != len(toks):
            raise ValueError("trailing words after consequent")
        conditions.append(ConditionPattern(s, Atom("candidate-item"), BindTest(i)))
        conditions.append(ConditionPattern(i, Atom("title"), EqualsTest(Atom(target[1:]))))
        _append_has(conditions, has_clauses, i)
        # title association marks candidacy only; attribute evidence and
        # learned rules keep control of the ordering
        action = ProposeOperator(o, Atom("select-item"), ((Atom("item"), i),),
                                 Acceptable())
    elif consequent == "PROPOSE":
        op_name = need(pos + 1, "operator name")
        if op_name not in OPERATOR_VOCABULARY:
            raise ValueError(f"unknown operator {op_name!r}")
        params: list[tuple[Atom, ValueTerm]] = []
        for tok in toks[pos + 2:]:
            if "=" not in tok:
                raise ValueError(f"bad parameter {tok!r}, expected attr=value")
            attr, _, val = tok.partition("=")
            val = val.lstrip('"')
            term: ValueTerm
            try:
                term = Number(float(val))
            except ValueError:
                term = Atom(val)
            params.append((Atom(attr), term))
        if needs_candidate:
            conditions.append(ConditionPattern(s, Atom("candidate-item"), BindTest(i)))
            _append_has(conditions, has_clauses, i)
        action = ProposeOperator(o, Atom(op_name), tuple(params), Acceptable())
    else:
        raise ValueError(f"unknown consequent {consequent!r}")

    prod = Production(_boot_name(line), tuple(conditions), (action,),
                      provenance=Bootstrap())
    validate_production(prod)
    return prod


def _append_has(conditions: list[ConditionPattern], has_clauses, item_var: Variable) -> None:
    for attr, val in has_clauses:
        conditions.append(ConditionPattern(item_var, Atom(attr), EqualsTest(Atom(val))))
