"""Session orchestration: perception (intent encoding, working-memory
setup), cognition (decision cycles with impasse handling), action
(collecting recommendations with their reasoning traces).

The always-loaded generic strategy is five rules: propose every live
candidate, mark candidates matching a user preference, reject unmarked
candidates once marked ones exist, surface explicit item scores as
proposal preferences, and apply a selected pick by recording it and
retiring the candidate. Knowledge beyond that arrives as bootstrap
rules (scored, so covered situations decide without the model) or as
chunks learned at impasses (scored higher, so resolved situations never
re-query).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace

from .bridge import StructuredQuery, parse_rank_response, symbol_to_text, text_to_chunk
from .bridge import load_template, render_template
from .chunking import build_chunk, internalize
from .data import DomainSchema, ItemMeta, Split
from .dsl import Bootstrap, Chunked, Manual, Reject, parse_rules_file
from .engine import (
    DecisionCycleRecord, Engine, Impasse, ProceduralMemory, ResolutionNote,
    binding_text, render_trace,
)
from .errors import (
    CogrecError, CycleLimitExceeded, EmptyConditions, ParseFailure,
    ProviderTimeout, ProviderUnavailable, UngroundedCondition, ValidationError,
)
from .gateway import PURPOSES, Gateway, frequency_intents, make_default_templates
from .memory import WorkingMemory
from .symbols import Atom, Identifier, Number

__all__ = [
    "SessionConfig", "RuleStep", "Explanation", "RecommendationResult",
    "builtin_rules", "vocabulary_apply_rules", "bootstrap", "run_session",
    "llm_direct", "explanations_jsonl",
]

RECOMMENDED = Atom("recommended")
CANDIDATE_ITEM = Atom("candidate-item")
HALTED = Atom("halted")
SELECT_ITEM = Atom("select-item")
ITEM = Atom("item")

_GENERIC_RULES_TEXT = """
# Always-loaded generic strategy.

sp { propose-candidates
  (state <s> ^candidates <c>)
  (<c> ^items <i>)
  -->
  (<s> ^operator <o> +)
  (<o> ^name select-item)
  (<o> ^item <i>)
}

sp { filter-by-intent-attribute
  (state <s> ^user <u>)
  (<u> ^preference ?v)
  (<s> ^candidates <c>)
  (<c> ^items <i>)
  (<i> ^?a ?v)
  -->
  (<i> ^intent-match ?v)
  (<s> ^any-intent-match true)
}

sp { score-by-overlap
  (state <s> ^any-intent-match true)
  (<s> ^candidates <c>)
  (<c> ^items <i>)
  -(<i> ^intent-match ?w)
  -->
  (<s> ^operator <o> -)
  (<o> ^name select-item)
  (<o> ^item <i>)
}

sp { select-best-scored
  (state <s> ^candidates <c>)
  (<c> ^items <i>)
  (<i> ^score ?n)
  -->
  (<s> ^operator <o> = ?n)
  (<o> ^name select-item)
  (<o> ^item <i>)
}

sp { emit-recommendation
  (state <s> ^operator <op>)
  (<op> ^name select-item)
  (<op> ^item <i>)
  (<s> ^candidates <c>)
  (<c> ^items <i>)
  -->
  (<s> ^recommended <i>)
  (<c> ^items <i> -)
  (<s> ^candidate-item <i> -)
  (<s> ^any-intent-match true -)
}
"""

_VOCABULARY_RULES_TEXT = """
# Application rules for the wider operator vocabulary reachable from
# bootstrap PROPOSE rules.

sp { apply-filter-by-attribute
  (state <s> ^operator <op>)
  (<op> ^name filter-by-attribute)
  (<op> ^attribute ?a)
  (<op> ^value ?v)
  (<s> ^candidates <c>)
  (<c> ^items <i>)
  -(<i> ^?a ?v)
  -->
  (<c> ^items <i> -)
  (<s> ^candidate-item <i> -)
}

sp { apply-score-item
  (state <s> ^operator <op>)
  (<op> ^name score-item)
  (<op> ^item <i>)
  (<op> ^value ?n)
  -->
  (<i> ^score ?n)
}

sp { apply-halt
  (state <s> ^operator <op>)
  (<op> ^name halt)
  -->
  (<s> ^halted true)
}
"""


def builtin_rules():
    """The five generic strategy rules, freshly parsed."""
    return parse_rules_file(_GENERIC_RULES_TEXT)


def vocabulary_apply_rules():
    return parse_rules_file(_VOCABULARY_RULES_TEXT)


@dataclass
class SessionConfig:
    k: int = 10
    cycle_limit: int = 200
    bootstrap: bool = True
    chunking: bool = True
    soar: bool = True
    chunk_scope: str = "global"  # "global" | "session"
    chunk_score: float = 0.8
    boot_score: float = 0.6
    candidate_cap: int = 100
    history_cap: int = 50
    query: str = ""  # optional current query; empty in batch evaluation

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.chunk_scope not in ("global", "session"):
            raise ValueError("chunk_scope must be 'global' or 'session'")


@dataclass(frozen=True)
class RuleStep:
    name: str
    provenance: str
    bindings: str


@dataclass(frozen=True)
class Explanation:
    rank: int
    item: str
    rules: tuple[RuleStep, ...]
    justification: str
    fallback: bool


@dataclass
class RecommendationResult:
    user: str
    items: tuple[str, ...]
    explanations: tuple[Explanation, ...]
    ledger: dict[str, int]
    truncated: bool = False
    records: list[DecisionCycleRecord] = field(default_factory=list)
    raw_response: str = ""  # direct-ranking mode keeps the whole response

    def trace_text(self) -> str:
        return render_trace(self.records)


def _provenance_text(prov) -> str:
    if isinstance(prov, Bootstrap):
        return "bootstrap"
    if isinstance(prov, Chunked):
        return f"chunked:{prov.impasse_id}"
    if isinstance(prov, Manual):
        return "manual"
    return type(prov).__name__.lower()


def explanations_jsonl(result: RecommendationResult) -> str:
    """One JSON object per recommended item."""
    lines = []
    for e in result.explanations:
        lines.append(json.dumps({
            "user": result.user,
            "rank": e.rank,
            "item": e.item,
            "rules": [{"name": r.name, "provenance": r.provenance,
                       "bindings": r.bindings} for r in e.rules],
            "justification": e.justification,
            "fallback": e.fallback,
        }, sort_keys=True))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def bootstrap(gateway: Gateway | None, schema: DomainSchema,
              config: SessionConfig,
              items: dict[str, ItemMeta] | None = None,
              templates: list[str] | None = None) -> ProceduralMemory:
    """Build the procedural memory a session starts from.

    Without bootstrap (the tabula-rasa ablation) that is exactly the five
    generic rules. With bootstrap it adds the operator-vocabulary apply
    rules and the model-generated IF-THEN knowledge, deduplicated."""
    pm = ProceduralMemory()
    for rule in builtin_rules():
        internalize(pm, rule)
    if not config.bootstrap:
        return pm
    for rule in vocabulary_apply_rules():
        internalize(pm, rule)
    if gateway is not None:
        if templates is None:
            templates = make_default_templates(schema, items=items,
                                               domain=schema.name)
        for rule in gateway.generate_bootstrap_rules(schema, templates,
                                                     boot_score=config.boot_score):
            internalize(pm, rule)
    return pm


# ---------------------------------------------------------------------------
# Working-memory setup (perception)
# ---------------------------------------------------------------------------

def _overlap(meta: ItemMeta | None, values: set[str]) -> int:
    if meta is None:
        return 0
    return len(values & meta.values())


def _pick_candidates(split: Split, items: dict[str, ItemMeta],
                     intent_values: set[str], cap: int) -> list[str]:
    """Catalog minus history, pre-filtered to the top ``cap`` by
    attribute overlap with the intents (ties by item id)."""
    ranked = sorted(split.candidates,
                    key=lambda i: (-_overlap(items.get(i), intent_values), i))
    return ranked[:cap] if cap else list(ranked)


def _init_memory(split: Split, items: dict[str, ItemMeta],
                 intents: tuple[tuple[str, str], ...],
                 config: SessionConfig) -> tuple[WorkingMemory, Identifier, list[str]]:
    wm = WorkingMemory()
    s, g, u, c, h = (wm.new_id(p) for p in "sguch")
    wm.add(s, Atom("state-is-valid"), Atom("true"))
    wm.add(s, Atom("goal"), g)
    wm.add(g, Atom("type"), Atom("recommend"))
    wm.add(s, Atom("user"), u)
    wm.add(u, Atom("history"), h)
    for it in split.train[-config.history_cap:]:
        iid = Identifier(it.item)
        wm.add(h, ITEM, iid)
        meta = items.get(it.item)
        if meta is not None:
            wm.add(iid, Atom("title"), Atom(meta.title))
    for attr, value in intents:
        wm.add(u, Atom("preference"), Atom(value))
        wm.add(u, Atom(attr), Atom(value))

    candidates = _pick_candidates(split, items,
                                  {v for _, v in intents}, config.candidate_cap)
    wm.add(s, Atom("candidates"), c)
    for item_id in candidates:
        iid = Identifier(item_id)
        wm.add(c, Atom("items"), iid)
        wm.add(s, CANDIDATE_ITEM, iid)
        meta = items.get(item_id)
        if meta is None:
            continue
        wm.add(iid, Atom("title"), Atom(meta.title))
        for attr, vals in sorted(meta.attributes.items()):
            for v in vals:
                wm.add(iid, Atom(attr), Atom(v))
    return wm, s, candidates


# ---------------------------------------------------------------------------
# Impasse handling
# ---------------------------------------------------------------------------

def _overlap_fallback_choice(impasse: Impasse, items: dict[str, ItemMeta],
                             intent_values: set[str]) -> Identifier | None:
    """Deterministic local resolution: best attribute overlap, ties by id."""
    pool = impasse.tied_items()
    if not pool:
        pool = [w.value for w in impasse.context.query(attr=CANDIDATE_ITEM)
                if isinstance(w.value, Identifier)]
    if not pool:
        return None
    return sorted(pool, key=lambda i: (-_overlap(items.get(i.name), intent_values),
                                       i.name))[0]


def _lexicographic_choice(impasse: Impasse) -> Identifier | None:
    pool = impasse.tied_items()
    if not pool:
        pool = [w.value for w in impasse.context.query(attr=CANDIDATE_ITEM)
                if isinstance(w.value, Identifier)]
    if not pool:
        return None
    return sorted(pool, key=lambda i: i.name)[0]


def _unique_chunk_name(pm: ProceduralMemory, name: str) -> str:
    if name not in pm:
        return name
    n = 2
    while f"{name}-{n}" in pm:
        n += 1
    return f"{name}-{n}"


class _ImpasseHandler:
    """Bridge + gateway + chunking handoff, with one reprompt then a
    deterministic fallback so sessions always terminate."""

    def __init__(self, gateway: Gateway | None, schema: DomainSchema,
                 items: dict[str, ItemMeta], intent_values: set[str],
                 pm: ProceduralMemory, config: SessionConfig,
                 pm_lock: threading.Lock | None = None,
                 chunk_sink=None):
        self.gateway = gateway
        self.schema = schema
        self.items = items
        self.intent_values = intent_values
        self.pm = pm
        self.config = config
        self.pm_lock = pm_lock
        self.chunk_sink = chunk_sink

    def __call__(self, impasse: Impasse, engine: Engine) -> ResolutionNote | None:
        if self.gateway is None:
            choice = _lexicographic_choice(impasse)
            if choice is None:
                return None
            return ResolutionNote(
                source="fallback", operator_name=SELECT_ITEM,
                parameters=((ITEM, choice),),
                justification="rules-only tie-break: lexicographically first candidate")

        query = symbol_to_text(impasse.context, impasse, self.schema)
        text, raw, failure = self._ask(query, impasse)
        if raw is None:
            choice = _overlap_fallback_choice(impasse, self.items, self.intent_values)
            if choice is None:
                return None
            return ResolutionNote(
                source="fallback", operator_name=SELECT_ITEM,
                parameters=((ITEM, choice),),
                justification=f"attribute-overlap fallback ({failure})",
                query_text=query.rendered, response_text=text)

        chunk_name = None
        chunk_outcome = None
        if self.config.chunking:
            try:
                prod = build_chunk(raw, impasse.context,
                                   default_score=self.config.chunk_score)
                prod = replace(prod, name=_unique_chunk_name(self.pm, prod.name))
                outcome = internalize(self.pm, prod, lock=self.pm_lock)
                chunk_name, chunk_outcome = outcome.name, outcome.status
                self.pm.notes.setdefault(chunk_name, raw.justification_text)
                if self.chunk_sink is not None and outcome.added:
                    self.chunk_sink(prod, raw.impasse_id, impasse.cycle)
            except (UngroundedCondition, EmptyConditions, ValidationError):
                pass  # resolution still applies; only learning is skipped
        return ResolutionNote(
            source="llm", operator_name=raw.operator_name,
            parameters=raw.parameters, chunk_name=chunk_name,
            chunk_outcome=chunk_outcome,
            justification=raw.justification_text,
            query_text=query.rendered, response_text=text)

    def _ask(self, query: StructuredQuery, impasse: Impasse):
        """One attempt plus one reprompt; returns (text, chunk|None, failure)."""
        prompt = query.rendered
        try:
            text = self.gateway.complete(prompt, "ImpasseResolve")
        except (ProviderUnavailable, ProviderTimeout) as exc:
            return None, None, f"provider unavailable: {exc}"
        try:
            return text, text_to_chunk(text, query, impasse.context, self.schema), ""
        except (ParseFailure, UngroundedCondition, EmptyConditions) as exc:
            failure = str(exc)
        reprompt = (f"{prompt}\n\nYour previous response was rejected: {failure}.\n"
                    f"Answer again using exactly the response format.")
        try:
            text = self.gateway.complete(reprompt, "Reprompt")
            return text, text_to_chunk(text, query, impasse.context, self.schema), ""
        except (ProviderUnavailable, ProviderTimeout) as exc:
            return None, None, f"provider unavailable: {exc}"
        except (ParseFailure, UngroundedCondition, EmptyConditions) as exc:
            return text, None, str(exc)


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

def run_session(split: Split, items: dict[str, ItemMeta], schema: DomainSchema,
                pm: ProceduralMemory, gateway: Gateway | None,
                config: SessionConfig,
                pm_lock: threading.Lock | None = None,
                chunk_sink=None) -> RecommendationResult:
    """Run the full perception-cognition-action loop for one user."""
    if not config.soar:
        if gateway is None:
            raise CogrecError("direct mode needs a gateway")
        return llm_direct(split, items, schema, gateway, config)

    user = split.user
    if gateway is not None:
        gateway.start_session(user)

    history = [(it.item, it.rating, it.timestamp)
               for it in split.train[-config.history_cap:]]
    if gateway is None:
        intents = frequency_intents([h[0] for h in history], items)
    else:
        intents = gateway.encode_user(history, query=config.query, items=items).intents

    session_pm = pm.clone() if config.chunk_scope == "session" else pm
    wm, state, _ = _init_memory(split, items, intents, config)
    engine = Engine(session_pm, wm, cycle_limit=config.cycle_limit, session_tag=user)
    handler = _ImpasseHandler(gateway, schema, items, {v for _, v in intents},
                              session_pm, config,
                              pm_lock=None if config.chunk_scope == "session" else pm_lock,
                              chunk_sink=chunk_sink)

    recommended: list[str] = []
    explanations: list[Explanation] = []
    truncated = False
    while len(recommended) < config.k:
        if not wm.query(id=state, attr=CANDIDATE_ITEM):
            break
        if wm.query(id=state, attr=HALTED):
            break
        try:
            record = engine.run_cycle(on_impasse=handler)
        except CycleLimitExceeded:
            truncated = True
            break
        new_items = _collect_recommendations(record, session_pm, recommended,
                                             explanations)
        if not new_items and record.selected is None and record.resolution is None:
            break  # unresolved impasse or inert cycle

    ledger = gateway.ledger.session_counts(user) if gateway is not None \
        else {p: 0 for p in PURPOSES}
    return RecommendationResult(
        user=user, items=tuple(recommended), explanations=tuple(explanations),
        ledger=ledger, truncated=truncated, records=engine.records)


def _collect_recommendations(record: DecisionCycleRecord, pm: ProceduralMemory,
                             recommended: list[str],
                             explanations: list[Explanation]) -> list[str]:
    new_items = [w.value.name for w in record.wm_added
                 if w.attribute == RECOMMENDED and isinstance(w.value, Identifier)]
    for item in new_items:
        if item in recommended:
            continue
        steps: list[RuleStep] = []
        fallback = False
        justification = ""
        if record.resolution is not None:
            res = record.resolution
            fallback = res.source == "fallback"
            justification = res.justification
            if res.chunk_name is not None and res.chunk_name in pm:
                prod = pm.productions[res.chunk_name]
                steps.append(RuleStep(res.chunk_name,
                                      _provenance_text(prod.provenance), ""))
        elif record.selected is not None:
            key = record.selected.key()
            seen = set()
            for prop in record.proposals:
                if prop.key() != key or prop.source_production in seen:
                    continue
                if isinstance(prop.preference, Reject):
                    continue
                seen.add(prop.source_production)
                prod = pm.productions.get(prop.source_production)
                prov = _provenance_text(prod.provenance) if prod else "unknown"
                steps.append(RuleStep(prop.source_production, prov,
                                      binding_text(prop.binding)))
                if prod is not None and prop.source_production in pm.notes:
                    justification = justification or pm.notes[prop.source_production]
        steps.append(RuleStep("emit-recommendation", "manual", ""))
        recommended.append(item)
        explanations.append(Explanation(
            rank=len(recommended), item=item, rules=tuple(steps),
            justification=justification, fallback=fallback))
    return new_items


# ---------------------------------------------------------------------------
# Direct-ranking path (the no-reasoner ablation)
# ---------------------------------------------------------------------------

def llm_direct(split: Split, items: dict[str, ItemMeta], schema: DomainSchema,
               gateway: Gateway, config: SessionConfig) -> RecommendationResult:
    """One prompt with history and candidates; the response is a ranked
    list, the explanation is the raw response text."""
    user = split.user
    gateway.start_session(user)
    history_ids = [it.item for it in split.train[-config.history_cap:]]
    intents = frequency_intents(history_ids, items)
    intent_values = {v for _, v in intents}
    candidates = _pick_candidates(split, items, intent_values, config.candidate_cap)

    def item_line(item_id: str, prefix: str) -> str:
        meta = items.get(item_id)
        if meta is None:
            return f"- {prefix}{item_id}"
        facts = "; ".join(f"{attr} = {v}" for attr, vals in
                          sorted(meta.attributes.items()) for v in vals)
        return f'- {prefix}{item_id} "{meta.title}": {facts}'

    prompt = render_template(load_template("direct_prompt.txt"), {
        "history": "\n".join(item_line(i, "") for i in history_ids) or "- (empty)",
        "candidates": "\n".join(item_line(i, "item ") for i in candidates) or "- (none)",
    })

    ranked: list[str] = []
    response = ""
    fallback = False
    try:
        response = gateway.complete(prompt, "Direct")
        ranked = parse_rank_response(response, tuple(candidates))
    except (ProviderUnavailable, ProviderTimeout):
        fallback = True
    except ParseFailure as exc:
        reprompt = (f"{prompt}\n\nYour previous response was rejected: {exc}.\n"
                    f"Reply with one RANK: line only.")
        try:
            response = gateway.complete(reprompt, "Reprompt")
            ranked = parse_rank_response(response, tuple(candidates))
        except (ProviderUnavailable, ProviderTimeout, ParseFailure):
            fallback = True
    if fallback:
        ranked = sorted(candidates,
                        key=lambda i: (-_overlap(items.get(i), intent_values), i))

    top = ranked[:config.k]
    explanations = tuple(
        Explanation(rank=n + 1, item=item, rules=(),
                    justification=response if not fallback
                    else "attribute-overlap fallback ranking",
                    fallback=fallback)
        for n, item in enumerate(top))
    return RecommendationResult(
        user=user, items=tuple(top), explanations=explanations,
        ledger=gateway.ledger.session_counts(user), raw_response=response)
