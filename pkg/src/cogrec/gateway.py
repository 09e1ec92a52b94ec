"""Gateway to the language-model provider: transport, caching, call
accounting, and the two knowledge roles (semantic encoding of user
history, bootstrap rule generation).

Three providers implement ``complete_once(prompt) -> str``:

* ``LiveProvider`` — any chat-completion endpoint taking
  ``{model, messages, temperature}`` JSON, retried with exponential
  backoff on transient transport errors.
* ``OracleProvider`` — the deterministic offline stand-in. It knows the
  catalog metadata and answers every prompt kind by content overlap:
  impasse prompts get the candidate sharing the most attribute values
  with the user-profile lines (ties broken lexicographically), ranking
  prompts get an overlap-sorted list, bootstrap prompts get IF-THEN
  rules over the schema, encode prompts get majority-attribute intents.
  Pure, seeded, no network.
* ``ReplayProvider`` — cache-only; a miss is a provider failure, which
  makes recorded live runs exactly reproducible.

Cache hits never count as calls; the ledger counts calls by purpose so
call-frequency curves can be computed per session.
"""

from __future__ import annotations

import csv as _csv
import hashlib
import io
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data import DomainSchema, ItemMeta
from .dsl import Production, parse_if_then_rules
from .errors import (AllLinesRejected, BootstrapEmpty, ProviderTimeout,
                     ProviderUnavailable)
from .bridge import load_template, render_template

log = logging.getLogger(__name__)

__all__ = [
    "PURPOSES", "ProviderConfig", "CallLedger", "ResponseCache",
    "PerceptionResult", "LiveProvider", "OracleProvider", "ReplayProvider",
    "Gateway", "make_default_templates", "frequency_intents",
]

PURPOSES = ("Bootstrap", "ImpasseResolve", "Encode", "Reprompt", "Direct")


@dataclass
class ProviderConfig:
    endpoint: str = ""
    model: str = "oracle"
    api_key_env: str = "COGREC_API_KEY"
    temperature: float = 0.0
    timeout_s: float = 30.0
    max_retries: int = 2
    max_inflight: int = 4
    embed_dim: int = 128

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class PerceptionResult:
    """Extracted user intents plus an optional embedding vector. The
    embedding is carried through but never consulted by the reasoner."""

    intents: tuple[tuple[str, str], ...]  # (attribute, value) pairs
    embedding: tuple[float, ...] | None = None


class CallLedger:
    """Per-session and cumulative call counters by purpose; cache hits
    are tracked separately and are not calls."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._sessions: dict[str, dict[str, int]] = {}
        self._session_hits: dict[str, dict[str, int]] = {}
        self._order: list[str] = []
        self._current = "-"

    def start_session(self, session_id: str) -> None:
        with self._lock:
            self._current = session_id
            if session_id not in self._sessions:
                self._sessions[session_id] = {p: 0 for p in PURPOSES}
                self._session_hits[session_id] = {p: 0 for p in PURPOSES}
                self._order.append(session_id)

    def record_call(self, purpose: str) -> None:
        with self._lock:
            self._ensure_current()
            self._sessions[self._current][purpose] += 1

    def record_cache_hit(self, purpose: str) -> None:
        with self._lock:
            self._ensure_current()
            self._session_hits[self._current][purpose] += 1

    def _ensure_current(self) -> None:
        if self._current not in self._sessions:
            self._sessions[self._current] = {p: 0 for p in PURPOSES}
            self._session_hits[self._current] = {p: 0 for p in PURPOSES}
            self._order.append(self._current)

    def session_counts(self, session_id: str) -> dict[str, int]:
        with self._lock:
            return dict(self._sessions.get(session_id, {p: 0 for p in PURPOSES}))

    def session_cache_hits(self, session_id: str) -> dict[str, int]:
        with self._lock:
            return dict(self._session_hits.get(session_id, {p: 0 for p in PURPOSES}))

    def cumulative(self) -> dict[str, int]:
        with self._lock:
            out = {p: 0 for p in PURPOSES}
            for counts in self._sessions.values():
                for p, n in counts.items():
                    out[p] += n
            return out

    def sessions(self) -> list[str]:
        with self._lock:
            return list(self._order)

    def total_calls(self) -> int:
        return sum(self.cumulative().values())

    def export_csv(self) -> str:
        """``session,purpose,calls,cache_hits`` rows in session order."""
        buf = io.StringIO()
        writer = _csv.writer(buf)
        writer.writerow(["session", "purpose", "calls", "cache_hits"])
        for sid in self.sessions():
            counts = self.session_counts(sid)
            hits = self.session_cache_hits(sid)
            for purpose in PURPOSES:
                writer.writerow([sid, purpose, counts[purpose], hits[purpose]])
        return buf.getvalue()


class ResponseCache:
    """Content-keyed response cache, optionally persisted as
    ``<dir>/<sha256>.txt`` files for replayable experiments."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, str] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(model: str, prompt: str) -> str:
        return hashlib.sha256(f"{model}\x00{prompt}".encode("utf-8")).hexdigest()

    def get(self, key: str) -> str | None:
        with self._lock:
            if key in self._memory:
                return self._memory[key]
        if self.directory:
            path = self.directory / f"{key}.txt"
            if path.exists():
                text = path.read_text(encoding="utf-8")
                with self._lock:
                    self._memory[key] = text
                return text
        return None

    def put(self, key: str, value: str) -> None:
        with self._lock:
            self._memory[key] = value
        if self.directory:
            (self.directory / f"{key}.txt").write_text(value, encoding="utf-8")


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class LiveProvider:
    """Chat-completion client for any OpenAI-style endpoint."""

    def __init__(self, config: ProviderConfig):
        if not config.endpoint:
            raise ProviderUnavailable("no endpoint configured")
        self.config = config

    def complete_once(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                resp = requests.post(self.config.endpoint, json=body,
                                     headers=headers, timeout=self.config.timeout_s)
                if resp.status_code >= 500:
                    raise ProviderUnavailable(f"server error {resp.status_code}")
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except requests.Timeout as exc:
                last_error = ProviderTimeout(str(exc))
            except (requests.ConnectionError, ProviderUnavailable) as exc:
                last_error = exc if isinstance(exc, ProviderUnavailable) \
                    else ProviderUnavailable(str(exc))
            except (KeyError, ValueError, requests.RequestException) as exc:
                raise ProviderUnavailable(f"bad provider response: {exc}") from exc
            if attempt < self.config.max_retries:
                time.sleep(min(2.0 ** attempt * 0.5, 8.0))
        if isinstance(last_error, ProviderTimeout):
            raise last_error
        raise ProviderUnavailable(str(last_error))


class ReplayProvider:
    """Never calls out; pairs with a populated cache for exact replays."""

    def complete_once(self, prompt: str) -> str:
        raise ProviderUnavailable("replay mode: response not in cache")


class OracleProvider:
    """Deterministic content-based stand-in with full catalog knowledge."""

    def __init__(self, items: dict[str, ItemMeta], schema: DomainSchema, seed: int = 0):
        self.items = items
        self.schema = schema
        self.seed = seed  # reserved; the oracle is deterministic by content

    # -- prompt section helpers ------------------------------------------------

    _PROFILE_RE = re.compile(r"^-\s*user\.([A-Za-z0-9_-]+)\s*=\s*(.+?)\s*$")
    _CANDIDATE_RE = re.compile(r"^-\s*item\s+(\S+)")
    _HISTORY_RE = re.compile(r"^-\s*(\S+)")
    _VALUES_RE = re.compile(r"^VALUES:\s*(.+)$")
    _ATTR_RE = re.compile(r"^ATTRIBUTE:\s*(.+)$")
    _TITLES_RE = re.compile(r"^TITLES:\s*(.+)$")
    _HEADER_RE = re.compile(r"^[A-Z][A-Z ]{2,}\Z")

    @classmethod
    def _section(cls, prompt: str, header: str) -> list[str]:
        out: list[str] = []
        inside = False
        for line in prompt.splitlines():
            stripped = line.strip()
            if stripped == header:
                inside = True
                continue
            if inside and cls._HEADER_RE.match(stripped):
                break
            if inside:
                out.append(stripped)
        return [ln for ln in out if ln]

    @staticmethod
    def _unquote(text: str) -> str:
        text = text.strip()
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            return text[1:-1]
        return text

    def _profile_values(self, prompt: str) -> list[tuple[str, str]]:
        out = []
        for line in self._section(prompt, "USER PROFILE"):
            m = self._PROFILE_RE.match(line)
            if m:
                out.append((m.group(1), self._unquote(m.group(2))))
        return out

    def _candidate_ids(self, prompt: str) -> list[str]:
        out = []
        for line in self._section(prompt, "CANDIDATES"):
            m = self._CANDIDATE_RE.match(line)
            if m:
                out.append(m.group(1).rstrip(":"))
        return out

    def _item_values(self, item_id: str) -> dict[str, set[str]]:
        meta = self.items.get(item_id)
        if meta is None:
            return {}
        return {attr: set(vals) for attr, vals in meta.attributes.items()}

    def overlap(self, profile_values: set[str], item_id: str) -> int:
        """Distinct profile values present among the item's attribute values."""
        item_vals = set()
        for vals in self._item_values(item_id).values():
            item_vals.update(vals)
        return len(profile_values & item_vals)

    # -- responses ---------------------------------------------------------------

    def complete_once(self, prompt: str) -> str:
        if "RECOMMEND:" in prompt:
            return self._impasse_response(prompt)
        if "RANK:" in prompt:
            return self._rank_response(prompt)
        if "IF-THEN" in prompt:
            return self._bootstrap_response(prompt)
        if "user.likes-" in prompt:
            return self._encode_response(prompt)
        return ""

    def _impasse_response(self, prompt: str) -> str:
        profile = self._profile_values(prompt)
        profile_vals = {v for _, v in profile}
        candidates = self._candidate_ids(prompt)
        if not candidates:
            return ""
        scores = {c: self.overlap(profile_vals, c) for c in candidates}
        top_score = max(scores.values())
        pick = sorted(c for c in candidates if scores[c] == top_score)[0]

        because: list[str] = []
        item_vals = self._item_values(pick)
        matched = sorted(v for v in profile_vals
                         if any(v in vals for vals in item_vals.values()))
        for value in matched:
            user_attr = next(a for a, v in profile if v == value)
            item_attr = sorted(a for a, vals in item_vals.items() if value in vals)[0]
            because.append(f"- user.{user_attr} = {value}")
            because.append(f"- item.{item_attr} = {value}")
        if not because:
            pairs = sorted((a, v) for a, vals in item_vals.items() for v in vals)
            if pairs:
                because.append(f"- item.{pairs[0][0]} = {pairs[0][1]}")
            elif profile:
                because.append(f"- user.{profile[0][0]} = {profile[0][1]}")
        lines = [f"RECOMMEND: {pick}", "BECAUSE:"] + because
        return "\n".join(lines)

    def _rank_response(self, prompt: str) -> str:
        history_ids = [m.group(1) for m in
                       (self._HISTORY_RE.match(ln) for ln in self._section(prompt, "HISTORY"))
                       if m]
        counts: dict[tuple[str, str], int] = {}
        for item_id in history_ids:
            for attr, vals in self._item_values(item_id).items():
                for v in vals:
                    counts[(attr, v)] = counts.get((attr, v), 0) + 1
        # majority profile, mirroring the encode role: top two values per
        # attribute
        profile_vals: set[str] = set()
        for attr in {a for a, _ in counts}:
            ranked_vals = sorted(((n, v) for (a, v), n in counts.items() if a == attr),
                                 key=lambda nv: (-nv[0], nv[1]))
            profile_vals.update(v for _, v in ranked_vals[:2])
        candidates = self._candidate_ids(prompt)
        ranked = sorted(candidates,
                        key=lambda c: (-self.overlap(profile_vals, c), c))
        return "RANK: " + ", ".join(ranked)

    def _bootstrap_response(self, prompt: str) -> str:
        lines: list[str] = []
        attr = None
        for ln in prompt.splitlines():
            m = self._ATTR_RE.match(ln.strip())
            if m:
                attr = m.group(1).strip()
        for ln in prompt.splitlines():
            m = self._VALUES_RE.match(ln.strip())
            if m:
                for value in [v.strip() for v in m.group(1).split(",") if v.strip()]:
                    lines.append(f"IF user LIKES {value} THEN RECOMMEND-GENRE {value}")
                    if attr and attr != self.schema.primary:
                        lines.append(f"IF user LIKES {value} AND item HAS {attr} {value} "
                                     f"THEN RECOMMEND-GENRE {value}")
            m = self._TITLES_RE.match(ln.strip())
            if m:
                titles = [self._unquote(t) for t in m.group(1).split("|") if t.strip()]
                lines.extend(self._pair_rules(titles))
        return "\n".join(lines)

    def _pair_rules(self, titles: list[str]) -> list[str]:
        by_title = {meta.title: meta for meta in self.items.values()}
        out = []
        chosen = [t for t in titles if t in by_title]
        for i, t1 in enumerate(chosen):
            best_mate, best_shared = None, 0
            for t2 in chosen:
                if t2 == t1:
                    continue
                shared = len(by_title[t1].values() & by_title[t2].values())
                if shared > best_shared or (shared == best_shared and best_mate
                                            and t2 < best_mate):
                    best_mate, best_shared = t2, shared
            if best_mate and best_shared >= 1:
                out.append(f'IF user LIKES-ITEM "{t1}" THEN RECOMMEND-ITEM "{best_mate}"')
        return out

    def _encode_response(self, prompt: str) -> str:
        history_ids = [m.group(1) for m in
                       (self._HISTORY_RE.match(ln) for ln in self._section(prompt, "HISTORY"))
                       if m]
        counts: dict[tuple[str, str], int] = {}
        for item_id in history_ids:
            for attr, vals in self._item_values(item_id).items():
                for v in vals:
                    counts[(attr, v)] = counts.get((attr, v), 0) + 1
        lines = []
        for attr in sorted({a for a, _ in counts}):
            ranked = sorted(((n, v) for (a, v), n in counts.items() if a == attr),
                            key=lambda nv: (-nv[0], nv[1]))
            for _, value in ranked[:2]:
                lines.append(f"- user.likes-{attr} = {value}")
        query_section = " ".join(self._section(prompt, "QUERY"))
        vocab = {(attr, v) for attr, vals in self.schema.attributes.items() for v in vals}
        for token in re.findall(r"[A-Za-z][A-Za-z0-9-]*", query_section):
            token = token.lower()
            for attr, value in sorted(vocab):
                if token == value:
                    line = f"- user.likes-{attr} = {value}"
                    if line not in lines:
                        lines.append(line)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

def frequency_intents(history_items: list[str], items: dict[str, ItemMeta],
                      top_n: int = 2) -> tuple[tuple[str, str], ...]:
    """Fallback intent extraction: top attribute values by frequency in
    the history metadata; no model involved."""
    counts: dict[tuple[str, str], int] = {}
    for item_id in history_items:
        meta = items.get(item_id)
        if meta is None:
            continue
        for attr, vals in meta.attributes.items():
            for v in vals:
                counts[(attr, v)] = counts.get((attr, v), 0) + 1
    out: list[tuple[str, str]] = []
    for attr in sorted({a for a, _ in counts}):
        ranked = sorted(((n, v) for (a, v), n in counts.items() if a == attr),
                        key=lambda nv: (-nv[0], nv[1]))
        out.extend(("likes-" + attr, v) for _, v in ranked[:top_n])
    return tuple(out)


_INTENT_LINE = re.compile(r"^-\s*user\.([A-Za-z0-9_-]+)\s*=\s*(.+?)\s*$")


class Gateway:
    """Uniform entry point: caching, accounting and the knowledge roles.
    Shareable across parallel sessions."""

    def __init__(self, provider, config: ProviderConfig | None = None,
                 cache: ResponseCache | None = None,
                 ledger: CallLedger | None = None):
        self.provider = provider
        self.config = config or ProviderConfig()
        self.cache = cache
        self.ledger = ledger or CallLedger()
        self._inflight = threading.Semaphore(self.config.max_inflight)

    def start_session(self, session_id: str) -> None:
        self.ledger.start_session(session_id)

    def complete(self, prompt: str, purpose: str) -> str:
        """Answer a prompt; consult the cache first, count the call."""
        key = ResponseCache.key(self.config.model, prompt)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                self.ledger.record_cache_hit(purpose)
                return hit
        with self._inflight:
            text = self.provider.complete_once(prompt)
        self.ledger.record_call(purpose)
        if self.cache is not None:
            self.cache.put(key, text)
        return text

    # -- knowledge roles --------------------------------------------------------

    def encode_user(self, history: list[tuple[str, float, int]], query: str = "",
                    items: dict[str, ItemMeta] | None = None) -> PerceptionResult:
        """Extract preference intents from an interaction history. Never
        fails a session: provider or grammar trouble degrades to
        frequency-derived intents."""
        items = items or {}
        history_ids = [h[0] for h in history]
        history_lines = []
        for item_id in history_ids:
            meta = items.get(item_id)
            if meta is None:
                history_lines.append(f"- {item_id}")
                continue
            facts = "; ".join(f"{attr} = {v}" for attr, vals in
                              sorted(meta.attributes.items()) for v in vals)
            history_lines.append(f'- {item_id} "{meta.title}": {facts}')
        prompt = render_template(load_template("encode_prompt.txt"), {
            "history": "\n".join(history_lines) if history_lines else "- (empty)",
            "query": query or "(none)",
        })
        try:
            text = self.complete(prompt, "Encode")
        except (ProviderUnavailable, ProviderTimeout):
            return PerceptionResult(intents=frequency_intents(history_ids, items))
        intents: list[tuple[str, str]] = []
        for line in text.splitlines():
            m = _INTENT_LINE.match(line.strip())
            if m:
                attr, value = m.group(1), m.group(2).strip().strip('"')
                if (attr, value) not in intents:
                    intents.append((attr, value))
        if not intents:
            return PerceptionResult(intents=frequency_intents(history_ids, items))
        return PerceptionResult(intents=tuple(intents))

    def generate_bootstrap_rules(self, schema: DomainSchema,
                                 templates: list[str],
                                 boot_score: float = 0.6) -> list[Production]:
        """Run every bootstrap prompt and parse the IF-THEN responses.
        Per-template rejections are logged; zero rules overall is fatal."""
        if not templates:
            raise BootstrapEmpty("no bootstrap templates configured")
        out: list[Production] = []
        for idx, template in enumerate(templates):
            try:
                text = self.complete(template, "Bootstrap")
            except (ProviderUnavailable, ProviderTimeout) as exc:
                log.warning("bootstrap template %d failed: %s", idx, exc)
                continue
            try:
                rules, rejected = parse_if_then_rules(text, schema, boot_score=boot_score)
            except AllLinesRejected as exc:
                log.warning("bootstrap template %d: %s", idx, exc)
                continue
            for lineno, line, reason in rejected:
                log.info("bootstrap template %d line %d rejected (%s): %s",
                         idx, lineno, reason, line)
            out.extend(rules)
        if not out:
            raise BootstrapEmpty("bootstrap produced zero rules")
        return out


def make_default_templates(schema: DomainSchema,
                           items: dict[str, ItemMeta] | None = None,
                           count: int = 10, domain: str = "media") -> list[str]:
    """Build the default high-level prompt templates: value chunks of the
    primary attribute plus catalog title-pair prompts."""
    values_tpl = load_template("bootstrap_values_prompt.txt")
    pairs_tpl = load_template("bootstrap_pairs_prompt.txt")
    primary_values = list(schema.attributes.get(schema.primary, ()))
    n_value_templates = max(count - 2, 1) if items else count
    chunks: list[list[str]] = [[] for _ in range(min(n_value_templates,
                                                     max(len(primary_values), 1)))]
    for i, value in enumerate(primary_values):
        chunks[i % len(chunks)].append(value)
    templates = [
        render_template(values_tpl, {
            "domain": domain,
            "attribute": schema.primary,
            "values": ", ".join(chunk),
        })
        for chunk in chunks if chunk
    ]
    if items:
        titles = sorted(meta.title for meta in items.values())
        half = (len(titles) + 1) // 2
        for part in (titles[:half], titles[half:]):
            sample = part[:40]
            if sample:
                templates.append(render_template(pairs_tpl, {
                    "domain": domain,
                    "titles": " | ".join(f'"{t}"' for t in sample),
                }))
    return templates[:count] if count else templates
