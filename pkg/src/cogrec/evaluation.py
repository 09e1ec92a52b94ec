"""Evaluation harness: top-K metrics, call-frequency curves, head/tail
analysis, the ablation runner, and report files.

Metrics use the standard single-target definitions for a leave-one-out
split: a hit is the test item ranked within the top K, and the gain is
``1/log2(rank+1)`` (the ideal DCG for one relevant item is 1). Ranks are
1-based; ``None`` means the test item was not recommended at all.
"""

from __future__ import annotations

import csv as _csv
import hashlib
import io
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .agent import RecommendationResult, SessionConfig, bootstrap, run_session
from .data import DomainSchema, Interaction, ItemMeta, Split, head_tail_partition, split_leave_one_out
from .errors import CogrecError
from .gateway import CallLedger, Gateway, OracleProvider, ProviderConfig

log = logging.getLogger(__name__)

__all__ = [
    "VARIANTS", "GroupMetrics", "MetricReport", "hit_rate_at_k", "ndcg_at_k",
    "mean_metrics", "lcf_curve", "run_experiment", "popularity_ranking",
    "report_rows", "reports_csv", "reports_json", "curve_csv",
]

VARIANTS = ("full", "no_bootstrap", "no_chunking", "no_soar", "rules_only")


def hit_rate_at_k(rank: int | None, k: int) -> int:
    """1 iff the single test item sits within the top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1 if rank is not None and rank <= k else 0


def ndcg_at_k(rank: int | None, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) within the cut, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def mean_metrics(ranks: list[int | None], ks: tuple[int, ...] = (10, 20)) -> dict[str, float]:
    """Mean HR@K / N@K over users, keyed like ``hr@10`` / ``ndcg@10``."""
    out: dict[str, float] = {}
    n = len(ranks)
    for k in ks:
        hits = sum(hit_rate_at_k(r, k) for r in ranks)
        gains = sum(ndcg_at_k(r, k) for r in ranks)
        out[f"hr@{k}"] = hits / n if n else 0.0
        out[f"ndcg@{k}"] = gains / n if n else 0.0
    return out


def lcf_curve(session_calls: list[int], bucket_size: int) -> list[tuple[int, float]]:
    """Mean model calls per interaction, bucketed over the session stream
    in order. ``session_calls`` holds ImpasseResolve+Reprompt per session."""
    if bucket_size < 1:
        raise ValueError("bucket_size must be >= 1")
    out: list[tuple[int, float]] = []
    for start in range(0, len(session_calls), bucket_size):
        chunk = session_calls[start:start + bucket_size]
        out.append((start // bucket_size, sum(chunk) / len(chunk)))
    return out


@dataclass(frozen=True)
class GroupMetrics:
    users: int
    hr10: float
    hr20: float
    n10: float
    n20: float


@dataclass
class MetricReport:
    variant: str
    users: int
    hr10: float
    hr20: float
    n10: float
    n20: float
    head: GroupMetrics | None = None
    tail: GroupMetrics | None = None
    lcf: list[tuple[int, float]] = field(default_factory=list)
    total_calls: int = 0
    failed_sessions: int = 0
    config_hash: str = ""
    seed: int = 0
    provider_mode: str = "oracle"

    def __post_init__(self):
        for value in (self.hr10, self.hr20, self.n10, self.n20):
            if not 0.0 <= value <= 1.0:
                raise ValueError("metric out of [0, 1]")


def _group(ranks: list[int | None]) -> GroupMetrics:
    m = mean_metrics(ranks)
    return GroupMetrics(users=len(ranks), hr10=m["hr@10"], hr20=m["hr@20"],
                        n10=m["ndcg@10"], n20=m["ndcg@20"])


def popularity_ranking(splits: dict[str, Split],
                       train_counts: dict[str, int], k: int) -> dict[str, int | None]:
    """Pure-popularity baseline: rank candidates by train interaction
    count (ties by item id); returns the test item's rank per user."""
    ranks: dict[str, int | None] = {}
    for user, split in splits.items():
        ordered = sorted(split.candidates,
                         key=lambda i: (-train_counts.get(i, 0), i))[:k]
        try:
            ranks[user] = ordered.index(split.test.item) + 1
        except ValueError:
            ranks[user] = None
    return ranks


def _variant_config(variant: str, base: SessionConfig) -> SessionConfig:
    if variant == "full":
        return replace(base, bootstrap=True, chunking=True, soar=True)
    if variant == "no_bootstrap":
        return replace(base, bootstrap=False, chunking=True, soar=True)
    if variant == "no_chunking":
        return replace(base, bootstrap=True, chunking=False, soar=True)
    if variant == "no_soar":
        return replace(base, soar=False)
    if variant == "rules_only":
        return replace(base, bootstrap=False, chunking=False, soar=True)
    raise CogrecError(f"unknown variant {variant!r}")


def _config_hash(variant: str, config: SessionConfig, seed: int) -> str:
    payload = f"{variant}|{config}|{seed}"
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


def run_experiment(
    interactions: list[Interaction],
    items: dict[str, ItemMeta],
    schema: DomainSchema,
    variants: tuple[str, ...] = VARIANTS,
    base_config: SessionConfig | None = None,
    seed: int = 0,
    jobs: int = 1,
    bucket_size: int = 20,
    provider_factory=None,
    max_fail_rate: float = 0.01,
) -> dict[str, MetricReport]:
    """Run the agent variants over a leave-one-out split and report
    metrics. ``provider_factory(seed)`` may supply a non-oracle provider;
    ``rules_only`` runs with no gateway at all. Determinism holds at
    ``jobs=1`` with the oracle provider."""
    base_config = base_config or SessionConfig()
    splits = split_leave_one_out(interactions)
    users = sorted(splits)
    if not users:
        raise CogrecError("no users with enough interactions to split")
    train_all = [it for u in users for it in splits[u].train]
    head, _tail = head_tail_partition(train_all)
    train_counts: dict[str, int] = {}
    for it in train_all:
        train_counts[it.item] = train_counts.get(it.item, 0) + 1

    reports: dict[str, MetricReport] = {}
    for variant in variants:
        config = _variant_config(variant, base_config)
        if variant == "rules_only":
            gateway = None
        else:
            provider = provider_factory(seed) if provider_factory \
                else OracleProvider(items, schema, seed=seed)
            gateway = Gateway(provider, ProviderConfig(model=f"oracle-{seed}"),
                              ledger=CallLedger())
        pm = bootstrap(gateway, schema, config, items=items)
        pm_lock = threading.Lock()

        ranks: dict[str, int | None] = {}
        calls: dict[str, int] = {}
        failed: list[str] = []

        def one(user: str):
            split = splits[user]
            try:
                result = run_session(split, items, schema, pm, gateway, config,
                                     pm_lock=pm_lock)
            except CogrecError as exc:
                log.warning("session %s failed: %s", user, exc)
                return user, None, 0, True
            try:
                rank = result.items.index(split.test.item) + 1
            except ValueError:
                rank = None
            session_calls = result.ledger.get("ImpasseResolve", 0) \
                + result.ledger.get("Reprompt", 0)
            return user, rank, session_calls, False

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(one, users))
        else:
            outcomes = [one(u) for u in users]
        for user, rank, session_calls, fail in outcomes:
            if fail:
                failed.append(user)
                continue
            ranks[user] = rank
            calls[user] = session_calls

        if len(failed) > max_fail_rate * len(users):
            raise CogrecError(
                f"{variant}: {len(failed)}/{len(users)} sessions failed")

        ok_users = [u for u in users if u in ranks]
        overall = mean_metrics([ranks[u] for u in ok_users])
        head_users = [u for u in ok_users if splits[u].test.item in head]
        tail_users = [u for u in ok_users if splits[u].test.item not in head]
        reports[variant] = MetricReport(
            variant=variant,
            users=len(ok_users),
            hr10=overall["hr@10"], hr20=overall["hr@20"],
            n10=overall["ndcg@10"], n20=overall["ndcg@20"],
            head=_group([ranks[u] for u in head_users]) if head_users else None,
            tail=_group([ranks[u] for u in tail_users]) if tail_users else None,
            lcf=lcf_curve([calls[u] for u in ok_users], bucket_size),
            total_calls=gateway.ledger.total_calls() if gateway else 0,
            failed_sessions=len(failed),
            config_hash=_config_hash(variant, config, seed),
            seed=seed,
            provider_mode="none" if gateway is None else "oracle",
        )
    return reports


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def report_rows(reports: dict[str, MetricReport]) -> list[list]:
    header = ["variant", "users", "hr@10", "hr@20", "n@10", "n@20",
              "head_n@10", "tail_n@10", "total_calls", "failed",
              "config_hash", "seed", "provider"]
    rows: list[list] = [header]
    for variant in sorted(reports):
        r = reports[variant]
        rows.append([
            r.variant, r.users,
            f"{r.hr10:.6f}", f"{r.hr20:.6f}", f"{r.n10:.6f}", f"{r.n20:.6f}",
            f"{r.head.n10:.6f}" if r.head else "",
            f"{r.tail.n10:.6f}" if r.tail else "",
            r.total_calls, r.failed_sessions, r.config_hash, r.seed,
            r.provider_mode,
        ])
    return rows


def reports_csv(reports: dict[str, MetricReport]) -> str:
    buf = io.StringIO()
    _csv.writer(buf).writerows(report_rows(reports))
    return buf.getvalue()


def reports_json(reports: dict[str, MetricReport]) -> str:
    def enc(r: MetricReport) -> dict:
        return {
            "variant": r.variant, "users": r.users,
            "hr@10": r.hr10, "hr@20": r.hr20, "n@10": r.n10, "n@20": r.n20,
            "head": vars(r.head) if r.head else None,
            "tail": vars(r.tail) if r.tail else None,
            "lcf": r.lcf, "total_calls": r.total_calls,
            "failed_sessions": r.failed_sessions,
            "config_hash": r.config_hash, "seed": r.seed,
            "provider_mode": r.provider_mode,
        }
    return json.dumps({v: enc(r) for v, r in sorted(reports.items())},
                      indent=2, sort_keys=True)


def curve_csv(curve: list[tuple[int, float]]) -> str:
    buf = io.StringIO()
    writer = _csv.writer(buf)
    writer.writerow(["bucket", "calls_per_interaction"])
    for bucket, value in curve:
        writer.writerow([bucket, f"{value:.6f}"])
    return buf.getvalue()
