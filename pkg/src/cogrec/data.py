"""Dataset ingestion, preprocessing, splits and popularity partitions.

Three input layouts are supported, each a directory:

* ``movielens-dat`` — ``ratings.dat`` with ``user::item::rating::ts``
  lines and ``movies.dat`` with ``item::title::g1|g2|…`` (latin-1
  tolerated, as shipped by the classic archives).
* ``csv`` — ``interactions.csv`` with header
  ``user_id,item_id,rating,timestamp`` and ``items.csv`` with header
  ``item_id,title,attribute,value`` (one row per attribute value).
* ``jsonl`` — ``interactions.jsonl`` and ``items.jsonl`` plus a
  ``mapping.json`` naming which JSON fields play which role.

Preprocessing repeats the "drop users with fewer than ``k`` interactions,
then items with fewer than ``k``" sweep until a fixpoint, so the output
satisfies both thresholds at once.
"""

from __future__ import annotations

import csv as _csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyAfterFilter, FormatError

__all__ = [
    "Interaction", "ItemMeta", "DomainSchema", "Split", "LoadedData",
    "load", "preprocess", "split_leave_one_out", "head_tail_partition",
    "schema_from_items", "sparsity",
]


@dataclass(frozen=True, slots=True)
class Interaction:
    user: str
    item: str
    rating: float
    timestamp: int


@dataclass(frozen=True)
class ItemMeta:
    item: str
    title: str
    attributes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def values(self) -> set[str]:
        out: set[str] = set()
        for vals in self.attributes.values():
            out.update(vals)
        return out


@dataclass(frozen=True)
class DomainSchema:
    """Closed attribute vocabulary with value domains, e.g.
    genre -> (action, comedy, …). ``primary`` names the attribute the
    RECOMMEND-GENRE bootstrap form targets."""

    name: str
    attributes: dict[str, tuple[str, ...]]
    primary: str
    version: str = ""

    def __post_init__(self):
        if not self.version:
            digest = hashlib.sha1(
                json.dumps({k: sorted(v) for k, v in sorted(self.attributes.items())},
                           sort_keys=True).encode()).hexdigest()[:12]
            object.__setattr__(self, "version", digest)

    def knows(self, attribute: str) -> bool:
        return attribute in self.attributes


@dataclass(frozen=True)
class Split:
    """Per-user leave-one-out split: chronological train prefix, the last
    interaction as test target, candidates = catalog minus train items."""

    user: str
    train: tuple[Interaction, ...]
    test: Interaction
    candidates: tuple[str, ...]


@dataclass
class LoadedData:
    interactions: list[Interaction]
    items: dict[str, ItemMeta]
    malformed: list[tuple[int, str]] = field(default_factory=list)


def schema_from_items(items: dict[str, ItemMeta], name: str = "dataset",
                      primary: str | None = None) -> DomainSchema:
    vocab: dict[str, set[str]] = {}
    for meta in items.values():
        for attr, vals in meta.attributes.items():
            vocab.setdefault(attr, set()).update(vals)
    attributes = {a: tuple(sorted(v)) for a, v in sorted(vocab.items())}
    if primary is None:
        primary = "genre" if "genre" in attributes else (next(iter(attributes), "genre"))
    return DomainSchema(name=name, attributes=attributes, primary=primary)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_lines(path: Path) -> list[str]:
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        text = raw.decode("latin-1")
    return text.splitlines()


def load(path: str | Path, format: str) -> LoadedData:
    """Parse a dataset directory; malformed lines are reported, not fatal."""
    path = Path(path)
    if not path.exists():
        raise OSError(f"dataset path does not exist: {path}")
    if format == "movielens-dat":
        return _load_movielens(path)
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise FormatError(f"unknown dataset format {format!r}")


def _load_movielens(root: Path) -> LoadedData:
    out = LoadedData([], {})
    ratings = root / "ratings.dat"
    movies = root / "movies.dat"
    if not ratings.exists():
        raise OSError(f"missing {ratings}")
    for lineno, line in enumerate(_read_lines(ratings), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            out.malformed.append((lineno, "expected user::item::rating::timestamp"))
            continue
        try:
            out.interactions.append(Interaction(
                user=parts[0], item=parts[1],
                rating=float(parts[2]), timestamp=int(parts[3])))
        except ValueError:
            out.malformed.append((lineno, "non-numeric rating or timestamp"))
    if movies.exists():
        for lineno, line in enumerate(_read_lines(movies), start=1):
            if not line.strip():
                continue
            parts = line.split("::")
            if len(parts) != 3:
                out.malformed.append((lineno, "expected item::title::genres"))
                continue
            genres = tuple(sorted(g.strip().lower() for g in parts[2].split("|") if g.strip()))
            out.items[parts[0]] = ItemMeta(
                item=parts[0], title=parts[1], attributes={"genre": genres})
    return out


def _load_csv(root: Path) -> LoadedData:
    out = LoadedData([], {})
    inter_path = root / "interactions.csv"
    items_path = root / "items.csv"
    if not inter_path.exists():
        raise OSError(f"missing {inter_path}")
    with open(inter_path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        required = {"user_id", "item_id", "rating", "timestamp"}
        if reader.fieldnames and not required <= set(reader.fieldnames):
            raise FormatError(
                f"interactions.csv header must contain {sorted(required)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.interactions.append(Interaction(
                    user=row["user_id"], item=row["item_id"],
                    rating=float(row["rating"]), timestamp=int(row["timestamp"])))
            except (KeyError, TypeError, ValueError):
                out.malformed.append((lineno, "bad interaction row"))
    if items_path.exists():
        attrs: dict[str, dict[str, list[str]]] = {}
        titles: dict[str, str] = {}
        with open(items_path, newline="", encoding="utf-8") as fh:
            reader = _csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                item = row.get("item_id")
                if not item:
                    out.malformed.append((lineno, "bad item row"))
                    continue
                titles.setdefault(item, row.get("title") or item)
                attr, value = row.get("attribute"), row.get("value")
                if attr and value:
                    attrs.setdefault(item, {}).setdefault(attr, []).append(value)
        for item, title in titles.items():
            out.items[item] = ItemMeta(
                item=item, title=title,
                attributes={a: tuple(sorted(set(vs)))
                            for a, vs in sorted(attrs.get(item, {}).items())})
    return out


def _load_jsonl(root: Path) -> LoadedData:
    mapping_path = root / "mapping.json"
    if not mapping_path.exists():
        raise FormatError("jsonl datasets need a mapping.json")
    mapping = json.loads(mapping_path.read_text(encoding="utf-8"))
    out = LoadedData([], {})
    inter_path = root / "interactions.jsonl"
    if not inter_path.exists():
        raise OSError(f"missing {inter_path}")
    for lineno, line in enumerate(_read_lines(inter_path), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.interactions.append(Interaction(
                user=str(rec[mapping["user"]]), item=str(rec[mapping["item"]]),
                rating=float(rec.get(mapping.get("rating", ""), 1.0) or 1.0),
                timestamp=int(rec[mapping["timestamp"]])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            out.malformed.append((lineno, "bad interaction record"))
    items_path = root / "items.jsonl"
    if items_path.exists():
        attr_fields: dict[str, str] = mapping.get("attributes", {})
        for lineno, line in enumerate(_read_lines(items_path), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                item = str(rec[mapping.get("item_id", mapping["item"])])
                attributes = {}
                for attr, fld in sorted(attr_fields.items()):
                    vals = rec.get(fld)
                    if vals is None:
                        continue
                    if isinstance(vals, str):
                        vals = [vals]
                    attributes[attr] = tuple(sorted({str(v).lower() for v in vals}))
                out.items[item] = ItemMeta(
                    item=item, title=str(rec.get(mapping.get("title", ""), item)),
                    attributes=attributes)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                out.malformed.append((lineno, "bad item record"))
    return out


# ---------------------------------------------------------------------------
# Preprocessing and splitting
# ---------------------------------------------------------------------------

def preprocess(interactions: list[Interaction], min_user: int = 10,
               min_item: int = 10) -> list[Interaction]:
    """Iterated k-core-style filter: drop users below ``min_user``, then
    items below ``min_item``, until both thresholds hold simultaneously."""
    current = list(interactions)
    while True:
        user_counts: dict[str, int] = {}
        for it in current:
            user_counts[it.user] = user_counts.get(it.user, 0) + 1
        kept = [it for it in current if user_counts[it.user] >= min_user]
        item_counts: dict[str, int] = {}
        for it in kept:
            item_counts[it.item] = item_counts.get(it.item, 0) + 1
        kept = [it for it in kept if item_counts[it.item] >= min_item]
        if len(kept) == len(current):
            if not kept:
                raise EmptyAfterFilter(
                    f"no interactions left at thresholds {min_user}/{min_item}")
            return kept
        current = kept
        if not current:
            raise EmptyAfterFilter(
                f"no interactions left at thresholds {min_user}/{min_item}")


def split_leave_one_out(interactions: list[Interaction]) -> dict[str, Split]:
    """Last interaction per user (by timestamp, ties by item id ascending)
    becomes the test target; candidates are every catalog item outside the
    user's train prefix. Users with fewer than two interactions are skipped."""
    catalog = sorted({it.item for it in interactions})
    by_user: dict[str, list[Interaction]] = {}
    for it in interactions:
        by_user.setdefault(it.user, []).append(it)
    out: dict[str, Split] = {}
    for user in sorted(by_user):
        history = sorted(by_user[user], key=lambda it: (it.timestamp, it.item))
        if len(history) < 2:
            continue
        train, test = tuple(history[:-1]), history[-1]
        train_items = {it.item for it in train}
        candidates = tuple(i for i in catalog if i not in train_items)
        out[user] = Split(user=user, train=train, test=test, candidates=candidates)
    return out


def head_tail_partition(interactions: list[Interaction]) -> tuple[set[str], set[str]]:
    """Top 20% of items by interaction count (ties by item id) form the
    head; the remaining 80% are the long tail."""
    counts: dict[str, int] = {}
    for it in interactions:
        counts[it.item] = counts.get(it.item, 0) + 1
    ranked = sorted(counts, key=lambda i: (-counts[i], i))
    head_size = math.ceil(0.2 * len(ranked))
    head = set(ranked[:head_size])
    tail = set(ranked[head_size:])
    return head, tail


def sparsity(interactions: list[Interaction]) -> float:
    """1 - |R| / (|U| * |I|), as a fraction."""
    users = {it.user for it in interactions}
    items = {it.item for it in interactions}
    if not users or not items:
        return 1.0
    return 1.0 - len(interactions) / (len(users) * len(items))
