"""Seeded synthetic catalogs for experiments and tests.

Two generators:

* :func:`make_synthetic_dataset` — a movie-style catalog with a zipf
  popularity skew. Each user prefers two genres of one target item, the
  history is drawn from matching items, and the held-out last interaction
  is that target, so intent signals genuinely predict the test item.
* :func:`make_situation_stream` — a session stream cycling through a
  fixed set of situation templates (one genre, a handful of viable items
  each), built to measure how often the agent has to consult the model
  as learning accumulates.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .data import DomainSchema, Interaction, ItemMeta, schema_from_items

__all__ = ["SyntheticDataset", "make_synthetic_dataset", "make_situation_stream"]

GENRES = [
    "action", "adventure", "animation", "comedy", "crime", "documentary",
    "drama", "fantasy", "horror", "musical", "mystery", "noir", "romance",
    "sci-fi", "thriller", "war", "western",
]


@dataclass
class SyntheticDataset:
    interactions: list[Interaction]
    items: dict[str, ItemMeta]
    schema: DomainSchema


def make_synthetic_dataset(
    n_users: int = 500,
    n_items: int = 200,
    n_genres: int = 10,
    history_len: int = 12,
    seed: int = 0,
) -> SyntheticDataset:
    rng = random.Random(seed)
    genres = GENRES[:n_genres]

    items: dict[str, ItemMeta] = {}
    for idx in range(n_items):
        item_id = f"v{idx:04d}"
        k = rng.choice((2, 2, 3))
        item_genres = tuple(sorted(rng.sample(genres, k)))
        items[item_id] = ItemMeta(
            item=item_id, title=f"Film {idx:04d}", attributes={"genre": item_genres})

    item_ids = sorted(items)
    # zipf-ish popularity over a shuffled rank assignment
    ranks = list(range(n_items))
    rng.shuffle(ranks)
    weight = {item_ids[i]: 1.0 / (ranks[i] + 1) ** 1.1 for i in range(n_items)}

    interactions: list[Interaction] = []
    for u_idx in range(n_users):
        user = f"u{u_idx:04d}"
        target = rng.choice(item_ids)
        target_genres = items[target].attributes["genre"]
        pref_a, pref_b = rng.sample(target_genres, 2)

        # draw evenly from both preferred genres so each stays a clear
        # majority signal in the history
        history: list[str] = []
        want_each = max((history_len - 2) // 2, 2)
        for pref in (pref_a, pref_b):
            pool = [i for i in item_ids
                    if i != target and i not in history
                    and pref in items[i].attributes["genre"]]
            while pool and sum(pref in items[i].attributes["genre"]
                               for i in history) < want_each:
                pick = rng.choices(pool, weights=[weight[i] for i in pool])[0]
                history.append(pick)
                pool.remove(pick)
        prefs = {pref_a, pref_b}
        others = [i for i in item_ids
                  if i != target and i not in history
                  and not prefs & set(items[i].attributes["genre"])]
        for _ in range(min(2, len(others))):
            noise = rng.choice(others)
            if noise not in history:
                history.append(noise)

        ts = 1_000_000 + u_idx * 10_000
        for step, item in enumerate(history):
            liked = bool(prefs & set(items[item].attributes["genre"]))
            rating = rng.choice((4.0, 5.0)) if liked else rng.choice((1.0, 2.0, 3.0))
            interactions.append(Interaction(user, item, rating, ts + step))
        interactions.append(Interaction(user, target, 5.0, ts + len(history)))

    schema = schema_from_items(items, name="synthetic")
    return SyntheticDataset(interactions, items, schema)


def make_situation_stream(
    n_sessions: int = 200,
    n_templates: int = 20,
    items_per_template: int = 8,
    history_len: int = 3,
    seed: int = 0,
) -> SyntheticDataset:
    """Sessions cycle through templates; template ``t`` owns a genre and
    ``items_per_template`` items of that genre. Each session user's
    history holds ``history_len`` of them and the test target is another,
    so every session confronts the same tie-shaped situation its template
    defines."""
    rng = random.Random(seed)
    genres = [f"t{k:02d}-style" for k in range(n_templates)]

    items: dict[str, ItemMeta] = {}
    template_items: list[list[str]] = []
    idx = 0
    for t in range(n_templates):
        owned = []
        for _ in range(items_per_template):
            item_id = f"v{idx:04d}"
            items[item_id] = ItemMeta(
                item=item_id, title=f"Film {idx:04d}",
                attributes={"genre": (genres[t],)})
            owned.append(item_id)
            idx += 1
        template_items.append(owned)

    interactions: list[Interaction] = []
    for s in range(n_sessions):
        t = s % n_templates
        user = f"u{s:04d}"
        owned = template_items[t]
        picks = rng.sample(owned, history_len + 1)
        history, target = picks[:-1], picks[-1]
        ts = 1_000_000 + s * 1_000
        for step, item in enumerate(history):
            interactions.append(Interaction(user, item, 5.0, ts + step))
        interactions.append(Interaction(user, target, 5.0, ts + history_len))

    schema = schema_from_items(items, name="situation-stream")
    return SyntheticDataset(interactions, items, schema)
