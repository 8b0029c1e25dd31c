"""Clustered synthetic datasets in the loader's file formats.

Attributes are partitioned into latent groups. Every item belongs to one
group and draws 2-5 attributes, mostly from its own group; every user belongs
to one group and interacts mostly with items from it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import Split, load_dataset, split_interactions, write_splits

IN_GROUP = 0.8


def generate(n_users: int, n_items: int, n_attrs: int, seed: int = 0, rec_size: int = 10):
    """Return (interactions, item_attrs, item_group, user_group, attr_group) as index lists."""
    if n_users < 1 or n_items < max(rec_size, 1) or n_attrs < 2:
        raise ValueError(f"need n_users >= 1, n_items >= {rec_size}, n_attrs >= 2; got "
                         f"{n_users}, {n_items}, {n_attrs}")
    rng = np.random.default_rng(seed)
    n_groups = max(2, min(n_attrs // 4, n_items // 2))
    attr_group = np.arange(n_attrs) % n_groups
    rng.shuffle(attr_group)
    group_attrs = [np.flatnonzero(attr_group == k) for k in range(n_groups)]
    item_group = rng.integers(n_groups, size=n_items)

    max_attrs = min(5, n_attrs)
    item_attrs: list[set[int]] = []
    for v in range(n_items):
        k = int(rng.integers(2, max_attrs + 1))
        chosen: set[int] = set()
        while len(chosen) < k:
            own = group_attrs[item_group[v]]
            if rng.random() < IN_GROUP and len(set(own) - chosen):
                pool = np.array(sorted(set(own) - chosen))
            else:
                pool = np.array(sorted(set(range(n_attrs)) - chosen))
            chosen.add(int(pool[rng.integers(len(pool))]))
        item_attrs.append(chosen)
    # every attribute must be declared by some item
    for p in range(n_attrs):
        if not any(p in s for s in item_attrs):
            members = np.flatnonzero(item_group == attr_group[p])
            v = int(members[rng.integers(len(members))]) if len(members) else int(rng.integers(n_items))
            item_attrs[v].add(p)

    user_group = rng.integers(n_groups, size=n_users)
    interactions: list[tuple[int, int]] = []
    for u in range(n_users):
        own = np.flatnonzero(item_group == user_group[u])
        n = int(rng.integers(5, 13))
        picked: list[int] = []
        for _ in range(n):
            pool = own if len(own) and rng.random() < IN_GROUP else np.arange(n_items)
            v = int(pool[rng.integers(len(pool))])
            if v not in picked:
                picked.append(v)
        interactions += [(u, v) for v in picked]
    return interactions, item_attrs, item_group, user_group, attr_group


def write_dataset(out_dir: str | Path, n_users: int, n_items: int, n_attrs: int, seed: int = 0,
                  split_seed: int | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    interactions, item_attrs, item_group, user_group, attr_group = generate(n_users, n_items, n_attrs, seed)
    (out / "item_attributes.tsv").write_text(
        "".join(f"i{v}\t{','.join(f'a{p}' for p in sorted(attrs))}\n" for v, attrs in enumerate(item_attrs)),
        encoding="utf-8",
    )
    (out / "interactions.tsv").write_text(
        "".join(f"u{u}\ti{v}\n" for u, v in interactions), encoding="utf-8"
    )
    g, pairs = load_dataset(out / "interactions.tsv", out / "item_attributes.tsv")
    splits = split_interactions(pairs, seed if split_seed is None else split_seed)
    write_splits(g, splits, out / "splits.tsv")
    manifest = {
        "generator": "clustered",
        "seed": seed,
        "n_users": n_users,
        "n_items": n_items,
        "n_attrs": n_attrs,
        "n_interactions": len(interactions),
        "split_sizes": {s.value: len(splits[s]) for s in Split},
        "user_group": {f"u{u}": int(k) for u, k in enumerate(user_group)},
        "item_group": {f"i{v}": int(k) for v, k in enumerate(item_group)},
        "attr_group": {f"a{p}": int(k) for p, k in enumerate(attr_group)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
