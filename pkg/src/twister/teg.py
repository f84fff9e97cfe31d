"""Bipartite textual-edge graph: data model, preprocessing, splits and masks."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_RATING_SCALE = (1.0, 5.0)

UNIFORM = "uniform"
COLD_START = "cold-start"
NATIVE = "native"
MASK_PROTOCOLS = (UNIFORM, COLD_START, NATIVE)


class TEGError(ValueError):
    pass


def _clean_review(review: str | None) -> str | None:
    if review is None:
        return None
    review = str(review)
    return review if review.strip() else None


@dataclass(frozen=True)
class EdgePayload:
    rating: float
    review: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "review", _clean_review(self.review))


@dataclass(frozen=True)
class Edge:
    id: int
    user: str
    item: str
    payload: EdgePayload

    @property
    def rating(self) -> float:
        return self.payload.rating

    @property
    def review(self) -> str | None:
        return self.payload.review


class BipartiteTEG:
    """Immutable user-item graph whose edges carry a rating and an optional review.

    Edge ids are dense (``0..n_edges-1``) and index ``edges``. Users and items
    are kept in order of first appearance so that every derived structure is
    deterministic.
    """

    def __init__(
        self,
        edges: Sequence[Edge],
        item_metadata: Mapping[str, str] | None = None,
        rating_scale: tuple[float, float] = DEFAULT_RATING_SCALE,
    ):
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.rating_scale = (float(rating_scale[0]), float(rating_scale[1]))
        users: dict[str, list[int]] = {}
        items: dict[str, list[int]] = {}
        seen_pairs: set[tuple[str, str]] = set()
        for idx, e in enumerate(self.edges):
            if e.id != idx:
                raise TEGError(f"edge ids must be dense and ordered; got {e.id} at position {idx}")
            if (e.user, e.item) in seen_pairs:
                raise TEGError(f"duplicate edge for pair ({e.user!r}, {e.item!r})")
            seen_pairs.add((e.user, e.item))
            users.setdefault(e.user, []).append(idx)
            items.setdefault(e.item, []).append(idx)
        self.users: tuple[str, ...] = tuple(users)
        self.items: tuple[str, ...] = tuple(items)
        self._user_edges = {u: tuple(ids) for u, ids in users.items()}
        self._item_edges = {i: tuple(ids) for i, ids in items.items()}
        meta = item_metadata or {}
        self.item_metadata: dict[str, str] = {i: meta[i] for i in self.items if i in meta}

    def __len__(self) -> int:
        return len(self.edges)

    def __repr__(self) -> str:
        return f"BipartiteTEG(users={self.n_users}, items={self.n_items}, edges={self.n_edges})"

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def user_edges(self, user: str) -> tuple[int, ...]:
        return self._user_edges.get(user, ())

    def item_edges(self, item: str) -> tuple[int, ...]:
        return self._item_edges.get(item, ())

    def has_user(self, user: str) -> bool:
        return user in self._user_edges

    def has_item(self, item: str) -> bool:
        return item in self._item_edges

    def ratings(self) -> np.ndarray:
        return np.array([e.rating for e in self.edges], dtype=float)

    def reviews(self) -> list[str | None]:
        return [e.review for e in self.edges]

    def edge_pairs(self) -> list[tuple[str, str]]:
        return [(e.user, e.item) for e in self.edges]

    def subgraph(self, edge_ids: Iterable[int]) -> "BipartiteTEG":
        """Keep the given edges (in ascending id order) and renumber them densely."""
        keep = sorted(set(edge_ids))
        edges = [
            Edge(new, self.edges[old].user, self.edges[old].item, self.edges[old].payload)
            for new, old in enumerate(keep)
        ]
        return BipartiteTEG(edges, self.item_metadata, self.rating_scale)

    def with_reviews(self, reviews: Mapping[int, str | None]) -> "BipartiteTEG":
        """Copy of the graph with the reviews of selected edges replaced."""
        edges = [
            Edge(e.id, e.user, e.item, EdgePayload(e.rating, reviews[e.id]))
            if e.id in reviews
            else e
            for e in self.edges
        ]
        return BipartiteTEG(edges, self.item_metadata, self.rating_scale)


def build_teg(
    records: Iterable,
    metadata: Mapping[str, str] | None = None,
    rating_scale: tuple[float, float] = DEFAULT_RATING_SCALE,
    diagnostics: list[str] | None = None,
) -> BipartiteTEG:
    """Build a TEG from ``(user, item, rating, review)`` records.

    Records may be tuples or objects exposing ``user_id``/``item_id``/
    ``rating``/``review``. A repeated (user, item) pair keeps the rating and
    review of its last occurrence but the position of its first. Records with
    an out-of-scale or unparsable rating, or empty ids, are dropped and a
    message is appended to ``diagnostics``.
    """
    lo, hi = rating_scale
    merged: dict[tuple[str, str], EdgePayload] = {}
    for n, rec in enumerate(records):
        if isinstance(rec, (tuple, list)):
            user, item, rating = rec[0], rec[1], rec[2]
            review = rec[3] if len(rec) > 3 else None
        else:
            user, item, rating, review = rec.user_id, rec.item_id, rec.rating, rec.review
        problem = None
        try:
            rating = float(rating)
        except (TypeError, ValueError):
            problem = f"record {n}: rating {rating!r} is not a number"
        else:
            if not math.isfinite(rating) or not lo <= rating <= hi:
                problem = f"record {n}: rating {rating} outside [{lo}, {hi}]"
        if not problem and (not user or not item):
            problem = f"record {n}: empty user or item id"
        if problem:
            log.warning(problem)
            if diagnostics is not None:
                diagnostics.append(problem)
            continue
        merged[(str(user), str(item))] = EdgePayload(rating, review)
    edges = [Edge(k, u, i, p) for k, ((u, i), p) in enumerate(merged.items())]
    return BipartiteTEG(edges, metadata, rating_scale)


def k_core(teg: BipartiteTEG, k: int = 5) -> BipartiteTEG:
    """Maximal subgraph in which every user and item has degree >= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    user_deg = {u: len(teg.user_edges(u)) for u in teg.users}
    item_deg = {i: len(teg.item_edges(i)) for i in teg.items}
    alive = [True] * teg.n_edges
    stack = [("u", u) for u, d in user_deg.items() if d < k]
    stack += [("i", i) for i, d in item_deg.items() if d < k]
    removed: set[tuple[str, str]] = set()
    while stack:
        side, v = stack.pop()
        if (side, v) in removed:
            continue
        removed.add((side, v))
        incident = teg.user_edges(v) if side == "u" else teg.item_edges(v)
        for eid in incident:
            if not alive[eid]:
                continue
            alive[eid] = False
            e = teg.edges[eid]
            if side == "u":
                item_deg[e.item] -= 1
                if item_deg[e.item] < k:
                    stack.append(("i", e.item))
            else:
                user_deg[e.user] -= 1
                if user_deg[e.user] < k:
                    stack.append(("u", e.user))
    return teg.subgraph(eid for eid, ok in enumerate(alive) if ok)


def ego_sample(teg: BipartiteTEG, n_seeds: int = 100, seed: int = 0) -> BipartiteTEG:
    """Sample seed users uniformly and keep them with all their edges and items.

    Second-hop users (other users of the sampled items) are not added.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    if n_seeds >= teg.n_users:
        return teg
    rng = np.random.default_rng(seed)
    picked = rng.choice(teg.n_users, size=n_seeds, replace=False)
    chosen = {teg.users[j] for j in picked}
    return teg.subgraph(e.id for e in teg.edges if e.user in chosen)


@dataclass(frozen=True)
class EdgeSplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EdgeSplit":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def split_edges(
    teg: BipartiteTEG,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> EdgeSplit:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = teg.n_edges
    if n < 3:
        raise ValueError(f"need at least 3 edges to split, got {n}")
    n_train = max(1, round(ratios[0] * n))
    n_val = max(1, round(ratios[1] * n))
    if n_train + n_val > n - 1:
        n_train = n - 1 - n_val
    perm = np.random.default_rng(seed).permutation(n)
    train = tuple(sorted(int(x) for x in perm[:n_train]))
    val = tuple(sorted(int(x) for x in perm[n_train : n_train + n_val]))
    test = tuple(sorted(int(x) for x in perm[n_train + n_val :]))
    return EdgeSplit(train, val, test)


@dataclass(frozen=True)
class Mask:
    """Edges whose review is treated as missing (the index set Omega).

    Ratings of masked edges stay observed; only the review is hidden.
    """

    omega: frozenset[int]
    protocol: str
    selected_users: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.protocol not in MASK_PROTOCOLS:
            raise ValueError(f"unknown mask protocol {self.protocol!r}")
        object.__setattr__(self, "omega", frozenset(int(x) for x in self.omega))

    def __contains__(self, edge_id: int) -> bool:
        return edge_id in self.omega

    def __len__(self) -> int:
        return len(self.omega)

    @property
    def edge_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.omega))

    def apply(self, teg: BipartiteTEG) -> BipartiteTEG:
        """The graph as an imputer may see it: masked reviews removed."""
        if not self.omega:
            return teg
        return teg.with_reviews({eid: None for eid in self.omega})

    def heldout(self, teg: BipartiteTEG) -> dict[int, str]:
        """Ground-truth text of masked reviews (evaluation only)."""
        return {eid: teg.edges[eid].review for eid in self.edge_ids if teg.edges[eid].review is not None}

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "omega": list(self.edge_ids),
            "selected_users": list(self.selected_users),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Mask":
        return cls(frozenset(d["omega"]), d["protocol"], tuple(d.get("selected_users", ())))


def _n_selected(fraction: float, n: int) -> int:
    # tolerance guards e.g. 0.29 * 100 == 28.999999999999996
    return min(n, math.floor(fraction * n + 1e-9))


def mask_uniform(teg: BipartiteTEG, ratio: float = 0.5, seed: int = 0) -> Mask:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    picked = rng.choice(teg.n_edges, size=_n_selected(ratio, teg.n_edges), replace=False)
    return Mask(frozenset(int(x) for x in picked), UNIFORM)


def mask_cold_start(teg: BipartiteTEG, user_fraction: float = 0.5, seed: int = 0) -> Mask:
    """Select users uniformly and mask every edge incident to them."""
    if not 0.0 <= user_fraction <= 1.0:
        raise ValueError("user_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    picked = rng.choice(teg.n_users, size=_n_selected(user_fraction, teg.n_users), replace=False)
    users = tuple(teg.users[j] for j in sorted(int(x) for x in picked))
    omega = frozenset(eid for u in users for eid in teg.user_edges(u))
    return Mask(omega, COLD_START, users)


def mask_native(teg: BipartiteTEG) -> Mask:
    """Mask exactly the edges that carry no review in the source data."""
    return Mask(frozenset(e.id for e in teg.edges if e.review is None), NATIVE)


def degrees(teg: BipartiteTEG) -> tuple[dict[str, int], dict[str, int]]:
    ud: dict[str, int] = defaultdict(int)
    idg: dict[str, int] = defaultdict(int)
    for e in teg.edges:
        ud[e.user] += 1
        idg[e.item] += 1
    return dict(ud), dict(idg)
