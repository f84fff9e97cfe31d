"""A small link scorer and the ranking metrics used to compare review completions.

The scorer is ``s(u, i) = p_u . q_i + w . (a_u * c_i) + b`` where ``a_u`` and
``c_i`` are the mean completed-review embeddings of the user's and the item's
training edges. Reading the profile pair rather than the edge's own review
row keeps positives and sampled negatives on the same footing: a negative
pair has no review of its own.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..teg import BipartiteTEG


class ScorerError(RuntimeError):
    pass


@dataclass
class EdgeScorer:
    user_factors: np.ndarray
    item_factors: np.ndarray
    review_weights: np.ndarray
    bias: float
    user_profiles: np.ndarray
    item_profiles: np.ndarray
    user_index: dict[str, int]
    item_index: dict[str, int]
    loss_history: list[float] = field(default_factory=list)

    def score_index(self, u: np.ndarray, i: np.ndarray) -> np.ndarray:
        mf = np.sum(self.user_factors[u] * self.item_factors[i], axis=1)
        rev = (self.user_profiles[u] * self.item_profiles[i]) @ self.review_weights
        return mf + rev + self.bias

    def score(self, user: str, items: Sequence[str]) -> np.ndarray:
        i = np.array([self.item_index[x] for x in items], dtype=np.int64)
        u = np.full(len(i), self.user_index[user], dtype=np.int64)
        return self.score_index(u, i)


def profiles(teg: BipartiteTEG, edge_ids: Sequence[int], Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean embedding rows per user and per item over ``edge_ids`` (zero when none)."""
    Z = np.asarray(Z, dtype=float)
    uidx = {u: k for k, u in enumerate(teg.users)}
    iidx = {i: k for k, i in enumerate(teg.items)}
    U = np.zeros((teg.n_users, Z.shape[1]))
    I = np.zeros((teg.n_items, Z.shape[1]))
    nu = np.zeros(teg.n_users)
    ni = np.zeros(teg.n_items)
    for e in edge_ids:
        edge = teg.edges[e]
        U[uidx[edge.user]] += Z[e]
        I[iidx[edge.item]] += Z[e]
        nu[uidx[edge.user]] += 1
        ni[iidx[edge.item]] += 1
    U /= np.maximum(nu, 1)[:, None]
    I /= np.maximum(ni, 1)[:, None]
    return U, I


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def train_edge_scorer(
    teg: BipartiteTEG,
    train_ids: Sequence[int],
    Z: np.ndarray,
    rank: int = 16,
    epochs: int = 30,
    lr: float = 0.05,
    seed: int = 0,
    train_negatives: int = 4,
    reg: float = 1e-4,
    batch_size: int = 64,
    review_scale: float = 100.0,
) -> EdgeScorer:
    """Fit the scorer with logistic loss on training edges versus sampled non-edges.

    Negatives are drawn once per positive (seeded) from items the user has no
    training edge with. Factor rows take per-example steps while the shared
    review weights take batch-mean steps; ``review_scale`` multiplies the
    profile feature so that the review term still learns at a comparable
    rate. Records the epoch-average loss.
    """
    train_ids = list(train_ids)
    if not train_ids:
        raise ScorerError("no training edges")
    rng = np.random.default_rng(seed)
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] != teg.n_edges:
        raise ValueError(f"Z has {Z.shape[0]} rows for {teg.n_edges} edges")
    user_index = {u: k for k, u in enumerate(teg.users)}
    item_index = {i: k for k, i in enumerate(teg.items)}
    U, I = profiles(teg, train_ids, Z)
    U *= np.sqrt(review_scale)
    I *= np.sqrt(review_scale)
    d = Z.shape[1]
    P = rng.normal(0.0, 0.1, size=(teg.n_users, rank))
    Q = rng.normal(0.0, 0.1, size=(teg.n_items, rank))
    w = np.zeros(d)
    b = 0.0

    seen: dict[int, set[int]] = {}
    for e in train_ids:
        edge = teg.edges[e]
        seen.setdefault(user_index[edge.user], set()).add(item_index[edge.item])
    us, its, ys = [], [], []
    for e in train_ids:
        edge = teg.edges[e]
        u, i = user_index[edge.user], item_index[edge.item]
        us.append(u), its.append(i), ys.append(1.0)
        pool = np.array([j for j in range(teg.n_items) if j not in seen[u]], dtype=np.int64)
        if pool.size:
            for j in rng.choice(pool, size=min(train_negatives, pool.size), replace=False):
                us.append(u), its.append(int(j)), ys.append(0.0)
    us = np.array(us, dtype=np.int64)
    its = np.array(its, dtype=np.int64)
    ys = np.array(ys)

    history = []
    # divergence is detected below through a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = rng.permutation(len(ys))
            total = 0.0
            for start in range(0, len(order), batch_size):
                s = order[start : start + batch_size]
                u, i, y = us[s], its[s], ys[s]
                feat = U[u] * I[i]
                logit = np.sum(P[u] * Q[i], axis=1) + feat @ w + b
                total += float(np.sum(_softplus(logit) - y * logit))
                g = _sigmoid(logit) - y
                # factors take per-example steps; shared weights take the batch mean
                gp = g[:, None] * Q[i] + reg * P[u]
                gq = g[:, None] * P[u] + reg * Q[i]
                np.add.at(P, u, -lr * gp)
                np.add.at(Q, i, -lr * gq)
                w -= lr * (feat.T @ g / len(s) + reg * w)
                b -= lr * float(np.mean(g))
            loss = total / len(ys)
            if not np.isfinite(loss):
                raise ScorerError(f"scorer loss became non-finite at epoch {epoch}")
            history.append(loss)
    return EdgeScorer(P, Q, w, b, U, I, user_index, item_index, history)


@dataclass
class RankOutcome:
    rank: int
    auc: float


def rank_of_positive(pos: float, negs: Sequence[float]) -> RankOutcome:
    """Rank of the positive among ``[pos] + negs``; ties go against the positive.

    AUC is the fraction of negatives scored below the positive, ties counting half.
    """
    negs = np.asarray(negs, dtype=float)
    if negs.size == 0:
        return RankOutcome(1, 1.0)
    above = int(np.sum(negs >= pos))
    below = int(np.sum(negs < pos))
    ties = int(np.sum(negs == pos))
    return RankOutcome(1 + above, (below + 0.5 * ties) / negs.size)


def ndcg_at_k(rank: int, k: int) -> float:
    """Binary relevance with a single relevant item, so IDCG = 1."""
    return 1.0 / np.log2(rank + 1) if rank <= k else 0.0


@dataclass
class MetricsReport:
    acc: float
    auc: float
    mrr: float
    ndcg: float
    k: int
    n_negatives: int
    n_evaluated: int
    n_skipped: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_outcomes(outcomes: Sequence[RankOutcome], k: int, n_negatives: int, n_skipped: int = 0, seed: int = 0) -> MetricsReport:
    if not outcomes:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, k, n_negatives, 0, n_skipped, seed)
    ranks = np.array([o.rank for o in outcomes])
    return MetricsReport(
        acc=float(np.mean(ranks == 1)),
        auc=float(np.mean([o.auc for o in outcomes])),
        mrr=float(np.mean(1.0 / ranks)),
        ndcg=float(np.mean([ndcg_at_k(int(r), k) for r in ranks])),
        k=k,
        n_negatives=n_negatives,
        n_evaluated=len(outcomes),
        n_skipped=n_skipped,
        seed=seed,
    )


def rank_metrics(
    scorer: EdgeScorer,
    teg: BipartiteTEG,
    test_ids: Sequence[int],
    n_negatives: int = 9,
    k: int = 10,
    seed: int = 0,
) -> MetricsReport:
    """ACC (hit@1), AUC, MRR and NDCG@k of each test edge against sampled unseen items.

    Negatives come from items the user has no edge with anywhere in ``teg``.
    Users with fewer such items use all of them; users with none are skipped.
    """
    if n_negatives < k - 1:
        raise ValueError(f"n_negatives={n_negatives} is too few for k={k}")
    rng = np.random.default_rng(seed)
    all_items = np.array(teg.items)
    outcomes, skipped = [], 0
    for e in test_ids:
        edge = teg.edges[e]
        interacted = {teg.edges[x].item for x in teg.user_edges(edge.user)}
        pool = [i for i in all_items if i not in interacted]
        if not pool:
            skipped += 1
            continue
        negs = rng.choice(len(pool), size=min(n_negatives, len(pool)), replace=False)
        s = scorer.score(edge.user, [edge.item] + [pool[j] for j in negs])
        outcomes.append(rank_of_positive(s[0], s[1:]))
    return metrics_from_outcomes(outcomes, k, n_negatives, skipped, seed)
