"""Non-deep imputation baselines.

Blank and Random fill masked reviews with text; Mean, KNN and MF fill the
masked rows of the review-embedding matrix directly (no decoding back to text).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .embed import cosine, tokenize
from .teg import BipartiteTEG, Mask

TEXT = "text"
EMBEDDING = "embedding"

RANDOM_FALLBACK_LENGTH = 20
LOREM = (
    "lorem ipsum dolor sit amet consectetur adipiscing elit sed do eiusmod tempor "
    "incididunt ut labore et dolore magna aliqua"
).split()


class ImputationError(RuntimeError):
    pass


@dataclass
class ImputationResult:
    """Imputed values for exactly the masked edges, in ascending edge-id order."""

    variant: str
    edge_ids: tuple[int, ...]
    texts: tuple[str, ...] | None = None
    rows: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    failed: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if (self.texts is None) == (self.rows is None):
            raise ValueError("exactly one of texts / rows must be given")
        n = len(self.texts) if self.texts is not None else len(self.rows)
        if n != len(self.edge_ids):
            raise ValueError("values do not line up with edge ids")

    @property
    def kind(self) -> str:
        return TEXT if self.texts is not None else EMBEDDING

    def as_dict(self) -> dict:
        values = self.texts if self.texts is not None else list(self.rows)
        return dict(zip(self.edge_ids, values))


def observed_edges(teg: BipartiteTEG, mask: Mask) -> list[int]:
    """Edges whose review an imputer is allowed to read."""
    return [e.id for e in teg.edges if e.id not in mask and e.review is not None]


def impute_blank(teg: BipartiteTEG, mask: Mask) -> ImputationResult:
    ids = mask.edge_ids
    return ImputationResult("Blank", ids, texts=tuple("" for _ in ids))


def impute_random(teg: BipartiteTEG, mask: Mask, seed: int = 0) -> ImputationResult:
    """Random token strings whose lengths follow the observed review lengths."""
    visible = mask.apply(teg)
    tokenized = [tokenize(visible.edges[e].review) for e in observed_edges(visible, mask)]
    lengths = [len(t) for t in tokenized if t] or [RANDOM_FALLBACK_LENGTH]
    vocab = sorted({tok for toks in tokenized for tok in toks}) or LOREM
    rng = np.random.default_rng(seed)
    texts = []
    for _ in mask.edge_ids:
        n = int(rng.choice(lengths))
        texts.append(" ".join(vocab[k] for k in rng.integers(0, len(vocab), size=n)))
    return ImputationResult("Random", mask.edge_ids, texts=tuple(texts), params={"seed": seed})


def _observed_rows(teg: BipartiteTEG, mask: Mask, z_obs: np.ndarray) -> list[int]:
    z_obs = np.asarray(z_obs)
    if z_obs.shape[0] != teg.n_edges:
        raise ValueError(f"embedding matrix has {z_obs.shape[0]} rows for {teg.n_edges} edges")
    obs = observed_edges(mask.apply(teg), mask)
    if not obs:
        raise ImputationError("no observed reviews to impute from")
    return obs


def impute_mean(teg: BipartiteTEG, mask: Mask, z_obs: np.ndarray, per_item: bool = False) -> ImputationResult:
    """Fill every masked row with the mean observed review embedding.

    With ``per_item`` the mean is taken over the item's observed reviews,
    falling back to the global mean for items without any.
    """
    obs = _observed_rows(teg, mask, z_obs)
    z_obs = np.asarray(z_obs, dtype=float)
    global_mean = z_obs[obs].mean(axis=0)
    rows = np.tile(global_mean, (len(mask), 1))
    if per_item:
        obs_set = set(obs)
        for k, eid in enumerate(mask.edge_ids):
            same = [x for x in teg.item_edges(teg.edges[eid].item) if x in obs_set]
            if same:
                rows[k] = z_obs[same].mean(axis=0)
    return ImputationResult("Mean", mask.edge_ids, rows=rows, params={"per_item": per_item})


def knn_candidates(teg: BipartiteTEG, mask: Mask, edge_id: int, item_embeddings: Mapping[str, np.ndarray], observed: set[int]) -> list[int]:
    """Observed edges sharing the user or item of ``edge_id``, nearest item first.

    Candidates are ranked by cosine similarity between their item's encoding
    and the focal item's encoding; ties go to the smaller edge id. If no
    observed edge shares an endpoint, every observed edge is a candidate.
    """
    e = teg.edges[edge_id]
    pool = {x for x in teg.user_edges(e.user) + teg.item_edges(e.item) if x in observed and x != edge_id}
    if not pool:
        pool = observed - {edge_id}
    target = item_embeddings[e.item]
    scored = [(-cosine(item_embeddings[teg.edges[c].item], target), c) for c in pool]
    return [c for _, c in sorted(scored)]


def impute_knn(
    teg: BipartiteTEG,
    mask: Mask,
    z_obs: np.ndarray,
    item_embeddings: Mapping[str, np.ndarray],
    k: int = 5,
) -> ImputationResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    obs = set(_observed_rows(teg, mask, z_obs))
    z_obs = np.asarray(z_obs, dtype=float)
    rows = np.zeros((len(mask), z_obs.shape[1]))
    for j, eid in enumerate(mask.edge_ids):
        top = knn_candidates(teg, mask, eid, item_embeddings, obs)[:k]
        rows[j] = z_obs[top].mean(axis=0)
    return ImputationResult("KNN", mask.edge_ids, rows=rows, params={"k": k})


@dataclass
class MFModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    decoder: np.ndarray
    user_index: dict[str, int]
    item_index: dict[str, int]
    loss_history: list[float]

    def predict(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return (self.user_factors[users] * self.item_factors[items]) @ self.decoder.T


def fit_mf(
    teg: BipartiteTEG,
    edge_ids: list[int],
    z: np.ndarray,
    rank: int = 16,
    epochs: int = 50,
    lr: float = 0.05,
    seed: int = 0,
    batch_size: int = 32,
) -> MFModel:
    """Fit ``z_ui ~ C (p_u * q_i)`` by minibatch SGD on squared error.

    The loss recorded per epoch is the mean over training rows of the
    squared L2 reconstruction error.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    user_index = {u: k for k, u in enumerate(teg.users)}
    item_index = {i: k for k, i in enumerate(teg.items)}
    d = z.shape[1]
    P = rng.normal(0.0, 1.0 / np.sqrt(rank), size=(teg.n_users, rank)) + 1.0
    Q = rng.normal(0.0, 1.0 / np.sqrt(rank), size=(teg.n_items, rank)) + 1.0
    C = rng.normal(0.0, 0.1, size=(d, rank))
    users = np.array([user_index[teg.edges[e].user] for e in edge_ids], dtype=np.int64)
    items = np.array([item_index[teg.edges[e].item] for e in edge_ids], dtype=np.int64)
    target = z[edge_ids]
    history = []
    # divergence is detected below through a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            history.append(_mf_epoch(rng, P, Q, C, users, items, target, lr, batch_size))
            if not np.isfinite(history[-1]):
                raise ImputationError(f"MF loss became non-finite at epoch {epoch}")
    return MFModel(P, Q, C, user_index, item_index, history)


def _mf_epoch(rng, P, Q, C, users, items, target, lr, batch_size) -> float:
    order = rng.permutation(len(users))
    for start in range(0, len(order), batch_size):
        b = order[start : start + batch_size]
        u, i = users[b], items[b]
        h = P[u] * Q[i]
        err = h @ C.T - target[b]
        g_h = 2.0 * err @ C / len(b)
        g_c = 2.0 * err.T @ h / len(b)
        np.add.at(P, u, -lr * g_h * Q[i])
        np.add.at(Q, i, -lr * g_h * P[u])
        C -= lr * g_c
    return float(np.mean(np.sum(((P[users] * Q[items]) @ C.T - target) ** 2, axis=1)))


def impute_mf(
    teg: BipartiteTEG,
    mask: Mask,
    z_obs: np.ndarray,
    rank: int = 16,
    epochs: int = 50,
    lr: float = 0.05,
    seed: int = 0,
) -> ImputationResult:
    obs = _observed_rows(teg, mask, z_obs)
    z_obs = np.asarray(z_obs, dtype=float)
    model = fit_mf(teg, obs, z_obs, rank=rank, epochs=epochs, lr=lr, seed=seed)
    ids = mask.edge_ids
    u = np.array([model.user_index[teg.edges[e].user] for e in ids], dtype=np.int64)
    i = np.array([model.item_index[teg.edges[e].item] for e in ids], dtype=np.int64)
    rows = model.predict(u, i) if ids else np.zeros((0, z_obs.shape[1]))
    return ImputationResult(
        "MF",
        ids,
        rows=rows,
        params={"rank": rank, "epochs": epochs, "lr": lr, "seed": seed, "loss_history": model.loss_history},
    )
