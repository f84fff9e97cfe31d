"""Line-graph views of a TEG (edges become nodes) and their Laplacians."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .teg import BipartiteTEG, EdgePayload

FULL = "full"
USER = "user"
ITEM = "item"
USER_WEIGHTED = "user-weighted"
VIEW_KINDS = (FULL, USER, ITEM, USER_WEIGHTED)


@dataclass(frozen=True, eq=False)
class LineGraphView:
    """Symmetric weighted adjacency over TEG edge ids, stored CSR-style.

    Row ``a`` lists its neighbours in ascending id order. Explicit zero
    weights are kept, so a weighted view has exactly the topology of the
    view it was derived from.
    """

    kind: str
    teg: BipartiteTEG
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_links(self) -> int:
        return len(self.indices) // 2

    def payload(self, edge_id: int) -> EdgePayload:
        return self.teg.edges[edge_id].payload

    def row(self, edge_id: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[edge_id], self.indptr[edge_id + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def links(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Each undirected link once, as ``(a, b, w)`` arrays with ``a < b``."""
        rows = np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))
        upper = rows < self.indices
        return rows[upper], self.indices[upper], self.weights[upper]

    def link_set(self) -> set[tuple[int, int]]:
        a, b, _ = self.links()
        return set(zip(a.tolist(), b.tolist()))

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(n, n))


def _from_links(kind: str, teg: BipartiteTEG, a: np.ndarray, b: np.ndarray, w: np.ndarray) -> LineGraphView:
    n = teg.n_edges
    rows = np.concatenate([a, b]).astype(np.int64)
    cols = np.concatenate([b, a]).astype(np.int64)
    vals = np.concatenate([w, w]).astype(float)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return LineGraphView(kind, teg, np.cumsum(indptr), cols, vals)


def _group_links(groups) -> tuple[np.ndarray, np.ndarray]:
    a_parts, b_parts = [], []
    for ids in groups:
        if len(ids) < 2:
            continue
        ids = np.asarray(ids, dtype=np.int64)
        i, j = np.triu_indices(len(ids), k=1)
        a_parts.append(ids[i])
        b_parts.append(ids[j])
    if not a_parts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(a_parts), np.concatenate(b_parts)


def user_view(teg: BipartiteTEG) -> LineGraphView:
    """Two interactions are linked iff they were made by the same user."""
    a, b = _group_links(teg.user_edges(u) for u in teg.users)
    return _from_links(USER, teg, a, b, np.ones(len(a)))


def item_view(teg: BipartiteTEG) -> LineGraphView:
    """Two interactions are linked iff they concern the same item."""
    a, b = _group_links(teg.item_edges(i) for i in teg.items)
    return _from_links(ITEM, teg, a, b, np.ones(len(a)))


def line_graph_full(teg: BipartiteTEG) -> LineGraphView:
    # a pair of distinct edges can share a user or an item, never both
    ua, ub = _group_links(teg.user_edges(u) for u in teg.users)
    ia, ib = _group_links(teg.item_edges(i) for i in teg.items)
    a, b = np.concatenate([ua, ia]), np.concatenate([ub, ib])
    return _from_links(FULL, teg, a, b, np.ones(len(a)))


def weighted_user_view(teg: BipartiteTEG, item_embeddings: Mapping[str, np.ndarray]) -> LineGraphView:
    """User view weighted by the clamped cosine similarity of the two items' text encodings.

    Negative similarities are clamped to 0 so that weights stay nonnegative.
    """
    missing = [i for i in teg.items if i not in item_embeddings]
    if missing:
        raise KeyError(f"no embedding for item {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    base = user_view(teg)
    a, b, _ = base.links()
    if len(a) == 0:
        return _from_links(USER_WEIGHTED, teg, a, b, np.zeros(0))
    index = {item: k for k, item in enumerate(teg.items)}
    mat = np.stack([np.asarray(item_embeddings[i], dtype=float) for i in teg.items])
    norms = np.linalg.norm(mat, axis=1)
    unit = np.divide(mat, norms[:, None], out=np.zeros_like(mat), where=norms[:, None] > 0)
    item_of = np.array([index[e.item] for e in teg.edges])
    sim = np.einsum("ij,ij->i", unit[item_of[a]], unit[item_of[b]])
    return _from_links(USER_WEIGHTED, teg, a, b, np.clip(sim, 0.0, 1.0))


def laplacian(view: LineGraphView) -> sp.csr_matrix:
    """Unnormalised Laplacian ``D - W``."""
    w = view.adjacency()
    deg = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(deg) - w).tocsr()


def neighbors(view: LineGraphView, edge_id: int) -> list[tuple[int, float]]:
    if not 0 <= edge_id < view.n_nodes:
        raise KeyError(f"unknown edge id {edge_id}")
    ids, ws = view.row(edge_id)
    return [(int(i), float(w)) for i, w in zip(ids, ws)]


def write_edgelist(view: LineGraphView, path: str | os.PathLike) -> None:
    a, b, w = view.links()
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in zip(a.tolist(), b.tolist(), w.tolist()):
            fh.write(f"{x}\t{y}\t{z!r}\n")


def build_views(teg: BipartiteTEG, kinds, item_embeddings=None) -> dict[str, LineGraphView]:
    views = {}
    for kind in kinds:
        if kind == USER:
            views[kind] = user_view(teg)
        elif kind == ITEM:
            views[kind] = item_view(teg)
        elif kind == USER_WEIGHTED:
            if item_embeddings is None:
                raise ValueError("the weighted user view needs item embeddings")
            views[kind] = weighted_user_view(teg, item_embeddings)
        elif kind == FULL:
            views[kind] = line_graph_full(teg)
        else:
            raise ValueError(f"unknown view kind {kind!r}")
    return views
