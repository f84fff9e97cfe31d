"""Surface and embedding similarity between imputed and held-out reviews."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..embed import EmbeddingBackend, cosine, embed, tokenize


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length by the usual O(|a||b|) table, one row at a time."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: str | Sequence[str], reference: str | Sequence[str]) -> float:
    """LCS F1 over word tokens; 0 when either side is empty."""
    hyp = tokenize(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    ref = tokenize(reference) if isinstance(reference, str) else list(reference)
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


@dataclass
class FidelityReport:
    rouge_l: float | None
    cosine: float
    n: int
    per_edge: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rouge_l": self.rouge_l, "cosine": self.cosine, "n": self.n}


def _pair(imputed: Mapping[int, object], truth: Mapping[int, str]) -> list[int]:
    missing = sorted(set(truth) - set(imputed))
    if missing:
        raise KeyError(f"no imputed value for held-out edge(s) {missing[:20]}")
    return sorted(truth)


def semantic_fidelity(imputed: Mapping[int, str], truth: Mapping[int, str], embedder: EmbeddingBackend) -> FidelityReport:
    """Mean ROUGE-L and mean embedding cosine between imputed and held-out texts."""
    ids = _pair(imputed, truth)
    if not ids:
        return FidelityReport(0.0, 0.0, 0)
    hyp = embed(embedder, [imputed[e] for e in ids])
    ref = embed(embedder, [truth[e] for e in ids])
    rows = []
    for k, e in enumerate(ids):
        rows.append({"edge_id": e, "rouge_l": rouge_l(imputed[e], truth[e]), "cosine": cosine(hyp[k], ref[k])})
    return FidelityReport(
        float(np.mean([r["rouge_l"] for r in rows])), float(np.mean([r["cosine"] for r in rows])), len(ids), rows
    )


def embedding_fidelity(imputed_rows: Mapping[int, np.ndarray], truth: Mapping[int, str], embedder: EmbeddingBackend) -> FidelityReport:
    """Cosine-only fidelity for imputers that output embeddings; ROUGE-L is undefined there."""
    ids = _pair(imputed_rows, truth)
    if not ids:
        return FidelityReport(None, 0.0, 0)
    ref = embed(embedder, [truth[e] for e in ids])
    rows = [{"edge_id": e, "rouge_l": None, "cosine": cosine(imputed_rows[e], ref[k])} for k, e in enumerate(ids)]
    return FidelityReport(None, float(np.mean([r["cosine"] for r in rows])), len(ids), rows)
