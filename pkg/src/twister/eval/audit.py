"""Check that no prompt carried text from a held-out review."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..embed import tokenize

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def _norm(text: str) -> str:
    return " ".join(text.split())


def fragments(review: str, min_tokens: int = 4) -> list[str]:
    """The whole review plus each sentence of at least ``min_tokens`` tokens."""
    review = _norm(review)
    parts = [s for s in _SENTENCE_END.split(review) if len(s.split()) >= min_tokens]
    return [review] + [p for p in parts if p != review]


@dataclass
class AuditReport:
    n_prompts: int
    n_heldout: int
    violations: list[dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"n_prompts": self.n_prompts, "n_heldout": self.n_heldout, "violations": len(self.violations)}


def audit_mask_discipline(
    prompts: Iterable,
    heldout: Mapping[int, str],
    observed: Iterable[str] = (),
    min_tokens: int = 4,
) -> AuditReport:
    """Flag prompts containing a held-out review or one of its sentences.

    ``prompts`` are objects with ``edge_id``, ``role`` and ``prompt``
    attributes, or dicts with those keys. A fragment that also occurs
    verbatim in an observed review is not evidence of a leak and is skipped.
    """
    observed_text = "\n".join(_norm(t) for t in observed if t)
    frags = {}
    for eid, review in heldout.items():
        for f in fragments(review, min_tokens):
            if f and f not in observed_text:
                frags.setdefault(f, eid)
    # Index fragments by their leading tokens so each prompt is only
    # compared against fragments whose opening it actually contains.
    index = defaultdict(list)
    for f in frags:
        toks = tokenize(f)
        if toks:
            index[tuple(toks[:min_tokens])].append(f)
    violations = []
    n = 0
    for p in prompts:
        get = p.get if isinstance(p, dict) else lambda k, p=p: getattr(p, k)
        n += 1
        text = _norm(get("prompt"))
        toks = tokenize(text)
        widths = {len(key) for key in index}
        cands = {f for w in widths for j in range(len(toks)) for f in index.get(tuple(toks[j : j + w]), ())}
        for f in sorted(cands):
            eid = frags[f]
            if f in text:
                violations.append({"prompt_edge": get("edge_id"), "role": get("role"), "heldout_edge": eid, "fragment": f[:80]})
    return AuditReport(n, len(heldout), violations)
