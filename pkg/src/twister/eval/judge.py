"""LLM-as-judge scoring of review quality on four 1-5 dimensions."""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..backends import BackendError, Generation, GenerationBackend
from ..embed import tokenize

log = logging.getLogger(__name__)

DIMENSIONS = ("authenticity", "helpfulness", "specificity", "readability")
RESPONSE_KEYS = DIMENSIONS + ("reasoning",)
SCORE_RANGE = (1.0, 5.0)

_RESPONSE_SCHEMA = """{
    "authenticity": <1-5>,
    "helpfulness":  <1-5>,
    "specificity":  <1-5>,
    "readability":  <1-5>,
    "reasoning":    "<brief explanation>"
}"""

JUDGE_TEMPLATES = {
    "amazon": (
        "You are evaluating the quality of an Amazon product review for a {category}.\n"
        "Product ASIN: {book_id}\n"
        "User ID: {user_id}\n"
        "Rating: {rating}/5.0\n"
        'Review Text: "{review_text}"\n'
        "Please rate the review on a 5-point scale (1 = very poor, 5 = excellent):\n"
        "- Authenticity - genuine, human-written tone.\n"
        "- Helpfulness - useful to potential buyers.\n"
        "- Specificity - concrete product details.\n"
        "- Readability - clear and coherent.\n"
        "Important guidelines:\n"
        "- Empty or very short reviews should score lower.\n"
        "- Generic or superlative-only language lowers authenticity.\n"
        "- Consider whether the review is actionable.\n"
        "- Judge coherence and grammar quality.\n"
        "Provide your evaluation in JSON below.\n"
    ),
    "goodreads": (
        "You are evaluating the quality of a Goodreads book review for {book_title}.\n"
        "Book ID/ISBN: {book_id}\n"
        "User ID: {user_id}\n"
        "Rating: {rating}/5.0\n"
        'Review Text: "{review_text}"\n'
        "Please rate the review on a 5-point scale (1 = very poor, 5 = excellent):\n"
        "- Authenticity - genuine opinion.\n"
        "- Helpfulness - useful to readers.\n"
        "- Specificity - plot/character details.\n"
        "- Readability - clear and coherent.\n"
        "Important guidelines:\n"
        "- Empty or very short reviews score lower.\n"
        "- Generic or superlative-only language lowers authenticity.\n"
        "- Consider whether the review is actionable.\n"
        "- Judge coherence and grammar quality.\n"
        "Provide your evaluation in JSON:\n"
    ),
}

# The item-description field is named differently per template.
_SUBJECT_FIELD = {"amazon": "category", "goodreads": "book_title"}


class JudgeError(ValueError):
    pass


def render_judge_prompt(template: str, item_id: str, user_id: str, rating: float, review: str, subject: str | None = None) -> str:
    """Fill a judge template; ``subject`` is the product category or the book title."""
    if template not in JUDGE_TEMPLATES:
        raise JudgeError(f"unknown judge template {template!r}; expected one of {sorted(JUDGE_TEMPLATES)}")
    text = JUDGE_TEMPLATES[template]
    values = {
        _SUBJECT_FIELD[template]: subject if subject else item_id,
        "book_id": item_id,
        "user_id": user_id,
        "rating": f"{float(rating):.1f}",
        "review_text": review or "",
    }
    needed = {name for _, name, _, _ in string.Formatter().parse(text) if name}
    unresolved = needed - set(values)
    if unresolved:
        raise JudgeError(f"unresolved placeholder(s) {sorted(unresolved)}")
    # Values go in verbatim; braces inside a review must not be re-parsed.
    out = text.format(**{k: "\x00%s\x00" % k for k in needed})
    for k in needed:
        out = out.replace("\x00%s\x00" % k, str(values[k]))
    return out + _RESPONSE_SCHEMA


@dataclass
class JudgeScores:
    authenticity: float
    helpfulness: float
    specificity: float
    readability: float
    reasoning: str = ""

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, d) for d in DIMENSIONS)

    def to_dict(self) -> dict:
        return asdict(self)


def _clamp(x) -> float:
    v = float(x)
    if not np.isfinite(v):
        raise JudgeError(f"non-finite score {x!r}")
    return float(min(max(v, SCORE_RANGE[0]), SCORE_RANGE[1]))


def parse_judge_response(text: str) -> JudgeScores:
    """Scores from the first JSON object in ``text`` that carries all four dimensions."""
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or not all(d in obj for d in DIMENSIONS):
            continue
        try:
            scores = [_clamp(obj[d]) for d in DIMENSIONS]
        except (TypeError, ValueError):
            continue
        return JudgeScores(*scores, reasoning=str(obj.get("reasoning", "")))
    raise JudgeError("no parseable score object in judge response")


class MockJudge:
    """Offline judge whose scores are clipped affine functions of length and type-token ratio."""

    deterministic = True
    max_new_tokens = 256

    def __init__(self):
        self.name = "mock-judge"

    @staticmethod
    def _review(prompt: str) -> str:
        m = re.search(r'Review Text: "(.*?)"\nPlease rate', prompt, re.S)
        return m.group(1) if m else ""

    def scores(self, review: str) -> dict:
        toks = tokenize(review)
        n = len(toks)
        ttr = len(set(toks)) / n if n else 0.0
        clip = lambda x: round(float(min(max(x, 1.0), 5.0)), 4)
        return {
            "authenticity": clip(1.0 + 0.04 * n + 1.5 * ttr),
            "helpfulness": clip(1.0 + 0.06 * n),
            "specificity": clip(1.0 + 3.0 * ttr + 0.02 * n),
            "readability": clip(1.5 + 0.03 * n + ttr),
            "reasoning": f"{n} tokens, type-token ratio {ttr:.3f}",
        }

    def generate(self, prompt: str, seed: int = 0):
        text = json.dumps(self.scores(self._review(prompt)), sort_keys=True)
        return Generation(text, len(prompt.split()), len(text.split()), 0.0)


@dataclass
class JudgeItem:
    key: str
    item_id: str
    user_id: str
    rating: float
    review: str
    subject: str | None = None


@dataclass
class JudgedReview:
    key: str
    scores: JudgeScores | None
    n_ok: int
    failures: list[str] = field(default_factory=list)

    @property
    def judged(self) -> bool:
        return self.scores is not None

    def to_dict(self) -> dict:
        d = {"key": self.key, "judged": self.judged, "n_ok": self.n_ok, "failures": list(self.failures)}
        d.update({k: (getattr(self.scores, k) if self.scores else None) for k in DIMENSIONS})
        return d


def mean_scores(runs: Sequence[JudgeScores]) -> JudgeScores:
    arr = np.array([r.values() for r in runs], dtype=float)
    means = arr.mean(axis=0)
    return JudgeScores(*[float(x) for x in means], reasoning=runs[0].reasoning if runs else "")


def judge_reviews(backend: GenerationBackend, template: str, items: Sequence[JudgeItem], seeds: Sequence[int] = (0, 1, 2)) -> list[JudgedReview]:
    """Judge each review once per seed and average each dimension over the successful seeds."""
    out = []
    for item in items:
        prompt = render_judge_prompt(template, item.item_id, item.user_id, item.rating, item.review, item.subject)
        runs, failures = [], []
        for s in seeds:
            try:
                runs.append(parse_judge_response(backend.generate(prompt, s).text))
            except (BackendError, JudgeError) as exc:
                failures.append(f"seed {s}: {exc}")
        if not runs:
            log.warning("review %s could not be judged", item.key)
        out.append(JudgedReview(item.key, mean_scores(runs) if runs else None, len(runs), failures))
    return out


def judge_table(variant_reviews: Mapping[str, list[JudgedReview]]) -> list[dict]:
    """Mean score per variant and dimension over judged reviews."""
    rows = []
    for variant in sorted(variant_reviews):
        ok = [r.scores for r in variant_reviews[variant] if r.judged]
        for d in DIMENSIONS:
            rows.append(
                {
                    "variant": variant,
                    "dimension": d,
                    "mean": float(np.mean([getattr(s, d) for s in ok])) if ok else None,
                    "n_judged": len(ok),
                    "n_unjudged": len(variant_reviews[variant]) - len(ok),
                }
            )
    return rows
