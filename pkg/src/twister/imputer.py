"""Review imputation by one-hop line-graph aggregation and prompted generation.

For each masked edge the imputer (1) gathers the observed payloads of its
immediate neighbours on the user- and/or item-side view, (2) condenses each
neighbourhood into a short text with one backend call, (3) assembles an edge
prompt from the rating, item metadata and the two condensed contexts, and
(4) generates the review with one more backend call.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .backends import BackendError, Generation, GenerationBackend, TokenLedger, truncate_tokens
from .baselines import EMBEDDING, TEXT, ImputationError, ImputationResult
from .linegraph import ITEM, USER, USER_WEIGHTED, LineGraphView
from .prompts import (
    DEFAULT_TEMPLATES,
    EDGE,
    ITEM_AGGREGATION,
    USER_AGGREGATION,
    PromptBundle,
    PromptTemplate,
    build_edge_prompt,
    format_rating,
    render_aggregation,
)
from .teg import BipartiteTEG, EdgePayload, Mask

log = logging.getLogger(__name__)

DEFAULT_NEIGHBOR_CAP = 10
DEFAULT_PAYLOAD_TOKENS = 60


@dataclass(frozen=True)
class VariantSpec:
    item_context: bool
    user_context: bool
    metadata: bool

    @property
    def required_views(self) -> tuple[str, ...]:
        return tuple(v for v, used in ((USER, self.user_context), (ITEM, self.item_context)) if used)


VARIANTS = {
    "LLM": VariantSpec(item_context=False, user_context=False, metadata=True),
    "LLM-I": VariantSpec(item_context=True, user_context=False, metadata=False),
    "LLM-U": VariantSpec(item_context=False, user_context=True, metadata=False),
    "LLM-Um": VariantSpec(item_context=False, user_context=True, metadata=True),
    "LLM-UI": VariantSpec(item_context=True, user_context=True, metadata=True),
}


def rescale_rating(rating: float, scale: tuple[float, float]) -> float:
    lo, hi = scale
    if (lo, hi) == (1.0, 5.0) or hi <= lo:
        return rating
    return 1.0 + 4.0 * (rating - lo) / (hi - lo)


def payload_text(payload: EdgePayload, scale=(1.0, 5.0), token_cap: int | None = None) -> str:
    """``review (rated r/5.0)``, or just the rating when the review is missing."""
    cue = f"(rated {format_rating(rescale_rating(payload.rating, scale))})"
    if payload.review is None:
        return cue
    review = payload.review if token_cap is None else truncate_tokens(payload.review, token_cap)
    return f"{review} {cue}"


def collect_context(
    view: LineGraphView,
    edge_id: int,
    mask: Mask,
    cap: int = DEFAULT_NEIGHBOR_CAP,
    token_cap: int = DEFAULT_PAYLOAD_TOKENS,
) -> list[str]:
    """Payload texts of one-hop neighbours whose review is observed.

    Neighbours are ordered by descending link weight, then ascending id, and
    the list is cut at ``cap``. Masked neighbours are skipped before their
    payload is read.
    """
    ids, weights = view.row(edge_id)
    keep = [(-float(w), int(n)) for n, w in zip(ids, weights) if int(n) not in mask]
    out = []
    for _, n in sorted(keep):
        payload = view.payload(n)
        if payload.review is None:
            continue
        out.append(payload_text(payload, view.teg.rating_scale, token_cap))
        if len(out) >= cap:
            break
    return out


@dataclass
class PromptRecord:
    """One rendered prompt, kept for auditing and cost accounting."""

    edge_id: int
    role: str
    template_id: str
    prompt: str
    ingredients: dict = field(default_factory=dict)


@dataclass
class AggregationOutcome:
    text: str | None
    record: PromptRecord
    generation: Generation | None = None
    error: str | None = None


def _aggregate(role, backend, edge_id, focal, neighbors, seed, template) -> AggregationOutcome:
    prompt = render_aggregation(template, focal, neighbors)
    record = PromptRecord(edge_id, role, template.id, prompt, {"focal": focal, "neighbors": list(neighbors)})
    try:
        gen = backend.generate(prompt, seed)
    except BackendError as exc:
        log.warning("aggregation failed for edge %d: %s", edge_id, exc)
        return AggregationOutcome(None, record, error=str(exc))
    text = " ".join(gen.text.split())
    return AggregationOutcome(text or None, record, gen)


def aggregate_user(
    backend: GenerationBackend,
    edge_id: int,
    focal: str,
    neighbors: list[str],
    seed: int = 0,
    template: PromptTemplate = DEFAULT_TEMPLATES[USER_AGGREGATION],
) -> AggregationOutcome:
    """Condense the user-side neighbourhood of ``edge_id`` in a single round."""
    return _aggregate(USER_AGGREGATION, backend, edge_id, focal, neighbors, seed, template)


def aggregate_item(
    backend: GenerationBackend,
    edge_id: int,
    focal: str,
    neighbors: list[str],
    seed: int = 0,
    template: PromptTemplate = DEFAULT_TEMPLATES[ITEM_AGGREGATION],
) -> AggregationOutcome:
    """Condense the item-side neighbourhood of ``edge_id`` in a single round."""
    return _aggregate(ITEM_AGGREGATION, backend, edge_id, focal, neighbors, seed, template)


def fallback_review(rating: float) -> str:
    return f"I would rate this item {format_rating(rating)}."


@dataclass
class GeneratedReview:
    text: str
    generation: Generation | None
    error: str | None = None


def generate_review(backend: GenerationBackend, bundle: PromptBundle, seed: int = 0) -> GeneratedReview:
    """Generate one review; cap its length, and fall back to a rating sentence if empty or failed."""
    rating = float(bundle.ingredients["rating"].split("/")[0])
    try:
        gen = backend.generate(bundle.text, seed)
    except BackendError as exc:
        return GeneratedReview(fallback_review(rating), None, str(exc))
    text = truncate_tokens(gen.text.strip(), backend.max_new_tokens)
    return GeneratedReview(text or fallback_review(rating), gen)


def edge_seed(seed: int, edge_id: int) -> int:
    return int(np.random.SeedSequence([seed, edge_id]).generate_state(1)[0])


@dataclass
class LLMImputationResult(ImputationResult):
    ledger: TokenLedger = field(default_factory=TokenLedger)
    prompts: list[PromptRecord] = field(default_factory=list)
    contexts: dict = field(default_factory=dict)


@dataclass
class _EdgeOutcome:
    edge_id: int
    text: str
    records: list[PromptRecord]
    ledger: TokenLedger
    context: dict
    error: str | None


def impute_variant(
    variant: str,
    teg: BipartiteTEG,
    mask: Mask,
    views: Mapping[str, LineGraphView],
    backend: GenerationBackend,
    seed: int = 0,
    templates: Mapping[str, PromptTemplate] | None = None,
    neighbor_cap: int = DEFAULT_NEIGHBOR_CAP,
    payload_tokens: int = DEFAULT_PAYLOAD_TOKENS,
    parallelism: int = 1,
) -> LLMImputationResult:
    """Impute every masked review with one of the LLM variants.

    ``views`` maps ``"user"`` and/or ``"item"`` to line-graph views of
    ``teg``; a weighted user view may be passed under ``"user"`` or
    ``"user-weighted"`` and then orders user-side neighbours by weight.
    Edges are processed concurrently up to ``parallelism`` workers; the
    result does not depend on the worker count.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    spec = VARIANTS[variant]
    views = dict(views)
    if USER not in views and USER_WEIGHTED in views:
        views[USER] = views[USER_WEIGHTED]
    missing = [v for v in spec.required_views if v not in views]
    if missing:
        raise ImputationError(f"variant {variant} needs the {' and '.join(missing)} view(s)")
    for kind in spec.required_views:
        if views[kind].n_nodes != teg.n_edges:
            raise ImputationError(f"{kind} view has {views[kind].n_nodes} nodes for {teg.n_edges} edges")
    tpl = dict(DEFAULT_TEMPLATES)
    tpl.update(templates or {})
    visible = mask.apply(teg)
    scale = teg.rating_scale

    def run(eid: int) -> _EdgeOutcome:
        edge = visible.edges[eid]
        s = edge_seed(seed, eid)
        rating = rescale_rating(edge.rating, scale)
        focal = payload_text(edge.payload, scale, payload_tokens)
        records, ledger, context, errors = [], TokenLedger(), {}, []
        summaries = {}
        for side, kind, agg, role in (
            ("item", ITEM, aggregate_item, ITEM_AGGREGATION),
            ("user", USER, aggregate_user, USER_AGGREGATION),
        ):
            if not getattr(spec, f"{side}_context"):
                continue
            neigh = collect_context(views[kind], eid, mask, neighbor_cap, payload_tokens)
            if not neigh:
                summaries[side] = None
                continue
            out = agg(backend, eid, focal, neigh, s, tpl[role])
            records.append(out.record)
            if out.generation is not None:
                ledger.add(side.capitalize(), out.generation)
            if out.error:
                errors.append(f"{side} aggregation: {out.error}")
            summaries[side] = out.text
        metadata = visible.item_metadata.get(edge.item) if spec.metadata else None
        bundle = build_edge_prompt(rating, metadata, summaries.get("item"), summaries.get("user"), tpl[EDGE])
        records.append(PromptRecord(eid, EDGE, bundle.template_id, bundle.text, dict(bundle.ingredients)))
        review = generate_review(backend, bundle, s)
        if review.generation is not None:
            ledger.add("Imputation", review.generation)
        if review.error:
            errors.append(f"generation: {review.error}")
        context = {"phi_item": summaries.get("item"), "phi_user": summaries.get("user")}
        return _EdgeOutcome(eid, review.text, records, ledger, context, "; ".join(errors) or None)

    ids = mask.edge_ids
    if parallelism > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, ids))
    else:
        outcomes = [run(eid) for eid in ids]
    outcomes.sort(key=lambda o: o.edge_id)

    ledger = TokenLedger()
    prompts: list[PromptRecord] = []
    for o in outcomes:
        ledger.extend(o.ledger)
        prompts.extend(o.records)
    return LLMImputationResult(
        variant,
        ids,
        texts=tuple(o.text for o in outcomes),
        params={
            "seed": seed,
            "backend": backend.name,
            "neighbor_cap": neighbor_cap,
            "payload_tokens": payload_tokens,
            "templates": {k: v.id for k, v in sorted(tpl.items())},
        },
        failed={o.edge_id: o.error for o in outcomes if o.error},
        ledger=ledger,
        prompts=prompts,
        contexts={o.edge_id: o.context for o in outcomes},
    )


def _check_cover(mask: Mask, result: ImputationResult) -> None:
    got = set(result.edge_ids)
    missing = sorted(mask.omega - got)
    extra = sorted(got - mask.omega)
    if missing:
        raise ImputationError(f"imputation lacks masked edge(s) {missing[:20]}")
    if extra:
        raise ImputationError(f"imputation covers unmasked edge(s) {extra[:20]}")


def assemble_completed_reviews(teg: BipartiteTEG, mask: Mask, result: ImputationResult) -> list[str | None]:
    """Observed reviews where unmasked, imputed text where masked.

    Unmasked edges without a review in the source stay ``None``.
    """
    if result.kind != TEXT:
        raise ImputationError(f"{result.variant} produced embeddings, not text")
    _check_cover(mask, result)
    filled = result.as_dict()
    return [filled[e.id] if e.id in mask else e.review for e in teg.edges]


def assemble_completed_embeddings(
    teg: BipartiteTEG, mask: Mask, z_obs: np.ndarray, result: ImputationResult
) -> np.ndarray:
    """Observed review embeddings with the masked rows replaced by imputed ones."""
    if result.kind != EMBEDDING:
        raise ImputationError(f"{result.variant} produced text, not embeddings")
    _check_cover(mask, result)
    z = np.array(z_obs, dtype=float, copy=True)
    if result.edge_ids:
        z[list(result.edge_ids)] = result.rows
    return z
