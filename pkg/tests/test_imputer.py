import numpy as np
import pytest

from twister.backends import BackendError, Generation, MockBackend
from twister.baselines import ImputationError, ImputationResult, impute_blank, impute_mean
from twister.embed import HashingEmbedder, embed, item_embeddings
from twister.imputer import (
    VARIANTS,
    aggregate_item,
    aggregate_user,
    assemble_completed_embeddings,
    assemble_completed_reviews,
    collect_context,
    fallback_review,
    generate_review,
    impute_variant,
    payload_text,
)
from twister.linegraph import ITEM, USER, USER_WEIGHTED, item_view, user_view, weighted_user_view
from twister.prompts import ABSENT, EDGE, ITEM_AGGREGATION, USER_AGGREGATION, build_edge_prompt
from twister.teg import COLD_START, UNIFORM, EdgePayload, Mask, mask_uniform

from conftest import make_teg


class Counting(MockBackend):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.calls = []

    def generate(self, prompt, seed=0):
        self.calls.append(prompt)
        return super().generate(prompt, seed)


class Broken:
    name = "broken"
    max_new_tokens = 250
    deterministic = True

    def generate(self, prompt, seed=0):
        raise BackendError("down")


class Silent(Broken):
    def generate(self, prompt, seed=0):
        return Generation("   ", 3, 0, 0.0)


def views_of(teg):
    return {USER: user_view(teg), ITEM: item_view(teg)}


def test_payload_text():
    assert payload_text(EdgePayload(4.0, "Nice.")) == "Nice. (rated 4.0/5.0)"
    assert payload_text(EdgePayload(2.0)) == "(rated 2.0/5.0)"
    assert payload_text(EdgePayload(2.0, "a b c d"), token_cap=2) == "a b (rated 2.0/5.0)"
    assert payload_text(EdgePayload(10.0), scale=(0.0, 10.0)) == "(rated 5.0/5.0)"


def test_collect_context_rules():
    teg = make_teg([("u", "a"), ("u", "b"), ("u", "c"), ("v", "d")], reviews=["x.", "y.", "z.", "w."])
    emb = {"a": np.array([1.0, 0.0]), "b": np.array([0.6, 0.8]), "c": np.array([1.0, 0.1]), "d": np.ones(2)}
    wv = weighted_user_view(teg, emb)
    none = Mask(frozenset(), UNIFORM)
    assert collect_context(user_view(teg), 3, none) == []
    # c is more similar to a than b is, so it wins under a cap of 1
    assert collect_context(wv, 0, none, cap=1) == ["z. (rated 4.0/5.0)"]
    # unweighted: ties broken by ascending id
    assert collect_context(user_view(teg), 0, none, cap=1) == ["y. (rated 4.0/5.0)"]
    assert collect_context(wv, 0, Mask(frozenset({2}), UNIFORM)) == ["y. (rated 4.0/5.0)"]


def test_collect_context_skips_native_missing():
    teg = make_teg([("u", "a"), ("u", "b")], reviews=["x.", None])
    assert collect_context(user_view(teg), 0, Mask(frozenset(), UNIFORM)) == []


def test_aggregation_with_mock():
    out = aggregate_user(MockBackend(), 0, "great", [])
    assert "great" in out.text
    out = aggregate_item(MockBackend(), 0, "Focal. x", ["First A. tail", "First B. tail"])
    assert out.text == "Focal. First A. First B."
    assert out.record.role == ITEM_AGGREGATION
    assert out.generation.completion_tokens == 5
    assert aggregate_user(MockBackend(), 0, "f.", ["n."], seed=3).text == aggregate_user(MockBackend(), 0, "f.", ["n."], seed=3).text


def test_aggregation_failure_marks_context_absent():
    out = aggregate_user(Broken(), 7, "f.", ["n."])
    assert out.text is None and "down" in out.error


def test_generate_review_cap_and_fallback():
    b = build_edge_prompt(3.0, "w " * 400, None, None)
    assert len(generate_review(MockBackend(context_tokens=400), b).text.split()) <= 250
    assert generate_review(Silent(), b).text == fallback_review(3.0) == "I would rate this item 3.0/5.0."
    r = generate_review(Broken(), b)
    assert r.text == fallback_review(3.0) and r.error


@pytest.fixture
def teg():
    pairs = [("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "c"), ("u3", "b"), ("u3", "c"), ("u1", "c")]
    reviews = [f"Review {k} first. Review {k} second." for k in range(len(pairs))]
    return make_teg(pairs, reviews=reviews, metadata={"a": "meta a", "b": "meta b", "c": "meta c"})


def test_llm_variant_makes_no_aggregation_calls(teg):
    backend = Counting()
    m = Mask(frozenset({0, 3}), UNIFORM)
    r = impute_variant("LLM", teg, m, {}, backend)
    assert len(backend.calls) == 2
    assert {p.role for p in r.prompts} == {EDGE}
    assert r.texts == ("Rated 4.0/5.0. meta a", "Rated 4.0/5.0. meta c")


def test_llm_ui_at_most_two_aggregations_per_edge(teg):
    backend = Counting()
    m = mask_uniform(teg, 0.5, 0)
    r = impute_variant("LLM-UI", teg, m, views_of(teg), backend)
    agg = [p for p in r.prompts if p.role != EDGE]
    for eid in m.edge_ids:
        assert sum(p.edge_id == eid for p in agg) <= 2
    assert len(backend.calls) == len(r.prompts)
    assert r.kind == "text" and set(r.edge_ids) == m.omega


def test_variant_ingredients(teg):
    m = Mask(frozenset({0}), UNIFORM)
    for variant, spec in VARIANTS.items():
        r = impute_variant(variant, teg, m, views_of(teg), MockBackend())
        edge = [p for p in r.prompts if p.role == EDGE][0]
        assert (edge.ingredients["metadata"] is not None) == spec.metadata, variant
        assert (edge.ingredients["item_context"] is not None) == spec.item_context, variant
        assert (edge.ingredients["user_context"] is not None) == spec.user_context, variant


def test_missing_view_raises_before_generation(teg):
    backend = Counting()
    with pytest.raises(ImputationError, match="item"):
        impute_variant("LLM-UI", teg, Mask(frozenset({0}), UNIFORM), {USER: user_view(teg)}, backend)
    assert backend.calls == []
    with pytest.raises(ValueError):
        impute_variant("LLM-X", teg, Mask(frozenset({0}), UNIFORM), {}, backend)


def test_weighted_view_accepted_for_user_side(teg):
    wv = weighted_user_view(teg, item_embeddings(teg, HashingEmbedder(8)))
    r = impute_variant("LLM-U", teg, Mask(frozenset({0}), UNIFORM), {USER_WEIGHTED: wv}, MockBackend())
    assert r.contexts[0]["phi_user"]


def test_cold_start_user_context_absent():
    teg = make_teg([("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b")], reviews=["A1.", "B1.", "A2.", "B2."])
    m = Mask(frozenset(teg.user_edges("u1")), COLD_START, ("u1",))
    r = impute_variant("LLM-U", teg, m, views_of(teg), MockBackend())
    assert all(c["phi_user"] is None for c in r.contexts.values())
    assert all(ABSENT["user_context"] in p.prompt for p in r.prompts if p.role == EDGE)
    assert all(t for t in r.texts)
    assert not r.failed


def test_masked_focal_contributes_rating_only(teg):
    m = Mask(frozenset({0}), UNIFORM)
    r = impute_variant("LLM-UI", teg, m, views_of(teg), MockBackend())
    for p in r.prompts:
        if p.role != EDGE:
            assert p.ingredients["focal"] == "(rated 4.0/5.0)"


def test_one_hop_and_mask_discipline(synth_small):
    m = mask_uniform(synth_small, 0.5, 4)
    views = views_of(synth_small)
    r = impute_variant("LLM-UI", synth_small, m, views, MockBackend(), seed=1)
    heldout = m.heldout(synth_small)
    for p in r.prompts:
        for text in heldout.values():
            assert text not in p.prompt
        if p.role == EDGE:
            continue
        kind = USER if p.role == USER_AGGREGATION else ITEM
        allowed = {payload_text(views[kind].payload(int(n)), token_cap=60) for n in views[kind].row(p.edge_id)[0] if int(n) not in m}
        assert set(p.ingredients["neighbors"]) <= allowed


def test_determinism_across_worker_counts(synth_small):
    m = mask_uniform(synth_small, 0.5, 0)
    views = views_of(synth_small)
    a = impute_variant("LLM-UI", synth_small, m, views, MockBackend(), seed=2, parallelism=1)
    b = impute_variant("LLM-UI", synth_small, m, views, MockBackend(), seed=2, parallelism=4)
    assert a.texts == b.texts
    assert [p.prompt for p in a.prompts] == [p.prompt for p in b.prompts]
    assert a.ledger.summary() == b.ledger.summary()


def test_backend_failure_recorded_and_continues(teg):
    m = Mask(frozenset({0, 1}), UNIFORM)
    r = impute_variant("LLM-UI", teg, m, views_of(teg), Broken())
    assert set(r.failed) == {0, 1}
    assert r.texts == (fallback_review(4.0),) * 2


def test_ledger_counts(teg):
    m = Mask(frozenset({0, 1, 2}), UNIFORM)
    r = impute_variant("LLM-UI", teg, m, views_of(teg), MockBackend())
    rows = {x["type"]: x for x in r.ledger.summary()}
    assert rows["Imputation"]["count"] == 3
    assert rows["User"]["count"] + rows["Item"]["count"] == sum(p.role != EDGE for p in r.prompts)


def test_assemble_reviews(teg):
    none = Mask(frozenset(), UNIFORM)
    assert assemble_completed_reviews(teg, none, impute_blank(teg, none)) == teg.reviews()
    allm = Mask(frozenset(range(teg.n_edges)), UNIFORM)
    assert assemble_completed_reviews(teg, allm, impute_blank(teg, allm)) == [""] * teg.n_edges
    m = Mask(frozenset({1}), UNIFORM)
    out = assemble_completed_reviews(teg, m, ImputationResult("x", (1,), texts=("new",)))
    assert out[1] == "new" and out[0] == teg.edges[0].review and out[2] == teg.edges[2].review
    with pytest.raises(ImputationError, match=r"\[1\]"):
        assemble_completed_reviews(teg, m, ImputationResult("x", (), texts=()))
    with pytest.raises(ImputationError, match="unmasked"):
        assemble_completed_reviews(teg, m, ImputationResult("x", (1, 2), texts=("a", "b")))


def test_assemble_embeddings(teg):
    m = Mask(frozenset({1, 2}), UNIFORM)
    Z = embed(HashingEmbedder(8), m.apply(teg).reviews())
    r = impute_mean(teg, m, Z)
    full = assemble_completed_embeddings(teg, m, Z, r)
    assert np.array_equal(full[0], Z[0])
    assert np.allclose(full[1], r.rows[0])
    with pytest.raises(ImputationError):
        assemble_completed_embeddings(teg, m, Z, impute_blank(teg, m))
    with pytest.raises(ImputationError):
        assemble_completed_reviews(teg, m, r)
