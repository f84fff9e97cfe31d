import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from twister.embed import HashingEmbedder, embed
from twister.linegraph import ITEM, USER, USER_WEIGHTED, _from_links, item_view, laplacian, user_view, weighted_user_view
from twister.smoothness import (
    EnergyReport,
    RiskBoundInputs,
    SpectralError,
    dirichlet_energy,
    empirical_risk_check,
    energy_report,
    lambda_min,
    normalized_energy,
    risk_bound,
    trace_energy,
)

from conftest import bipartite_pairs, make_teg
from oracles import dense_trace_energy


def graph(n, links, weights=None):
    """A bare weighted view over n placeholder edges."""
    teg = make_teg([(f"u{k}", f"i{k}") for k in range(n)])
    a = np.array([x for x, _ in links], dtype=np.int64)
    b = np.array([y for _, y in links], dtype=np.int64)
    w = np.ones(len(links)) if weights is None else np.asarray(weights, dtype=float)
    return _from_links("test", teg, a, b, w)


def test_two_node_unit_edge():
    v = graph(2, [(0, 1)])
    assert dirichlet_energy(v, np.array([[1.0, 0.0], [0.0, 1.0]])) == 2.0


def test_constant_signal_exactly_zero(synth_small):
    Z = np.tile(np.array([0.3, -1.7, 2.2]), (synth_small.n_edges, 1))
    assert dirichlet_energy(user_view(synth_small), Z) == 0.0
    assert dirichlet_energy(item_view(synth_small), Z) == 0.0


def test_row_mismatch_raises():
    with pytest.raises(ValueError):
        dirichlet_energy(graph(3, [(0, 1)]), np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(bipartite_pairs(), st.integers(0, 2**32 - 1))
def test_pairwise_equals_trace(pairs, seed):
    rng = np.random.default_rng(seed)
    teg = make_teg(pairs)
    for v in (user_view(teg), item_view(teg)):
        Z = rng.normal(size=(teg.n_edges, 3))
        a, b, w = v.links()
        ref, _ = dense_trace_energy(teg.n_edges, list(zip(a, b)), w, Z)
        got = dirichlet_energy(v, Z)
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert trace_energy(laplacian(v), Z) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def components(n, links):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in links:
        parent[find(a)] = find(b)
    return [find(x) for x in range(n)]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.data())
def test_zero_iff_piecewise_constant(n, data):
    all_pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    links = data.draw(st.lists(st.sampled_from(all_pairs), unique=True) if all_pairs else st.just([]))
    v = graph(n, links)
    comp = components(n, links)
    values = data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    Z = np.array(values, dtype=float)[:, None]
    const = all(values[a] == values[b] for a in range(n) for b in range(n) if comp[a] == comp[b])
    assert (dirichlet_energy(v, Z) == 0.0) == const


def test_adding_positive_edge_never_decreases(rng):
    for _ in range(30):
        n = 6
        links = [(0, 1), (1, 2), (3, 4)]
        Z = rng.normal(size=(n, 2))
        base = dirichlet_energy(graph(n, links), Z)
        more = dirichlet_energy(graph(n, links + [(2, 5)], [1, 1, 1, rng.uniform(0.01, 2)]), Z)
        assert more >= base


def test_energy_report_hand_fixture():
    # e1, e2 share u1; e3 is (u2, i1), sharing item i1 with e1
    teg = make_teg([("u1", "i1"), ("u1", "i2"), ("u2", "i1")])
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    emb = {"i1": np.array([1.0, 0.0]), "i2": np.array([1.0, 1.0])}
    views = {USER: user_view(teg), ITEM: item_view(teg), USER_WEIGHTED: weighted_user_view(teg, emb)}
    r = energy_report(views, Z, "x", "b")
    w12 = 1 / np.sqrt(2)
    assert r.e_user == 2.0 and r.e_item == 0.0
    assert r.e_user_weighted == pytest.approx(2 * w12)
    assert r.n_edges == 3
    zero = energy_report(views, np.ones((3, 2)))
    assert zero.components() == (0.0, 0.0, 0.0)


def test_energy_report_needs_views_and_empty():
    teg = make_teg([("u1", "a"), ("u2", "b")])
    r = energy_report({USER: user_view(teg), ITEM: item_view(teg)}, np.eye(2))
    assert r.components() == (0.0, 0.0, None)
    with pytest.raises(KeyError):
        energy_report({USER: user_view(teg)}, np.eye(2))


def test_normalized_energy():
    blank = EnergyReport(2.0, 4.0, 8.0, 10)
    assert normalized_energy(blank, blank) == (1.0, 1.0, 1.0)
    assert normalized_energy(EnergyReport(1.0, 2.0, 4.0, 10), blank) == (0.5, 0.5, 0.5)
    assert normalized_energy(EnergyReport(1.0, 2.0, 4.0, 10), EnergyReport(0.0, 4.0, None, 10)) == (None, 0.5, None)


def test_lambda_min_references():
    assert lambda_min(laplacian(graph(2, [(0, 1)]))) == pytest.approx(2.0, abs=1e-8)
    assert lambda_min(laplacian(graph(3, [(0, 1), (1, 2)]))) == pytest.approx(1.0, abs=1e-8)
    assert lambda_min(laplacian(graph(4, [(0, 1), (2, 3)]))) == pytest.approx(2.0, abs=1e-8)
    # K2 disjoint with P3: spectrum {0, 0, 1, 2, 3}
    assert lambda_min(laplacian(graph(5, [(0, 1), (2, 3), (3, 4)]))) == pytest.approx(1.0, abs=1e-8)


def test_lambda_min_errors():
    with pytest.raises(SpectralError):
        lambda_min(laplacian(graph(3, [])))
    with pytest.raises(SpectralError, match="dense limit"):
        lambda_min(sp.identity(5), dense_limit=4)


def test_risk_bound_values():
    inp = RiskBoundInputs(B=1.0, lambda_min=2.0, energy=2.0, n_edges=2, var_y=0.25)
    assert risk_bound(inp) == 0.75
    assert risk_bound(RiskBoundInputs(1.0, 2.0, 0.0, 2, 0.25)) == 0.25
    first = risk_bound(inp) - 0.25
    assert risk_bound(RiskBoundInputs(2.0, 2.0, 2.0, 2, 0.25)) - 0.25 == 4 * first
    for bad in (dict(B=0), dict(lambda_min=0), dict(var_y=-1)):
        kw = dict(B=1.0, lambda_min=2.0, energy=2.0, n_edges=2, var_y=0.25) | bad
        with pytest.raises(ValueError):
            RiskBoundInputs(**kw)


def test_empirical_risk_check(synth_small):
    v = user_view(synth_small.subgraph(synth_small.user_edges(synth_small.users[0])))
    n = v.n_nodes
    rng = np.random.default_rng(0)
    Z, y = rng.normal(size=(n, 4)), rng.normal(size=n)
    L = laplacian(v)
    rep = empirical_risk_check(Z, y, 1.0, L, trials=50, seed=3)
    assert rep.trials == 50 and len(rep.risks) == 50
    assert rep.violations == sum(r > rep.bound for r in rep.risks)
    assert rep.to_dict() == empirical_risk_check(Z, y, 1.0, L, trials=50, seed=3).to_dict()
    empty = empirical_risk_check(Z, y, 1.0, L, trials=0)
    assert empty.bound is None and empty.violations == 0


def test_risk_at_zero_weight_is_half_mean_square():
    # with B tiny every draw is near w = 0, so R ~ 0.5 * mean(centred y^2) = 0.5 Var(y) <= bound
    Z = np.eye(3)
    y = np.array([1.0, 2.0, 6.0])
    L = laplacian(graph(3, [(0, 1), (1, 2)]))
    rep = empirical_risk_check(Z, y, 1e-9, L, trials=5, seed=0)
    assert rep.max_risk == pytest.approx(0.5 * np.var(y))
    assert rep.violations == 0


def test_mean_fill_below_random_fill(synth_small, rng):
    # replacing masked rows with the global mean versus random unit rows, over 20 seeds
    emb = HashingEmbedder(16)
    Z0 = embed(emb, synth_small.reviews())
    v = user_view(synth_small)
    mean_e, rand_e = [], []
    for s in range(20):
        r = np.random.default_rng(s)
        masked = r.choice(synth_small.n_edges, size=synth_small.n_edges // 2, replace=False)
        keep = np.setdiff1d(np.arange(synth_small.n_edges), masked)
        Zm, Zr = Z0.copy(), Z0.copy()
        Zm[masked] = Z0[keep].mean(axis=0)
        rows = r.normal(size=(len(masked), 16))
        Zr[masked] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        mean_e.append(dirichlet_energy(v, Zm))
        rand_e.append(dirichlet_energy(v, Zr))
    assert np.mean(mean_e) <= np.mean(rand_e)
