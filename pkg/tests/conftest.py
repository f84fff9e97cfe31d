import numpy as np
import pytest
from hypothesis import strategies as st

from twister.ingest import synth_teg
from twister.teg import build_teg


def make_teg(pairs, reviews=None, ratings=None, metadata=None):
    """TEG from (user, item) pairs; reviews default to "r<k>."."""
    recs = []
    for k, (u, i) in enumerate(pairs):
        review = reviews[k] if reviews is not None else f"review number {k} here."
        rating = ratings[k] if ratings is not None else 4.0
        recs.append((u, i, rating, review))
    return build_teg(recs, metadata)


@st.composite
def bipartite_pairs(draw, max_users=8, max_items=8, max_edges=50):
    n_u = draw(st.integers(1, max_users))
    n_i = draw(st.integers(1, max_items))
    cells = st.tuples(st.integers(0, n_u - 1), st.integers(0, n_i - 1))
    pairs = draw(st.lists(cells, min_size=1, max_size=max_edges, unique=True))
    return [(f"u{u}", f"i{i}") for u, i in pairs]


def random_pairs(rng, max_users=8, max_items=8, max_edges=50):
    n_u, n_i = int(rng.integers(1, max_users + 1)), int(rng.integers(1, max_items + 1))
    n = int(rng.integers(1, min(max_edges, n_u * n_i) + 1))
    cells = rng.choice(n_u * n_i, size=n, replace=False)
    return [(f"u{c // n_i}", f"i{c % n_i}") for c in cells]


@pytest.fixture
def small_teg():
    # u1: i1, i2 ; u2: i1, i3 ; u3: i2
    return make_teg(
        [("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i3"), ("u3", "i2")],
        reviews=["Great toy. Kids love it.", "Broke fast. Poor build.", "Fun toy for kids. Sturdy.", None, "Decent value."],
        ratings=[5.0, 2.0, 4.0, 3.0, 3.0],
        metadata={"i1": "wooden train set", "i2": "plastic robot", "i3": "puzzle"},
    )


@pytest.fixture(scope="session")
def synth_small():
    recs, meta = synth_teg(20, 30, 0.3, seed=3, n_blocks=2)
    return build_teg(recs, meta)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, desc, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {desc} ({detail})")
