import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transa.data import NeighborhoodIndex, build_index
from transa.margin import (
    ActiveSetConfig,
    MarginError,
    combined_margin,
    entity_margin_active,
    entity_margin_exact,
    min_abs_gap,
    refresh_table,
    relation_margin,
)
from transa.model import EmbeddingModel, init_model
from transa.synthetic import random_graph

from conftest import make_graph, make_model
from oracles import NORMS, brute_entity_margin


@pytest.fixture
def planar():
    # h at the origin; r1 tails at distance 1 and 2, r2 tail at distance 5
    E = [[0, 0], [1, 0], [0, 2], [5, 0]]
    R = [[0.1, 0], [0, 0.1]]
    g = make_graph([(0, 0, 1), (0, 0, 2), (0, 1, 3)])
    return g, build_index(g), make_model(E, R, "l2")


def test_exact_planar_example(planar):
    g, idx, m = planar
    assert entity_margin_exact(0, idx, m) == pytest.approx(3.0, abs=1e-12)


def test_no_negatives_gives_zero():
    g = make_graph([(0, 0, 1), (0, 0, 2)])
    m = init_model(3, 1, 4, "l2", seed=0)
    assert entity_margin_exact(0, build_index(g), m) == 0.0
    assert entity_margin_active(0, build_index(g), m, ActiveSetConfig(0.3, 4)) == 0.0


def test_overlap_gives_zero():
    class Overlap(NeighborhoodIndex):
        def negatives(self, h, r):
            return self.positives(h, r)

    g = make_graph([(0, 0, 1)])
    idx = Overlap(g.train)
    m = init_model(2, 1, 3, "l2", seed=1)
    assert entity_margin_exact(0, idx, m) == 0.0


def test_never_a_head_raises():
    g = make_graph([(0, 0, 1)])
    with pytest.raises(MarginError):
        entity_margin_exact(1, build_index(g), init_model(2, 1, 2, seed=0))
    # mirrored construction covers tail-only entities
    assert entity_margin_exact(1, build_index(g, side="tail"), init_model(2, 1, 2, seed=0)) == 0.0


def test_min_abs_gap_matches_grid():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.random(rng.integers(1, 9)), rng.random(rng.integers(1, 9))
        assert min_abs_gap(a, b) == np.abs(b[:, None] - a[None, :]).min()


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_exact_matches_brute_force(kind):
    for seed in range(25):
        g = random_graph(12, 3, 40, seed=seed)
        m = init_model(12, 3, 5, kind, seed=seed)
        idx = build_index(g)
        for h in idx.anchors():
            want = brute_entity_margin(h, g.train.tolist(), m.entity_vecs.tolist(), NORMS[kind])
            assert abs(entity_margin_exact(h, idx, m) - want) <= 1e-9


def test_active_full_fraction_is_exact():
    for seed in range(20):
        g = random_graph(15, 4, 50, seed=seed)
        m = init_model(15, 4, 6, "l1", seed=seed)
        idx = build_index(g)
        for h in idx.anchors():
            assert entity_margin_active(h, idx, m, ActiveSetConfig(1.0, 1)) == entity_margin_exact(h, idx, m)


def test_active_planar_example(planar):
    g, idx, m = planar
    est = entity_margin_active(0, idx, m, ActiveSetConfig(0.5, 10, rng_seed=0))
    assert abs(est - 3.0) / 3.0 <= 0.2


def test_active_is_seeded(planar):
    g, idx, m = planar
    cfg = ActiveSetConfig(0.5, 10, rng_seed=4)
    assert entity_margin_active(0, idx, m, cfg) == entity_margin_active(0, idx, m, cfg)


def test_active_config_validation():
    for bad in (dict(fraction=0.0), dict(fraction=1.5), dict(rounds=0), dict(temperature=0)):
        with pytest.raises(ValueError):
            ActiveSetConfig(**bad)
    assert ActiveSetConfig(0.01).sample_size(3) == 1


def _relation_fixture(norms):
    # entity 0 attached to len(norms) relations via distinct tails
    n = len(norms)
    g = make_graph([(0, r, r + 1) for r in range(n)])
    R = np.zeros((n, 2))
    R[:, 0] = norms
    return g, build_index(g), make_model(np.zeros((n + 1, 2)), R, "l2")


def test_relation_margin_examples():
    g, idx, m = _relation_fixture([1.0, 0.5, 1.2, 2.0])
    assert relation_margin(0, 0, idx, m) == pytest.approx(0.2, abs=1e-12)
    assert relation_margin(0, 3, idx, m) == 0.0  # largest norm: nothing qualifies
    g, idx, m = _relation_fixture([1.0])
    assert relation_margin(0, 0, idx, m) == 0.0
    with pytest.raises(ValueError):
        relation_margin(0, 5, idx, m)


def test_combined_margin():
    assert combined_margin(3.0, 0.2, 0.5) == pytest.approx(1.6)
    assert combined_margin(3.0, 0.2, 1.0) == 3.0
    assert combined_margin(3.0, 0.2, 0.0) == 0.2
    with pytest.raises(ValueError):
        combined_margin(1, 1, 1.2)


@settings(max_examples=60)
@given(
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1)
)
def test_combined_monotone(a, b, extra, mu):
    assert combined_margin(a + extra, b, mu) >= combined_margin(a, b, mu)
    assert combined_margin(a, b + extra, mu) >= combined_margin(a, b, mu)


def test_refresh_table_identity_and_determinism():
    g = random_graph(20, 4, 70, seed=3)
    m = init_model(20, 4, 6, "l1", seed=3)
    idx = build_index(g)
    t1 = refresh_table(g, idx, m, 0.3, epoch=7)
    t2 = refresh_table(g, idx, m, 0.3, epoch=7)
    assert t1 == t2 and t1.epoch_computed == 7
    for (h, r), v in t1.m_opt.items():
        assert v == 0.3 * t1.m_ent[h] + (1 - 0.3) * t1.m_rel[(h, r)]
        assert v >= 0
    assert set(t1.m_opt) == {(h, r) for h, r, _ in g.train.tolist()}
    cfg = ActiveSetConfig(0.5, 3, 1)
    assert refresh_table(g, idx, m, 0.3, cfg) == refresh_table(g, idx, m, 0.3, cfg)


def test_zero_relations_give_zero_relation_margins():
    g = random_graph(10, 3, 30, seed=0)
    m = init_model(10, 3, 4, "l2", seed=0)
    m.relation_vecs[:] = 0
    t = refresh_table(g, build_index(g), m, 0.5)
    assert all(v == 0 for v in t.m_rel.values())


def test_table_export(tmp_path):
    g = random_graph(10, 3, 30, seed=0)
    t = refresh_table(g, build_index(g), init_model(10, 3, 4, seed=0), 0.5)
    ent, pair = t.to_tsv(tmp_path)
    rows = [line.split("\t") for line in pair.read_text().splitlines()]
    assert len(rows) == len(t.m_opt) and all(len(r) == 4 for r in rows)
    assert len(ent.read_text().splitlines()) == len(t.m_ent)


@pytest.mark.parametrize("kind", ["l1", "l2"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), c=st.floats(0.1, 10))
def test_scale_covariance(kind, seed, c):
    g = random_graph(10, 3, 30, seed=seed)
    m = init_model(10, 3, 4, kind, seed=seed)
    idx = build_index(g)
    scaled = EmbeddingModel(m.entity_vecs * c, m.relation_vecs * c, kind)
    for h in idx.anchors():
        assert entity_margin_exact(h, idx, scaled) == pytest.approx(c * entity_margin_exact(h, idx, m), rel=1e-9, abs=1e-12)
        for r in idx.relations(h):
            assert relation_margin(h, r, idx, scaled) == pytest.approx(c * relation_margin(h, r, idx, m), rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.05, 1.0), rounds=st.integers(1, 5))
def test_margins_non_negative(seed, frac, rounds):
    g = random_graph(8, 3, 20, seed=seed)
    m = init_model(8, 3, 3, "l1", seed=seed)
    idx = build_index(g)
    for h in idx.anchors():
        assert entity_margin_exact(h, idx, m) >= 0
        assert entity_margin_active(h, idx, m, ActiveSetConfig(frac, rounds, seed)) >= 0
        for r in idx.relations(h):
            assert relation_margin(h, r, idx, m) >= 0
