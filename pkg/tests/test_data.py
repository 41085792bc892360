import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transa.data import (
    CorruptionError,
    DataError,
    ParseError,
    build_index,
    corrupt,
    load_graph,
    load_labeled,
    partition,
    read_graph,
    save_graph,
)
from transa.synthetic import random_graph

from conftest import make_graph, write_tsv


def test_load_names_assigns_ids_in_first_appearance_order(tmp_path):
    tr = write_tsv(tmp_path / "train.txt", [("a", "likes", "b"), ("b", "likes", "c"), ("a", "hates", "c")])
    va = write_tsv(tmp_path / "valid.txt", [("c", "likes", "d")])
    te = write_tsv(tmp_path / "test.txt", [])
    g = load_graph(tr, va, te)
    assert g.entities.names == ["a", "b", "c", "d"]
    assert g.relations.names == ["likes", "hates"]
    assert g.train.tolist() == [[0, 0, 1], [1, 0, 2], [0, 1, 2]]
    assert g.valid.tolist() == [[2, 0, 3]]
    assert len(g.test) == 0
    assert g.correct_set >= {(0, 0, 1), (2, 0, 3)}


def test_load_ids_format(tmp_path):
    tr = write_tsv(tmp_path / "train.txt", [(0, 0, 3), (3, 1, 2)])
    g = load_graph(tr, format="tsv-ids")
    assert g.n_entities == 4 and g.n_relations == 2
    assert g.train.tolist() == [[0, 0, 3], [3, 1, 2]]


def test_malformed_line_reports_line_number(tmp_path):
    tr = tmp_path / "train.txt"
    tr.write_text("a\tr\tb\nbroken line\n")
    with pytest.raises(ParseError, match=r"train.txt:2"):
        load_graph(tr)


def test_empty_train_is_rejected(tmp_path):
    tr = tmp_path / "train.txt"
    tr.write_text("")
    with pytest.raises(DataError):
        load_graph(tr)


def test_duplicates_dropped(tmp_path, caplog):
    tr = write_tsv(tmp_path / "train.txt", [("a", "r", "b"), ("a", "r", "b")])
    g = load_graph(tr)
    assert len(g.train) == 1
    assert "duplicate" in caplog.text


def test_round_trip(tmp_path, toy_graph):
    save_graph(toy_graph, tmp_path / "g")
    back = read_graph(tmp_path / "g")
    assert back.entities == toy_graph.entities
    assert back.relations == toy_graph.relations
    for split in ("train", "valid", "test"):
        assert np.array_equal(back.split(split), toy_graph.split(split))
    assert back.correct_set == toy_graph.correct_set


def test_load_labeled(tmp_path, toy_graph):
    path = write_tsv(
        tmp_path / "dev.txt",
        [("e0", "r0", "e1", 1), ("e0", "r0", "e4", -1), ("zz", "r0", "e1", 1)],
    )
    pos, neg = load_labeled(path, toy_graph)
    assert pos.tolist() == [[0, 0, 1]]
    assert neg.tolist() == [[0, 0, 4]]


# --- neighborhood index ----------------------------------------------------


def naive_sets(triples, h):
    """Set-comprehension oracle for R_h, P_r, N_r."""
    delta = {tuple(t) for t in triples}
    R_h = {r for (a, r, _) in delta if a == h}
    P = {r: {t for (a, rr, t) in delta if a == h and rr == r} for r in R_h}
    ents = {x for (a, _, b) in delta for x in (a, b)}
    N = {
        r: {t for t in ents if (h, r, t) not in delta and any((h, r2, t) in delta for r2 in R_h)}
        for r in R_h
    }
    return R_h, P, N


def test_index_example():
    h, r1, r2, t1, t2, t3 = 0, 0, 1, 1, 2, 3
    g = make_graph([(h, r1, t1), (h, r1, t2), (h, r2, t3)])
    idx = build_index(g)
    assert set(idx.relations(h)) == {r1, r2} and idx.n_relations(h) == 2
    assert set(idx.positives(h, r1).tolist()) == {t1, t2}
    assert set(idx.negatives(h, r1).tolist()) == {t3}
    assert set(idx.positives(h, r2).tolist()) == {t3}
    assert set(idx.negatives(h, r2).tolist()) == {t1, t2}


def test_index_single_relation_has_no_negatives():
    idx = build_index(make_graph([(0, 0, 1), (0, 0, 2)]))
    assert len(idx.negatives(0, 0)) == 0


def test_index_shared_tail_blocks_negatives():
    idx = build_index(make_graph([(0, 0, 1), (0, 1, 1)]))
    assert len(idx.negatives(0, 0)) == 0 and len(idx.negatives(0, 1)) == 0


def test_index_tail_side_mirrors():
    idx = build_index(make_graph([(0, 0, 5), (1, 0, 5), (2, 1, 5)]), side="tail")
    assert set(idx.positives(5, 0).tolist()) == {0, 1}
    assert set(idx.negatives(5, 0).tolist()) == {2}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 4), st.integers(1, 50))
def test_index_matches_naive_oracle(seed, n_e, n_r, n_t):
    g = random_graph(n_e, n_r, n_t, seed=seed)
    idx = build_index(g)
    for h in range(n_e):
        R_h, P, N = naive_sets(g.train.tolist(), h)
        assert set(idx.relations(h)) == R_h
        for r in R_h:
            assert len(P[r]) > 0
            assert set(idx.positives(h, r).tolist()) == P[r]
            assert set(idx.negatives(h, r).tolist()) == N[r]


# --- corruption ------------------------------------------------------------


def test_corrupt_forced_outcome():
    g = make_graph([(0, 0, 1)])
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = corrupt((0, 0, 1), g, rng)
        assert c in {(1, 0, 1), (0, 0, 0)}


def test_corrupt_deterministic(toy_graph):
    a = [corrupt(t, toy_graph, np.random.default_rng(7)) for t in toy_graph.train]
    b = [corrupt(t, toy_graph, np.random.default_rng(7)) for t in toy_graph.train]
    assert a == b


def test_corrupt_head_fraction(toy_graph):
    rng = np.random.default_rng(3)
    g = random_graph(50, 2, 40, seed=1)
    triple = tuple(g.train[0].tolist())
    heads = 0
    for _ in range(10_000):
        c = corrupt(triple, g, rng)
        assert c not in g.correct_set
        assert (c[0] != triple[0]) != (c[2] != triple[2])
        heads += c[0] != triple[0]
    assert 0.47 <= heads / 10_000 <= 0.53


def test_corrupt_exhausted():
    # every possible corruption is itself a correct triple
    g = make_graph([(a, 0, b) for a in range(2) for b in range(2)])
    with pytest.raises(CorruptionError):
        corrupt((0, 0, 1), g, np.random.default_rng(0), max_retries=20)


# --- partition -------------------------------------------------------------


def test_partition_sizes_and_completeness():
    g = random_graph(40, 13, 300, seed=2)
    parts = partition(g, 5, 11)
    sizes = [p.graph.n_relations for p in parts]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 13
    named = sorted(
        (p.graph.entities.name(h), p.graph.relations.name(r), p.graph.entities.name(t))
        for p in parts
        for h, r, t in p.graph.train.tolist()
    )
    orig = sorted(
        (g.entities.name(h), g.relations.name(r), g.entities.name(t)) for h, r, t in g.train.tolist()
    )
    assert named == orig
    for p in parts:
        p.graph.validate()
        used = set(p.graph.train[:, 0]) | set(p.graph.train[:, 2])
        assert len(used) == p.graph.n_entities


def test_partition_identity_and_maximal():
    g = random_graph(20, 4, 60, seed=0)
    (only,) = partition(g, 1, 0)
    assert {
        (only.graph.entities.name(h), only.graph.relations.name(r), only.graph.entities.name(t))
        for h, r, t in only.graph.train.tolist()
    } == {(g.entities.name(h), g.relations.name(r), g.entities.name(t)) for h, r, t in g.train.tolist()}
    assert all(p.graph.n_relations == 1 for p in partition(g, 4, 0))


def test_partition_deterministic_and_bad_k():
    g = random_graph(20, 6, 60, seed=0)
    assert [p.relation_names for p in partition(g, 3, 5)] == [p.relation_names for p in partition(g, 3, 5)]
    for k in (0, 7):
        with pytest.raises(ValueError):
            partition(g, k, 0)
