"""Synthetic graphs with a planted translation structure, for tests and demos."""
from __future__ import annotations

import numpy as np

from transa.data import KnowledgeGraph, Vocab


def planted_graph(
    n_entities: int = 200,
    n_relations: int = 10,
    n_triples: int = 2000,
    latent_dim: int = 8,
    seed: int = 0,
    valid_frac: float = 0.1,
    test_frac: float = 0.1,
) -> KnowledgeGraph:
    """Each triple links ``h`` to the entity nearest ``x_h + v_r`` in a hidden space.

    ``(h, r)`` pairs are drawn without replacement, so ``n_triples`` may not
    exceed ``n_entities * n_relations``.
    """
    if n_triples > n_entities * n_relations:
        raise ValueError("more triples requested than (head, relation) pairs exist")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_entities, latent_dim))
    v = rng.normal(size=(n_relations, latent_dim))
    pairs = rng.choice(n_entities * n_relations, size=n_triples, replace=False)
    rows = []
    for p in pairs.tolist():
        h, r = divmod(p, n_relations)
        d = np.linalg.norm(x[h] + v[r] - x, axis=1)
        d[h] = np.inf
        rows.append((h, r, int(np.argmin(d))))
    rows = np.asarray(rows, dtype=np.int64)
    n_test = int(round(test_frac * n_triples))
    n_valid = int(round(valid_frac * n_triples))
    test, valid, train = rows[:n_test], rows[n_test : n_test + n_valid], rows[n_test + n_valid :]
    return KnowledgeGraph(
        Vocab(f"e{i}" for i in range(n_entities)),
        Vocab(f"r{i}" for i in range(n_relations)),
        train,
        valid,
        test,
    )


def random_graph(
    n_entities: int, n_relations: int, n_triples: int, seed: int = 0
) -> KnowledgeGraph:
    """Uniformly random distinct triples, all in the training split."""
    rng = np.random.default_rng(seed)
    total = n_entities * n_relations * n_entities
    n_triples = min(n_triples, total)
    codes = rng.choice(total, size=n_triples, replace=False)
    h, rest = np.divmod(codes, n_relations * n_entities)
    r, t = np.divmod(rest, n_entities)
    return KnowledgeGraph(
        Vocab(f"e{i}" for i in range(n_entities)),
        Vocab(f"r{i}" for i in range(n_relations)),
        np.stack([h, r, t], axis=1),
    )
