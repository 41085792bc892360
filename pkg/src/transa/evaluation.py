"""Link prediction ranking and triple classification."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from transa.data import KnowledgeGraph, corrupt
from transa.model import EmbeddingModel, dissimilarity

POSITIONS = ("head", "tail")


class FilterIndex:
    """Known heads per (relation, tail) and tails per (head, relation)."""

    def __init__(self, graph: KnowledgeGraph):
        tails: dict[tuple[int, int], list[int]] = {}
        heads: dict[tuple[int, int], list[int]] = {}
        for h, r, t in graph.correct_set:
            tails.setdefault((h, r), []).append(t)
            heads.setdefault((r, t), []).append(h)
        self._tails = {k: np.asarray(v, dtype=np.int64) for k, v in tails.items()}
        self._heads = {k: np.asarray(v, dtype=np.int64) for k, v in heads.items()}

    def known(self, triple, position: str) -> np.ndarray:
        h, r, t = triple
        empty = np.zeros(0, dtype=np.int64)
        if position == "tail":
            return self._tails.get((h, r), empty)
        return self._heads.get((r, t), empty)


def candidate_scores(model: EmbeddingModel, triple, position: str) -> np.ndarray:
    """Scores of ``triple`` with ``position`` replaced by every entity."""
    E, R = model.entity_vecs, model.relation_vecs
    h, r, t = (int(x) for x in triple)
    if position == "tail":
        res = E[h] + R[r] - E
    elif position == "head":
        res = E + R[r] - E[t]
    else:
        raise ValueError(f"position must be 'head' or 'tail', got {position!r}")
    return dissimilarity(res, model.dissimilarity)


def _rank(scores: np.ndarray, true_id: int, exclude: np.ndarray | None) -> float:
    # Ties share the mean of their block's ranks.
    s = scores[true_id]
    if exclude is not None and len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[exclude] = False
        keep[true_id] = True
        scores = scores[keep]
    less = int(np.count_nonzero(scores < s))
    ties = int(np.count_nonzero(scores == s)) - 1
    return 1.0 + less + ties / 2.0


def rank_entity(
    model: EmbeddingModel,
    triple,
    position: str,
    graph: KnowledgeGraph,
    filtered: bool = False,
    filter_index: FilterIndex | None = None,
) -> float:
    """1-based rank of the true entity among all replacements (ascending score).

    Filtered mode drops candidates that form other known triples.
    """
    triple = tuple(int(x) for x in triple)
    scores = candidate_scores(model, triple, position)
    true_id = triple[0] if position == "head" else triple[2]
    exclude = None
    if filtered:
        filter_index = filter_index or FilterIndex(graph)
        exclude = filter_index.known(triple, position)
    return _rank(scores, true_id, exclude)


def _ranks(model, triples, filter_index, threads=1) -> np.ndarray:
    """Array of shape (n, 2 positions, 2 modes [raw, filtered])."""

    def one(triple):
        triple = tuple(int(x) for x in triple)
        out = np.empty((2, 2))
        for p, position in enumerate(POSITIONS):
            scores = candidate_scores(model, triple, position)
            true_id = triple[0] if position == "head" else triple[2]
            out[p, 0] = _rank(scores, true_id, None)
            out[p, 1] = _rank(scores, true_id, filter_index.known(triple, position))
        return out

    triples = np.asarray(triples).reshape(-1, 3)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one, triples.tolist()))
    else:
        rows = [one(t) for t in triples.tolist()]
    return np.array(rows).reshape(-1, 2, 2)


def mean_rank(model, graph, triples, filtered: bool = True, filter_index=None) -> float:
    filter_index = filter_index or FilterIndex(graph)
    ranks = _ranks(model, triples, filter_index)
    return float(ranks[:, :, 1 if filtered else 0].mean())


@dataclass
class EvalReport:
    raw_mean_rank: float
    filtered_mean_rank: float
    hits_at_k: dict[int, float]
    raw_hits_at_k: dict[int, float]
    n_test: int
    n_entities: int
    per_relation: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hits_at_k"] = {str(k): v for k, v in self.hits_at_k.items()}
        d["raw_hits_at_k"] = {str(k): v for k, v in self.raw_hits_at_k.items()}
        d["per_relation"] = {str(k): v for k, v in self.per_relation.items()}
        d["note"] = "hits@k is reported in addition to mean rank"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        ks = sorted(self.hits_at_k)
        head = ["metric", "raw", "filter"]
        rows = [["mean_rank", f"{self.raw_mean_rank:.2f}", f"{self.filtered_mean_rank:.2f}"]]
        rows += [
            [f"hits@{k}", f"{self.raw_hits_at_k[k]:.4f}", f"{self.hits_at_k[k]:.4f}"] for k in ks
        ]
        return format_table(head, rows)


def format_table(header, rows) -> str:
    cols = list(zip(header, *rows))
    widths = [max(len(str(c)) for c in col) for col in cols]
    lines = ["\t".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("\t".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def link_prediction(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    split: str = "test",
    ks=(1, 3, 10),
    threads: int = 1,
    per_relation: bool = False,
) -> EvalReport:
    triples = graph.split(split)
    if len(triples) == 0:
        raise ValueError(f"{split} split is empty")
    ranks = _ranks(model, triples, FilterIndex(graph), threads)
    raw, filt = ranks[:, :, 0], ranks[:, :, 1]
    report = EvalReport(
        raw_mean_rank=float(raw.mean()),
        filtered_mean_rank=float(filt.mean()),
        hits_at_k={k: float((filt <= k).mean()) for k in ks},
        raw_hits_at_k={k: float((raw <= k).mean()) for k in ks},
        n_test=len(triples),
        n_entities=graph.n_entities,
    )
    if per_relation:
        for r in np.unique(triples[:, 1]).tolist():
            sel = triples[:, 1] == r
            report.per_relation[r] = {
                "n": int(sel.sum()),
                "raw_mean_rank": float(raw[sel].mean()),
                "filtered_mean_rank": float(filt[sel].mean()),
            }
    return report


# ---------------------------------------------------------------------------
# Triple classification


def fit_threshold(pos_scores, neg_scores) -> tuple[float, float]:
    """Accuracy-maximizing threshold; ``score < threshold`` means positive.

    Candidates are the midpoints of adjacent distinct scores plus -inf and
    +inf; ties go to the smallest candidate.
    """
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    values = np.unique(np.concatenate([pos, neg]))
    cands = np.concatenate([[-np.inf], (values[:-1] + values[1:]) / 2.0, [np.inf]])
    correct = np.searchsorted(pos, cands, "left") + len(neg) - np.searchsorted(neg, cands, "left")
    best = int(np.argmax(correct))
    return float(cands[best]), float(correct[best] / (len(pos) + len(neg)))


@dataclass
class ClassifierThresholds:
    thresholds: dict[int, float]
    accuracy: float
    global_threshold: float
    fallback_relations: list[int] = field(default_factory=list)

    def threshold(self, relation: int) -> float:
        return self.thresholds.get(relation, self.global_threshold)

    def predict(self, scores: np.ndarray, relations: np.ndarray) -> np.ndarray:
        thr = np.array([self.threshold(int(r)) for r in relations])
        return np.asarray(scores) < thr

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "global_threshold": self.global_threshold,
            "fallback_relations": self.fallback_relations,
            "thresholds": {str(k): v for k, v in self.thresholds.items()},
        }


def _fit_from_scores(pos_scores, pos_rel, neg_scores, neg_rel, relations=None):
    global_thr, _ = fit_threshold(pos_scores, neg_scores)
    rels = sorted(set(pos_rel.tolist()) | set(neg_rel.tolist()) | set(relations or ()))
    thresholds, fallback = {}, []
    for r in rels:
        p, n = pos_scores[pos_rel == r], neg_scores[neg_rel == r]
        if len(p) == 0 or len(n) == 0:
            fallback.append(r)
            continue
        thresholds[r], _ = fit_threshold(p, n)
    fitted = ClassifierThresholds(thresholds, 0.0, global_thr, fallback)
    fitted.accuracy = _accuracy(fitted, pos_scores, pos_rel, neg_scores, neg_rel)
    return fitted


def _accuracy(thr, pos_scores, pos_rel, neg_scores, neg_rel) -> float:
    total = len(pos_scores) + len(neg_scores)
    if total == 0:
        return math.nan
    ok = thr.predict(pos_scores, pos_rel).sum() + (~thr.predict(neg_scores, neg_rel)).sum()
    return float(ok / total)


def fit_thresholds(
    model: EmbeddingModel, valid_pos: np.ndarray, valid_neg: np.ndarray, relations=None
) -> ClassifierThresholds:
    """Per-relation thresholds maximizing validation accuracy.

    Relations lacking positive or negative validation triples (including
    any listed in ``relations`` but absent from the data) use a threshold
    fitted on the pooled scores and are listed in ``fallback_relations``.
    """
    valid_pos = np.asarray(valid_pos).reshape(-1, 3)
    valid_neg = np.asarray(valid_neg).reshape(-1, 3)
    if len(valid_pos) == 0 or len(valid_neg) == 0:
        raise ValueError("need both positive and negative validation triples")
    return _fit_from_scores(
        model.score_triples(valid_pos),
        valid_pos[:, 1],
        model.score_triples(valid_neg),
        valid_neg[:, 1],
        relations,
    )


def triple_classification(
    model: EmbeddingModel,
    thresholds: ClassifierThresholds,
    test_pos: np.ndarray,
    test_neg: np.ndarray,
) -> float:
    test_pos = np.asarray(test_pos).reshape(-1, 3)
    test_neg = np.asarray(test_neg).reshape(-1, 3)
    return _accuracy(
        thresholds,
        model.score_triples(test_pos),
        test_pos[:, 1],
        model.score_triples(test_neg),
        test_neg[:, 1],
    )


def make_negatives(
    test_pos: np.ndarray,
    graph: KnowledgeGraph,
    rng: np.random.Generator,
    mode: str = "position-compatible",
    max_retries: int = 100,
) -> tuple[np.ndarray, list[int]]:
    """One corrupted triple per positive, none of them in ``correct_set``.

    ``position-compatible`` draws replacements only from entities seen in
    that argument slot of the same relation; if no valid draw turns up
    within ``max_retries`` it falls back to uniform corruption and the
    relation is reported in the second return value.
    """
    if mode not in ("position-compatible", "uniform"):
        raise ValueError(f"unknown negative mode {mode!r}")
    test_pos = np.asarray(test_pos).reshape(-1, 3)
    if len(test_pos) == 0:
        raise ValueError("no positive triples given")
    correct = graph.correct_set
    pools: dict[tuple[int, int], np.ndarray] = {}
    if mode == "position-compatible":
        heads: dict[int, set] = {}
        tails: dict[int, set] = {}
        for h, r, t in graph.correct_set:
            heads.setdefault(r, set()).add(h)
            tails.setdefault(r, set()).add(t)
        for r in heads:
            pools[(r, 0)] = np.array(sorted(heads[r]), dtype=np.int64)
            pools[(r, 2)] = np.array(sorted(tails[r]), dtype=np.int64)

    out, fallback = [], []
    for h, r, t in test_pos.tolist():
        if mode == "uniform":
            out.append(tuple(corrupt((h, r, t), graph, rng, max_retries=max_retries)))
            continue
        found = None
        for _ in range(max_retries):
            slot = 0 if rng.random() < 0.5 else 2
            pool = pools.get((r, slot))
            if pool is None or len(pool) == 0:
                break
            cand = [h, r, t]
            cand[slot] = int(pool[rng.integers(len(pool))])
            if tuple(cand) not in correct:
                found = tuple(cand)
                break
        if found is None:
            if r not in fallback:
                fallback.append(r)
            found = tuple(corrupt((h, r, t), graph, rng, max_retries=max_retries))
        out.append(found)
    return np.asarray(out, dtype=np.int64).reshape(-1, 3), fallback
