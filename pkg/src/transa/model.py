"""Translation embeddings, margin-varying hinge loss and the SGD trainer.

Random streams
--------------
``init_model`` and ``train`` derive their generators from
``np.random.SeedSequence(seed).spawn(2)``: the first child initializes the
embeddings (relations drawn before entities), the second drives training.
Per epoch the trainer draws one ``permutation`` of the training rows; per
minibatch it draws one corruption per row via :func:`transa.data.corrupt`
(in batch order) and then applies :func:`sgd_step` to each pair in order.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from transa.data import KnowledgeGraph, corrupt

log = logging.getLogger(__name__)

DISSIMILARITIES = ("l1", "l2", "l2sq")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, msg, model=None, history=None):
        super().__init__(msg)
        self.model = model
        self.history = history or []


def dissimilarity(x: np.ndarray, kind: str) -> np.ndarray | float:
    """Row-wise L1, L2 or squared-L2 size of ``x`` (last axis)."""
    if kind == "l1":
        return np.abs(x).sum(axis=-1)
    if kind == "l2":
        return np.sqrt((x * x).sum(axis=-1))
    if kind == "l2sq":
        return (x * x).sum(axis=-1)
    raise ValueError(f"unknown dissimilarity {kind!r}")


def dissimilarity_grad(x: np.ndarray, kind: str) -> np.ndarray:
    # Subgradient conventions: sign(0) = 0 for L1; zero vector at x = 0 for L2.
    if kind == "l1":
        return np.sign(x)
    if kind == "l2":
        n = math.sqrt(float(x @ x))
        return x / n if n > 0 else np.zeros_like(x)
    if kind == "l2sq":
        return 2.0 * x
    raise ValueError(f"unknown dissimilarity {kind!r}")


@dataclass(eq=False)
class EmbeddingModel:
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    dissimilarity: str = "l1"

    def __post_init__(self):
        if self.dissimilarity not in DISSIMILARITIES:
            raise ValueError(f"dissimilarity must be one of {DISSIMILARITIES}")
        self.entity_vecs = np.asarray(self.entity_vecs, dtype=np.float64)
        self.relation_vecs = np.asarray(self.relation_vecs, dtype=np.float64)
        if self.entity_vecs.ndim != 2 or self.relation_vecs.ndim != 2:
            raise ValueError("embeddings must be 2-D")
        if self.entity_vecs.shape[1] != self.relation_vecs.shape[1]:
            raise ValueError("entity and relation dimensions differ")

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_vecs.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_vecs.shape[0]

    def copy(self) -> "EmbeddingModel":
        return copy.deepcopy(self)

    def equals(self, other: "EmbeddingModel") -> bool:
        return (
            self.dissimilarity == other.dissimilarity
            and np.array_equal(self.entity_vecs, other.entity_vecs)
            and np.array_equal(self.relation_vecs, other.relation_vecs)
        )

    def distance(self, anchor: np.ndarray, vecs: np.ndarray) -> np.ndarray:
        """||anchor - v|| for each row ``v`` of ``vecs``."""
        return dissimilarity(anchor - vecs, self.dissimilarity)

    def relation_norms(self) -> np.ndarray:
        return dissimilarity(self.relation_vecs, self.dissimilarity)

    def score(self, triple) -> float:
        h, r, t = (int(x) for x in triple)
        if not (0 <= h < self.n_entities and 0 <= t < self.n_entities):
            raise IndexError(f"entity id out of range in {triple}")
        if not 0 <= r < self.n_relations:
            raise IndexError(f"relation id out of range in {triple}")
        E = self.entity_vecs
        return float(dissimilarity(E[h] + self.relation_vecs[r] - E[t], self.dissimilarity))

    def score_triples(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        E, R = self.entity_vecs, self.relation_vecs
        res = E[triples[:, 0]] + R[triples[:, 1]] - E[triples[:, 2]]
        return dissimilarity(res, self.dissimilarity)

    def check_finite(self) -> bool:
        return bool(np.isfinite(self.entity_vecs).all() and np.isfinite(self.relation_vecs).all())

    # -- persistence ------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> Path:
        """Write ``<path>.npz`` plus a ``<path>.json`` metadata sidecar."""
        path = Path(path).with_suffix(".npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            entity_vecs=self.entity_vecs,
            relation_vecs=self.relation_vecs,
            header=np.array([self.n_entities, self.n_relations, self.dim]),
            dissimilarity=np.array(self.dissimilarity),
        )
        meta = {
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "dim": self.dim,
            "dissimilarity": self.dissimilarity,
            **(metadata or {}),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=str))
        return path

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        path = Path(path)
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        with np.load(path) as z:
            model = cls(z["entity_vecs"], z["relation_vecs"], str(z["dissimilarity"]))
            n_e, n_r, d = (int(x) for x in z["header"])
        if (n_e, n_r, d) != (model.n_entities, model.n_relations, model.dim):
            raise ValueError(f"{path}: header does not match stored matrices")
        return model


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def init_model(
    n_entities: int,
    n_relations: int,
    dim: int,
    dissimilarity: str = "l1",
    seed: int = 0,
) -> EmbeddingModel:
    """Uniform(-6/sqrt(d), 6/sqrt(d)) init, then every row scaled to unit L2 norm."""
    if min(n_entities, n_relations, dim) < 1:
        raise ValueError("sizes must be positive")
    init_seq, _ = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    bound = 6.0 / math.sqrt(dim)
    rel = rng.uniform(-bound, bound, size=(n_relations, dim))
    ent = rng.uniform(-bound, bound, size=(n_entities, dim))
    return EmbeddingModel(_unit_rows(ent), _unit_rows(rel), dissimilarity)


def hinge_loss(model: EmbeddingModel, pos, neg, margin: float) -> float:
    """max(0, f(pos) + margin - f(neg))."""
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    if int(pos[1]) != int(neg[1]):
        raise ValueError("positive and negative triples must share the relation")
    return max(0.0, model.score(pos) + margin - model.score(neg))


def hinge_subgradient(model: EmbeddingModel, pos, neg, margin: float):
    """Hinge value and its subgradient with respect to every touched vector.

    Returns ``(loss, entity_grads, relation_grads)`` where the grads are
    dicts id -> vector. Entity contributions are summed in the order
    positive head, positive tail, negative head, negative tail. Both dicts
    are empty when the hinge is inactive (loss <= 0).
    """
    E, R = model.entity_vecs, model.relation_vecs
    h, r, t = pos
    h2, r2, t2 = neg
    kind = model.dissimilarity
    res_p = E[h] + R[r] - E[t]
    res_n = E[h2] + R[r2] - E[t2]
    loss = float(dissimilarity(res_p, kind)) + margin - float(dissimilarity(res_n, kind))
    if not loss > 0:
        return 0.0, {}, {}
    gp = dissimilarity_grad(res_p, kind)
    gn = dissimilarity_grad(res_n, kind)
    ent: dict[int, np.ndarray] = {}
    for e, g in ((h, gp), (t, -gp), (h2, -gn), (t2, gn)):
        ent[e] = ent[e] + g if e in ent else g
    if r == r2:
        rel = {r: gp - gn}
    else:
        rel = {r: gp, r2: -gn}
    return loss, ent, rel


def sgd_step(model: EmbeddingModel, pos, neg, margin: float, lr: float) -> float:
    """One in-place subgradient step on a (positive, negative) pair.

    Entities touched by an active step are projected back onto the unit L2
    ball. Returns the hinge value before the step.
    """
    loss, ent, rel = hinge_subgradient(model, pos, neg, margin)
    if not ent:
        return loss
    E, R = model.entity_vecs, model.relation_vecs
    for e, g in ent.items():
        E[e] -= lr * g
    for r, g in rel.items():
        R[r] -= lr * g
    for e in ent:
        n = np.linalg.norm(E[e])
        if n > 1.0:
            E[e] /= n
    return loss


# ---------------------------------------------------------------------------
# Training


def parse_margin_mode(text: str) -> tuple[str, float | None]:
    """'adaptive' | 'adaptive-global' | 'fixed:<M>' -> (mode, M)."""
    if text in ("adaptive", "adaptive-global"):
        return text, None
    if text.startswith("fixed:"):
        m = float(text.split(":", 1)[1])
        if not m >= 0:
            raise ValueError(f"fixed margin must be non-negative, got {m}")
        return "fixed", m
    raise ValueError(f"bad margin mode {text!r}; expected adaptive, adaptive-global or fixed:<M>")


@dataclass
class TrainConfig:
    lr: float = 0.001
    dim: int = 100
    batch_size: int = 1440
    mu: float = 0.5
    epochs: int = 1000
    margin_mode: str = "adaptive"
    dissimilarity: str = "l1"
    margin_refresh_every: int = 1
    active_fraction: float | None = None
    active_rounds: int = 5
    seed: int = 0
    early_stop_every: int = 50
    patience: int = 3
    valid_sample: int = 1000
    max_corrupt_retries: int = 100

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("dim and batch_size must be positive, epochs non-negative")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.margin_refresh_every < 1:
            raise ValueError("margin_refresh_every must be positive")
        if self.dissimilarity not in DISSIMILARITIES:
            raise ValueError(f"dissimilarity must be one of {DISSIMILARITIES}")
        parse_margin_mode(self.margin_mode)

    @property
    def fixed_margin(self) -> float | None:
        return parse_margin_mode(self.margin_mode)[1]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: EmbeddingModel
    history: list[dict] = field(default_factory=list)
    margin_table: object | None = None
    stopped_early: bool = False


def _margin_source(graph, index, model, config, epoch):
    from transa.margin import ActiveSetConfig, refresh_table

    active = None
    if config.active_fraction is not None:
        active = ActiveSetConfig(config.active_fraction, config.active_rounds, config.seed)
    table = refresh_table(graph, index, model, config.mu, active, epoch=epoch)
    if config.margin_mode == "adaptive-global":
        return table, np.full(len(graph.train), table.global_mean())
    return table, table.lookup(graph.train)


def train(
    graph: KnowledgeGraph,
    config: TrainConfig,
    model: EmbeddingModel | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minibatch SGD over the margin-varying hinge objective.

    In ``fixed:<M>`` mode this is plain TransE training. Adaptive modes
    recompute the margin table every ``margin_refresh_every`` epochs,
    starting before the first epoch. When the graph has a validation split
    and ``early_stop_every > 0``, the filtered mean rank on (a prefix of)
    it is checked at that cadence; the best checkpoint is returned after
    ``patience`` checks without improvement.
    """
    from transa.data import build_index

    if model is None:
        model = init_model(
            graph.n_entities, graph.n_relations, config.dim, config.dissimilarity, config.seed
        )
    elif model.n_entities != graph.n_entities or model.n_relations != graph.n_relations:
        raise ValueError("model vocabulary does not match graph")
    _, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(train_seq)

    mode, fixed = parse_margin_mode(config.margin_mode)
    rows = [tuple(x) for x in graph.train.tolist()]
    n = len(rows)
    index = build_index(graph) if mode != "fixed" else None
    table = None
    margins = np.full(n, fixed) if mode == "fixed" else None

    valid = graph.valid[: config.valid_sample]
    check_valid = config.early_stop_every > 0 and len(valid) > 0
    best_rank, best_model, bad_checks = math.inf, None, 0

    result = TrainResult(model=model)
    last_good = model.copy()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        refreshed = False
        if mode != "fixed" and epoch % config.margin_refresh_every == 0:
            table, margins = _margin_source(graph, index, model, config, epoch)
            refreshed = True
        margin_list = margins.tolist()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size].tolist()
            negs = [
                corrupt(rows[i], graph, rng, max_retries=config.max_corrupt_retries)
                for i in batch
            ]
            for i, neg in zip(batch, negs):
                total += sgd_step(model, rows[i], neg, margin_list[i], config.lr)
        mean_loss = total / n
        if not math.isfinite(mean_loss) or not model.check_finite():
            raise NumericError(
                f"non-finite loss at epoch {epoch}", model=last_good, history=result.history
            )
        entry = {
            "epoch": epoch,
            "mean_loss": mean_loss,
            "wall_time": time.perf_counter() - t0,
            "margin_refreshed": refreshed,
        }
        if table is not None:
            entry["mean_margin"] = table.global_mean()
        if check_valid and (epoch + 1) % config.early_stop_every == 0:
            from transa.evaluation import mean_rank

            rank = mean_rank(model, graph, valid, filtered=True)
            entry["valid_filtered_mean_rank"] = rank
            if rank < best_rank:
                best_rank, best_model, bad_checks = rank, model.copy(), 0
            else:
                bad_checks += 1
        result.history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d loss %.6f", epoch, mean_loss)
        last_good = model.copy()
        if check_valid and bad_checks >= config.patience:
            result.stopped_early = True
            break

    if best_model is not None and result.stopped_early:
        model = best_model
    result.model = model
    result.margin_table = table
    return result
