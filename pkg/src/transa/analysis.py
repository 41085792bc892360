"""Stability and generalization-bound diagnostics, plus the fixed-margin sweep.

The bound implemented here is

    R <= R_emp + sqrt((M + f)^2 / (2 n delta) + 6 f (M + f) / delta)

with ``f`` the largest training score and stability constant ``2 f``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from transa.data import KnowledgeGraph, corrupt
from transa.evaluation import format_table, link_prediction
from transa.margin import MarginTable
from transa.model import EmbeddingModel, TrainConfig, train


def _margins_for(triples, margins) -> np.ndarray:
    if isinstance(margins, MarginTable):
        return margins.lookup(triples)
    m = np.broadcast_to(np.asarray(margins, dtype=np.float64), (len(triples),))
    if (m < 0).any():
        raise ValueError("margins must be non-negative")
    return m


def corrupted_partners(graph: KnowledgeGraph, triples: np.ndarray, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([corrupt(t, graph, rng) for t in triples.tolist()], dtype=np.int64).reshape(-1, 3)


def empirical_risk(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    margins: float | MarginTable = 1.0,
    seed: int = 0,
    split: str = "train",
) -> float:
    """Mean hinge loss over a split, one seeded corruption per triple.

    ``margins`` is a constant, a per-triple array or a :class:`MarginTable`.
    With ``split='valid'`` or ``'test'`` this is the held-out estimate of
    the true risk.
    """
    triples = graph.split(split)
    if len(triples) == 0:
        raise ValueError(f"{split} split is empty")
    negs = corrupted_partners(graph, triples, seed)
    m = _margins_for(triples, margins)
    losses = model.score_triples(triples) + m - model.score_triples(negs)
    return float(np.maximum(losses, 0.0).mean())


def max_train_score(model: EmbeddingModel, graph: KnowledgeGraph) -> float:
    if len(graph.train) == 0:
        raise ValueError("training split is empty")
    return float(model.score_triples(graph.train).max())


def stability_beta(model: EmbeddingModel, graph: KnowledgeGraph) -> float:
    return 2.0 * max_train_score(model, graph)


def generalization_bound(
    empirical_risk: float, f_hat: float, margin: float, n: int, delta: float
) -> float:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if margin < 0 or f_hat < 0:
        raise ValueError("margin and f_hat must be non-negative")
    s = margin + f_hat
    return empirical_risk + math.sqrt(s * s / (2.0 * n * delta) + 6.0 * f_hat * s / delta)


@dataclass
class RiskReport:
    empirical_risk: float
    f_hat: float
    beta: float
    n: int
    delta: float
    margin: float
    bound: float
    corruption_seed: int = 0
    margin_source: str = "constant"
    held_out_risk: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_table(self) -> str:
        d = asdict(self)
        return format_table(["field", "value"], [[k, repr(v)] for k, v in d.items()])


def risk_report(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    margin: float | MarginTable,
    delta: float = 0.05,
    seed: int = 0,
    held_out: str | None = None,
) -> RiskReport:
    """Empirical risk, stability constant and bound for one model.

    For a margin table the bound uses its largest stored margin, which keeps
    every loss term below ``M + f_hat``.
    """
    r_emp = empirical_risk(model, graph, margin, seed)
    f_hat = max_train_score(model, graph)
    if isinstance(margin, MarginTable):
        m, source = max(margin.m_opt.values(), default=0.0), "table-max"
    else:
        m, source = float(margin), "constant"
    report = RiskReport(
        empirical_risk=r_emp,
        f_hat=f_hat,
        beta=2.0 * f_hat,
        n=len(graph.train),
        delta=delta,
        margin=m,
        bound=generalization_bound(r_emp, f_hat, m, len(graph.train), delta),
        corruption_seed=seed,
        margin_source=source,
    )
    if held_out is not None and len(graph.split(held_out)):
        report.held_out_risk = empirical_risk(model, graph, m, seed, split=held_out)
    return report


def replace_one_deviation(
    model: EmbeddingModel, train_triples: np.ndarray, i: int, replacement, margin: float
) -> tuple[float, float]:
    """Largest change of a loss term when training pair ``i`` is replaced.

    Each triple ``z`` sharing the relation of sample ``i`` is paired with
    sample ``i`` as its partner, before (S) and after (S^i) the swap, and
    the hinge values are compared on the fixed ``model``. Returns
    ``(deviation, beta)`` where ``beta`` is twice the largest score over
    S and S^i.
    """
    S = np.asarray(train_triples, dtype=np.int64).reshape(-1, 3)
    old = S[i]
    new = np.asarray(replacement, dtype=np.int64)
    if new[1] != old[1]:
        raise ValueError("replacement must keep the relation of the replaced triple")
    z = S[S[:, 1] == old[1]]
    ps = model.score_triples(z)
    before = np.maximum(ps + margin - model.score(old), 0.0)
    after = np.maximum(ps + margin - model.score(new), 0.0)
    f_hat = max(float(model.score_triples(S).max()), model.score(new))
    return float(np.abs(before - after).max()), 2.0 * f_hat


def retrained_replace_one(
    graph: KnowledgeGraph, config: TrainConfig, i: int, replacement, seed: int = 0
) -> tuple[float, float]:
    """Slow variant of :func:`replace_one_deviation` that retrains on S and S^i.

    Loss terms use one fixed seeded corruption per training triple and the
    configured fixed margin. Limited to graphs of at most 200 training
    triples.
    """
    if len(graph.train) > 200:
        raise ValueError("retraining stability check is limited to 200 training triples")
    margin = config.fixed_margin
    if margin is None:
        raise ValueError("retraining check needs a fixed:<M> margin mode")
    S = graph.train.copy()
    Si = S.copy()
    Si[i] = replacement
    g_i = KnowledgeGraph(graph.entities, graph.relations, Si, graph.valid, graph.test)
    model_s = train(graph, config).model
    model_si = train(g_i, config).model
    shared = np.array([row for k, row in enumerate(S.tolist()) if k != i], dtype=np.int64)
    negs = corrupted_partners(graph, shared, seed)

    def losses(m):
        return np.maximum(m.score_triples(shared) + margin - m.score_triples(negs), 0.0)

    f_hat = max(float(model_s.score_triples(S).max()), float(model_si.score_triples(Si).max()))
    return float(np.abs(losses(model_s) - losses(model_si)).max()), 2.0 * f_hat


# ---------------------------------------------------------------------------
# Margin sweep

SWEEP_COLUMNS = (
    "margin",
    "raw_mean_rank",
    "filtered_mean_rank",
    "empirical_risk",
    "f_hat",
    "beta",
    "bound",
)


@dataclass
class SweepReport:
    rows: list[dict] = field(default_factory=list)
    delta: float = 0.05
    name: str = ""

    def to_tsv(self) -> str:
        lines = ["\t".join(SWEEP_COLUMNS)]
        for row in self.rows:
            lines.append("\t".join(repr(float(row[c])) for c in SWEEP_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "delta": self.delta, "rows": self.rows}, indent=2)

    def best(self, key: str = "filtered_mean_rank") -> dict:
        return min(self.rows, key=lambda r: r[key])

    def write(self, directory, stem: str = "sweep") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.tsv").write_text(self.to_tsv())
        (directory / f"{stem}.json").write_text(self.to_json())


def margin_sweep(
    graph: KnowledgeGraph,
    margins,
    config: TrainConfig,
    delta: float = 0.05,
    model: EmbeddingModel | None = None,
    split: str = "test",
    name: str = "",
) -> SweepReport:
    """Train a fixed-margin model per margin and tabulate ranks, risk and bound.

    Passing ``model`` freezes it: no training happens and only the
    margin-dependent columns change between rows.
    """
    margins = list(margins)
    if not margins:
        raise ValueError("no margins given")
    report = SweepReport(delta=delta, name=name)
    for m in margins:
        if m < 0:
            raise ValueError(f"margin must be non-negative, got {m}")
        if model is None:
            cfg = dataclasses.replace(config, margin_mode=f"fixed:{m!r}")
            fitted = train(graph, cfg).model
        else:
            fitted = model
        if len(graph.split(split)):
            lp = link_prediction(fitted, graph, split)
            raw, filt = lp.raw_mean_rank, lp.filtered_mean_rank
        else:
            raw = filt = math.nan
        r_emp = empirical_risk(fitted, graph, m, config.seed)
        f_hat = max_train_score(fitted, graph)
        report.rows.append(
            {
                "margin": float(m),
                "raw_mean_rank": raw,
                "filtered_mean_rank": filt,
                "empirical_risk": r_emp,
                "f_hat": f_hat,
                "beta": 2.0 * f_hat,
                "bound": generalization_bound(r_emp, f_hat, m, len(graph.train), delta),
            }
        )
    return report
