"""Locally adaptive translation embeddings (TransA) for knowledge graphs."""
from transa.analysis import generalization_bound, margin_sweep, risk_report
from transa.data import KnowledgeGraph, Triple, build_index, corrupt, load_graph, partition
from transa.evaluation import fit_thresholds, link_prediction, triple_classification
from transa.margin import (
    ActiveSetConfig,
    MarginTable,
    combined_margin,
    entity_margin_active,
    entity_margin_exact,
    refresh_table,
    relation_margin,
)
from transa.model import EmbeddingModel, TrainConfig, hinge_loss, init_model, sgd_step, train

__version__ = "0.1.0"
