"""Experiment configuration files, presets and validation-set grid search."""
from __future__ import annotations

import dataclasses
import itertools
import logging
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from transa.data import KnowledgeGraph
from transa.evaluation import mean_rank
from transa.model import TrainConfig, train

log = logging.getLogger(__name__)

# Published optimal settings per dataset/task.
PRESETS: dict[str, dict] = {
    "wn18-lp": dict(lr=0.001, dim=100, batch_size=1440, mu=0.5, dissimilarity="l1"),
    "fb15k-lp": dict(lr=0.001, dim=50, batch_size=4800, mu=0.5, dissimilarity="l1"),
    "wn11-tc": dict(lr=0.001, dim=220, batch_size=120, mu=0.5, dissimilarity="l1"),
    "fb13-tc": dict(lr=0.001, dim=50, batch_size=480, mu=0.5, dissimilarity="l1"),
}

GRIDS: dict[str, dict[str, list]] = {
    "lp": {
        "lr": [0.1, 0.01, 0.001],
        "dim": [20, 50, 100],
        "batch_size": [20, 120, 480, 1440, 4800],
        "mu": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
    "tc": {
        "lr": [0.1, 0.01, 0.001],
        "dim": [20, 50, 100, 200, 220, 300],
        "batch_size": [20, 120, 480, 1440, 4800],
        "mu": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run, as a flat key/value record."""

    graph: str = ""
    out: str = "runs/default"
    train: TrainConfig = field(default_factory=TrainConfig)
    filtered: bool = True
    hits: tuple[int, ...] = (1, 3, 10)
    threads: int = 1
    delta: float = 0.05

    def to_flat(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"}
        flat.update(self.train.to_dict())
        return flat

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_flat().items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        train_keys = {f.name for f in fields(TrainConfig)}
        own = {k: v for k, v in flat.items() if k not in train_keys}
        unknown = set(own) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        tc = TrainConfig(**{k: v for k, v in flat.items() if k in train_keys})
        return cls(train=tc, **own)

    @classmethod
    def read(cls, path) -> "ExperimentConfig":
        return cls.from_flat(parse_text(Path(path).read_text()))

    def override(self, **values) -> "ExperimentConfig":
        flat = self.to_flat()
        flat.update({k: v for k, v in values.items() if v is not None})
        return self.from_flat(flat)


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(ExperimentConfig)
    hints.update(typing.get_type_hints(TrainConfig))
    hints.pop("train")
    return hints


def _coerce(key: str, text: str, hint):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text in ("None", ""):
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if origin is tuple:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if hint is bool:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if hint in (int, float, str):
        return hint(text)
    raise ValueError(f"{key}: unsupported type {hint}")


def parse_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed)."""
    types = _field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def apply_preset(config: TrainConfig, name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dataclasses.replace(config, **PRESETS[name])


def grid_search(
    graph: KnowledgeGraph, base: TrainConfig, grid: dict[str, list]
) -> tuple[TrainConfig, list[dict]]:
    """Pick the grid point with the lowest filtered mean rank on validation."""
    if len(graph.valid) == 0:
        raise ValueError("grid search needs a validation split")
    keys = list(grid)
    results = []
    best_cfg, best_rank = None, float("inf")
    valid = graph.valid[: base.valid_sample]
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = dataclasses.replace(base, **dict(zip(keys, combo)))
        model = train(graph, cfg).model
        rank = mean_rank(model, graph, valid, filtered=True)
        results.append({**dict(zip(keys, combo)), "valid_filtered_mean_rank": rank})
        log.info("grid %s -> %.3f", dict(zip(keys, combo)), rank)
        if rank < best_rank:
            best_cfg, best_rank = cfg, rank
    return best_cfg, results
