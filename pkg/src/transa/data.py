"""Triple datasets: loading, indexing, corruption and partitioning.

Triples are held as ``(n, 3)`` int64 arrays with columns ``head, relation,
tail``. Entity and relation ids are dense and assigned in first-appearance
order over ``train``, ``valid`` and ``test`` (in that order).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
FORMATS = ("tsv-names", "tsv-ids")


class DataError(Exception):
    """Raised for malformed or inconsistent triple data."""


class ParseError(DataError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class CorruptionError(DataError):
    """No incorrect triple could be drawn within the retry budget."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bidirectional name <-> dense id map."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._names == other._names

    @property
    def names(self) -> list[str]:
        return list(self._names)


def _as_triples(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass(eq=False)
class KnowledgeGraph:
    """Vocabularies plus train/valid/test splits.

    Treat instances as immutable once built; ``correct_set`` is the union of
    all splits and is what filtered ranking and corruption test against.
    """

    entities: Vocab
    relations: Vocab
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: _as_triples([]))
    test: np.ndarray = field(default_factory=lambda: _as_triples([]))

    def __post_init__(self):
        self.train = _as_triples(self.train)
        self.valid = _as_triples(self.valid)
        self.test = _as_triples(self.test)
        for arr in (self.train, self.valid, self.test):
            arr.setflags(write=False)
        self.correct_set: frozenset[tuple[int, int, int]] = frozenset(
            (int(h), int(r), int(t))
            for arr in (self.train, self.valid, self.test)
            for h, r, t in arr
        )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def validate(self) -> None:
        if len(self.train) == 0:
            raise DataError("training split is empty")
        for name in SPLITS:
            arr = self.split(name)
            if len(arr) == 0:
                continue
            if arr.min() < 0:
                raise DataError(f"negative id in {name}")
            if arr[:, [0, 2]].max() >= self.n_entities:
                raise DataError(f"entity id out of range in {name}")
            if arr[:, 1].max() >= self.n_relations:
                raise DataError(f"relation id out of range in {name}")
            if len({tuple(row) for row in arr.tolist()}) != len(arr):
                raise DataError(f"duplicate triples in {name}")

    def summary(self) -> str:
        return (
            f"rels={self.n_relations} ents={self.n_entities} "
            f"train={len(self.train)} valid={len(self.valid)} test={len(self.test)}"
        )


# ---------------------------------------------------------------------------
# I/O


def _read_rows(path: Path, n_fields: int = 3) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise ParseError(
                    path, lineno, f"expected {n_fields} tab-separated fields, got {len(parts)}"
                )
            rows.append((lineno, parts))
    return rows


def load_graph(
    train_path,
    valid_path=None,
    test_path=None,
    format: str = "tsv-names",
) -> KnowledgeGraph:
    """Read three triple files into a :class:`KnowledgeGraph`.

    ``format='tsv-names'`` expects ``head<TAB>relation<TAB>tail`` with string
    names; ``'tsv-ids'`` expects non-negative integer ids, which are kept as
    given. Missing valid/test paths yield empty splits. Duplicate lines
    within a split are dropped with a warning.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")
    paths = dict(zip(SPLITS, (train_path, valid_path, test_path)))
    raw: dict[str, list[tuple[int, list[str]]]] = {}
    for split, path in paths.items():
        if path is None:
            raw[split] = []
            continue
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        raw[split] = _read_rows(path)

    entities, relations = Vocab(), Vocab()
    if format == "tsv-ids":
        max_e, max_r = -1, -1
        for split, rows in raw.items():
            for lineno, (h, r, t) in rows:
                try:
                    ih, ir, it = int(h), int(r), int(t)
                except ValueError:
                    raise ParseError(paths[split], lineno, "non-integer id") from None
                if min(ih, ir, it) < 0:
                    raise ParseError(paths[split], lineno, "negative id")
                max_e, max_r = max(max_e, ih, it), max(max_r, ir)
        entities = Vocab(str(i) for i in range(max_e + 1))
        relations = Vocab(str(i) for i in range(max_r + 1))

    splits = {}
    for split, rows in raw.items():
        seen: set[tuple[int, int, int]] = set()
        out = []
        for _, (h, r, t) in rows:
            if format == "tsv-ids":
                h, r, t = str(int(h)), str(int(r)), str(int(t))
            key = (entities.add(h), relations.add(r), entities.add(t))
            if key in seen:
                continue
            seen.add(key)
            out.append(key)
        if len(out) != len(rows):
            log.warning("%s: dropped %d duplicate triples", paths[split], len(rows) - len(out))
        splits[split] = _as_triples(out)

    graph = KnowledgeGraph(entities, relations, **splits)
    graph.validate()
    return graph


def load_labeled(path, graph: KnowledgeGraph) -> tuple[np.ndarray, np.ndarray]:
    """Parse a labeled ``head<TAB>relation<TAB>tail<TAB>(1|-1)`` file.

    Names are resolved against ``graph``'s vocabularies; lines naming unknown
    entities or relations are skipped (with a warning). Returns
    ``(positives, negatives)``.
    """
    pos, neg, skipped = [], [], 0
    for lineno, (h, r, t, label) in _read_rows(Path(path), n_fields=4):
        if h not in graph.entities or t not in graph.entities or r not in graph.relations:
            skipped += 1
            continue
        try:
            lab = int(label)
        except ValueError:
            raise ParseError(path, lineno, f"bad label {label!r}") from None
        if lab not in (1, -1):
            raise ParseError(path, lineno, f"label must be 1 or -1, got {lab}")
        row = (graph.entities.id(h), graph.relations.id(r), graph.entities.id(t))
        (pos if lab == 1 else neg).append(row)
    if skipped:
        log.warning("%s: skipped %d lines with out-of-vocabulary names", path, skipped)
    return _as_triples(pos), _as_triples(neg)


def save_graph(graph: KnowledgeGraph, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for fname, vocab in (("entities.tsv", graph.entities), ("relations.tsv", graph.relations)):
        with open(directory / fname, "w", encoding="utf-8") as fh:
            for i, name in enumerate(vocab):
                fh.write(f"{i}\t{name}\n")
    for split in SPLITS:
        with open(directory / f"{split}.tsv", "w", encoding="utf-8") as fh:
            for h, r, t in graph.split(split).tolist():
                fh.write(f"{h}\t{r}\t{t}\n")
    return directory


def read_graph(directory) -> KnowledgeGraph:
    """Load a directory written by :func:`save_graph`."""
    directory = Path(directory)

    def vocab(fname):
        names = []
        for lineno, (idx, name) in _read_rows(directory / fname, n_fields=2):
            if int(idx) != len(names):
                raise ParseError(directory / fname, lineno, "ids must be dense and ordered")
            names.append(name)
        return Vocab(names)

    splits = {}
    for split in SPLITS:
        path = directory / f"{split}.tsv"
        rows = _read_rows(path) if path.exists() else []
        splits[split] = _as_triples([[int(x) for x in parts] for _, parts in rows])
    graph = KnowledgeGraph(vocab("entities.tsv"), vocab("relations.tsv"), **splits)
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# Neighborhoods


class NeighborhoodIndex:
    """Per-anchor relation sets and positive/negative neighbor lists.

    With ``side='head'`` the anchor is the head entity and neighbors are
    tails; ``side='tail'`` mirrors this (anchor = tail, neighbors = heads).
    Built from the training split only.

    ``positives(h, r)`` is P_r; ``negatives(h, r)`` is N_r, the neighbors of
    ``h`` reached through some other relation but not through ``r``. N_r is
    derived on demand rather than stored.
    """

    def __init__(self, triples: np.ndarray, side: str = "head"):
        if side not in ("head", "tail"):
            raise ValueError("side must be 'head' or 'tail'")
        self.side = side
        triples = _as_triples(triples)
        a_col, n_col = (0, 2) if side == "head" else (2, 0)
        pos: dict[tuple[int, int], list[int]] = {}
        nbr: dict[int, dict[int, None]] = {}
        rels: dict[int, dict[int, None]] = {}
        for row in triples.tolist():
            a, r, n = row[a_col], row[1], row[n_col]
            lst = pos.setdefault((a, r), [])
            if n not in lst:
                lst.append(n)
            nbr.setdefault(a, {})[n] = None
            rels.setdefault(a, {})[r] = None
        self._positives = {k: np.asarray(v, dtype=np.int64) for k, v in pos.items()}
        self._neighbors = {k: np.fromiter(v, dtype=np.int64) for k, v in nbr.items()}
        self._relations = {k: tuple(v) for k, v in rels.items()}

    def anchors(self) -> list[int]:
        return list(self._relations)

    def pairs(self) -> list[tuple[int, int]]:
        return list(self._positives)

    def __contains__(self, entity: int) -> bool:
        return entity in self._relations

    def relations(self, h: int) -> tuple[int, ...]:
        """R_h, in first-appearance order."""
        return self._relations.get(h, ())

    def n_relations(self, h: int) -> int:
        return len(self.relations(h))

    def neighbors(self, h: int) -> np.ndarray:
        return self._neighbors.get(h, np.zeros(0, dtype=np.int64))

    def positives(self, h: int, r: int) -> np.ndarray:
        return self._positives.get((h, r), np.zeros(0, dtype=np.int64))

    def negatives(self, h: int, r: int) -> np.ndarray:
        nbr = self.neighbors(h)
        pos = self.positives(h, r)
        if len(pos) == 0:
            return nbr
        return nbr[~np.isin(nbr, pos)]


def build_index(graph: KnowledgeGraph, side: str = "head") -> NeighborhoodIndex:
    return NeighborhoodIndex(graph.train, side=side)


# ---------------------------------------------------------------------------
# Corruption


def corrupt(
    triple: Sequence[int],
    graph: KnowledgeGraph,
    rng: np.random.Generator,
    mode: str = "uniform",
    max_retries: int = 100,
) -> Triple:
    """Replace head or tail with a uniformly drawn entity.

    Draw order per attempt: one ``rng.random()`` (head if ``< 0.5``) then one
    ``rng.integers(n_entities)``. Attempts repeat until the result is not in
    ``graph.correct_set``.
    """
    if mode != "uniform":
        raise ValueError(f"unsupported corruption mode {mode!r}")
    h, r, t = (int(x) for x in triple)
    n = graph.n_entities
    correct = graph.correct_set
    for _ in range(max_retries):
        if rng.random() < 0.5:
            cand = (int(rng.integers(n)), r, t)
        else:
            cand = (h, r, int(rng.integers(n)))
        if cand not in correct:
            return Triple(*cand)
    raise CorruptionError(f"no incorrect corruption of {(h, r, t)} after {max_retries} draws")


# ---------------------------------------------------------------------------
# Partitioning


@dataclass
class Partition:
    graph: KnowledgeGraph
    relation_names: list[str]
    seed: int | None = None


def subgraph(graph: KnowledgeGraph, relation_ids: Iterable[int]) -> KnowledgeGraph:
    """Restrict to the given relations and relabel ids densely."""
    keep = np.zeros(graph.n_relations, dtype=bool)
    keep[list(relation_ids)] = True
    entities, relations = Vocab(), Vocab()
    for rid in np.flatnonzero(keep):
        relations.add(graph.relations.name(int(rid)))
    splits = {}
    for split in SPLITS:
        rows = []
        for h, r, t in graph.split(split)[keep[graph.split(split)[:, 1]]].tolist():
            rows.append(
                (
                    entities.add(graph.entities.name(h)),
                    relations.id(graph.relations.name(r)),
                    entities.add(graph.entities.name(t)),
                )
            )
        splits[split] = _as_triples(rows)
    return KnowledgeGraph(entities, relations, **splits)


def partition(graph: KnowledgeGraph, k: int, rng: np.random.Generator | int) -> list[Partition]:
    """Shuffle relations and split them into ``k`` near-equal groups.

    Group sizes differ by at most one. Each part keeps exactly the triples of
    its relations, with entity ids rebuilt from those triples.
    """
    if not isinstance(k, (int, np.integer)) or k < 1 or k > graph.n_relations:
        raise ValueError(f"k must be in [1, {graph.n_relations}], got {k}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    order = rng.permutation(graph.n_relations)
    parts = []
    for group in np.array_split(order, k):
        group = np.sort(group)
        parts.append(
            Partition(
                graph=subgraph(graph, group.tolist()),
                relation_names=[graph.relations.name(int(i)) for i in group],
                seed=seed,
            )
        )
    return parts

