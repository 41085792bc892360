import numpy as np
import pytest

from transa.data import KnowledgeGraph, Vocab
from transa.model import EmbeddingModel


def make_graph(train, valid=(), test=(), n_entities=None, n_relations=None):
    arrays = [np.asarray(x, dtype=np.int64).reshape(-1, 3) for x in (train, valid, test)]
    allt = np.concatenate(arrays)
    n_e = n_entities or int(allt[:, [0, 2]].max()) + 1
    n_r = n_relations or int(allt[:, 1].max()) + 1
    return KnowledgeGraph(
        Vocab(f"e{i}" for i in range(n_e)), Vocab(f"r{i}" for i in range(n_r)), *arrays
    )


def make_model(entities, relations, dissimilarity="l2"):
    return EmbeddingModel(np.asarray(entities, float), np.asarray(relations, float), dissimilarity)


@pytest.fixture
def toy_graph():
    # 6 entities, 2 relations
    train = [(0, 0, 1), (0, 0, 2), (0, 1, 3), (1, 0, 2), (2, 1, 4), (3, 0, 5), (4, 1, 5)]
    valid = [(1, 1, 3)]
    test = [(5, 0, 0), (2, 0, 3)]
    return make_graph(train, valid, test)


def write_tsv(path, rows):
    path.write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
