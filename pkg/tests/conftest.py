import json
from pathlib import Path

import numpy as np
import pytest

from graph_active.graph import Graph, adjacency_from_edges

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


def graph_from_edges(n, edges, labels=None, features=None, num_classes=None):
    adj, _ = adjacency_from_edges(n, edges)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    features = np.eye(n) if features is None else np.asarray(features, dtype=np.float64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    return Graph(features, labels, adj, c)


def sbm_graph(n=200, num_classes=4, num_features=24, p_in=0.08, p_out=0.01, seed=0):
    """Planted-partition graph with class-correlated binary features."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    edges = np.argwhere(upper)
    proto = rng.random((num_classes, num_features)) < 0.3
    noise = rng.random((n, num_features)) < 0.08
    features = (proto[labels] ^ noise).astype(np.float64)
    return graph_from_edges(n, edges, labels, features, num_classes)


def write_bundle(root: Path, g: Graph) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": g.num_nodes, "num_features": g.num_features, "num_classes": g.num_classes}
    (root / "meta.json").write_text(json.dumps(meta))
    with (root / "nodes.tsv").open("w") as fh:
        for i in range(g.num_nodes):
            pairs = " ".join(f"{j}:{float(g.features[i, j])!r}" for j in np.flatnonzero(g.features[i]))
            fh.write(f"{i}\t{g.labels[i]}\t{pairs}\n")
    with (root / "edges.tsv").open("w") as fh:
        for s, d in g.edge_list():
            fh.write(f"{s}\t{d}\n")
    return root


@pytest.fixture
def sbm():
    return sbm_graph()


@pytest.fixture
def sbm_bundle(tmp_path):
    return write_bundle(tmp_path / "sbm", sbm_graph())


def dataset(name):
    path = DATA_DIR / name
    if not (path / "meta.json").exists():
        pytest.fail(f"dataset bundle {path} missing; run scripts/convert_datasets.py")
    return path


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(criterion, passed, detail):
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
