"""Attributed graphs: bundle loading, adjacency preprocessing, splits, statistics.

Sparse matrices are ``scipy.sparse.csr_matrix`` instances kept in canonical
form (sorted column indices, no duplicate entries).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConsistencyError,
    InfeasibleSplitError,
    LoadError,
    ParseError,
    UndefinedStatisticError,
)

log = logging.getLogger(__name__)

META_KEYS = ("num_nodes", "num_features", "num_classes")


@dataclass(frozen=True, eq=False)
class Graph:
    features: np.ndarray
    labels: np.ndarray
    adjacency: sp.csr_matrix
    num_classes: int
    name: str = ""
    dropped_edges: int = 0

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ConsistencyError(f"labels has shape {self.labels.shape}, expected ({n},)")
        if self.adjacency.shape != (n, n):
            raise ConsistencyError(f"adjacency has shape {self.adjacency.shape}, expected ({n}, {n})")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConsistencyError("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise ConsistencyError("features contain non-finite values")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Undirected edge count (each edge stored twice in ``adjacency``)."""
        return self.adjacency.nnz // 2

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``src < dst``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return np.column_stack([coo.row, coo.col]).astype(np.int64)


@dataclass(frozen=True)
class Split:
    initial_labeled: tuple[int, ...]
    pool: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...] = field(default=())


def check_csr(m: sp.csr_matrix) -> None:
    """Raise ``ValueError`` if ``m`` violates the canonical CSR layout."""
    rows, cols = m.shape
    ptr = m.indptr
    if ptr[0] != 0 or ptr[rows] != len(m.data) or np.any(np.diff(ptr) < 0):
        raise ValueError("row_ptr is not a monotone offset array")
    for i in range(rows):
        idx = m.indices[ptr[i]:ptr[i + 1]]
        if len(idx) and (np.any(np.diff(idx) <= 0) or idx[-1] >= cols or idx[0] < 0):
            raise ValueError(f"row {i}: column indices not strictly increasing within range")
    if not np.all(np.isfinite(m.data)):
        raise ValueError("non-finite stored value")


def adjacency_from_edges(num_nodes: int, edges) -> tuple[sp.csr_matrix, int]:
    """Symmetric binary adjacency from an edge list.

    Returns the matrix and the number of input records that were dropped
    (self-loops and duplicates, counting a reverse edge as a duplicate).
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    total = len(edges)
    edges = edges[edges[:, 0] != edges[:, 1]]
    und = np.unique(np.sort(edges, axis=1), axis=0)
    dropped = total - len(und)
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    adj = sp.csr_matrix(
        (np.ones(len(src)), (src, dst)), shape=(num_nodes, num_nodes), dtype=np.float64
    )
    adj.sort_indices()
    return adj, dropped


def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(meta, dict) or set(meta) != set(META_KEYS):
        raise ParseError(path, 1, f"expected exactly the keys {list(META_KEYS)}")
    for k in META_KEYS:
        if not isinstance(meta[k], int) or isinstance(meta[k], bool) or meta[k] < 0:
            raise ParseError(path, 1, f"{k} must be a non-negative integer")
    return meta


def _read_nodes(path: Path, n: int, f: int, c: int) -> tuple[np.ndarray, np.ndarray]:
    features = np.zeros((n, f), dtype=np.float64)
    labels = np.full(n, -1, dtype=np.int64)
    seen = 0
    try:
        fh = path.open(encoding="utf-8")
    except FileNotFoundError:
        raise LoadError(path) from None
    with fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ParseError(path, line_no, "expected <node_id>\\t<label>\\t<features>")
            try:
                node, label = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, line_no, "node id and label must be integers") from None
            if not 0 <= node < n:
                raise ConsistencyError(f"{path}:{line_no}: node id {node} outside [0, {n})")
            if labels[node] != -1:
                raise ParseError(path, line_no, f"duplicate node id {node}")
            if not 0 <= label < c:
                raise ParseError(path, line_no, f"label {label} outside [0, {c})")
            labels[node] = label
            seen += 1
            for pair in parts[2].split() if len(parts) == 3 else ():
                idx, sep, val = pair.partition(":")
                try:
                    j, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(path, line_no, f"bad feature pair {pair!r}") from None
                if not sep or not 0 <= j < f or not np.isfinite(v):
                    raise ParseError(path, line_no, f"bad feature pair {pair!r}")
                features[node, j] = v
    if seen != n:
        raise ConsistencyError(f"meta.json declares {n} nodes but {path.name} lists {seen}")
    return features, labels


def _read_edges(path: Path, n: int) -> np.ndarray:
    out = []
    try:
        fh = path.open(encoding="utf-8")
    except FileNotFoundError:
        raise LoadError(path) from None
    with fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            try:
                s, d = (int(p) for p in parts)
            except ValueError:
                raise ParseError(path, line_no, "expected <src>\\t<dst> integers") from None
            if not (0 <= s < n and 0 <= d < n):
                raise ParseError(path, line_no, f"edge ({s}, {d}) references an unknown node")
            out.append((s, d))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def load_dataset(path) -> Graph:
    """Load a TSV dataset bundle directory (``meta.json``, ``nodes.tsv``, ``edges.tsv``)."""
    root = Path(path)
    if not root.is_dir():
        raise LoadError(root, "dataset directory not found")
    meta = _read_meta(root / "meta.json")
    n, f, c = meta["num_nodes"], meta["num_features"], meta["num_classes"]
    features, labels = _read_nodes(root / "nodes.tsv", n, f, c)
    edges = _read_edges(root / "edges.tsv", n)
    adj, dropped = adjacency_from_edges(n, edges)
    if dropped:
        log.warning("%s: dropped %d duplicate or self-loop edge records", root.name, dropped)
    return Graph(features, labels, adj, c, name=root.name, dropped_edges=dropped)


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """Renormalized filter ``D^-1/2 (A + I) D^-1/2`` with degrees taken in ``A + I``."""
    a_hat = (g.adjacency + sp.identity(g.num_nodes, format="csr")).tocsr()
    a_hat.sort_indices()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(g.num_nodes), np.diff(a_hat.indptr))
    # d_i * d_j is exact and commutative, so (i, j) and (j, i) get identical values
    vals = a_hat.data / np.sqrt(deg[rows] * deg[a_hat.indices])
    return sp.csr_matrix((vals, a_hat.indices.copy(), a_hat.indptr.copy()), shape=a_hat.shape)


def second_order_matrix(g: Graph) -> sp.csr_matrix:
    """Shared-neighbour counts ``A @ A`` on the raw adjacency (no self-loops)."""
    a2 = (g.adjacency @ g.adjacency).tocsr()
    a2.eliminate_zeros()
    a2.sort_indices()
    return a2


def homophily_ratio(g: Graph) -> float:
    """Fraction of undirected edges whose endpoints share a class."""
    edges = g.edge_list()
    if len(edges) == 0:
        raise UndefinedStatisticError("homophily ratio is undefined for a graph without edges")
    same = g.labels[edges[:, 0]] == g.labels[edges[:, 1]]
    return float(same.mean())


def make_split(
    g: Graph,
    seed,
    per_class: int = 4,
    val_size: int = 500,
    test_fraction: float = 0.0,
) -> Split:
    """Draw the initial labeled set, validation set, query pool, and held-out test set.

    ``per_class`` nodes of every class form the initial labeled set and
    ``val_size`` of the rest form the validation set. A ``test_fraction`` of
    the remainder is held out; everything else is the query pool. With the
    default ``test_fraction=0`` evaluation happens on the nodes still in the
    pool once querying stops.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    initial = []
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        if len(members) < per_class:
            raise InfeasibleSplitError(
                f"class {c} has {len(members)} nodes, fewer than per_class={per_class}"
            )
        initial.extend(rng.choice(members, size=per_class, replace=False).tolist())
    rest = np.setdiff1d(np.arange(g.num_nodes), initial)
    if len(rest) < val_size:
        raise InfeasibleSplitError(f"{len(rest)} nodes left, fewer than val_size={val_size}")
    rest = rng.permutation(rest)
    validation = np.sort(rest[:val_size])
    rest = rest[val_size:]
    n_test = int(round(test_fraction * len(rest)))
    test = np.sort(rest[:n_test])
    pool = np.sort(rest[n_test:])
    return Split(
        initial_labeled=tuple(sorted(int(v) for v in initial)),
        pool=tuple(int(v) for v in pool),
        validation=tuple(int(v) for v in validation),
        test=tuple(int(v) for v in test),
    )
