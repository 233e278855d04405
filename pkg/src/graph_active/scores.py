"""Query scores over the unlabeled pool and their time-sensitive combination.

Every score is "higher means more worth querying". Raw scores are turned
into rank percentiles over the pool before mixing, so only their ordering
matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError

AGE_SCORES = ("centrality", "density", "entropy")
DISSIMILARITY_SCORES = ("fds", "sds", "eds")
ALL_SCORES = AGE_SCORES + DISSIMILARITY_SCORES
WEIGHT_NAMES = {
    "centrality": "alpha1", "density": "alpha2", "entropy": "alpha3",
    "fds": "beta1", "sds": "beta2", "eds": "beta3",
}


@dataclass(frozen=True)
class ScoreVector:
    candidates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.candidates) != len(self.values):
            raise ValueError("candidates and values differ in length")
        if np.any(np.isnan(self.values)) or np.any(self.values == -np.inf):
            raise ValueError("score values must be finite or +inf")


@dataclass(frozen=True)
class ScheduleWeights:
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0

    def for_score(self, name: str) -> float:
        return getattr(self, WEIGHT_NAMES[name])

    def total(self) -> float:
        return self.alpha1 + self.alpha2 + self.alpha3 + self.beta1 + self.beta2 + self.beta3


@dataclass(frozen=True)
class ScoreConfig:
    active_scores: tuple[str, ...] = AGE_SCORES
    damping: float = 0.85
    num_clusters: int | None = None
    schedule_constant: float = 0.99
    pagerank_tol: float = 1e-8
    similarity_floor: float = 1e-6

    def __post_init__(self):
        unknown = set(self.active_scores) - set(ALL_SCORES)
        if unknown:
            raise ValueError(f"unknown scores {sorted(unknown)}; known: {list(ALL_SCORES)}")
        missing = set(AGE_SCORES) - set(self.active_scores)
        if missing:
            raise ValueError(f"AGE scores {sorted(missing)} must be active")
        # canonical order regardless of how the caller listed them
        object.__setattr__(self, "active_scores", tuple(s for s in ALL_SCORES if s in self.active_scores))
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")
        if not 0.0 < self.schedule_constant < 1.0:
            raise ValueError("schedule_constant must lie in (0, 1)")
        if self.similarity_floor <= 0:
            raise ValueError("similarity_floor must be positive")


def centrality_score(adjacency, damping: float = 0.85, tol: float = 1e-8, max_iter: int = 10_000) -> ScoreVector:
    """PageRank by power iteration over all nodes.

    Nodes with no neighbours spread their mass uniformly over the graph.
    Iterates until the L1 change between sweeps drops below ``tol``.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    adj = sp.csr_matrix(adjacency)
    n = adj.shape[0]
    if n == 0:
        raise ValueError("graph has no nodes")
    out_deg = np.asarray(adj.sum(axis=1)).ravel()
    dangling = out_deg == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / out_deg[~dangling]
    # column-stochastic transition, transposed for the pull formulation
    trans = sp.csr_matrix(adj.T.multiply(inv[None, :]))
    phi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (trans @ phi + phi[dangling].sum() / n) + (1.0 - damping) / n
        delta = np.abs(nxt - phi).sum()
        phi = nxt
        if delta < tol:
            return ScoreVector(np.arange(n), phi)
    raise ConvergenceError(f"PageRank did not converge within {max_iter} iterations")


def _sq_dists(points, centers):
    d = (points ** 2).sum(1)[:, None] - 2.0 * points @ centers.T + (centers ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    assignment: np.ndarray
    inertia_history: tuple[float, ...]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def kmeans(points: np.ndarray, k: int, seed=None, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from a farthest-point initialisation.

    The first center is a seeded random point; every further center is the
    point farthest from the centers chosen so far. A cluster that empties
    out is re-seeded at the point farthest from its current center.
    ``inertia_history`` records the within-cluster sum of squares after
    each update step.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    nearest = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, _sq_dists(points, points[[nxt]])[:, 0])
    centers = points[chosen].copy()

    assignment = np.full(n, -1)
    history = []
    for _ in range(max_iter):
        d = _sq_dists(points, centers)
        new_assignment = d.argmin(axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(k):
            members = assignment == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
        point_d = ((points - centers[assignment]) ** 2).sum(1)
        for c in range(k):
            if not (assignment == c).any():
                far = int(np.argmax(point_d))
                centers[c] = points[far]
                point_d[far] = 0.0
        history.append(float(((points - centers[assignment]) ** 2).sum()))
    return KMeansResult(centers, assignment, tuple(history))


def density_score(embeddings: np.ndarray, clustering: KMeansResult, pool) -> ScoreVector:
    pool = np.asarray(pool, dtype=np.int64)
    emb = embeddings[pool]
    dist = np.linalg.norm(emb - clustering.centers[clustering.assignment[pool]], axis=1)
    return ScoreVector(pool, 1.0 / (1.0 + dist))


def entropy_score(probs: np.ndarray, pool=None) -> ScoreVector:
    """Natural-log prediction entropy with ``0 log 0 = 0``."""
    pool = np.arange(len(probs)) if pool is None else np.asarray(pool, dtype=np.int64)
    p = probs[pool]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return ScoreVector(pool, np.maximum(-terms.sum(axis=1), 0.0))


def unit_rows(x):
    """Rows scaled to unit L2 norm; zero rows stay zero. Keeps CSR input sparse."""
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=np.float64)
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return sp.csr_matrix(sp.diags(inv) @ x)
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _cosine_dissimilarity(vectors, labeled, pool, floor):
    labeled = np.asarray(labeled, dtype=np.int64)
    pool = np.asarray(pool, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("labeled set must be non-empty")
    u_pool = unit_rows(vectors[pool])
    u_lab = unit_rows(vectors[labeled])
    sims = u_pool @ u_lab.T
    sims = sims.toarray() if sp.issparse(sims) else np.asarray(sims)
    best = sims.max(axis=1)
    return ScoreVector(pool, 1.0 / np.maximum(best, floor))


def fds(features, labeled, pool, floor: float = 1e-6) -> ScoreVector:
    """Inverse of the largest cosine similarity between a candidate's features and any labeled node's."""
    return _cosine_dissimilarity(features, labeled, pool, floor)


def eds(embeddings, labeled, pool, floor: float = 1e-6) -> ScoreVector:
    """Like :func:`fds` but over backbone embeddings."""
    return _cosine_dissimilarity(embeddings, labeled, pool, floor)


def sds(a2, labeled, pool) -> ScoreVector:
    """Inverse of the most neighbours a candidate shares with any labeled node.

    A candidate sharing no neighbour with the labeled set scores ``+inf``.
    """
    labeled = np.asarray(labeled, dtype=np.int64)
    pool = np.asarray(pool, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("labeled set must be non-empty")
    block = sp.csr_matrix(a2)[pool][:, labeled]
    best = block.max(axis=1).toarray().ravel()
    with np.errstate(divide="ignore"):
        vals = np.where(best > 0, 1.0 / np.where(best > 0, best, 1.0), np.inf)
    return ScoreVector(pool, vals)


def rank_percentile(scores: ScoreVector) -> ScoreVector:
    """Fraction of the pool whose score is ``<=`` each candidate's score."""
    v = np.asarray(scores.values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot rank an empty pool")
    ordered = np.sort(v)
    counts = np.searchsorted(ordered, v, side="right")
    return ScoreVector(scores.candidates, counts / v.size)


def sample_schedule(t: int, cfg: ScoreConfig, rng: np.random.Generator) -> ScheduleWeights:
    """Draw the centrality weight from ``Beta(1, max(1.005 - C**t, 1e-6))``.

    The remaining mass is shared equally by the other active scores;
    inactive scores get weight 0.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    b = max(1.005 - cfg.schedule_constant ** t, 1e-6)
    a1 = float(rng.beta(1.0, b))
    others = [s for s in cfg.active_scores if s != "centrality"]
    share = (1.0 - a1) / len(others) if others else 0.0
    weights = {"alpha1": a1 if "centrality" in cfg.active_scores else 0.0}
    for s in others:
        weights[WEIGHT_NAMES[s]] = share
    return ScheduleWeights(**weights)


def combined_score(rank_vectors: dict[str, ScoreVector], weights: ScheduleWeights) -> ScoreVector:
    names = list(rank_vectors)
    if not names:
        raise ValueError("no rank vectors to combine")
    candidates = rank_vectors[names[0]].candidates
    total = np.zeros(len(candidates))
    for name in names:
        rv = rank_vectors[name]
        if not np.array_equal(rv.candidates, candidates):
            raise ValueError(f"rank vector {name!r} covers a different candidate list")
        total += weights.for_score(name) * rv.values
    return ScoreVector(candidates, total)


def select_node(combined: ScoreVector) -> int:
    """Candidate with the highest combined score; ties go to the lowest node id."""
    if len(combined.candidates) == 0:
        raise ValueError("empty pool")
    vals = np.asarray(combined.values)
    tied = np.asarray(combined.candidates)[vals == vals.max()]
    return int(tied.min())
