"""Query-train loop, F1 evaluation and multi-seed experiment driver."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import scores as S
from .backbone import EarlyStopping, TrainConfig, Trainer, accuracy, build_model, embeddings
from .errors import ConfigError, GraphActiveError
from .graph import Graph, Split, load_dataset, make_split, normalize_adjacency, second_order_matrix

log = logging.getLogger(__name__)

STREAMS = ("split", "init", "dropout", "schedule", "kmeans")


def seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    """Independent child seed sequences, one per source of randomness in a run."""
    return dict(zip(STREAMS, np.random.SeedSequence(seed).spawn(len(STREAMS))))


@dataclass
class QueryRecord:
    epoch: int
    node: int
    label: int
    combined_score: float
    percentiles: dict[str, float]
    raw: dict[str, float]


@dataclass
class ALState:
    labeled: list[int]
    pool: set[int]
    budget: int
    epoch: int = 0
    query_log: list[QueryRecord] = field(default_factory=list)

    def check_invariants(self, split: Split, num_nodes: int) -> None:
        lab = set(self.labeled)
        held = set(split.validation) | set(split.test)
        if len(lab) != len(self.labeled):
            raise AssertionError("a node was labeled twice")
        if lab & self.pool or lab & held or self.pool & held:
            raise AssertionError("labeled, pool, validation and test sets overlap")
        if len(lab) + len(self.pool) + len(held) != num_nodes:
            raise AssertionError("labeled, pool, validation and test do not cover the graph")
        if len(self.labeled) > self.budget:
            raise AssertionError("labeled set exceeds the budget")

    @property
    def queried_nodes(self) -> list[int]:
        return [r.node for r in self.query_log]


@dataclass(frozen=True)
class SeedResult:
    seed: int
    macro_f1: float
    micro_f1: float
    queried_nodes: tuple[int, ...]
    query_log: tuple[QueryRecord, ...] = field(default=(), compare=False, repr=False)


@dataclass
class ALResult:
    state: object
    al_state: ALState
    metrics: SeedResult
    history: dict


def oracle_label(g: Graph, v: int) -> int:
    if not 0 <= v < g.num_nodes:
        raise ValueError(f"node {v} outside [0, {g.num_nodes})")
    return int(g.labels[v])


def _confusion(pred, truth, num_classes):
    pred, truth = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return np.bincount(truth * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def macro_f1(pred, truth, num_classes: int) -> float:
    """Unweighted mean of per-class F1; a class with no support and no predictions scores 0."""
    cm = _confusion(pred, truth, num_classes)
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean())


def micro_f1(pred, truth, num_classes: int) -> float:
    cm = _confusion(pred, truth, num_classes)
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


@dataclass(frozen=True)
class ALContext:
    """Graph-level matrices shared by every query step of a run."""

    a_norm: object
    a2: object
    centrality: np.ndarray
    unit_features: object

    @classmethod
    def build(cls, g: Graph, score_cfg: S.ScoreConfig) -> "ALContext":
        a2 = second_order_matrix(g) if "sds" in score_cfg.active_scores else None
        cent = S.centrality_score(g.adjacency, score_cfg.damping, score_cfg.pagerank_tol).values
        feats = sp.csr_matrix(g.features) if np.count_nonzero(g.features) < 0.25 * g.features.size else g.features
        return cls(normalize_adjacency(g), a2, cent, S.unit_rows(feats))


def compute_scores(g, ctx, score_cfg, state, labeled, pool, kmeans_seed) -> dict[str, S.ScoreVector]:
    """Raw scores of every active score function over ``pool``."""
    active = score_cfg.active_scores
    out = {}
    emb = embeddings(state)
    if "centrality" in active:
        out["centrality"] = S.ScoreVector(pool, ctx.centrality[pool])
    if "density" in active:
        k = min(score_cfg.num_clusters or g.num_classes, g.num_nodes)
        out["density"] = S.density_score(emb, S.kmeans(emb, k, seed=kmeans_seed), pool)
    if "entropy" in active:
        out["entropy"] = S.entropy_score(state.output.probs, pool)
    if "fds" in active:
        out["fds"] = S.fds(ctx.unit_features, labeled, pool, score_cfg.similarity_floor)
    if "sds" in active:
        out["sds"] = S.sds(ctx.a2, labeled, pool)
    if "eds" in active:
        out["eds"] = S.eds(emb, labeled, pool, score_cfg.similarity_floor)
    return out


def run_active_learning(
    g: Graph,
    split: Split,
    train_cfg: TrainConfig,
    score_cfg: S.ScoreConfig,
    seed: int,
    backbone: str = "gcn",
    budget: int | None = None,
    ctx: ALContext | None = None,
    on_query=None,
    schedule=S.sample_schedule,
) -> ALResult:
    """One active-learning run.

    Each epoch takes one optimizer step on the current labeled set. While the
    labeled set is below ``budget`` (default ``20 * num_classes``) the
    evaluation-mode output of that step drives one query. Once the budget is
    met, training continues with early stopping on validation accuracy and
    the best parameters are restored. The run is scored on every node that
    is neither labeled nor in the validation set.

    ``on_query(epoch, raw_scores, rank_scores, selected)`` is called after
    every selection, before the node leaves the pool. ``schedule`` has the
    signature of :func:`scores.sample_schedule` and can pin the weights.
    """
    budget = 20 * g.num_classes if budget is None else budget
    initial = list(split.initial_labeled)
    if budget < len(initial):
        raise ConfigError(f"budget {budget} is below the initial labeled size {len(initial)}")
    if budget > len(initial) + len(split.pool):
        raise ConfigError(f"budget {budget} exceeds initial labeled + pool ({len(initial) + len(split.pool)})")
    if budget - len(initial) >= train_cfg.max_epochs:
        raise ConfigError(f"max_epochs={train_cfg.max_epochs} leaves no room to spend the budget")

    streams = seed_streams(seed)
    ctx = ctx or ALContext.build(g, score_cfg)
    model = build_model(backbone, g, train_cfg, ctx.a_norm)
    trainer = Trainer(model, train_cfg, np.random.default_rng(streams["init"]),
                      np.random.default_rng(streams["dropout"]))
    schedule_rng = np.random.default_rng(streams["schedule"])
    kmeans_rng = np.random.default_rng(streams["kmeans"])

    al = ALState(labeled=initial, pool=set(split.pool), budget=budget)
    in_pool = np.zeros(g.num_nodes, dtype=bool)
    in_pool[list(split.pool)] = True
    stopper = EarlyStopping(train_cfg.patience)
    history = {"loss": [], "val_acc": [], "best_epoch": None}

    for epoch in range(train_cfg.max_epochs):
        al.epoch = epoch
        querying = len(al.labeled) < budget
        history["loss"].append(trainer.step(al.labeled, g.labels))
        if querying:
            pool = np.flatnonzero(in_pool)
            raw = compute_scores(g, ctx, score_cfg, trainer.state, al.labeled, pool,
                                 int(kmeans_rng.integers(2 ** 32)))
            ranks = {name: S.rank_percentile(sv) for name, sv in raw.items()}
            weights = schedule(epoch, score_cfg, schedule_rng)
            combined = S.combined_score(ranks, weights)
            v = S.select_node(combined)
            if on_query is not None:
                on_query(epoch, raw, ranks, v)
            pos = int(np.searchsorted(pool, v))
            al.query_log.append(QueryRecord(
                epoch=epoch, node=v, label=oracle_label(g, v),
                combined_score=float(combined.values[pos]),
                percentiles={k: float(r.values[pos]) for k, r in ranks.items()},
                raw={k: float(r.values[pos]) for k, r in raw.items()},
            ))
            al.labeled.append(v)
            al.pool.remove(v)
            in_pool[v] = False
            al.check_invariants(split, g.num_nodes)
        else:
            acc = accuracy(trainer.state.output.probs, g.labels, split.validation)
            history["val_acc"].append(acc)
            if stopper.update(epoch, acc, trainer.state.params):
                break

    if stopper.best_params is not None:
        trainer.state.params = stopper.best_params
        trainer.state.refresh()
        history["best_epoch"] = stopper.best_epoch

    eval_nodes = np.array(sorted(al.pool | set(split.test)), dtype=np.int64)
    pred = trainer.state.output.probs[eval_nodes].argmax(axis=1)
    truth = g.labels[eval_nodes]
    metrics = SeedResult(
        seed=seed,
        macro_f1=macro_f1(pred, truth, g.num_classes),
        micro_f1=micro_f1(pred, truth, g.num_classes),
        queried_nodes=tuple(al.queried_nodes),
        query_log=tuple(al.query_log),
    )
    return ALResult(trainer.state, al, metrics, history)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str
    seeds: tuple[int, ...]
    backbone: str = "gcn"
    active_scores: tuple[str, ...] = S.AGE_SCORES
    schedule_constant: float = 0.99
    output_path: str | None = None
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    max_epochs: int = 300
    hidden_dim: int = 16
    patience: int = 30
    sgc_k: int = 2
    per_class: int = 4
    val_size: int = 500
    test_fraction: float = 0.0
    budget_per_class: int = 20
    damping: float = 0.85
    num_clusters: int | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0.0 < self.schedule_constant < 1.0:
            raise ConfigError("schedule_constant must lie in (0, 1)")
        if self.backbone not in ("gcn", "sgc"):
            raise ConfigError(f"backbone must be 'gcn' or 'sgc', got {self.backbone!r}")
        try:
            self.score_config()
            self.train_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def score_config(self) -> S.ScoreConfig:
        return S.ScoreConfig(
            active_scores=tuple(self.active_scores),
            damping=self.damping,
            num_clusters=self.num_clusters,
            schedule_constant=self.schedule_constant,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            dropout_rate=self.dropout,
            max_epochs=self.max_epochs,
            hidden_dim=self.hidden_dim,
            seed=seed,
            patience=self.patience,
            sgc_k=self.sgc_k,
        )


@dataclass
class MetricsReport:
    dataset: str
    backbone: str
    scores: list[str]
    seeds: list[int]
    per_seed: list[SeedResult]
    failed: dict[int, str] = field(default_factory=dict)

    def _col(self, attr):
        return np.array([getattr(r, attr) for r in self.per_seed], dtype=np.float64)

    @property
    def mean_macro(self) -> float:
        return float(self._col("macro_f1").mean()) if self.per_seed else float("nan")

    @property
    def mean_micro(self) -> float:
        return float(self._col("micro_f1").mean()) if self.per_seed else float("nan")

    @property
    def std_macro(self) -> float:
        return float(self._col("macro_f1").std()) if self.per_seed else float("nan")

    @property
    def std_micro(self) -> float:
        return float(self._col("micro_f1").std()) if self.per_seed else float("nan")

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset,
            "backbone": self.backbone,
            "scores": list(self.scores),
            "seeds": list(self.seeds),
            "per_seed": [
                {"seed": r.seed, "macro_f1": r.macro_f1, "micro_f1": r.micro_f1,
                 "queried_nodes": list(r.queried_nodes)}
                for r in self.per_seed
            ],
            "mean_macro": self.mean_macro,
            "mean_micro": self.mean_micro,
            "std_macro": self.std_macro,
            "std_micro": self.std_micro,
        }
        if self.failed:
            d["failed_seeds"] = [{"seed": s, "error": msg} for s, msg in self.failed.items()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_seed = [SeedResult(r["seed"], r["macro_f1"], r["micro_f1"], tuple(r["queried_nodes"]))
                    for r in d["per_seed"]]
        failed = {f["seed"]: f["error"] for f in d.get("failed_seeds", [])}
        return cls(d["dataset"], d["backbone"], list(d["scores"]), list(d["seeds"]), per_seed, failed)


def run_seed(g: Graph, cfg: ExperimentConfig, seed: int, ctx: ALContext | None = None, on_query=None) -> ALResult:
    split = make_split(g, seed_streams(seed)["split"], cfg.per_class, cfg.val_size, cfg.test_fraction)
    return run_active_learning(
        g, split, cfg.train_config(seed), cfg.score_config(), seed,
        backbone=cfg.backbone, budget=cfg.budget_per_class * g.num_classes, ctx=ctx, on_query=on_query,
    )


_WORKER: dict = {}


def _worker_init(dataset_path, score_cfg):
    g = load_dataset(dataset_path)
    _WORKER["graph"] = g
    _WORKER["ctx"] = ALContext.build(g, score_cfg)


def _worker_run(cfg: ExperimentConfig, seed: int):
    try:
        res = run_seed(_WORKER["graph"], cfg, seed, _WORKER["ctx"])
    except (GraphActiveError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return seed, None, f"{type(exc).__name__}: {exc}"
    return seed, res.metrics, None


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None, graph: Graph | None = None) -> MetricsReport:
    """Run every seed of ``cfg`` and aggregate test-set F1.

    Seeds are independent; with ``jobs > 1`` they run in worker processes
    unless ``graph`` is given, which keeps everything in-process. A seed that fails is reported in ``MetricsReport.failed`` and left out
    of the means.
    """
    jobs = len(cfg.seeds) if jobs is None else max(1, jobs)
    score_cfg = cfg.score_config()
    if jobs == 1 or len(cfg.seeds) == 1 or graph is not None:
        if graph is None:
            _worker_init(cfg.dataset_path, score_cfg)
        else:
            _WORKER["graph"], _WORKER["ctx"] = graph, ALContext.build(graph, score_cfg)
        outcomes = [_worker_run(cfg, s) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(
            max_workers=min(jobs, len(cfg.seeds), os.cpu_count() or 1),
            initializer=_worker_init, initargs=(cfg.dataset_path, score_cfg),
        ) as pool:
            outcomes = list(pool.map(_worker_run, [cfg] * len(cfg.seeds), cfg.seeds))

    results, failed = [], {}
    for seed, metrics, err in outcomes:
        if err is None:
            results.append(metrics)
        else:
            log.warning("seed %d failed and is excluded from the averages: %s", seed, err)
            failed[seed] = err
    name = Path(cfg.dataset_path).name
    return MetricsReport(name, cfg.backbone, list(score_cfg.active_scores), list(cfg.seeds), results, failed)
