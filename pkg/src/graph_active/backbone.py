"""Two-layer GCN and SGC backbones in plain numpy with analytic gradients.

Both models train full-batch with Adam on a masked cross-entropy loss. The
scoring layer only needs two things from a trained model: per-node
embeddings and class probabilities (see :func:`embeddings` and
:func:`predict_probs`).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, TrainingError
from .graph import Graph, normalize_adjacency


@dataclass(frozen=True)
class GcnParams:
    W1: np.ndarray
    W2: np.ndarray


@dataclass(frozen=True)
class SgcParams:
    W: np.ndarray


@dataclass(frozen=True)
class ModelOutput:
    hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout_rate: float = 0.5
    max_epochs: int = 300
    hidden_dim: int = 16
    seed: int = 0
    patience: int = 30
    sgc_k: int = 2
    normalize_features: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.max_epochs < 1 or self.hidden_dim < 1 or self.sgc_k < 1:
            raise ValueError("max_epochs, hidden_dim and sgc_k must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def row_normalize(x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return x / s


def _dropout_mask(rng, shape, rate):
    if rate == 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _dropout_features(features, rate, rng):
    """Input dropout; for sparse features only stored entries are masked."""
    if rate == 0.0 or rng is None:
        return features
    if sp.issparse(features):
        x = features.copy()
        x.data = x.data * _dropout_mask(rng, x.data.shape, rate)
        return x
    return features * _dropout_mask(rng, features.shape, rate)


def _check_gcn_shapes(params: GcnParams, a_norm, features):
    n, f = features.shape
    if a_norm.shape != (n, n):
        raise DimensionError(f"filter is {a_norm.shape}, features have {n} rows")
    if params.W1.shape[0] != f:
        raise DimensionError(f"W1 has {params.W1.shape[0]} rows, features have {f} columns")
    if params.W2.shape[0] != params.W1.shape[1]:
        raise DimensionError(f"W1 is {params.W1.shape}, W2 is {params.W2.shape}")


def _gcn_forward(params, a_norm, features, dropout, rng):
    _check_gcn_shapes(params, a_norm, features)
    x = _dropout_features(features, dropout, rng)
    z1 = a_norm @ np.asarray(x @ params.W1)
    hidden = np.maximum(z1, 0.0)
    m1 = _dropout_mask(rng, hidden.shape, dropout)
    h = hidden if m1 is None else hidden * m1
    logits = a_norm @ (h @ params.W2)
    out = ModelOutput(hidden=hidden, logits=logits, probs=softmax(logits))
    return out, (x, z1, h, m1)


def gcn_forward(params: GcnParams, a_norm, features, dropout: float = 0.0, rng=None) -> ModelOutput:
    """Forward pass ``softmax(Ã relu(Ã X W1) W2)``.

    Dropout on the input and hidden layer is applied only when ``rng`` is
    given and ``dropout > 0``; otherwise the pass is the deterministic
    evaluation-mode forward.
    """
    return _gcn_forward(params, a_norm, features, dropout, rng)[0]


def _xent(logits, labeled, labels):
    labeled = np.asarray(labeled, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("labeled set must be non-empty")
    logp = log_softmax(logits[labeled])
    return -logp[np.arange(len(labeled)), labels[labeled]].mean(), labeled


def _xent_grad(probs, labeled, labels):
    g = np.zeros_like(probs)
    g[labeled] = probs[labeled]
    g[labeled, labels[labeled]] -= 1.0
    return g / len(labeled)


def gcn_loss_and_grads(
    params: GcnParams,
    a_norm,
    features,
    labeled,
    labels,
    weight_decay: float = 0.0,
    dropout: float = 0.0,
    rng=None,
) -> tuple[float, GcnParams]:
    """Masked mean cross-entropy plus ``weight_decay/2 * ||W1||^2`` and its exact gradient."""
    labels = np.asarray(labels)
    out, (x, z1, h, m1) = _gcn_forward(params, a_norm, features, dropout, rng)
    ce, labeled = _xent(out.logits, labeled, labels)
    loss = ce + 0.5 * weight_decay * float(np.sum(params.W1 ** 2))

    d_logits = _xent_grad(out.probs, labeled, labels)
    d_p2 = a_norm.T @ d_logits
    g_w2 = h.T @ d_p2
    d_h = d_p2 @ params.W2.T
    if m1 is not None:
        d_h = d_h * m1
    d_z1 = d_h * (z1 > 0)
    d_p1 = a_norm.T @ d_z1
    g_w1 = np.asarray(x.T @ d_p1) + weight_decay * params.W1
    return float(loss), GcnParams(W1=g_w1, W2=g_w2)


def sgc_precompute(a_norm, features, k: int = 2) -> np.ndarray:
    """``Ã^k X`` via ``k`` successive sparse-dense products."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.asarray(features, dtype=np.float64)
    for _ in range(k):
        out = a_norm @ out
    return np.asarray(out)


def sgc_forward(params: SgcParams, propagated: np.ndarray) -> ModelOutput:
    if params.W.shape[0] != propagated.shape[1]:
        raise DimensionError(f"W has {params.W.shape[0]} rows, inputs have {propagated.shape[1]} columns")
    logits = propagated @ params.W
    return ModelOutput(hidden=propagated, logits=logits, probs=softmax(logits))


def sgc_loss_and_grads(params: SgcParams, propagated, labeled, labels, weight_decay: float = 0.0):
    labels = np.asarray(labels)
    out = sgc_forward(params, propagated)
    ce, labeled = _xent(out.logits, labeled, labels)
    loss = ce + 0.5 * weight_decay * float(np.sum(params.W ** 2))
    d_logits = _xent_grad(out.probs, labeled, labels)
    return float(loss), SgcParams(W=propagated.T @ d_logits + weight_decay * params.W)


class GcnModel:
    kind = "gcn"

    def __init__(self, a_norm, features, num_classes: int, cfg: TrainConfig):
        self.a_norm = a_norm
        self.features = features
        self.num_classes = num_classes
        self.cfg = cfg

    def init_params(self, rng) -> GcnParams:
        f, h, c = self.features.shape[1], self.cfg.hidden_dim, self.num_classes
        return GcnParams(W1=glorot(rng, f, h), W2=glorot(rng, h, c))

    def forward(self, params) -> ModelOutput:
        return gcn_forward(params, self.a_norm, self.features)

    def loss_and_grads(self, params, labeled, labels, rng):
        return gcn_loss_and_grads(
            params, self.a_norm, self.features, labeled, labels,
            weight_decay=self.cfg.weight_decay, dropout=self.cfg.dropout_rate, rng=rng,
        )


class SgcModel:
    kind = "sgc"

    def __init__(self, a_norm, features, num_classes: int, cfg: TrainConfig):
        self.a_norm = a_norm
        self.propagated = sgc_precompute(a_norm, features, cfg.sgc_k)
        self.num_classes = num_classes
        self.cfg = cfg

    def init_params(self, rng) -> SgcParams:
        return SgcParams(W=glorot(rng, self.propagated.shape[1], self.num_classes))

    def forward(self, params) -> ModelOutput:
        return sgc_forward(params, self.propagated)

    def loss_and_grads(self, params, labeled, labels, rng):
        return sgc_loss_and_grads(params, self.propagated, labeled, labels, self.cfg.weight_decay)


BACKBONES = {"gcn": GcnModel, "sgc": SgcModel}
SPARSE_FEATURE_DENSITY = 0.25


def build_model(backbone: str, g: Graph, cfg: TrainConfig, a_norm=None):
    try:
        cls = BACKBONES[backbone]
    except KeyError:
        raise ValueError(f"unknown backbone {backbone!r}; expected one of {sorted(BACKBONES)}") from None
    if a_norm is None:
        a_norm = normalize_adjacency(g)
    x = row_normalize(np.array(g.features)) if cfg.normalize_features else np.array(g.features)
    if cls is GcnModel and np.count_nonzero(x) < SPARSE_FEATURE_DENSITY * x.size:
        x = sp.csr_matrix(x)
    return cls(a_norm, x, g.num_classes, cfg)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params, grads):
        self.t += 1
        new = {}
        for name, g in vars(grads).items():
            w = getattr(params, name)
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            new[name] = w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return dataclasses.replace(params, **new)


@dataclass
class ModelState:
    model: GcnModel | SgcModel
    params: GcnParams | SgcParams
    output: ModelOutput | None = None

    def refresh(self) -> ModelOutput:
        self.output = self.model.forward(self.params)
        return self.output


def embeddings(state: ModelState) -> np.ndarray:
    """Node representations fed to the density and embedding-dissimilarity scores.

    First-layer post-activation output for GCN, ``Ã^k X`` rows for SGC.
    """
    if state.output is None:
        state.refresh()
    return state.output.hidden


def predict_probs(state: ModelState) -> np.ndarray:
    if state.output is None:
        state.refresh()
    return state.output.probs


def accuracy(probs: np.ndarray, labels, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return 0.0
    return float(np.mean(probs[nodes].argmax(axis=1) == np.asarray(labels)[nodes]))


class Trainer:
    """Full-batch Adam training with an evaluation-mode output after every step."""

    def __init__(self, model, cfg: TrainConfig, init_rng, dropout_rng):
        self.cfg = cfg
        self.state = ModelState(model, model.init_params(init_rng))
        self.opt = Adam(cfg.learning_rate)
        self.dropout_rng = dropout_rng
        self.epoch = 0

    def step(self, labeled, labels) -> float:
        loss, grads = self.state.model.loss_and_grads(self.state.params, labeled, labels, self.dropout_rng)
        if not np.isfinite(loss):
            raise TrainingError(self.epoch, loss)
        self.state.params = self.opt.update(self.state.params, grads)
        self.state.refresh()
        self.epoch += 1
        return loss


@dataclass
class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict validation-accuracy gain."""

    patience: int
    best_score: float = -np.inf
    best_params: object = None
    best_epoch: int = -1
    bad_epochs: int = field(default=0)

    def update(self, epoch: int, score: float, params) -> bool:
        """Record one epoch; return True when training should stop."""
        if score > self.best_score:
            self.best_score, self.best_params, self.best_epoch = score, params, epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs > self.patience


def train(backbone: str, g: Graph, labeled, cfg: TrainConfig, validation=None, a_norm=None):
    """Train ``backbone`` on a fixed labeled set.

    Early stopping is active only when a validation set is given; the
    best-validation parameters are restored before returning.

    Returns
    -------
    state : ModelState
        Trained parameters with a fresh evaluation-mode output.
    history : dict
        ``loss`` and ``val_acc`` per epoch plus ``best_epoch``.
    """
    labeled = np.asarray(labeled, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("labeled set must be non-empty")
    model = build_model(backbone, g, cfg, a_norm)
    init_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    trainer = Trainer(model, cfg, np.random.default_rng(init_ss), np.random.default_rng(drop_ss))
    stopper = EarlyStopping(cfg.patience) if validation is not None else None
    history = {"loss": [], "val_acc": [], "best_epoch": None}
    for epoch in range(cfg.max_epochs):
        history["loss"].append(trainer.step(labeled, g.labels))
        if stopper is not None:
            acc = accuracy(trainer.state.output.probs, g.labels, validation)
            history["val_acc"].append(acc)
            if stopper.update(epoch, acc, trainer.state.params):
                break
    if stopper is not None and stopper.best_params is not None:
        trainer.state.params = stopper.best_params
        trainer.state.refresh()
        history["best_epoch"] = stopper.best_epoch
    return trainer.state, history
