import numpy as np
import pytest
import scipy.sparse as sp

from graph_active.backbone import (
    GcnParams,
    SgcParams,
    TrainConfig,
    embeddings,
    gcn_forward,
    gcn_loss_and_grads,
    predict_probs,
    sgc_forward,
    sgc_loss_and_grads,
    sgc_precompute,
    train,
)
from graph_active.errors import DimensionError, TrainingError
from graph_active.graph import normalize_adjacency

from conftest import graph_from_edges

SIX_NODE_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2), (1, 4)]


def dense_forward(w1, w2, a, x):
    """Step-by-step dense reference for the two-layer GCN."""
    h = np.maximum(a @ x @ w1, 0.0)
    z = a @ h @ w2
    e = np.exp(z - z.max(1, keepdims=True))
    return h, z, e / e.sum(1, keepdims=True)


def central_difference(f, w, eps=1e-4):
    grad = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + eps
        hi = f()
        w[idx] = orig - eps
        lo = f()
        w[idx] = orig
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    mask = (np.abs(analytic) >= floor) | (np.abs(numeric) >= floor)
    if not mask.any():
        return 0.0
    a, n = analytic[mask], numeric[mask]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))))


def six_node_problem(seed):
    rng = np.random.default_rng(seed)
    g = graph_from_edges(6, SIX_NODE_EDGES, labels=[0, 1, 2, 0, 1, 2], features=rng.random((6, 5)))
    params = GcnParams(W1=rng.normal(size=(5, 4)), W2=rng.normal(size=(4, 3)))
    return g, normalize_adjacency(g), params


def gcn_fd_check(seed, weight_decay=5e-4, dropout=0.0):
    g, a, params = six_node_problem(seed)
    labeled = [0, 2, 3, 5]

    def loss_fn(p):
        rng = np.random.default_rng(99) if dropout else None
        return gcn_loss_and_grads(p, a, g.features, labeled, g.labels, weight_decay, dropout, rng)

    _, grads = loss_fn(params)
    w1, w2 = params.W1.copy(), params.W2.copy()
    probe = GcnParams(W1=w1, W2=w2)
    n1 = central_difference(lambda: loss_fn(probe)[0], w1)
    n2 = central_difference(lambda: loss_fn(probe)[0], w2)
    return max(max_relative_error(grads.W1, n1), max_relative_error(grads.W2, n2))


class TestForward:
    def test_zero_params_uniform(self):
        g, a, _ = six_node_problem(0)
        out = gcn_forward(GcnParams(np.zeros((5, 4)), np.zeros((4, 3))), a, g.features)
        np.testing.assert_array_equal(out.probs, np.full((6, 3), 1 / 3))
        assert np.all(out.hidden == 0)

    def test_identity_filter_is_perceptron(self):
        rng = np.random.default_rng(1)
        x = rng.random((1, 4))
        p = GcnParams(rng.normal(size=(4, 3)), rng.normal(size=(3, 2)))
        out = gcn_forward(p, sp.identity(1, format="csr"), x)
        h = np.maximum(x @ p.W1, 0)
        np.testing.assert_allclose(out.logits, h @ p.W2, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_reference(self, seed):
        rng = np.random.default_rng(seed)
        edges = [(i, j) for i in range(5) for j in range(i + 1, 5) if rng.random() < 0.5]
        g = graph_from_edges(5, edges, features=rng.random((5, 6)))
        p = GcnParams(rng.normal(size=(6, 4)), rng.normal(size=(4, 3)))
        a = normalize_adjacency(g)
        out = gcn_forward(p, a, g.features)
        h, z, probs = dense_forward(p.W1, p.W2, a.toarray(), g.features)
        np.testing.assert_allclose(out.hidden, h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out.logits, z, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out.probs, probs, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out.probs.sum(1), 1.0, atol=1e-6)

    def test_sparse_features_match_dense(self):
        g, a, p = six_node_problem(3)
        dense = gcn_forward(p, a, g.features)
        sparse = gcn_forward(p, a, sp.csr_matrix(g.features))
        np.testing.assert_allclose(sparse.probs, dense.probs, rtol=1e-12)

    def test_evaluation_mode_deterministic_and_training_mode_stochastic(self):
        g, a, p = six_node_problem(2)
        e1 = gcn_forward(p, a, g.features)
        e2 = gcn_forward(p, a, g.features, dropout=0.5)
        np.testing.assert_array_equal(e1.probs, e2.probs)
        t = gcn_forward(p, a, g.features, dropout=0.5, rng=np.random.default_rng(0))
        assert not np.allclose(t.probs, e1.probs)

    def test_shape_mismatch(self):
        g, a, _ = six_node_problem(0)
        with pytest.raises(DimensionError):
            gcn_forward(GcnParams(np.zeros((4, 4)), np.zeros((4, 3))), a, g.features)
        with pytest.raises(DimensionError):
            gcn_forward(GcnParams(np.zeros((5, 4)), np.zeros((3, 3))), a, g.features)

    def test_large_logits_stay_finite(self):
        g, a, p = six_node_problem(0)
        big = GcnParams(p.W1 * 1e3, p.W2 * 1e3)
        loss, _ = gcn_loss_and_grads(big, a, g.features, [0, 1], g.labels)
        assert np.isfinite(loss)
        out = gcn_forward(big, a, g.features)
        assert np.all((out.probs >= 0) & (out.probs <= 1))


class TestLossAndGrads:
    def test_zero_params_loss_is_log_c(self):
        g, a, _ = six_node_problem(0)
        loss, _ = gcn_loss_and_grads(GcnParams(np.zeros((5, 4)), np.zeros((4, 3))), a, g.features,
                                     [0, 1, 2], g.labels, weight_decay=5e-4)
        assert loss == pytest.approx(np.log(3), abs=1e-12)

    def test_confident_prediction_leaves_weight_decay(self):
        # one node with identity filter; logits strongly favour class 0
        x = np.array([[1.0, 0.0]])
        w1 = np.array([[1.0], [0.0]])
        w2 = np.array([[800.0, 0.0]])
        loss, _ = gcn_loss_and_grads(GcnParams(w1, w2), sp.identity(1, format="csr"), x, [0],
                                     np.array([0]), weight_decay=0.1)
        assert loss == pytest.approx(0.05, abs=1e-12)

    def test_empty_labeled(self):
        g, a, p = six_node_problem(0)
        with pytest.raises(ValueError):
            gcn_loss_and_grads(p, a, g.features, [], g.labels)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        assert gcn_fd_check(seed) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences_fixed_dropout_mask(self, seed):
        assert gcn_fd_check(seed, dropout=0.3) < 1e-4

    def test_sgc_finite_differences(self):
        rng = np.random.default_rng(0)
        x = rng.random((6, 5))
        labels = np.array([0, 1, 2, 0, 1, 2])
        w = rng.normal(size=(5, 3))
        _, g = sgc_loss_and_grads(SgcParams(w), x, [0, 1, 4], labels, 1e-2)
        num = central_difference(lambda: sgc_loss_and_grads(SgcParams(w), x, [0, 1, 4], labels, 1e-2)[0], w)
        assert max_relative_error(g.W, num) < 1e-4


class TestSgc:
    def test_identity_k1(self):
        x = np.random.default_rng(0).random((3, 2))
        np.testing.assert_array_equal(sgc_precompute(sp.identity(3, format="csr"), x, 1), x)

    def test_k2_matches_dense(self):
        g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3)], features=np.random.default_rng(0).random((4, 3)))
        a = normalize_adjacency(g)
        ad = a.toarray()
        np.testing.assert_allclose(sgc_precompute(a, g.features, 2), ad @ (ad @ g.features), rtol=1e-13)

    def test_composition(self):
        g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3)], features=np.random.default_rng(1).random((4, 3)))
        a = normalize_adjacency(g)
        once = sgc_precompute(a, g.features, 1)
        np.testing.assert_array_equal(sgc_precompute(a, once, 1), sgc_precompute(a, g.features, 2))

    def test_linear_model_on_propagated_features(self):
        rng = np.random.default_rng(2)
        edges = [(i, j) for i in range(15) for j in range(i + 1, 15) if rng.random() < 0.25]
        g = graph_from_edges(15, edges, features=rng.random((15, 4)))
        ad = normalize_adjacency(g).toarray()
        w = rng.normal(size=(4, 3))
        out = sgc_forward(SgcParams(w), sgc_precompute(normalize_adjacency(g), g.features, 2))
        np.testing.assert_allclose(out.logits, ad @ ad @ g.features @ w, rtol=1e-12)


def separable_toy():
    """Two 5-node cliques joined by one edge, with orthogonal class features."""
    edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    edges += [(i + 5, j + 5) for i, j in edges] + [(4, 5)]
    labels = np.array([0] * 5 + [1] * 5)
    features = np.zeros((10, 2))
    features[np.arange(10), labels] = 1.0
    return graph_from_edges(10, edges, labels, features)


class TestTrain:
    @pytest.mark.parametrize("backbone", ["gcn", "sgc"])
    def test_separable_toy(self, backbone):
        g = separable_toy()
        state, hist = train(backbone, g, [0, 9], TrainConfig(max_epochs=300, seed=0, dropout_rate=0.0))
        probs = predict_probs(state)
        assert np.array_equal(probs.argmax(1), g.labels)
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-6)
        assert len(hist["loss"]) == 300

    def test_patience_zero_stops_at_first_non_improving_epoch(self):
        g = separable_toy()
        _, hist = train("gcn", g, [0, 9], TrainConfig(patience=0, seed=0), validation=list(range(1, 9)))
        acc = hist["val_acc"]
        assert all(acc[i] > acc[i - 1] for i in range(1, len(acc) - 1))
        assert len(acc) == 1 or acc[-1] <= max(acc[:-1])

    def test_same_seed_bitwise_identical(self):
        g = separable_toy()
        cfg = TrainConfig(seed=7, max_epochs=50)
        s1, h1 = train("gcn", g, [0, 1, 9], cfg)
        s2, h2 = train("gcn", g, [0, 1, 9], cfg)
        assert np.array_equal(s1.params.W1, s2.params.W1) and np.array_equal(s1.params.W2, s2.params.W2)
        assert h1["loss"] == h2["loss"]

    def test_embeddings(self):
        g = separable_toy()
        state, _ = train("gcn", g, [0, 9], TrainConfig(hidden_dim=16, max_epochs=5, patience=5))
        emb = embeddings(state)
        assert emb.shape == (10, 16) and np.all(emb >= 0)
        assert emb is state.output.hidden
        # the second layer consumes exactly this matrix
        a = state.model.a_norm
        np.testing.assert_allclose(state.output.logits, a @ (emb @ state.params.W2), rtol=1e-13)

    def test_zero_first_layer_gives_zero_embeddings(self):
        g = separable_toy()
        state, _ = train("gcn", g, [0, 9], TrainConfig(max_epochs=1, patience=1))
        state.params = GcnParams(np.zeros_like(state.params.W1), np.zeros_like(state.params.W2))
        state.refresh()
        assert np.all(embeddings(state) == 0)
        np.testing.assert_array_equal(predict_probs(state), np.full((10, 2), 0.5))

    def test_sgc_embeddings_are_propagated_features(self):
        g = separable_toy()
        state, _ = train("sgc", g, [0, 9], TrainConfig(max_epochs=3, patience=3))
        np.testing.assert_array_equal(embeddings(state), state.model.propagated)

    def test_divergence_raises_with_epoch(self):
        g = separable_toy()
        bad = graph_from_edges(10, [], g.labels, np.full((10, 2), 1e308))
        with pytest.raises(TrainingError) as exc:
            train("gcn", bad, [0, 9], TrainConfig(max_epochs=5, patience=5, normalize_features=False))
        assert exc.value.epoch == 0

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(dropout_rate=1.0),
                                        dict(patience=400), dict(max_epochs=0)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
