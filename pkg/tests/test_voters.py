import numpy as np
import pytest

from mvpb.data import synth_dataset
from mvpb.voters import (DEPTH_PRESETS, DecisionTree, ForestConfig, PredictionCache, ViewEnsemble,
                         build_tree, load_prediction_cache, predict_cache, train_forest, vote_mass)


def leaf(value, n_features=1):
    return DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                        np.array([value]), n_features)


def stump(feature, threshold, lo, hi, n_features):
    return DecisionTree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
                        np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0, lo, hi]),
                        n_features)


def best_midpoint_error(x, y):
    """Exhaustive oracle: lowest training error of any midpoint stump."""
    xs = np.unique(x)
    best = 1.0
    for a, b in zip(xs, xs[1:]):
        thr = 0.5 * (a + b)
        for lo, hi in ((0, 1), (1, 0)):
            pred = np.where(x <= thr, lo, hi)
            best = min(best, np.mean(pred != y))
    return best


def test_stump_on_four_points():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    forest = train_forest(x, y, ForestConfig(n_trees=1, max_depth=1, seed=0, bootstrap=False))
    tree = forest.trees[0]
    assert tree.threshold[0] == 1.5
    assert np.mean(tree.predict(x) != y) == best_midpoint_error(x[:, 0], y) == 0.0


def test_bootstrap_stumps_fit_their_sample():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    forest = train_forest(x, y, ForestConfig(n_trees=30, max_depth=1, seed=3))
    for t in forest.trees:
        # a split stump separates its bootstrap sample, so the extremes are always right
        if t.feature[0] >= 0:
            assert 0.0 < t.threshold[0] < 3.0
            assert t.predict(x[[0, 3]]).tolist() == [0, 1]


def test_pure_node_is_leaf():
    tree = build_tree(np.ones((5, 2)), np.zeros(5, dtype=int), 2, 3, np.random.default_rng(0))
    assert tree.n_nodes == 1 and tree.depth == 0


def test_forest_is_deterministic_and_respects_depth():
    ds = synth_dataset(2, 80, 3, 4, 1.0, seed=2)
    cfg = ForestConfig(n_trees=5, max_depth=DEPTH_PRESETS["weak"], seed=11)
    a = train_forest(ds.views[0], ds.labels, cfg)
    b = train_forest(ds.views[0], ds.labels, cfg)
    assert np.array_equal(a.predict(ds.views[0]), b.predict(ds.views[0]))
    for t in a.trees:
        assert t.depth <= 3
        assert np.all(t.feature[t.feature >= 0] < 4)
        assert np.all(t.left[t.feature >= 0] > 0)


def test_presets():
    assert DEPTH_PRESETS == {"stump": 1, "weak": 3, "strong": 6, "strong20": 20}
    assert ForestConfig().n_trees == 100


def test_train_forest_rejects_single_class():
    with pytest.raises(ValueError):
        train_forest(np.ones((3, 1)), np.zeros(3, dtype=int), ForestConfig(n_trees=1))


def test_predict_feature_mismatch():
    with pytest.raises(ValueError, match="feature count mismatch"):
        leaf(1, 2).predict(np.ones((2, 3)))


def test_constant_voter_cache():
    ens = [ViewEnsemble([leaf(1)], 0), ViewEnsemble([leaf(0)], 1)]
    X = np.zeros((4, 1))
    cache = predict_cache(ens, {"train": [X, X]}, 2)
    assert cache.preds[0].tolist() == [[1, 1, 1, 1]]


def test_hand_built_stump():
    tree = stump(1, 0.5, 2, 0, 2)
    X = np.array([[9.0, 0.0], [9.0, 1.0], [-9.0, 0.5]])
    assert tree.predict(X).tolist() == [2, 0, 2]


def test_cache_recomputation_is_identical():
    ds = synth_dataset(2, 40, 2, 3, 1.0, seed=0)
    ens = [train_forest(x, ds.labels, ForestConfig(4, 2, 1), v) for v, x in enumerate(ds.views)]
    a = predict_cache(ens, {"train": ds.views}, 2)
    b = predict_cache(ens, {"train": ds.views}, 2)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.preds, b.preds))


def test_cache_validation():
    with pytest.raises(ValueError, match="partition"):
        PredictionCache([np.zeros((1, 4), dtype=int)], {"a": (0, 2), "b": (3, 4)}, 2)
    with pytest.raises(ValueError):
        PredictionCache([np.full((1, 2), 2)], {"a": (0, 2)}, 2)


def test_load_prediction_cache(tmp_path):
    (tmp_path / "v1.csv").write_text("0,1,1\n1,1,0\n")
    (tmp_path / "v2.csv").write_text("1,0,1\n")
    cache = load_prediction_cache([tmp_path / "v1.csv", tmp_path / "v2.csv"],
                                  {"train": (0, 2), "test": (2, 3)}, 2)
    assert cache.n_voters == [2, 1]
    assert cache.block("test")[0].tolist() == [[1], [0]]


def _cache(preds, C):
    N = preds[0].shape[1]
    return PredictionCache(preds, {"train": (0, N)}, C)


def test_vote_mass_examples():
    cache = _cache([np.zeros((2, 3), dtype=int), np.zeros((1, 3), dtype=int)], 3)
    mass = vote_mass(cache, [0.3, 0.7], [np.array([0.5, 0.5]), np.array([1.0])], "train")
    assert np.allclose(mass, [[1, 0, 0]] * 3, atol=0)
    cache = _cache([np.array([[0]]), np.array([[1]])], 2)
    mass = vote_mass(cache, [0.5, 0.5], [np.array([1.0]), np.array([1.0])], "train")
    assert mass.tolist() == [[0.5, 0.5]]


def test_vote_mass_matches_double_sum_and_properties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        C = int(rng.integers(2, 5))
        preds = [rng.integers(0, C, size=(3, 6)), rng.integers(0, C, size=(3, 6))]
        cache = _cache(preds, C)
        rho = rng.dirichlet(np.ones(2))
        Q = [rng.dirichlet(np.ones(3)) for _ in range(2)]
        mass = vote_mass(cache, rho, Q, "train")
        oracle = np.zeros((6, C))
        for v in range(2):
            for h in range(3):
                for i in range(6):
                    oracle[i, preds[v][h, i]] += rho[v] * Q[v][h]
        assert np.allclose(mass, oracle, atol=1e-12, rtol=0)
        assert np.allclose(mass.sum(axis=1), 1.0, atol=1e-9)
        assert mass.min() >= 0 and mass.max() <= 1 + 1e-12
        perm = rng.permutation(3)
        shuffled = _cache([preds[0][perm], preds[1]], C)
        mass2 = vote_mass(shuffled, rho, [Q[0][perm], Q[1]], "train")
        assert np.allclose(mass, mass2, atol=1e-12, rtol=0)


def test_vote_mass_rejects_non_simplex():
    cache = _cache([np.array([[0]]), np.array([[1]])], 2)
    with pytest.raises(ValueError, match="simplex"):
        vote_mass(cache, [0.6, 0.6], [np.array([1.0]), np.array([1.0])], "train")
