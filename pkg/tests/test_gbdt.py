"""
Module provides tests to test the gradient-boosted tree classifier and the enhanced features.
"""
import math
import os
import numpy as np
import pytest
import matplotlib.pyplot as plt

from pathomil.rng import CanonicalRng
from pathomil.exceptions import FormatError
from pathomil.models import ForwardOutput, MilModel, KIND_CLAM_SB, KIND_ABMIL
from pathomil.gbdt import softmax_grad_hess, leaf_weight, find_best_split, build_tree, \
    TreeNode, GBDTConfig, TreeEnsemble, train_ensemble, predict_ensemble, feature_importance, \
    top_features, gini_coefficient, shannon_entropy, build_enhanced_features, \
    ENHANCED_FEATURE_NAMES, build_gbdt_inputs, plot_feature_importance

from .utils import get_temp_folder


def _toy_set() -> tuple[np.ndarray, np.ndarray]:
    rng = CanonicalRng(12)
    y = np.repeat(np.arange(3), 10)
    X = np.stack((2. * y + rng.uniform_array(30), rng.uniform_array(30)), axis=1)
    return X, y


def _objective(G: float, H: float, reg_lambda: float) -> float:
    return -.5 * G * G / (H + reg_lambda)


def _brute_force_split(x, g, h, reg_lambda, gamma_leaf, min_child_hessian):
    values = sorted(set(x.tolist()))
    before = _objective(g.sum(), h.sum(), reg_lambda)
    best = None
    for lower, upper in zip(values, values[1:]):
        threshold = (lower + upper) / 2.
        left = x <= threshold
        if h[left].sum() < min_child_hessian or h[~left].sum() < min_child_hessian:
            continue
        after = _objective(g[left].sum(), h[left].sum(), reg_lambda) + \
            _objective(g[~left].sum(), h[~left].sum(), reg_lambda)
        gain = before - after - gamma_leaf
        if best is None or gain > best[0]:
            best = (gain, threshold)
    if best is None or best[0] <= 0:
        return None
    return best


def test_softmax_grad_hess():
    g, h = softmax_grad_hess(np.zeros(3), 0)
    assert np.allclose(g, [-2 / 3, 1 / 3, 1 / 3], atol=1e-15)
    assert np.allclose(h, [2 / 9] * 3, atol=1e-15)

    g, h = softmax_grad_hess(np.array([60., 0., 0.]), 0)
    assert np.max(np.abs(g)) < 1e-20
    assert np.all(h >= 1e-16)

    logits = CanonicalRng(3).gaussian_array((50, 3))
    g, _ = softmax_grad_hess(logits, np.arange(50) % 3)
    assert np.allclose(g.sum(axis=1), 0., atol=1e-15)


def test_find_best_split():
    assert find_best_split(np.ones(5), np.arange(5), np.ones(5)) is None

    best = find_best_split(np.array([0., 1.]), np.array([-1., 1.]), np.ones(2), reg_lambda=0.)
    assert best.gain == pytest.approx(1.)
    assert best.threshold == .5

    rng = CanonicalRng(2023)
    for _ in range(1000):
        x = np.array([float(rng.randbelow(8)) for _ in range(20)])
        g = rng.gaussian_array(20)
        h = .1 + rng.uniform_array(20)
        expected = _brute_force_split(x, g, h, 1., 0., 1.)
        best = find_best_split(x, g, h, 1., 0., 1.)
        if expected is None:
            assert best is None
        else:
            assert abs(best.gain - expected[0]) < 1e-10
            assert best.threshold == expected[1]


def test_build_tree():
    tree = build_tree(np.zeros((2, 1)), np.array([1., 1.]), np.array([2., 2.]), max_depth=0)
    assert tree.is_leaf and tree.weight == pytest.approx(-.4)
    assert leaf_weight(2., 4., 1.) == pytest.approx(-.4)

    tree = build_tree(np.arange(6.).reshape(-1, 1), np.zeros(6), np.ones(6))
    assert tree.is_leaf and tree.weight == 0.

    X = np.arange(4.).reshape(-1, 1)
    tree = build_tree(X, np.array([-1., -1., 1., 1.]), np.ones(4), max_depth=1)
    assert not tree.is_leaf
    assert tree.feature == 0 and tree.threshold == 1.5
    assert tree.left.weight > 0 > tree.right.weight
    assert tree.depth() == 1
    assert np.allclose(tree.predict(X), [2 / 3, 2 / 3, -2 / 3, -2 / 3])

    # Ties are resolved towards the lowest feature
    X = np.stack((np.arange(4.), np.arange(4.)), axis=1)
    tree = build_tree(X, np.array([-1., -1., 1., 1.]), np.ones(4), max_depth=1)
    assert tree.feature == 0


def test_train_ensemble():
    X, y = _toy_set()
    config = GBDTConfig(n_rounds=20, max_depth=2)
    ensemble = train_ensemble(X, y, config)
    assert ensemble.n_trees == 60
    assert np.array_equal(np.argmax(ensemble.predict_proba(X), axis=1), y)
    for x, label in zip(X, y):
        _, probs = predict_ensemble(ensemble, x)
        assert int(np.argmax(probs)) == label

    history = ensemble.history
    assert len(history) == 21
    assert history[0] == pytest.approx(math.log(3.))
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    assert train_ensemble(X, y, config) == ensemble

    ensemble = train_ensemble(X, y, GBDTConfig(n_rounds=5, learning_rate=0.))
    assert np.allclose(ensemble.predict_logits(X), 0.)
    assert np.allclose(ensemble.history, math.log(3.))

    with pytest.warns(UserWarning):
        train_ensemble(X, np.zeros(30, dtype=int), GBDTConfig(n_rounds=2))
    with pytest.raises(ValueError):
        train_ensemble(X[:1], y[:1], config)
    with pytest.raises(ValueError):
        train_ensemble(X, y + 1, config)


def test_train_ensemble_defaults():
    X, y = _toy_set()
    ensemble = train_ensemble(X, y, GBDTConfig())
    assert ensemble.n_trees == 600
    assert np.array_equal(np.argmax(ensemble.predict_proba(X), axis=1), y)
    assert all(b <= a + 1e-12 for a, b in zip(ensemble.history, ensemble.history[1:]))


def test_predict_ensemble():
    ensemble = TreeEnsemble(GBDTConfig(), 23)
    logits, probs = predict_ensemble(ensemble, np.ones(23))
    assert np.array_equal(logits, np.zeros(3))
    assert np.allclose(probs, 1 / 3)

    ensemble = TreeEnsemble(GBDTConfig(n_rounds=1, learning_rate=.5), 2,
                            [[TreeNode(weight=1.), TreeNode(weight=-2.), TreeNode(weight=4.)]])
    logits, _ = predict_ensemble(ensemble, np.zeros(2))
    assert np.allclose(logits, [.5, -1., 2.])

    with pytest.raises(ValueError):
        predict_ensemble(ensemble, np.zeros(3))


def test_ensemble_serialization():
    X, y = _toy_set()
    ensemble = train_ensemble(X, y, GBDTConfig(n_rounds=8, max_depth=3),
                              feature_names=["a", "b"])
    data = ensemble.to_bytes()
    assert data[:4] == b"PGB1"

    restored = TreeEnsemble.from_bytes(data)
    assert restored.to_bytes() == data
    assert restored.feature_names == ["a", "b"]
    assert restored.history == ensemble.history
    assert np.allclose(restored.predict_proba(X), ensemble.predict_proba(X), atol=1e-5)

    f_out = os.path.join(get_temp_folder(), "model.pgb")
    restored.save(f_out)
    assert TreeEnsemble.load(f_out) == restored

    with pytest.raises(FormatError):
        TreeEnsemble.from_bytes(data[:-2])
    with pytest.raises(FormatError):
        TreeEnsemble.from_bytes(b"XGB1" + data[4:])


def _thresholds(tree: TreeNode) -> list[float]:
    return [node.threshold for node in tree.internal_nodes()]


def test_saved_ensemble_predictions():
    # Neighbouring values that no 32-bit float separates
    X = np.array([[.1], [.1], [.1 + 1e-9], [.1 + 1e-9]])
    config = GBDTConfig(n_rounds=3, max_depth=1, min_child_hessian=0., n_classes=2)
    ensemble = train_ensemble(X, np.array([0, 0, 1, 1]), config)
    restored = TreeEnsemble.from_bytes(ensemble.to_bytes())
    assert np.array_equal(restored.predict_logits(X), ensemble.predict_logits(X))

    # Dense values on the scale of the 32-bit spacing
    rng = CanonicalRng(31)
    X = .1 + 1e-7 * rng.uniform_array((60, 2))
    y = (X[:, 0] + X[:, 1] > np.median(X[:, 0] + X[:, 1])).astype(int) + \
        (X[:, 0] > np.quantile(X[:, 0], .8)).astype(int)
    ensemble = train_ensemble(X, y, GBDTConfig(n_rounds=10, max_depth=3,
                                               min_child_hessian=0.))
    restored = TreeEnsemble.from_bytes(ensemble.to_bytes())
    assert restored == ensemble
    assert np.array_equal(restored.predict_logits(X), ensemble.predict_logits(X))

    for round_trees in ensemble.trees:
        for tree in round_trees:
            for threshold in _thresholds(tree):
                assert threshold == float(np.float32(threshold))

    best = find_best_split(np.array([.1, .1 + 1e-9]), np.array([-1., 1.]), np.ones(2),
                           reg_lambda=0., min_child_hessian=0.)
    assert best is None
    best = find_best_split(np.array([1., 1. + 1e-6]), np.array([-1., 1.]), np.ones(2),
                           reg_lambda=0., min_child_hessian=0.)
    assert 1. <= best.threshold < 1. + 1e-6
    assert best.threshold == float(np.float32(best.threshold))


def test_tree_node_precision():
    leaf = TreeNode(weight=.1)
    assert leaf.weight == float(np.float32(.1))
    with pytest.raises(ValueError):
        TreeNode(weight=1e39)
    with pytest.raises(ValueError):
        TreeNode(feature=0, threshold=float("nan"), left=leaf, right=leaf)


def test_feature_importance():
    X, y = _toy_set()
    ensemble = train_ensemble(X, y, GBDTConfig(n_rounds=5, max_depth=2))
    importance = feature_importance(ensemble)
    assert importance.sum() == pytest.approx(1.)
    assert importance[0] > importance[1]
    assert top_features(ensemble, 1)[0][0] == "f0"

    assert not feature_importance(TreeEnsemble(GBDTConfig(), 4)).any()


def test_enhanced_features():
    out = ForwardOutput(KIND_CLAM_SB, np.zeros(3), np.zeros((1, 4)), np.full(100, .01), {})
    features = build_enhanced_features(out)
    assert len(features) == len(ENHANCED_FEATURE_NAMES) == 23
    named = dict(zip(ENHANCED_FEATURE_NAMES, features))
    assert np.allclose([named["prob_0"], named["prob_1"], named["prob_2"]], 1 / 3)
    assert named["log_patch_count"] == pytest.approx(math.log(101.))
    assert abs(named["attn_entropy"] - 4.60517) < 1e-5
    assert named["attn_normalized_entropy"] == pytest.approx(1.)
    assert abs(named["attn_gini"]) < 1e-12
    assert named["attn_top1"] == pytest.approx(.01)
    assert named["attn_skewness"] == 0. and named["attn_kurtosis"] == 0.

    out = ForwardOutput(KIND_CLAM_SB, np.array([1., 2., 3.]), np.zeros((1, 4)),
                        np.array([.2, .3, .5]), {})
    named = dict(zip(ENHANCED_FEATURE_NAMES, build_enhanced_features(out)))
    assert named["attn_top5_mass"] == pytest.approx(1.)
    assert named["attn_top10_mass"] == pytest.approx(1.)
    assert named["attn_top1"] == .5

    attention = np.array([[.5, .5], [.9, .1], [1., 0.]])
    out = ForwardOutput(KIND_ABMIL, np.array([0., 0., 5.]), np.zeros((3, 4)), attention, {})
    named = dict(zip(ENHANCED_FEATURE_NAMES, build_enhanced_features(out)))
    assert named["attn_top1"] == 1.
    assert named["attn_entropy"] == 0.

    with pytest.raises(ValueError):
        build_enhanced_features(out, np.array([.5, .6]))

    rng = CanonicalRng(77)
    for _ in range(50):
        raw = rng.uniform_array(rng.randint(1, 300))
        out = ForwardOutput(KIND_CLAM_SB, rng.gaussian_array(3), np.zeros((1, 2)),
                            raw / raw.sum(), {})
        assert np.all(np.isfinite(build_enhanced_features(out)))


def test_gini_and_entropy():
    assert gini_coefficient(np.array([0., 0., 1.])) == pytest.approx(2 / 3)
    assert gini_coefficient(np.zeros(4)) == 0.
    assert shannon_entropy(np.array([.5, .5])) == pytest.approx(math.log(2.))
    assert shannon_entropy(np.array([1., 0.])) == 0.


def test_build_gbdt_inputs():
    rng = CanonicalRng(21)
    bags = [rng.gaussian_array((rng.randint(3, 12), 6)) for _ in range(4)]

    model = MilModel.create(KIND_CLAM_SB, 6, seed=2, embed_dim=8, attn_hidden=4, cls_hidden=4)
    X, names = build_gbdt_inputs(model, bags)
    assert X.shape == (4, 23) and names == ENHANCED_FEATURE_NAMES
    X, names = build_gbdt_inputs(model, bags, concat_embedding=True)
    assert X.shape == (4, 31) and names[-1] == "embedding_7"

    model = MilModel.create(KIND_ABMIL, 6, seed=2, n_heads=2, head_hidden=4, bottleneck_dim=8)
    X, _ = build_gbdt_inputs(model, bags, concat_embedding=True)
    assert X.shape[0] == 4 and X.shape[1] > 23
    assert np.all(np.isfinite(X))


def test_plot_feature_importance():
    X, y = _toy_set()
    ensemble = train_ensemble(X, y, GBDTConfig(n_rounds=3, max_depth=2))
    ax = plot_feature_importance(ensemble, show=False)
    assert ax is not None
    plt.close("all")
