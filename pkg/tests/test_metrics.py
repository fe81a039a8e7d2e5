"""
Module provides tests to test the `pathomil.metrics` module.
"""
import numpy as np
import pytest
import matplotlib.pyplot as plt

from pathomil.rng import CanonicalRng
from pathomil.metrics import binary_auc, roc_auc_macro_ovr, MetricsReport, \
    metrics_from_predictions, evaluate_metrics, plot_confusion_matrix


def _best_fold_predictions() -> tuple[np.ndarray, np.ndarray]:
    # 12/12 low, 1/2 medium, 4/7 high
    y = np.array([0] * 12 + [1] * 2 + [2] * 7)
    y_pred = np.array([0] * 12 + [1, 2] + [2] * 4 + [1, 1, 0])
    return y_pred, y


def test_best_fold_accuracy():
    y_pred, y = _best_fold_predictions()
    report = metrics_from_predictions(y_pred, y)
    assert abs(report.accuracy - .8095) < 5e-4
    assert f"{report.accuracy:.3f}" == "0.810"
    assert report.recall == pytest.approx([1., .5, 4 / 7])
    assert report.confusion.tolist() == [[12, 0, 0], [0, 1, 1], [1, 2, 4]]
    assert report.n_samples == 21
    assert report.auc_macro_ovr is None

    support = report.confusion.sum(axis=1)
    assert np.sum(np.array(report.recall) * support) == pytest.approx(np.trace(report.confusion))


def test_evaluate_metrics():
    probs = np.eye(3)[[0, 1, 2, 2, 1, 0]]
    report = evaluate_metrics(probs, np.array([0, 1, 2, 2, 1, 0]))
    assert report.accuracy == 1. and report.macro_f1 == 1.
    assert report.auc_macro_ovr == 1.

    # Class 2 is neither present nor predicted
    probs = np.array([[.8, .2, 0.], [.3, .7, 0.], [.6, .4, 0.]])
    with pytest.warns(UserWarning):
        report = evaluate_metrics(probs, np.array([0, 1, 0]))
    assert report.f1 == [1., 1., 0.]
    assert report.macro_f1 == pytest.approx(2 / 3)
    assert report.auc_macro_ovr == 1.

    # Ties are resolved towards the lowest class
    report = evaluate_metrics(np.full((2, 3), 1 / 3), np.array([0, 0]))
    assert report.accuracy == 1.

    with pytest.raises(ValueError):
        evaluate_metrics(np.zeros((2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        metrics_from_predictions(np.array([], dtype=int), np.array([], dtype=int))


def test_binary_auc():
    scores = np.array([.9, .5, .5, .1])
    positive = np.array([True, True, False, False])
    assert binary_auc(scores, positive) == pytest.approx(.875)
    assert binary_auc(np.exp(3. * scores), positive) == pytest.approx(.875)
    assert binary_auc(np.array([.1, .2, .8, .9]), np.array([0, 0, 1, 1])) == 1.

    rng = CanonicalRng(9)
    scores = rng.uniform_array(10000)
    positive = rng.uniform_array(10000) < .5
    assert abs(binary_auc(scores, positive) - .5) < .02

    with pytest.raises(ValueError):
        binary_auc(scores, np.ones(10000, dtype=bool))


def test_roc_auc_macro_ovr():
    labels = np.array([0, 0, 1, 1, 2, 2])
    probs = np.array([[.8, .1, .1], [.6, .3, .1], [.2, .7, .1],
                      [.1, .5, .4], [.1, .2, .7], [.3, .1, .6]])
    assert roc_auc_macro_ovr(probs, labels) == 1.

    with pytest.raises(ValueError):
        roc_auc_macro_ovr(probs[:2], labels[:2] * 0)


def test_metrics_report():
    y_pred, y = _best_fold_predictions()
    report = metrics_from_predictions(y_pred, y)
    assert MetricsReport(**report.get_attributes()) == report

    values = report.to_dict()
    assert values["n_samples"] == 21
    assert values["macro_f1"] == pytest.approx(report.macro_f1)

    with pytest.raises(ValueError):
        MetricsReport([[1, 0], [0, -1]], [1., 1.], [1., 1.], [1., 1.])
    with pytest.raises(ValueError):
        MetricsReport([[1]], [1.], [1.], [1.], auc_macro_ovr=1.5)

    ax = plot_confusion_matrix(report, show=False)
    assert ax is not None
    plt.close("all")
