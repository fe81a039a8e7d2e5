"""
This module provides the metrics for evaluating slide-level risk classification.
"""
import warnings
import numpy as np
from sklearn.metrics import roc_auc_score as sklearn_roc_auc_score, confusion_matrix, \
    precision_recall_fscore_support
import matplotlib
import matplotlib.pyplot as plt

from .serialization import serializable, JsonSerializable, METRICS_REPORT_ID
from .data.bag import LABELS, LABEL_NAMES


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """
    Computes the area under the ROC curve of a binary problem -- i.e. the probability that
    a random positive is scored higher than a random negative, ties counting 1/2.

    Parameters
    ----------
    scores : `numpy.ndarray`
        Scores.
    positive : `numpy.ndarray`
        Boolean ground truth.

    Returns
    -------
    `float`
        ROC AUC score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape:
        raise ValueError(f"Shape mismatch: {scores.shape} vs. {positive.shape}")
    if positive.all() or not positive.any():
        raise ValueError("At least one positive and one negative sample are required")

    return float(sklearn_roc_auc_score(positive, scores))


def roc_auc_macro_ovr(probs: np.ndarray, labels: np.ndarray) -> float:
    """
    Computes the macro-averaged one-vs-rest ROC AUC. Classes without positive or without
    negative samples can not be scored -- they are skipped (with a warning) and the mean
    is taken over the remaining classes.

    Parameters
    ----------
    probs : `numpy.ndarray`
        Class probabilities (m x K).
    labels : `numpy.ndarray`
        Ground truth labels (m).

    Returns
    -------
    `float`
        Macro one-vs-rest ROC AUC.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"Shape mismatch: {probs.shape} vs. {labels.shape}")

    aucs, skipped = [], []
    for c in range(probs.shape[1]):
        positive = labels == c
        if positive.all() or not positive.any():
            skipped.append(c)
            continue
        aucs.append(binary_auc(probs[:, c], positive))

    if len(aucs) == 0:
        raise ValueError("No class can be scored -- every class needs at least one positive " +
                         "and one negative sample")
    if len(skipped) != 0:
        warnings.warn(f"Classes {skipped} can not be scored and are excluded from the AUC")
    return float(np.mean(aucs))


@serializable(METRICS_REPORT_ID, ".pmil_metrics")
class MetricsReport(JsonSerializable):
    """
    Classification metrics.

    Parameters
    ----------
    confusion : `list[list[int]]`
        Confusion matrix -- rows are true classes, columns are predicted classes.
    precision : `list[float]`
        Precision per class (0 if nothing was predicted as that class).
    recall : `list[float]`
        Recall per class (0 if the class does not occur).
    f1 : `list[float]`
        F1 score per class (0 if precision and recall are both 0).
    auc_macro_ovr : `float`, optional
        Macro one-vs-rest ROC AUC -- None if not available.

        The default is None.
    """
    def __init__(self, confusion: list[list[int]], precision: list[float],
                 recall: list[float], f1: list[float], auc_macro_ovr: float = None, **kwds):
        confusion = np.asarray(confusion, dtype=np.int64)
        if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
            raise ValueError("'confusion' must be a square matrix")
        if np.any(confusion < 0):
            raise ValueError("'confusion' can not contain negative counts")
        k = confusion.shape[0]
        if not len(precision) == len(recall) == len(f1) == k:
            raise ValueError(f"Per-class metrics must have {k} entries")
        for values in (precision, recall, f1):
            if any(not 0 <= v <= 1 for v in values):
                raise ValueError("Per-class metrics must be in [0, 1]")
        if auc_macro_ovr is not None and not 0 <= auc_macro_ovr <= 1:
            raise ValueError("'auc_macro_ovr' must be in [0, 1]")

        self.__confusion = confusion
        self.__precision = [float(v) for v in precision]
        self.__recall = [float(v) for v in recall]
        self.__f1 = [float(v) for v in f1]
        self.__auc_macro_ovr = None if auc_macro_ovr is None else float(auc_macro_ovr)

        super().__init__(**kwds)

    @property
    def confusion(self) -> np.ndarray:
        return self.__confusion.copy()

    @property
    def n_samples(self) -> int:
        return int(self.__confusion.sum())

    @property
    def accuracy(self) -> float:
        """
        Gets the accuracy -- i.e. trace of the confusion matrix over the number of samples.

        Returns
        -------
        `float`
            Accuracy.
        """
        n = self.n_samples
        return float(np.trace(self.__confusion)) / n if n > 0 else 0.

    @property
    def precision(self) -> list[float]:
        return list(self.__precision)

    @property
    def recall(self) -> list[float]:
        return list(self.__recall)

    @property
    def f1(self) -> list[float]:
        return list(self.__f1)

    @property
    def macro_f1(self) -> float:
        """
        Gets the unweighted mean of the per-class F1 scores (over all classes).

        Returns
        -------
        `float`
            Macro F1 score.
        """
        return float(np.mean(self.__f1))

    @property
    def auc_macro_ovr(self) -> float:
        return self.__auc_macro_ovr

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"confusion": self.__confusion.tolist(),
                                           "precision": self.__precision,
                                           "recall": self.__recall,
                                           "f1": self.__f1,
                                           "auc_macro_ovr": self.__auc_macro_ovr}

    def to_dict(self) -> dict:
        """
        All metrics as a JSON-compatible dictionary.
        """
        return self.get_attributes() | {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                                        "n_samples": self.n_samples}

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricsReport):
            raise TypeError("Can not compare 'MetricsReport' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        auc = "n/a" if self.__auc_macro_ovr is None else f"{self.__auc_macro_ovr:.3f}"
        return f"n: {self.n_samples} accuracy: {self.accuracy:.3f} " + \
            f"macro_f1: {self.macro_f1:.3f} auc: {auc}"


def metrics_from_predictions(y_pred: np.ndarray, y: np.ndarray,
                             probs: np.ndarray = None) -> MetricsReport:
    """
    Computes all metrics from predicted labels.

    Parameters
    ----------
    y_pred : `numpy.ndarray`
        Predicted labels.
    y : `numpy.ndarray`
        Ground truth labels.
    probs : `numpy.ndarray`, optional
        Class probabilities (m x 3) -- required for the AUC, which is None otherwise or if
        no class can be scored.

        The default is None.

    Returns
    -------
    :class:`~pathomil.metrics.MetricsReport`
        Metrics.
    """
    y_pred = np.asarray(y_pred, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if y_pred.shape != y.shape or y.ndim != 1:
        raise ValueError(f"Shape mismatch: {y_pred.shape} vs. {y.shape}")
    if y.shape[0] == 0:
        raise ValueError("Can not evaluate an empty set of predictions")

    labels = list(LABELS)
    confusion = confusion_matrix(y, y_pred, labels=labels)
    precision, recall, f1, _ = precision_recall_fscore_support(y, y_pred, labels=labels,
                                                               average=None, zero_division=0)

    auc = None
    if probs is not None:
        try:
            auc = roc_auc_macro_ovr(probs, y)
        except ValueError:
            warnings.warn("AUC is undefined -- no class has positive and negative samples")

    return MetricsReport(confusion, precision.tolist(), recall.tolist(), f1.tolist(), auc)


def evaluate_metrics(probs: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """
    Evaluates class probabilities -- the predicted class is the argmax (lowest index on
    ties).

    Parameters
    ----------
    probs : `numpy.ndarray`
        Class probabilities (m x 3).
    labels : `numpy.ndarray`
        Ground truth labels (m).

    Returns
    -------
    :class:`~pathomil.metrics.MetricsReport`
        Metrics.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != len(LABELS):
        raise ValueError(f"'probs' must be of shape (m, {len(LABELS)}) but not {probs.shape}")

    return metrics_from_predictions(np.argmax(probs, axis=1), labels, probs)


def plot_confusion_matrix(report: MetricsReport, show: bool = True,
                          ax: matplotlib.axes.Axes = None) -> matplotlib.axes.Axes:
    """
    Plots the confusion matrix of a report.

    Parameters
    ----------
    report : :class:`~pathomil.metrics.MetricsReport`
        Metrics.
    show : `bool`, optional
        If True, the plot/figure is shown in a window.

        Only considered when 'ax' is None.

        The default is True.
    ax : `matplotlib.axes.Axes`, optional
        If not None, 'ax' is used for plotting.

        The default is None.

    Returns
    -------
    `matplotlib.axes.Axes`
        Plot.
    """
    if not isinstance(report, MetricsReport):
        raise TypeError("'report' must be an instance of 'pathomil.metrics.MetricsReport' " +
                        f"but not of '{type(report)}'")
    if ax is not None and not isinstance(ax, matplotlib.axes.Axes):
        raise TypeError("'ax' must be an instance of 'matplotlib.axes.Axes' " +
                        f"but not of '{type(ax)}'")

    fig = None
    if ax is None:
        fig, ax = plt.subplots()

    confusion = report.confusion
    ax.imshow(confusion, cmap="Blues")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center")
    ticks = range(confusion.shape[0])
    ax.set_xticks(ticks, LABEL_NAMES[:confusion.shape[0]])
    ax.set_yticks(ticks, LABEL_NAMES[:confusion.shape[0]])
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")

    if show is True and fig is not None:
        plt.show()

    return ax
