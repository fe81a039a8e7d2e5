"""
Module provides multiclass gradient-boosted tree ensembles -- one regression tree per class
and boosting round, fitted to the gradients and hessians of the softmax log-loss -- and their
binary file format "PGB1".

PGB1 layout: magic "PGB1" | u32 LE JSON header length | JSON header (config, feature names,
per-feature split gains, training history) | pre-order serialization of every tree
(rounds x classes, round-major) where each node is u8 leaf flag followed by either an f32
weight (leaf) or an u16 feature index and an f32 threshold (internal node).
All numbers are little-endian.
"""
import logging
import struct
import warnings
import numpy as np
from tqdm import tqdm
import matplotlib
import matplotlib.pyplot as plt

from ..exceptions import FormatError
from ..nn.core import softmax, LOG_CLAMP
from ..serialization import serializable, JsonSerializable, GBDT_CONFIG_ID, \
    pack_container, unpack_container, atomic_write
from .tree import TreeNode, build_tree, softmax_grad_hess


logger = logging.getLogger(__name__)

PGB1_MAGIC = b"PGB1"
PGB1_VERSION = 1

_LEAF = struct.Struct("<Bf")
_SPLIT = struct.Struct("<BHf")


@serializable(GBDT_CONFIG_ID, ".pmil_gbdt")
class GBDTConfig(JsonSerializable):
    """
    Configuration of a gradient-boosted tree ensemble. The regularized objective penalizes
    every tree by gamma_leaf * (number of leaves) + 1/2 * reg_lambda * ||leaf weights||^2.

    Parameters
    ----------
    n_rounds : `int`, optional
        Number of boosting rounds.

        The default is 200.
    learning_rate : `float`, optional
        Shrinkage of every tree.

        The default is 0.1
    max_depth : `int`, optional
        Maximum depth of the trees.

        The default is 6.
    reg_lambda : `float`, optional
        L2 penalty on leaf weights.

        The default is 1.
    gamma_leaf : `float`, optional
        Penalty per leaf.

        The default is 0.
    min_child_hessian : `float`, optional
        Minimum hessian sum of a child node.

        The default is 1.
    n_classes : `int`, optional
        Number of classes.

        The default is 3.
    """
    def __init__(self, n_rounds: int = 200, learning_rate: float = .1, max_depth: int = 6,
                 reg_lambda: float = 1., gamma_leaf: float = 0., min_child_hessian: float = 1.,
                 n_classes: int = 3, **kwds):
        if not isinstance(n_rounds, int) or n_rounds < 0:
            raise ValueError("'n_rounds' must be a nonnegative integer")
        if not isinstance(learning_rate, (int, float)):
            raise TypeError("'learning_rate' must be an instance of 'float' " +
                            f"but not of '{type(learning_rate)}'")
        if learning_rate < 0:
            raise ValueError("'learning_rate' can not be negative")
        if not isinstance(max_depth, int) or max_depth < 0:
            raise ValueError("'max_depth' must be a nonnegative integer")
        if reg_lambda < 0 or gamma_leaf < 0 or min_child_hessian < 0:
            raise ValueError("'reg_lambda', 'gamma_leaf', and 'min_child_hessian' can not be " +
                             "negative")
        if not isinstance(n_classes, int) or n_classes < 2:
            raise ValueError("'n_classes' must be an integer >= 2")

        self.__n_rounds = n_rounds
        self.__learning_rate = float(learning_rate)
        self.__max_depth = max_depth
        self.__reg_lambda = float(reg_lambda)
        self.__gamma_leaf = float(gamma_leaf)
        self.__min_child_hessian = float(min_child_hessian)
        self.__n_classes = n_classes

        super().__init__(**kwds)

    @property
    def n_rounds(self) -> int:
        return self.__n_rounds

    @property
    def learning_rate(self) -> float:
        return self.__learning_rate

    @property
    def max_depth(self) -> int:
        return self.__max_depth

    @property
    def reg_lambda(self) -> float:
        return self.__reg_lambda

    @property
    def gamma_leaf(self) -> float:
        return self.__gamma_leaf

    @property
    def min_child_hessian(self) -> float:
        return self.__min_child_hessian

    @property
    def n_classes(self) -> int:
        return self.__n_classes

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"n_rounds": self.__n_rounds,
                                           "learning_rate": self.__learning_rate,
                                           "max_depth": self.__max_depth,
                                           "reg_lambda": self.__reg_lambda,
                                           "gamma_leaf": self.__gamma_leaf,
                                           "min_child_hessian": self.__min_child_hessian,
                                           "n_classes": self.__n_classes}

    def __eq__(self, other) -> bool:
        if not isinstance(other, GBDTConfig):
            raise TypeError("Can not compare 'GBDTConfig' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        return " ".join(f"{key}: {value}" for key, value in self.get_attributes().items())


class TreeEnsemble():
    """
    Gradient-boosted tree ensemble (base logits 0).

    Parameters
    ----------
    config : :class:`~pathomil.gbdt.ensemble.GBDTConfig`
        Configuration.
    n_features : `int`
        Number of input features.
    trees : `list[list[TreeNode]]`, optional
        Trees of every round -- one per class.

        The default is an empty ensemble.
    feature_names : `list[str]`, optional
        Names of the input features -- "f<index>" if None.

        The default is None.
    split_gain : `numpy.ndarray`, optional
        Total split gain per feature -- derived from the trees if None.

        The default is None.
    history : `list[float]`, optional
        Training log-loss before the first and after every round.

        The default is None.
    """
    def __init__(self, config: GBDTConfig, n_features: int, trees: list[list[TreeNode]] = None,
                 feature_names: list[str] = None, split_gain: np.ndarray = None,
                 history: list[float] = None):
        if not isinstance(config, GBDTConfig):
            raise TypeError("'config' must be an instance of 'pathomil.gbdt.GBDTConfig' " +
                            f"but not of '{type(config)}'")
        if not isinstance(n_features, int) or not 1 <= n_features <= 0xFFFF:
            raise ValueError("'n_features' must be an integer in [1, 65535]")
        trees = [] if trees is None else [list(round_trees) for round_trees in trees]
        if any(len(round_trees) != config.n_classes for round_trees in trees):
            raise ValueError(f"Every round must consist of {config.n_classes} trees")
        if feature_names is None:
            feature_names = [f"f{i}" for i in range(n_features)]
        if len(feature_names) != n_features:
            raise ValueError(f"Expected {n_features} feature names but got {len(feature_names)}")

        if split_gain is None:
            split_gain = np.zeros(n_features)
            for round_trees in trees:
                for tree in round_trees:
                    for node in tree.internal_nodes():
                        split_gain[node.feature] += node.gain
        split_gain = np.asarray(split_gain, dtype=np.float64)
        if split_gain.shape != (n_features,):
            raise ValueError(f"'split_gain' must be of shape ({n_features},)")

        self.__config = config
        self.__n_features = n_features
        self.__trees = trees
        self.__feature_names = list(feature_names)
        self.__split_gain = split_gain
        self.__history = [] if history is None else [float(v) for v in history]

    @property
    def config(self) -> GBDTConfig:
        return self.__config

    @property
    def n_features(self) -> int:
        return self.__n_features

    @property
    def n_rounds(self) -> int:
        return len(self.__trees)

    @property
    def trees(self) -> list[list[TreeNode]]:
        """
        Gets the trees.

        Returns
        -------
        `list[list[TreeNode]]`
            Trees of every round (one per class).
        """
        return [list(round_trees) for round_trees in self.__trees]

    @property
    def n_trees(self) -> int:
        return len(self.__trees) * self.__config.n_classes

    @property
    def feature_names(self) -> list[str]:
        return list(self.__feature_names)

    @property
    def split_gain(self) -> np.ndarray:
        return self.__split_gain.copy()

    @property
    def history(self) -> list[float]:
        return list(self.__history)

    def predict_logits(self, X: np.ndarray) -> np.ndarray:
        """
        Computes the logits of several samples.

        Parameters
        ----------
        X : `numpy.ndarray`
            Features (m x n_features).

        Returns
        -------
        `numpy.ndarray`
            Logits (m x n_classes).
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.__n_features:
            raise ValueError(f"'X' must be of shape (m, {self.__n_features}) but not {X.shape}")

        logits = np.zeros((X.shape[0], self.__config.n_classes))
        for round_trees in self.__trees:
            for c, tree in enumerate(round_trees):
                logits[:, c] += self.__config.learning_rate * tree.predict(X)
        return logits

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.predict_logits(X), axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeEnsemble):
            raise TypeError("Can not compare 'TreeEnsemble' instance " +
                            f"with '{type(other)}' instance")

        return self.__config == other.config and self.__n_features == other.n_features and \
            self.__feature_names == other.feature_names and self.__trees == other.trees

    def __str__(self) -> str:
        return f"{self.n_rounds} rounds x {self.__config.n_classes} trees " + \
            f"on {self.__n_features} features"

    def to_bytes(self) -> bytes:
        """
        Serializes this ensemble to the PGB1 format. Weights and thresholds are stored as
        32-bit floats.

        Returns
        -------
        `bytes`
            PGB1 bytes.
        """
        header = {"format_version": PGB1_VERSION, "config": self.__config.get_attributes(),
                  "n_features": self.__n_features, "n_rounds": self.n_rounds,
                  "feature_names": self.__feature_names,
                  "split_gain": [float(v) for v in self.__split_gain],
                  "history": self.__history}

        payload = bytearray()
        for round_trees in self.__trees:
            for tree in round_trees:
                _write_tree(tree, payload)
        return pack_container(PGB1_MAGIC, header, bytes(payload))

    @staticmethod
    def from_bytes(data: bytes) -> "TreeEnsemble":
        """
        Deserializes an ensemble from the PGB1 format.

        Parameters
        ----------
        data : `bytes`
            PGB1 bytes.

        Returns
        -------
        :class:`~pathomil.gbdt.ensemble.TreeEnsemble`
            Ensemble.
        """
        header, offset = unpack_container(data, PGB1_MAGIC)
        try:
            if header["format_version"] != PGB1_VERSION:
                raise FormatError(f"Unsupported PGB1 version {header['format_version']}",
                                  offset=8)
            config = GBDTConfig(**header["config"])
            n_features = int(header["n_features"])
            n_rounds = int(header["n_rounds"])
            feature_names = [str(name) for name in header["feature_names"]]
            split_gain = np.array(header["split_gain"], dtype=np.float64)
            history = [float(v) for v in header["history"]]
        except (KeyError, TypeError, ValueError) as ex:
            if isinstance(ex, FormatError):
                raise
            raise FormatError(f"Invalid PGB1 header: {ex!r}", offset=8) from ex

        trees = []
        for _ in range(n_rounds):
            round_trees = []
            for _ in range(config.n_classes):
                tree, offset = _read_tree(data, offset, n_features, config.max_depth)
                round_trees.append(tree)
            trees.append(round_trees)
        if offset != len(data):
            raise FormatError(f"Trailing data: expected {offset} bytes but got {len(data)}",
                              offset=offset)

        try:
            return TreeEnsemble(config, n_features, trees, feature_names, split_gain, history)
        except ValueError as ex:
            raise FormatError(f"Inconsistent PGB1 header: {ex}", offset=8) from ex

    def save(self, f_out: str) -> None:
        """
        Writes this ensemble to a PGB1 file (atomically).
        """
        atomic_write(f_out, self.to_bytes())

    @staticmethod
    def load(f_in: str) -> "TreeEnsemble":
        """
        Loads an ensemble from a PGB1 file.
        """
        with open(f_in, "rb") as f:
            return TreeEnsemble.from_bytes(f.read())


def _write_tree(node: TreeNode, out: bytearray) -> None:
    if node.is_leaf:
        out += _LEAF.pack(1, node.weight)
    else:
        out += _SPLIT.pack(0, node.feature, node.threshold)
        _write_tree(node.left, out)
        _write_tree(node.right, out)


def _read_tree(data: bytes, offset: int, n_features: int,
               max_depth: int, depth: int = 0) -> tuple[TreeNode, int]:
    if offset >= len(data):
        raise FormatError("Truncated tree data", offset=offset)

    if data[offset] == 1:
        if offset + _LEAF.size > len(data):
            raise FormatError("Truncated leaf record", offset=offset)
        _, weight = _LEAF.unpack_from(data, offset)
        if not np.isfinite(weight):
            raise FormatError("Leaf weight is not finite", offset=offset)
        return TreeNode(weight=weight), offset + _LEAF.size
    if data[offset] != 0:
        raise FormatError(f"Invalid node flag {data[offset]}", offset=offset)

    if depth >= max_depth:
        raise FormatError(f"Tree is deeper than max_depth={max_depth}", offset=offset)
    if offset + _SPLIT.size > len(data):
        raise FormatError("Truncated split record", offset=offset)
    _, feature, threshold = _SPLIT.unpack_from(data, offset)
    if feature >= n_features or not np.isfinite(threshold):
        raise FormatError(f"Invalid split (feature {feature}, threshold {threshold})",
                          offset=offset)

    left, offset = _read_tree(data, offset + _SPLIT.size, n_features, max_depth, depth + 1)
    right, offset = _read_tree(data, offset, n_features, max_depth, depth + 1)
    return TreeNode(feature=feature, threshold=threshold, left=left, right=right), offset


def log_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """
    Mean multiclass softmax log-loss.
    """
    p = softmax(logits, axis=1)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], LOG_CLAMP))))


def train_ensemble(X: np.ndarray, y: np.ndarray, config: GBDTConfig = None,
                   feature_names: list[str] = None, verbose: bool = False) -> TreeEnsemble:
    """
    Trains a gradient-boosted tree ensemble. In every round, one tree per class is fitted
    to the gradients and hessians of the current logits, after which all logits are
    updated by `learning_rate` times the tree outputs.

    Parameters
    ----------
    X : `numpy.ndarray`
        Features (m x d) -- m >= 2.
    y : `numpy.ndarray`
        Labels (m) in {0, ..., n_classes - 1}.
    config : :class:`~pathomil.gbdt.ensemble.GBDTConfig`, optional
        Configuration -- default configuration if None.

        The default is None.
    feature_names : `list[str]`, optional
        Names of the features.

        The default is None.
    verbose : `bool`, optional
        If True, a progress bar is shown.

        The default is False.

    Returns
    -------
    :class:`~pathomil.gbdt.ensemble.TreeEnsemble`
        Trained ensemble -- its history holds the training log-loss before the first and
        after every round.
    """
    config = GBDTConfig() if config is None else config
    if not isinstance(config, GBDTConfig):
        raise TypeError("'config' must be an instance of 'pathomil.gbdt.GBDTConfig' " +
                        f"but not of '{type(config)}'")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("'X' must be a 2d array with at least two samples")
    if y.shape != (X.shape[0],):
        raise ValueError(f"'y' must be of shape ({X.shape[0]},) but not {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("All features must be finite")
    if np.any(y < 0) or np.any(y >= config.n_classes):
        raise ValueError(f"Labels must be in [0, {config.n_classes - 1}]")
    if len(np.unique(y)) < 2:
        warnings.warn("Training labels contain a single class only")

    presorted = np.argsort(X, axis=0, kind="stable")
    logits = np.zeros((X.shape[0], config.n_classes))
    history = [log_loss(logits, y)]
    trees = []
    for r in tqdm(range(config.n_rounds), desc="Boosting", disable=not verbose):
        g, h = softmax_grad_hess(logits, y)
        round_trees = [build_tree(X, g[:, c], h[:, c], config.max_depth, config.reg_lambda,
                                  config.gamma_leaf, config.min_child_hessian,
                                  presorted=presorted)
                       for c in range(config.n_classes)]
        for c, tree in enumerate(round_trees):
            logits[:, c] += config.learning_rate * tree.predict(X)
        trees.append(round_trees)
        history.append(log_loss(logits, y))
        logger.debug("round %d: log-loss %.6f, leaves %s", r, history[-1],
                     [tree.n_leaves() for tree in round_trees])

    return TreeEnsemble(config, X.shape[1], trees, feature_names, history=history)


def predict_ensemble(ensemble: TreeEnsemble, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Predicts a single sample.

    Parameters
    ----------
    ensemble : :class:`~pathomil.gbdt.ensemble.TreeEnsemble`
        Ensemble.
    x : `numpy.ndarray`
        Features of the sample.

    Returns
    -------
    `tuple[numpy.ndarray, numpy.ndarray]`
        Logits and class probabilities.
    """
    if not isinstance(ensemble, TreeEnsemble):
        raise TypeError("'ensemble' must be an instance of 'pathomil.gbdt.TreeEnsemble' " +
                        f"but not of '{type(ensemble)}'")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ensemble.n_features,):
        raise ValueError(f"Expected {ensemble.n_features} features but got {x.shape}")

    logits = ensemble.predict_logits(x.reshape(1, -1))[0]
    return logits, softmax(logits)


def feature_importance(ensemble: TreeEnsemble) -> np.ndarray:
    """
    Gain-based feature importance -- i.e. the total gain of all splits on a feature,
    normalized to sum 1 (all zeros if the ensemble contains no split).

    Parameters
    ----------
    ensemble : :class:`~pathomil.gbdt.ensemble.TreeEnsemble`
        Ensemble.

    Returns
    -------
    `numpy.ndarray`
        Importance per feature.
    """
    gain = ensemble.split_gain
    total = gain.sum()
    if total <= 0:
        return np.zeros_like(gain)
    return gain / total


def top_features(ensemble: TreeEnsemble, k: int = 10) -> list[tuple[str, float]]:
    """
    The k most important features as (name, importance) pairs -- ties are resolved towards
    the lower feature index.
    """
    importance = feature_importance(ensemble)
    order = np.argsort(-importance, kind="stable")[:k]
    names = ensemble.feature_names
    return [(names[i], float(importance[i])) for i in order]


def plot_feature_importance(ensemble: TreeEnsemble, k: int = 10, show: bool = True,
                            ax: matplotlib.axes.Axes = None) -> matplotlib.axes.Axes:
    """
    Plots the k most important features as horizontal bars.

    Parameters
    ----------
    ensemble : :class:`~pathomil.gbdt.ensemble.TreeEnsemble`
        Ensemble.
    k : `int`, optional
        Number of features.

        The default is 10.
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
    if ax is not None and not isinstance(ax, matplotlib.axes.Axes):
        raise TypeError("'ax' must be an instance of 'matplotlib.axes.Axes' " +
                        f"but not of '{type(ax)}'")

    fig = None
    if ax is None:
        fig, ax = plt.subplots()

    top = top_features(ensemble, k)[::-1]
    ax.barh([name for name, _ in top], [value for _, value in top])
    ax.set_xlabel("Normalized gain")

    if show is True and fig is not None:
        plt.show()

    return ax
