"""
Module provides regression trees grown by exact greedy split search on second-order
(gradient/hessian) statistics of a regularized objective -- the building blocks of
gradient-boosted tree ensembles.
"""
import logging
import numpy as np

from ..nn.core import softmax


logger = logging.getLogger(__name__)

HESSIAN_FLOOR = 1e-16


def softmax_grad_hess(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradient and (diagonal) hessian of the multiclass softmax log-loss w.r.t. the logits.

    Parameters
    ----------
    logits : `numpy.ndarray`
        Logits of a single sample (K) or of several samples (m x K).
    labels : `int` or `numpy.ndarray`
        Label(s) in {0, ..., K-1}.

    Returns
    -------
    `tuple[numpy.ndarray, numpy.ndarray]`
        g = p - onehot(y) and h = max(p (1 - p), 1e-16), both of the same shape as `logits`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("All logits must be finite")

    p = softmax(logits, axis=-1)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros_like(p)
    if p.ndim == 1:
        onehot[int(labels)] = 1.
    else:
        onehot[np.arange(p.shape[0]), labels] = 1.

    return p - onehot, np.maximum(p * (1. - p), HESSIAN_FLOOR)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """
    Optimal leaf weight -G / (H + lambda).
    """
    return -G / (H + reg_lambda)


def _split_gains(xs: np.ndarray, gs: np.ndarray, hs: np.ndarray, reg_lambda: float,
                 gamma_leaf: float, min_child_hessian: float) -> np.ndarray:
    # Rows are feature columns sorted by feature value; entry i scores the split
    # between positions i and i+1 (-inf if invalid).
    G_left = np.cumsum(gs, axis=1)[:, :-1]
    H_left = np.cumsum(hs, axis=1)[:, :-1]
    G = gs.sum(axis=1, keepdims=True)
    H = hs.sum(axis=1, keepdims=True)
    G_right = G - G_left
    H_right = H - H_left

    with np.errstate(divide="ignore", invalid="ignore"):
        gains = .5 * (G_left ** 2 / (H_left + reg_lambda) + G_right ** 2 / (H_right + reg_lambda)
                      - G ** 2 / (H + reg_lambda)) - gamma_leaf

    # A split needs a 32-bit threshold t with lower <= t < upper
    valid = (_ceil_float32(xs[:, :-1]) < xs[:, 1:]) & (H_left >= min_child_hessian) & \
        (H_right >= min_child_hessian) & np.isfinite(gains)
    return np.where(valid, gains, -np.inf)


def _ceil_float32(values: np.ndarray) -> np.ndarray:
    # Smallest 32-bit float >= value (inf beyond the 32-bit range)
    values = np.asarray(values, dtype=np.float64)
    with np.errstate(over="ignore"):
        rounded = values.astype(np.float32)
    rounded = np.where(rounded.astype(np.float64) < values,
                       np.nextafter(rounded, np.float32(np.inf)), rounded)
    return rounded.astype(np.float64)


def _midpoint(lower: float, upper: float) -> float:
    with np.errstate(over="ignore"):
        threshold = float(np.float32(.5 * (lower + upper)))
    if not lower <= threshold < upper:
        threshold = float(_ceil_float32(lower))
    return threshold


class SplitCandidate():
    """
    Best split of a single feature column.

    Parameters
    ----------
    gain : `float`
        Reduction of the regularized objective.
    threshold : `float`
        Threshold -- samples with a value <= threshold go to the left child.
    """
    def __init__(self, gain: float, threshold: float):
        self.__gain = float(gain)
        self.__threshold = float(threshold)

    @property
    def gain(self) -> float:
        return self.__gain

    @property
    def threshold(self) -> float:
        return self.__threshold

    def __str__(self) -> str:
        return f"gain: {self.__gain} threshold: {self.__threshold}"


def find_best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, reg_lambda: float = 1.,
                    gamma_leaf: float = 0., min_child_hessian: float = 1.) -> SplitCandidate:
    """
    Exact greedy search for the best split of a single feature column.

    The gain of a split is
    1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda)] - gamma_leaf,
    evaluated between consecutive distinct feature values. The threshold is their midpoint
    rounded to a 32-bit float; values that no 32-bit float separates are not split. Both
    children must carry a hessian sum of at least `min_child_hessian`. Ties are resolved
    towards the smallest threshold.

    Parameters
    ----------
    x : `numpy.ndarray`
        Feature values (need not be sorted).
    g : `numpy.ndarray`
        Gradients.
    h : `numpy.ndarray`
        Hessians.
    reg_lambda : `float`, optional
        L2 penalty on leaf weights.

        The default is 1.
    gamma_leaf : `float`, optional
        Penalty per leaf.

        The default is 0.
    min_child_hessian : `float`, optional
        Minimum hessian sum of a child.

        The default is 1.

    Returns
    -------
    :class:`~pathomil.gbdt.tree.SplitCandidate`
        Best split or None if no split has a positive gain.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    h = np.asarray(h, dtype=np.float64).ravel()
    if not x.shape == g.shape == h.shape:
        raise ValueError("'x', 'g', and 'h' must have the same length")
    if x.shape[0] < 2:
        return None

    order = np.argsort(x, kind="stable")
    xs = x[order][None, :]
    gains = _split_gains(xs, g[order][None, :], h[order][None, :], reg_lambda, gamma_leaf,
                         min_child_hessian)[0]

    best = int(np.argmax(gains))
    if not gains[best] > 0:
        return None
    return SplitCandidate(gains[best], _midpoint(xs[0, best], xs[0, best + 1]))


def _to_float32(value: float, name: str) -> float:
    with np.errstate(over="ignore"):
        rounded = float(np.float32(value))
    if not np.isfinite(rounded):
        raise ValueError(f"'{name}' must be finite and within the 32-bit float range")
    return rounded


class TreeNode():
    """
    Node of a regression tree -- either a leaf carrying a weight or an internal node
    carrying a split. Weights and thresholds are rounded to 32-bit floats, the precision
    of the PGB1 format, so that a tree evaluates identically before and after saving.

    Parameters
    ----------
    weight : `float`, optional
        Leaf weight -- None for internal nodes.

        The default is None.
    feature : `int`, optional
        Split feature of an internal node.

        The default is None.
    threshold : `float`, optional
        Split threshold -- samples with a value <= threshold go left.

        The default is None.
    left : :class:`~pathomil.gbdt.tree.TreeNode`, optional
        Left child.

        The default is None.
    right : :class:`~pathomil.gbdt.tree.TreeNode`, optional
        Right child.

        The default is None.
    gain : `float`, optional
        Gain of the split.

        The default is 0.
    """
    def __init__(self, weight: float = None, feature: int = None, threshold: float = None,
                 left: "TreeNode" = None, right: "TreeNode" = None, gain: float = 0.):
        if weight is None:
            if feature is None or threshold is None or left is None or right is None:
                raise ValueError("An internal node needs 'feature', 'threshold', 'left', " +
                                 "and 'right'")
            threshold = _to_float32(threshold, "threshold")
        else:
            weight = _to_float32(weight, "weight")

        self.__weight = weight
        self.__feature = None if feature is None else int(feature)
        self.__threshold = threshold
        self.__left = left
        self.__right = right
        self.__gain = float(gain)

    @property
    def is_leaf(self) -> bool:
        return self.__weight is not None

    @property
    def weight(self) -> float:
        return self.__weight

    @property
    def feature(self) -> int:
        return self.__feature

    @property
    def threshold(self) -> float:
        return self.__threshold

    @property
    def left(self) -> "TreeNode":
        return self.__left

    @property
    def right(self) -> "TreeNode":
        return self.__right

    @property
    def gain(self) -> float:
        return self.__gain

    def depth(self) -> int:
        """
        Depth of the (sub)tree -- 0 for a single leaf.
        """
        if self.is_leaf:
            return 0
        return 1 + max(self.__left.depth(), self.__right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.__left.n_leaves() + self.__right.n_leaves()

    def internal_nodes(self) -> list["TreeNode"]:
        """
        All internal nodes in pre-order.
        """
        if self.is_leaf:
            return []
        return [self] + self.__left.internal_nodes() + self.__right.internal_nodes()

    def predict(self, X: np.ndarray) -> np.ndarray:
        """
        Evaluates the tree.

        Parameters
        ----------
        X : `numpy.ndarray`
            Samples (m x d) or a single sample (d).

        Returns
        -------
        `numpy.ndarray`
            Leaf weights (m) or a single leaf weight.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            node = self
            while not node.is_leaf:
                node = node.left if X[node.feature] <= node.threshold else node.right
            return node.weight

        out = np.empty(X.shape[0])
        self.__predict_into(X, np.arange(X.shape[0]), out)
        return out

    def __predict_into(self, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
        if self.is_leaf:
            out[rows] = self.__weight
            return
        go_left = X[rows, self.__feature] <= self.__threshold
        self.__left.__predict_into(X, rows[go_left], out)
        self.__right.__predict_into(X, rows[~go_left], out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeNode):
            raise TypeError("Can not compare 'TreeNode' instance " +
                            f"with '{type(other)}' instance")

        if self.is_leaf or other.is_leaf:
            return self.is_leaf == other.is_leaf and self.__weight == other.weight
        return self.__feature == other.feature and self.__threshold == other.threshold and \
            self.__left == other.left and self.__right == other.right

    def __str__(self) -> str:
        if self.is_leaf:
            return f"leaf({self.__weight:.6g})"
        return f"[x{self.__feature} <= {self.__threshold:.6g}: {self.__left}, {self.__right}]"


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, max_depth: int = 6,
               reg_lambda: float = 1., gamma_leaf: float = 0., min_child_hessian: float = 1.,
               depth: int = 0, presorted: np.ndarray = None,
               samples: np.ndarray = None) -> TreeNode:
    """
    Grows a regression tree by recursive exact greedy splitting. Growth stops at
    `max_depth`, if no split has a positive gain, or if no split satisfies
    `min_child_hessian`. Leaves carry the weight -G/(H+lambda) rounded to a 32-bit float.
    Among equally good splits, the one of the lowest feature index (and then the lowest
    threshold) is chosen.

    Parameters
    ----------
    X : `numpy.ndarray`
        Features (m x d).
    g : `numpy.ndarray`
        Gradients (m).
    h : `numpy.ndarray`
        Hessians (m).
    max_depth : `int`, optional
        Maximum depth.

        The default is 6.
    reg_lambda : `float`, optional
        L2 penalty on leaf weights.

        The default is 1.
    gamma_leaf : `float`, optional
        Penalty per leaf.

        The default is 0.
    min_child_hessian : `float`, optional
        Minimum hessian sum of a child.

        The default is 1.
    depth : `int`, optional
        Depth of the node to be grown.

        The default is 0.
    presorted : `numpy.ndarray`, optional
        Stable argsort of every column of `X` (m x d) -- computed if None.

        The default is None.
    samples : `numpy.ndarray`, optional
        Boolean membership (m) of the samples in the node to be grown -- all samples if None.

        The default is None.

    Returns
    -------
    :class:`~pathomil.gbdt.tree.TreeNode`
        Tree.
    """
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("'X' must be a 2d array with at least one sample")
    if not X.shape[0] == g.shape[0] == h.shape[0]:
        raise ValueError("'X', 'g', and 'h' must contain the same number of samples")
    if presorted is None:
        presorted = np.argsort(X, axis=0, kind="stable")
    if samples is None:
        samples = np.ones(X.shape[0], dtype=bool)

    n = int(samples.sum())
    weight = leaf_weight(float(g[samples].sum()), float(h[samples].sum()), reg_lambda)
    if depth >= max_depth or n < 2:
        return TreeNode(weight=weight)

    # Per feature: indices of the node's samples in ascending feature order
    order = presorted.T
    node_order = order[samples[order]].reshape(X.shape[1], n)
    xs = X[node_order, np.arange(X.shape[1])[:, None]]
    gains = _split_gains(xs, g[node_order], h[node_order], reg_lambda, gamma_leaf,
                         min_child_hessian)

    best_pos = np.argmax(gains, axis=1)
    best_gain = gains[np.arange(X.shape[1]), best_pos]
    feature = int(np.argmax(best_gain))
    if not best_gain[feature] > 0:
        return TreeNode(weight=weight)

    pos = int(best_pos[feature])
    threshold = _midpoint(xs[feature, pos], xs[feature, pos + 1])
    go_left = X[:, feature] <= threshold
    logger.debug("depth %d: split x%d <= %.6g (gain %.6g, n=%d)", depth, feature, threshold,
                 best_gain[feature], n)

    kwds = {"max_depth": max_depth, "reg_lambda": reg_lambda, "gamma_leaf": gamma_leaf,
            "min_child_hessian": min_child_hessian, "depth": depth + 1,
            "presorted": presorted}
    left = build_tree(X, g, h, samples=samples & go_left, **kwds)
    right = build_tree(X, g, h, samples=samples & ~go_left, **kwds)
    return TreeNode(feature=feature, threshold=threshold, left=left, right=right,
                    gain=best_gain[feature])
