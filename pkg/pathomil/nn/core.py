"""
Module provides the dense numeric kernel -- i.e. affine layers, activations, dropout,
label smoothing, and the losses all MIL heads are trained with.

All computations are carried out in double precision.
"""
import math
import numpy as np
from scipy.special import expit, erf

from ..rng import CanonicalRng
from ..serialization import serializable, JsonSerializable, FOCAL_LOSS_CONFIG_ID


MODE_TRAIN = "train"
MODE_EVAL = "eval"

LOG_CLAMP = 1e-12

_GELU_C = math.sqrt(2. / math.pi)
_GELU_K = 0.044715


class AffineParams():
    """
    Parameters of a fully connected layer -- i.e. y = W x + b.

    Parameters
    ----------
    weight : `numpy.ndarray`
        Weight matrix of shape (out, in).
    bias : `numpy.ndarray`
        Bias vector of shape (out,).
    """
    def __init__(self, weight: np.ndarray, bias: np.ndarray, **kwds):
        if not isinstance(weight, np.ndarray):
            raise TypeError("'weight' must be an instance of 'numpy.ndarray' " +
                            f"but not of '{type(weight)}'")
        if not isinstance(bias, np.ndarray):
            raise TypeError("'bias' must be an instance of 'numpy.ndarray' " +
                            f"but not of '{type(bias)}'")
        if weight.ndim != 2:
            raise ValueError("'weight' must be a 2d array")
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"Dimension mismatch: weight {weight.shape} vs. bias {bias.shape}")

        self.__weight = weight
        self.__bias = bias

        super().__init__(**kwds)

    @property
    def weight(self) -> np.ndarray:
        """
        Gets the weight matrix.

        Returns
        -------
        `numpy.ndarray`
            Weight matrix (out x in).
        """
        return self.__weight

    @property
    def bias(self) -> np.ndarray:
        """
        Gets the bias vector.

        Returns
        -------
        `numpy.ndarray`
            Bias vector.
        """
        return self.__bias

    @property
    def in_dim(self) -> int:
        """
        Gets the input dimensionality.

        Returns
        -------
        `int`
            Input dimensionality.
        """
        return self.__weight.shape[1]

    @property
    def out_dim(self) -> int:
        """
        Gets the output dimensionality.

        Returns
        -------
        `int`
            Output dimensionality.
        """
        return self.__weight.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffineParams):
            raise TypeError("Can not compare 'AffineParams' instance " +
                            f"with '{type(other)}' instance")

        return np.array_equal(self.__weight, other.weight) and \
            np.array_equal(self.__bias, other.bias)

    def __str__(self) -> str:
        return f"weight: {self.__weight.shape} bias: {self.__bias.shape}"


def affine(x: np.ndarray, p: AffineParams) -> np.ndarray:
    """
    Applies a fully connected layer to a single vector or to every row of a matrix.

    Parameters
    ----------
    x : `numpy.ndarray`
        Input vector (in,) or matrix (n, in).
    p : :class:`~pathomil.nn.core.AffineParams`
        Layer parameters.

    Returns
    -------
    `numpy.ndarray`
        W x + b -- shape (out,) or (n, out).
    """
    if not isinstance(p, AffineParams):
        raise TypeError(f"'p' must be an instance of 'AffineParams' but not of '{type(p)}'")
    if x.shape[-1] != p.in_dim:
        raise ValueError(f"Dimension mismatch: input has {x.shape[-1]} features " +
                         f"but the layer expects {p.in_dim}")

    return x @ p.weight.T + p.bias


def gelu(x):
    """
    GELU activation (tanh approximation), element-wise.

    Parameters
    ----------
    x : `float` or `numpy.ndarray`
        Input.

    Returns
    -------
    `float` or `numpy.ndarray`
        0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    """
    return 0.5 * x * (1. + np.tanh(_GELU_C * (x + _GELU_K * x ** 3)))


def gelu_grad(x):
    """
    Derivative of :func:`~pathomil.nn.core.gelu`, element-wise.
    """
    t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))
    return 0.5 * (1. + t) + 0.5 * x * (1. - t * t) * _GELU_C * (1. + 3. * _GELU_K * x * x)


def gelu_exact(x):
    """
    GELU activation with the exact Gaussian CDF -- i.e. x * Phi(x).
    Only used as a reference for the tanh approximation.
    """
    return 0.5 * x * (1. + erf(x / math.sqrt(2.)))


def sigmoid(x):
    """
    Logistic sigmoid, element-wise.
    """
    return expit(x)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Numerically stable softmax (max-subtraction).

    Parameters
    ----------
    v : `numpy.ndarray`
        Scores.
    axis : `int`, optional
        Axis along which the probabilities are normalized.

        The default is -1.

    Returns
    -------
    `numpy.ndarray`
        Probabilities.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("Can not apply softmax to an empty vector")

    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def dropout_mask(shape, rate: float, rng: CanonicalRng) -> np.ndarray:
    """
    Draws an inverted-dropout mask -- i.e. entries are 0 with probability `rate` and
    1/(1-rate) otherwise.

    Parameters
    ----------
    shape : `int` or `tuple[int]`
        Shape of the mask.
    rate : `float`
        Dropout rate in [0, 1).
    rng : :class:`~pathomil.rng.CanonicalRng`
        Random number generator.

    Returns
    -------
    `numpy.ndarray`
        Mask.
    """
    if not 0 <= rate < 1:
        raise ValueError("'rate' must be in [0, 1)")

    if rate == 0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.uniform_array(shape) >= rate
    return keep.astype(np.float64) / (1. - rate)


def dropout(v: np.ndarray, rate: float, mode: str, rng: CanonicalRng = None) -> np.ndarray:
    """
    Applies inverted dropout.

    Parameters
    ----------
    v : `numpy.ndarray`
        Input.
    rate : `float`
        Dropout rate in [0, 1).
    mode : `str`
        Either :attr:`~pathomil.nn.core.MODE_TRAIN` or :attr:`~pathomil.nn.core.MODE_EVAL`.
        In evaluation mode, the input is returned unchanged.
    rng : :class:`~pathomil.rng.CanonicalRng`, optional
        Random number generator -- required in training mode.

        The default is None.

    Returns
    -------
    `numpy.ndarray`
        Output.
    """
    if not 0 <= rate < 1:
        raise ValueError("'rate' must be in [0, 1)")
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ValueError(f"Unknown mode '{mode}'")

    if mode == MODE_EVAL or rate == 0:
        return v
    if rng is None:
        raise ValueError("'rng' is required in training mode")

    return v * dropout_mask(v.shape, rate, rng)


def smooth_labels(class_index: int, eps: float, n_classes: int) -> np.ndarray:
    """
    Converts a hard label into a smoothed target distribution --
    i.e. (1 - eps) * onehot + eps / K.

    Parameters
    ----------
    class_index : `int`
        Class label.
    eps : `float`
        Smoothing factor in [0, 1).
    n_classes : `int`
        Number of classes K.

    Returns
    -------
    `numpy.ndarray`
        Target distribution.
    """
    if not isinstance(n_classes, int) or n_classes < 2:
        raise ValueError("'n_classes' must be an integer >= 2")
    if not 0 <= class_index < n_classes:
        raise ValueError(f"Class index {class_index} out of range [0, {n_classes})")
    if not 0 <= eps < 1:
        raise ValueError("'eps' must be in [0, 1)")

    y = np.full(n_classes, eps / n_classes)
    y[class_index] += 1. - eps
    return y


@serializable(FOCAL_LOSS_CONFIG_ID, ".pmil_focal")
class FocalLossConfig(JsonSerializable):
    """
    Configuration of the focal loss with label smoothing.

    Parameters
    ----------
    alpha : `list[float]`, optional
        Per-class weights alpha_t.

        The default is (1, 3, 1) -- i.e. the medium risk class is up-weighted.
    gamma : `float`, optional
        Focusing exponent.

        The default is 2.
    smoothing_eps : `float`, optional
        Label smoothing factor.

        The default is 0.1
    """
    def __init__(self, alpha: list[float] = (1., 3., 1.), gamma: float = 2.,
                 smoothing_eps: float = .1, **kwds):
        alpha = [float(a) for a in alpha]
        if len(alpha) < 2:
            raise ValueError("'alpha' must contain a weight for at least two classes")
        if any(a <= 0 or not math.isfinite(a) for a in alpha):
            raise ValueError("All entries of 'alpha' must be positive")
        if not isinstance(gamma, (int, float)) or gamma < 0:
            raise ValueError("'gamma' must be a nonnegative number")
        if not isinstance(smoothing_eps, (int, float)) or not 0 <= smoothing_eps < 1:
            raise ValueError("'smoothing_eps' must be in [0, 1)")

        self.__alpha = alpha
        self.__gamma = float(gamma)
        self.__smoothing_eps = float(smoothing_eps)

        super().__init__(**kwds)

    @property
    def alpha(self) -> list[float]:
        """
        Gets the per-class weights.

        Returns
        -------
        `list[float]`
            Class weights.
        """
        return list(self.__alpha)

    @property
    def gamma(self) -> float:
        """
        Gets the focusing exponent.

        Returns
        -------
        `float`
            Gamma.
        """
        return self.__gamma

    @property
    def smoothing_eps(self) -> float:
        """
        Gets the label smoothing factor.

        Returns
        -------
        `float`
            Epsilon.
        """
        return self.__smoothing_eps

    @property
    def n_classes(self) -> int:
        """
        Gets the number of classes.

        Returns
        -------
        `int`
            Number of classes.
        """
        return len(self.__alpha)

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"alpha": self.__alpha, "gamma": self.__gamma,
                                           "smoothing_eps": self.__smoothing_eps}

    def __eq__(self, other) -> bool:
        if not isinstance(other, FocalLossConfig):
            raise TypeError("Can not compare 'FocalLossConfig' instance " +
                            f"with '{type(other)}' instance")

        return self.__alpha == other.alpha and self.__gamma == other.gamma and \
            self.__smoothing_eps == other.smoothing_eps

    def __str__(self) -> str:
        return f"alpha: {self.__alpha} gamma: {self.__gamma} " +\
            f"smoothing_eps: {self.__smoothing_eps}"


def focal_loss(logits: np.ndarray, target: np.ndarray, target_class: int,
               cfg: FocalLossConfig) -> tuple[float, np.ndarray]:
    """
    Focal loss combined with label smoothing.

    The focusing term (1 - p_t)^gamma and the class weight alpha_t use the hard target class,
    while the log-likelihood term uses the smoothed target distribution:

        loss = -alpha_t (1 - p_t)^gamma sum_c y'_c log(max(p_c, 1e-12))

    Parameters
    ----------
    logits : `numpy.ndarray`
        Logits (K,).
    target : `numpy.ndarray`
        Smoothed target distribution (K,) -- see :func:`~pathomil.nn.core.smooth_labels`.
    target_class : `int`
        Hard class label.
    cfg : :class:`~pathomil.nn.core.FocalLossConfig`
        Loss configuration.

    Returns
    -------
    `tuple[float, numpy.ndarray]`
        Loss and its gradient with respect to the logits.
    """
    if not isinstance(cfg, FocalLossConfig):
        raise TypeError("'cfg' must be an instance of 'pathomil.nn.FocalLossConfig' " +
                        f"but not of '{type(cfg)}'")
    if logits.shape != target.shape or logits.shape[0] != cfg.n_classes:
        raise ValueError(f"Dimension mismatch: logits {logits.shape}, target {target.shape}, " +
                         f"{cfg.n_classes} classes")
    if not 0 <= target_class < cfg.n_classes:
        raise ValueError(f"Class index {target_class} out of range [0, {cfg.n_classes})")

    p = softmax(logits)
    alpha_t = cfg.alpha[target_class]
    gamma = cfg.gamma
    p_t = p[target_class]

    valid = p >= LOG_CLAMP
    ce = -float(np.sum(target * np.log(np.maximum(p, LOG_CLAMP))))
    w = target * valid
    d_ce = p * np.sum(w) - w

    one_minus = 1. - p_t
    modulation = one_minus ** gamma
    d_modulation = np.zeros_like(p)
    if gamma > 0 and one_minus > 0:
        onehot = np.zeros_like(p)
        onehot[target_class] = 1.
        d_modulation = -gamma * one_minus ** (gamma - 1.) * p_t * (onehot - p)

    loss = alpha_t * modulation * ce
    grad = alpha_t * (modulation * d_ce + ce * d_modulation)
    return loss, grad


def weighted_cross_entropy(logits: np.ndarray, class_index: int,
                           class_weights: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Class-weighted cross-entropy -- i.e. -w_y log softmax(logits)[y].

    Parameters
    ----------
    logits : `numpy.ndarray`
        Logits (K,).
    class_index : `int`
        Class label y.
    class_weights : `numpy.ndarray`
        Positive per-class weights (K,).

    Returns
    -------
    `tuple[float, numpy.ndarray]`
        Loss and its gradient with respect to the logits.
    """
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if logits.shape != class_weights.shape:
        raise ValueError(f"Dimension mismatch: logits {logits.shape} vs. " +
                         f"class weights {class_weights.shape}")
    if np.any(class_weights <= 0):
        raise ValueError("All class weights must be positive")
    if not 0 <= class_index < logits.shape[0]:
        raise ValueError(f"Class index {class_index} out of range")

    p = softmax(logits)
    w_y = class_weights[class_index]
    loss = -w_y * math.log(max(p[class_index], LOG_CLAMP))

    grad = p.copy()
    grad[class_index] -= 1.
    if p[class_index] < LOG_CLAMP:
        grad = np.zeros_like(p)
    return loss, w_y * grad
