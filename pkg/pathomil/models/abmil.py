"""
Module provides the gated multi-head attention MIL head (ABMIL) with class-specific
attention branches.

Every head maps the instances into its own attention space and scores each instance once
per class; the raw scores are averaged over the heads and normalized per class over the
instances, which yields one bag vector per class. A shared bottleneck and one scalar scorer
per class turn the class-specific bag vectors into logits.
"""
import numpy as np

from ..nn.core import AffineParams, affine, gelu, gelu_grad, softmax, dropout_mask, \
    weighted_cross_entropy, MODE_TRAIN, MODE_EVAL
from ..rng import CanonicalRng
from .params import ParameterSet, GradientSet, xavier_init
from .attention import GatedAttentionParams, gated_attention_forward, gated_attention_backward
from .output import ForwardOutput


KIND_ABMIL = "abmil"


class AbmilParams():
    """
    Parameters of an ABMIL head.

    Parameters
    ----------
    parameters : :class:`~pathomil.models.params.ParameterSet`
        Values -- must follow :meth:`AbmilParams.layout`.
    feat_dim : `int`
        Dimensionality of the instance features.
    n_heads : `int`, optional
        Number of parallel attention heads.

        The default is 8.
    head_hidden : `int`, optional
        Dimensionality of the attention space of each head.

        The default is 256.
    bottleneck_dim : `int`, optional
        Output dimensionality of the shared bottleneck.

        The default is 512.
    n_classes : `int`, optional
        Number of classes.

        The default is 3.
    dropout_rate : `float`, optional
        Dropout rate applied after the bottleneck.

        The default is 0.4
    """
    def __init__(self, parameters: ParameterSet, feat_dim: int, n_heads: int = 8,
                 head_hidden: int = 256, bottleneck_dim: int = 512, n_classes: int = 3,
                 dropout_rate: float = .4):
        for name, value in [("feat_dim", feat_dim), ("n_heads", n_heads),
                            ("head_hidden", head_hidden), ("bottleneck_dim", bottleneck_dim),
                            ("n_classes", n_classes)]:
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"'{name}' must be a positive integer")
        if n_classes < 2:
            raise ValueError("'n_classes' must be at least 2")
        if not 0 <= dropout_rate < 1:
            raise ValueError("'dropout_rate' must be in [0, 1)")
        if not isinstance(parameters, ParameterSet):
            raise TypeError("'parameters' must be an instance of " +
                            "'pathomil.models.ParameterSet' " +
                            f"but not of '{type(parameters)}'")
        expected = AbmilParams.layout(feat_dim, n_heads, head_hidden, bottleneck_dim, n_classes)
        if parameters.layout != expected:
            raise ValueError("Parameter layout does not match the dimensions")

        self.__parameters = parameters
        self.__feat_dim = feat_dim
        self.__n_heads = n_heads
        self.__head_hidden = head_hidden
        self.__bottleneck_dim = bottleneck_dim
        self.__n_classes = n_classes
        self.__dropout_rate = float(dropout_rate)

    @staticmethod
    def layout(feat_dim: int, n_heads: int = 8, head_hidden: int = 256,
               bottleneck_dim: int = 512, n_classes: int = 3) -> list[tuple[str, tuple[int]]]:
        """
        Returns the ordered parameter layout.

        Returns
        -------
        `list[tuple[str, tuple[int]]]`
            Ordered (name, shape) pairs.
        """
        layout = []
        for h in range(n_heads):
            layout += GatedAttentionParams.layout(f"heads.{h}", feat_dim, head_hidden, n_classes)
        layout += [("bottleneck.weight", (bottleneck_dim, feat_dim)),
                   ("bottleneck.bias", (bottleneck_dim,))]
        for c in range(n_classes):
            layout += [(f"class_scorers.{c}.weight", (1, bottleneck_dim)),
                       (f"class_scorers.{c}.bias", (1,))]
        return layout

    @staticmethod
    def initialize(feat_dim: int, rng: CanonicalRng, n_heads: int = 8, head_hidden: int = 256,
                   bottleneck_dim: int = 512, n_classes: int = 3,
                   dropout_rate: float = .4) -> "AbmilParams":
        """
        Creates a freshly initialized ABMIL head -- Xavier-uniform weights, zero biases,
        and zero class scorers so that the untrained logits are exactly zero.

        Returns
        -------
        :class:`~pathomil.models.abmil.AbmilParams`
            Initialized parameters.
        """
        layout = AbmilParams.layout(feat_dim, n_heads, head_hidden, bottleneck_dim, n_classes)
        parameters = xavier_init(layout, rng, zero_prefixes=["class_scorers."])
        return AbmilParams(parameters, feat_dim, n_heads, head_hidden, bottleneck_dim,
                           n_classes, dropout_rate)

    def with_parameters(self, parameters: ParameterSet) -> "AbmilParams":
        """
        Creates a head with the same dimensions but different parameter values.
        """
        return AbmilParams(parameters, self.__feat_dim, self.__n_heads, self.__head_hidden,
                           self.__bottleneck_dim, self.__n_classes, self.__dropout_rate)

    @property
    def parameters(self) -> ParameterSet:
        """
        Gets the parameter values.

        Returns
        -------
        :class:`~pathomil.models.params.ParameterSet`
            Parameters.
        """
        return self.__parameters

    @property
    def dims(self) -> dict:
        """
        Gets all dimensions.

        Returns
        -------
        `dict`
            Dimensions by name.
        """
        return {"feat_dim": self.__feat_dim, "n_heads": self.__n_heads,
                "head_hidden": self.__head_hidden, "bottleneck_dim": self.__bottleneck_dim,
                "n_classes": self.__n_classes}

    @property
    def feat_dim(self) -> int:
        return self.__feat_dim

    @property
    def n_heads(self) -> int:
        return self.__n_heads

    @property
    def n_classes(self) -> int:
        return self.__n_classes

    @property
    def dropout_rate(self) -> float:
        return self.__dropout_rate

    @property
    def heads(self) -> list[GatedAttentionParams]:
        return [GatedAttentionParams.from_parameter_set(self.__parameters, f"heads.{h}")
                for h in range(self.__n_heads)]

    @property
    def bottleneck(self) -> AffineParams:
        return self.__parameters.affine("bottleneck")

    @property
    def class_scorers(self) -> list[AffineParams]:
        return [self.__parameters.affine(f"class_scorers.{c}") for c in range(self.__n_classes)]

    def __str__(self) -> str:
        return f"ABMIL {self.dims} dropout_rate: {self.__dropout_rate}"


def abmil_forward(bag: np.ndarray, p: AbmilParams, mode: str = MODE_EVAL,
                  rng: CanonicalRng = None) -> ForwardOutput:
    """
    Forward pass of ABMIL.

    Parameters
    ----------
    bag : `numpy.ndarray`
        Instance features (n x feat_dim).
    p : :class:`~pathomil.models.abmil.AbmilParams`
        Parameters.
    mode : `str`, optional
        Either :attr:`~pathomil.nn.core.MODE_TRAIN` or :attr:`~pathomil.nn.core.MODE_EVAL`.

        The default is MODE_EVAL.
    rng : :class:`~pathomil.rng.CanonicalRng`, optional
        Random number generator for the dropout mask -- required in training mode.

        The default is None.

    Returns
    -------
    :class:`~pathomil.models.output.ForwardOutput`
        Logits, class-specific bag vectors (n_classes x feat_dim),
        attention matrix (n_classes x n), and cache.
    """
    if not isinstance(p, AbmilParams):
        raise TypeError("'p' must be an instance of 'pathomil.models.AbmilParams' " +
                        f"but not of '{type(p)}'")
    bag = np.asarray(bag, dtype=np.float64)
    if bag.ndim != 2 or bag.shape[0] == 0:
        raise ValueError("'bag' must be a non-empty 2d array")
    if bag.shape[1] != p.feat_dim:
        raise ValueError(f"Dimension mismatch: bag has {bag.shape[1]} features but the " +
                         f"model expects {p.feat_dim}")
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ValueError(f"Unknown mode '{mode}'")
    train = mode == MODE_TRAIN and p.dropout_rate > 0
    if train and rng is None:
        raise ValueError("'rng' is required in training mode")

    head_caches = []
    raw = np.zeros((bag.shape[0], p.n_classes))
    for head in p.heads:
        scores, head_cache = gated_attention_forward(bag, head)
        raw += scores
        head_caches.append(head_cache)
    raw /= p.n_heads

    attention = softmax(raw.T, axis=1)
    bag_vectors = attention @ bag

    z = affine(bag_vectors, p.bottleneck)
    h = gelu(z)
    mask = dropout_mask(h.shape, p.dropout_rate, rng) if train else None
    hidden = h * mask if train else h
    logits = np.array([affine(hidden[c], scorer)[0]
                       for c, scorer in enumerate(p.class_scorers)])

    cache = {"bag": bag, "head_caches": head_caches, "z": z, "mask": mask, "hidden": hidden}
    return ForwardOutput(KIND_ABMIL, logits, bag_vectors, attention, cache)


def abmil_backward(label: int, p: AbmilParams, out: ForwardOutput,
                   class_weights: np.ndarray) -> tuple[float, GradientSet]:
    """
    Weighted cross-entropy loss of ABMIL and its exact gradients.

    Parameters
    ----------
    label : `int`
        Class label of the bag.
    p : :class:`~pathomil.models.abmil.AbmilParams`
        Parameters used in the forward pass.
    out : :class:`~pathomil.models.output.ForwardOutput`
        Output of :func:`~pathomil.models.abmil.abmil_forward`.
    class_weights : `numpy.ndarray`
        Positive per-class weights.

    Returns
    -------
    `tuple[float, GradientSet]`
        Loss and gradients.
    """
    if out.kind != KIND_ABMIL or "head_caches" not in out.cache:
        raise ValueError("Cache mismatch: forward output does not stem from ABMIL")
    cache = out.cache
    if len(cache["head_caches"]) != p.n_heads or cache["bag"].shape[1] != p.feat_dim:
        raise ValueError("Cache mismatch: forward output does not fit the parameters")

    loss, d_logits = weighted_cross_entropy(out.logits, label, class_weights)
    grads = p.parameters.zeros_like()

    bag, hidden, attention = cache["bag"], cache["hidden"], out.attention
    scorers = p.class_scorers
    d_hidden = np.zeros_like(hidden)
    for c, scorer in enumerate(scorers):
        grads.add(f"class_scorers.{c}.weight", d_logits[c] * hidden[c].reshape(1, -1))
        grads.add(f"class_scorers.{c}.bias", np.array([d_logits[c]]))
        d_hidden[c] = d_logits[c] * scorer.weight[0]

    if cache["mask"] is not None:
        d_hidden = d_hidden * cache["mask"]
    d_z = d_hidden * gelu_grad(cache["z"])
    grads.add("bottleneck.weight", d_z.T @ out.bag_embedding)
    grads.add("bottleneck.bias", d_z.sum(axis=0))
    d_bag_vectors = d_z @ p.bottleneck.weight

    d_attention = d_bag_vectors @ bag.T
    d_raw_t = attention * (d_attention - np.sum(attention * d_attention, axis=1, keepdims=True))
    d_scores = d_raw_t.T / p.n_heads

    for h, (head, head_cache) in enumerate(zip(p.heads, cache["head_caches"])):
        _, head_grads = gated_attention_backward(d_scores, head_cache, head)
        for name, grad in head_grads.items():
            grads.add(f"heads.{h}.{name}", grad)

    return loss, grads
