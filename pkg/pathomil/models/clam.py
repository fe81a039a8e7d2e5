"""
Module provides the single-branch clustering-constrained attention MIL head (CLAM-SB) with
GELU activations, a two-layer classifier, gated attention, and an instance-level
pseudo-label loss.
"""
import numpy as np

from ..nn.core import AffineParams, affine, gelu, gelu_grad, softmax, dropout_mask, \
    smooth_labels, focal_loss, FocalLossConfig, MODE_TRAIN, MODE_EVAL, LOG_CLAMP
from ..rng import CanonicalRng
from .params import ParameterSet, GradientSet, xavier_init
from .attention import GatedAttentionParams, gated_attention_forward, \
    gated_attention_backward, attention_pool, attention_pool_backward
from .output import ForwardOutput


KIND_CLAM_SB = "clam-sb"


class ClamSBParams():
    """
    Parameters of a CLAM-SB head.

    Parameters
    ----------
    parameters : :class:`~pathomil.models.params.ParameterSet`
        Values -- must follow :meth:`ClamSBParams.layout`.
    feat_dim : `int`
        Dimensionality of the instance features.
    embed_dim : `int`, optional
        Dimensionality of the encoded instances.

        The default is 512.
    attn_hidden : `int`, optional
        Dimensionality of the attention space.

        The default is 384.
    cls_hidden : `int`, optional
        Width of the hidden classifier layer.

        The default is 256.
    n_classes : `int`, optional
        Number of classes.

        The default is 3.
    dropout_rate : `float`, optional
        Dropout rate applied after the encoder and after the hidden classifier layer.

        The default is 0.4
    """
    def __init__(self, parameters: ParameterSet, feat_dim: int, embed_dim: int = 512,
                 attn_hidden: int = 384, cls_hidden: int = 256, n_classes: int = 3,
                 dropout_rate: float = .4):
        for name, value in [("feat_dim", feat_dim), ("embed_dim", embed_dim),
                            ("attn_hidden", attn_hidden), ("cls_hidden", cls_hidden),
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
        expected = ClamSBParams.layout(feat_dim, embed_dim, attn_hidden, cls_hidden, n_classes)
        if parameters.layout != expected:
            raise ValueError("Parameter layout does not match the dimensions")

        self.__parameters = parameters
        self.__feat_dim = feat_dim
        self.__embed_dim = embed_dim
        self.__attn_hidden = attn_hidden
        self.__cls_hidden = cls_hidden
        self.__n_classes = n_classes
        self.__dropout_rate = float(dropout_rate)

    @staticmethod
    def layout(feat_dim: int, embed_dim: int = 512, attn_hidden: int = 384,
               cls_hidden: int = 256, n_classes: int = 3) -> list[tuple[str, tuple[int]]]:
        """
        Returns the ordered parameter layout.

        Returns
        -------
        `list[tuple[str, tuple[int]]]`
            Ordered (name, shape) pairs.
        """
        layout = [("encoder.weight", (embed_dim, feat_dim)), ("encoder.bias", (embed_dim,))]
        layout += GatedAttentionParams.layout("attention", embed_dim, attn_hidden, 1)
        layout += [("classifier_hidden.weight", (cls_hidden, embed_dim)),
                   ("classifier_hidden.bias", (cls_hidden,)),
                   ("classifier_out.weight", (n_classes, cls_hidden)),
                   ("classifier_out.bias", (n_classes,))]
        for c in range(n_classes):
            layout += [(f"instance_heads.{c}.weight", (2, embed_dim)),
                       (f"instance_heads.{c}.bias", (2,))]
        return layout

    @staticmethod
    def initialize(feat_dim: int, rng: CanonicalRng, embed_dim: int = 512,
                   attn_hidden: int = 384, cls_hidden: int = 256, n_classes: int = 3,
                   dropout_rate: float = .4) -> "ClamSBParams":
        """
        Creates a freshly initialized CLAM-SB head -- Xavier-uniform weights, zero biases,
        and a zero output layer so that the untrained logits are exactly zero.

        Returns
        -------
        :class:`~pathomil.models.clam.ClamSBParams`
            Initialized parameters.
        """
        layout = ClamSBParams.layout(feat_dim, embed_dim, attn_hidden, cls_hidden, n_classes)
        parameters = xavier_init(layout, rng, zero_prefixes=["classifier_out."])
        return ClamSBParams(parameters, feat_dim, embed_dim, attn_hidden, cls_hidden,
                            n_classes, dropout_rate)

    def with_parameters(self, parameters: ParameterSet) -> "ClamSBParams":
        """
        Creates a head with the same dimensions but different parameter values.
        """
        return ClamSBParams(parameters, self.__feat_dim, self.__embed_dim, self.__attn_hidden,
                            self.__cls_hidden, self.__n_classes, self.__dropout_rate)

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
        return {"feat_dim": self.__feat_dim, "embed_dim": self.__embed_dim,
                "attn_hidden": self.__attn_hidden, "cls_hidden": self.__cls_hidden,
                "n_classes": self.__n_classes}

    @property
    def feat_dim(self) -> int:
        return self.__feat_dim

    @property
    def embed_dim(self) -> int:
        return self.__embed_dim

    @property
    def n_classes(self) -> int:
        return self.__n_classes

    @property
    def dropout_rate(self) -> float:
        return self.__dropout_rate

    @property
    def encoder(self) -> AffineParams:
        return self.__parameters.affine("encoder")

    @property
    def attention(self) -> GatedAttentionParams:
        return GatedAttentionParams.from_parameter_set(self.__parameters, "attention")

    @property
    def classifier_hidden(self) -> AffineParams:
        return self.__parameters.affine("classifier_hidden")

    @property
    def classifier_out(self) -> AffineParams:
        return self.__parameters.affine("classifier_out")

    def instance_head(self, class_index: int) -> AffineParams:
        """
        Gets the instance classifier of a given class.

        Parameters
        ----------
        class_index : `int`
            Class label.

        Returns
        -------
        :class:`~pathomil.nn.core.AffineParams`
            Two-way instance classifier.
        """
        if not 0 <= class_index < self.__n_classes:
            raise ValueError(f"Class index {class_index} out of range")
        return self.__parameters.affine(f"instance_heads.{class_index}")

    def __str__(self) -> str:
        return f"CLAM-SB {self.dims} dropout_rate: {self.__dropout_rate}"


def clam_sb_forward(bag: np.ndarray, p: ClamSBParams, mode: str = MODE_EVAL,
                    rng: CanonicalRng = None) -> ForwardOutput:
    """
    Forward pass of CLAM-SB: encoder, GELU, dropout, gated attention, attention pooling,
    hidden classifier layer, GELU, dropout, output layer.

    Parameters
    ----------
    bag : `numpy.ndarray`
        Instance features (n x feat_dim).
    p : :class:`~pathomil.models.clam.ClamSBParams`
        Parameters.
    mode : `str`, optional
        Either :attr:`~pathomil.nn.core.MODE_TRAIN` or :attr:`~pathomil.nn.core.MODE_EVAL`.

        The default is MODE_EVAL.
    rng : :class:`~pathomil.rng.CanonicalRng`, optional
        Random number generator for the dropout masks -- required in training mode.

        The default is None.

    Returns
    -------
    :class:`~pathomil.models.output.ForwardOutput`
        Logits, pooled embedding (1 x embed_dim), attention weights (n,), and cache.
    """
    if not isinstance(p, ClamSBParams):
        raise TypeError("'p' must be an instance of 'pathomil.models.ClamSBParams' " +
                        f"but not of '{type(p)}'")
    bag = np.asarray(bag, dtype=np.float64)
    if bag.ndim != 2 or bag.shape[0] == 0:
        raise ValueError("'bag' must be a non-empty 2d array")
    if bag.shape[1] != p.feat_dim:
        raise ValueError(f"Dimension mismatch: bag has {bag.shape[1]} features but the " +
                         f"encoder expects {p.feat_dim}")
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ValueError(f"Unknown mode '{mode}'")
    train = mode == MODE_TRAIN and p.dropout_rate > 0
    if train and rng is None:
        raise ValueError("'rng' is required in training mode")

    n = bag.shape[0]
    z1 = affine(bag, p.encoder)
    h1 = gelu(z1)
    m1 = dropout_mask((n, p.embed_dim), p.dropout_rate, rng) if train else None
    encoded = h1 * m1 if train else h1

    attention_params = p.attention
    scores, attention_cache = gated_attention_forward(encoded, attention_params)
    a, pooled = attention_pool(encoded, scores[:, 0])

    z2 = affine(pooled, p.classifier_hidden)
    h2 = gelu(z2)
    m2 = dropout_mask(h2.shape, p.dropout_rate, rng) if train else None
    hidden = h2 * m2 if train else h2
    logits = affine(hidden, p.classifier_out)

    cache = {"bag": bag, "z1": z1, "m1": m1, "encoded": encoded,
             "attention_cache": attention_cache, "pooled": pooled,
             "z2": z2, "m2": m2, "hidden": hidden}
    return ForwardOutput(KIND_CLAM_SB, logits, pooled.reshape(1, -1), a, cache)


def clam_instance_loss(attention: np.ndarray, encoded: np.ndarray, bag_class: int,
                       p: ClamSBParams, B: int) -> tuple[float, np.ndarray, np.ndarray,
                                                         np.ndarray]:
    """
    Instance-level pseudo-label loss: the B' = min(B, n // 2) most attended instances are
    labeled positive, the B' least attended ones negative, and both are classified by the
    instance head of the bag's class (mean two-way cross-entropy).

    Bags with fewer than two instances yield a zero loss.

    Parameters
    ----------
    attention : `numpy.ndarray`
        Attention weights (n,).
    encoded : `numpy.ndarray`
        Encoded instances (n x embed_dim).
    bag_class : `int`
        Class label of the bag.
    p : :class:`~pathomil.models.clam.ClamSBParams`
        Parameters.
    B : `int`
        Number of positive (and negative) pseudo-labeled instances.

    Returns
    -------
    `tuple`
        Loss, gradients of the instance head (weight, bias), and gradient with respect to
        the encoded instances.
    """
    if not isinstance(B, int) or B < 1:
        raise ValueError("'B' must be a positive integer")
    head = p.instance_head(bag_class)
    n = attention.shape[0]
    if encoded.shape != (n, p.embed_dim):
        raise ValueError(f"Dimension mismatch: {n} attention weights vs. encoded instances " +
                         f"of shape {encoded.shape}")

    d_weight = np.zeros_like(head.weight)
    d_bias = np.zeros_like(head.bias)
    d_encoded = np.zeros_like(encoded)
    if n < 2:
        return 0., d_weight, d_bias, d_encoded

    n_selected = min(B, n // 2)
    order = np.argsort(-attention, kind="stable")
    selected = np.concatenate((order[:n_selected], order[n - n_selected:]))
    labels = np.concatenate((np.ones(n_selected, dtype=int), np.zeros(n_selected, dtype=int)))

    h = encoded[selected]
    probs = softmax(affine(h, head), axis=1)
    rows = np.arange(2 * n_selected)
    p_true = probs[rows, labels]
    loss = -float(np.mean(np.log(np.maximum(p_true, LOG_CLAMP))))

    d_logits = probs.copy()
    d_logits[rows, labels] -= 1.
    d_logits[p_true < LOG_CLAMP] = 0.
    d_logits /= 2 * n_selected

    d_weight = d_logits.T @ h
    d_bias = d_logits.sum(axis=0)
    np.add.at(d_encoded, selected, d_logits @ head.weight)

    return loss, d_weight, d_bias, d_encoded


def clam_sb_backward(label: int, p: ClamSBParams, out: ForwardOutput,
                     focal_cfg: FocalLossConfig, bag_weight: float = .5,
                     B: int = 8) -> tuple[float, GradientSet, dict]:
    """
    Loss and exact gradients of CLAM-SB --
    total = bag_weight * focal_loss + (1 - bag_weight) * instance_loss.

    Parameters
    ----------
    label : `int`
        Class label of the bag.
    p : :class:`~pathomil.models.clam.ClamSBParams`
        Parameters used in the forward pass.
    out : :class:`~pathomil.models.output.ForwardOutput`
        Output of :func:`~pathomil.models.clam.clam_sb_forward`.
    focal_cfg : :class:`~pathomil.nn.core.FocalLossConfig`
        Focal loss configuration.
    bag_weight : `float`, optional
        Weight of the bag-level loss.

        The default is 0.5
    B : `int`, optional
        Number of pseudo-labeled instances per side in the instance loss.

        The default is 8.

    Returns
    -------
    `tuple`
        Total loss, gradients, and the individual loss terms
        (keys "bag_loss" and "instance_loss").
    """
    if out.kind != KIND_CLAM_SB or "encoded" not in out.cache:
        raise ValueError("Cache mismatch: forward output does not stem from CLAM-SB")
    if not 0 <= bag_weight <= 1:
        raise ValueError("'bag_weight' must be in [0, 1]")
    if not 0 <= label < p.n_classes:
        raise ValueError(f"Class index {label} out of range")
    cache = out.cache
    bag, encoded, a = cache["bag"], cache["encoded"], out.attention
    if encoded.shape[0] != a.shape[0] or bag.shape[1] != p.feat_dim:
        raise ValueError("Cache mismatch: forward output does not fit the parameters")

    grads = p.parameters.zeros_like()

    target = smooth_labels(label, focal_cfg.smoothing_eps, p.n_classes)
    bag_loss, d_logits = focal_loss(out.logits, target, label, focal_cfg)
    d_logits = bag_weight * d_logits

    classifier_out = p.classifier_out
    grads.add("classifier_out.weight", np.outer(d_logits, cache["hidden"]))
    grads.add("classifier_out.bias", d_logits)
    d_hidden = classifier_out.weight.T @ d_logits
    if cache["m2"] is not None:
        d_hidden = d_hidden * cache["m2"]
    d_z2 = d_hidden * gelu_grad(cache["z2"])
    grads.add("classifier_hidden.weight", np.outer(d_z2, cache["pooled"]))
    grads.add("classifier_hidden.bias", d_z2)
    d_pooled = p.classifier_hidden.weight.T @ d_z2

    d_encoded, d_raw = attention_pool_backward(d_pooled, encoded, a)
    d_from_attention, attention_grads = gated_attention_backward(d_raw.reshape(-1, 1),
                                                                 cache["attention_cache"],
                                                                 p.attention)
    d_encoded += d_from_attention
    for name, grad in attention_grads.items():
        grads.add(f"attention.{name}", grad)

    instance_loss, d_head_w, d_head_b, d_encoded_inst = \
        clam_instance_loss(a, encoded, label, p, B)
    instance_weight = 1. - bag_weight
    grads.add(f"instance_heads.{label}.weight", instance_weight * d_head_w)
    grads.add(f"instance_heads.{label}.bias", instance_weight * d_head_b)
    d_encoded += instance_weight * d_encoded_inst

    if cache["m1"] is not None:
        d_encoded = d_encoded * cache["m1"]
    d_z1 = d_encoded * gelu_grad(cache["z1"])
    grads.add("encoder.weight", d_z1.T @ bag)
    grads.add("encoder.bias", d_z1.sum(axis=0))

    total_loss = bag_weight * bag_loss + instance_weight * instance_loss
    return total_loss, grads, {"bag_loss": bag_loss, "instance_loss": instance_loss}
