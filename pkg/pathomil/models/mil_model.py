"""
Module provides a model-agnostic wrapper of the MIL heads together with its binary file
format "PMD1".

PMD1 layout: magic "PMD1" | u32 LE header length | JSON header (kind, dims, hyper, seed,
parameter and buffer names/shapes) | parameters followed by buffers as little-endian
float32 values in header order.
"""
import math
import numpy as np

from ..exceptions import FormatError
from ..nn.core import FocalLossConfig, MODE_EVAL
from ..rng import CanonicalRng
from ..serialization import pack_container, unpack_container, atomic_write
from .params import ParameterSet, GradientSet
from .output import ForwardOutput
from .clam import ClamSBParams, clam_sb_forward, clam_sb_backward, KIND_CLAM_SB
from .abmil import AbmilParams, abmil_forward, abmil_backward, KIND_ABMIL


MODEL_KINDS = (KIND_CLAM_SB, KIND_ABMIL)
PMD1_MAGIC = b"PMD1"
PMD1_VERSION = 1

_STD_FLOOR = 1e-12


class LossConfig():
    """
    Loss configuration used by :func:`~pathomil.models.mil_model.model_backward`.

    Parameters
    ----------
    focal : :class:`~pathomil.nn.core.FocalLossConfig`, optional
        Focal loss configuration (CLAM-SB).

        The default is FocalLossConfig().
    bag_weight : `float`, optional
        Weight of the bag-level loss (CLAM-SB).

        The default is 0.5
    B : `int`, optional
        Number of pseudo-labeled instances per side in the instance loss (CLAM-SB).

        The default is 8.
    class_weights : `list[float]`, optional
        Class weights of the cross-entropy loss (ABMIL) -- uniform weights if None.

        The default is None.
    """
    def __init__(self, focal: FocalLossConfig = None, bag_weight: float = .5, B: int = 8,
                 class_weights: list[float] = None):
        if focal is None:
            focal = FocalLossConfig()
        if not isinstance(focal, FocalLossConfig):
            raise TypeError("'focal' must be an instance of 'pathomil.nn.FocalLossConfig' " +
                            f"but not of '{type(focal)}'")
        if not 0 <= bag_weight <= 1:
            raise ValueError("'bag_weight' must be in [0, 1]")
        if not isinstance(B, int) or B < 1:
            raise ValueError("'B' must be a positive integer")
        if class_weights is not None and any(w <= 0 for w in class_weights):
            raise ValueError("All class weights must be positive")

        self.__focal = focal
        self.__bag_weight = float(bag_weight)
        self.__B = B
        self.__class_weights = None if class_weights is None else \
            [float(w) for w in class_weights]

    @property
    def focal(self) -> FocalLossConfig:
        return self.__focal

    @property
    def bag_weight(self) -> float:
        return self.__bag_weight

    @property
    def B(self) -> int:
        return self.__B

    @property
    def class_weights(self) -> list[float]:
        return None if self.__class_weights is None else list(self.__class_weights)

    def __str__(self) -> str:
        return f"focal: {self.__focal} bag_weight: {self.__bag_weight} B: {self.__B} " +\
            f"class_weights: {self.__class_weights}"


class MilModel():
    """
    Trainable MIL model -- i.e. a CLAM-SB or ABMIL head plus optional per-dimension feature
    standardization statistics.

    Parameters
    ----------
    head : :class:`~pathomil.models.clam.ClamSBParams` or :class:`~pathomil.models.abmil.AbmilParams`
        Head parameters.
    seed : `int`, optional
        Seed the parameters were initialized with.

        The default is 42.
    feature_mean : `numpy.ndarray`, optional
        Per-dimension mean subtracted from every instance -- no standardization if None.

        The default is None.
    feature_std : `numpy.ndarray`, optional
        Per-dimension standard deviation every instance is divided by.

        The default is None.
    """
    def __init__(self, head, seed: int = 42, feature_mean: np.ndarray = None,
                 feature_std: np.ndarray = None):
        if not isinstance(head, (ClamSBParams, AbmilParams)):
            raise TypeError("'head' must be an instance of 'pathomil.models.ClamSBParams' or " +
                            f"'pathomil.models.AbmilParams' but not of '{type(head)}'")
        if not isinstance(seed, int):
            raise TypeError(f"'seed' must be an instance of 'int' but not of '{type(seed)}'")
        if (feature_mean is None) != (feature_std is None):
            raise ValueError("'feature_mean' and 'feature_std' must be given together")
        if feature_mean is not None:
            feature_mean = np.asarray(feature_mean, dtype=np.float64)
            feature_std = np.asarray(feature_std, dtype=np.float64)
            if feature_mean.shape != (head.feat_dim,) or feature_std.shape != (head.feat_dim,):
                raise ValueError("Standardization statistics must be of shape " +
                                 f"({head.feat_dim},)")
            feature_std = np.where(feature_std < _STD_FLOOR, 1., feature_std)

        self.__head = head
        self.__seed = seed
        self.__feature_mean = feature_mean
        self.__feature_std = feature_std

    @staticmethod
    def create(kind: str, feat_dim: int, seed: int = 42, dropout_rate: float = .4,
               **dims) -> "MilModel":
        """
        Creates a freshly initialized model.

        Parameters
        ----------
        kind : `str`
            Either "clam-sb" or "abmil".
        feat_dim : `int`
            Dimensionality of the instance features.
        seed : `int`, optional
            Seed of the parameter initialization.

            The default is 42.
        dropout_rate : `float`, optional
            Dropout rate.

            The default is 0.4
        **dims
            Further dimensions of the head -- e.g. `embed_dim`, `attn_hidden`, `cls_hidden`
            (CLAM-SB) or `n_heads`, `head_hidden`, `bottleneck_dim` (ABMIL).

        Returns
        -------
        :class:`~pathomil.models.mil_model.MilModel`
            Model.
        """
        rng = CanonicalRng(seed)
        if kind == KIND_CLAM_SB:
            head = ClamSBParams.initialize(feat_dim, rng, dropout_rate=dropout_rate, **dims)
        elif kind == KIND_ABMIL:
            head = AbmilParams.initialize(feat_dim, rng, dropout_rate=dropout_rate, **dims)
        else:
            raise ValueError(f"Unknown model kind '{kind}' -- must be one of {MODEL_KINDS}")
        return MilModel(head, seed)

    @property
    def kind(self) -> str:
        """
        Gets the model kind.

        Returns
        -------
        `str`
            Either "clam-sb" or "abmil".
        """
        return KIND_CLAM_SB if isinstance(self.__head, ClamSBParams) else KIND_ABMIL

    @property
    def head(self):
        """
        Gets the head parameters.

        Returns
        -------
        :class:`~pathomil.models.clam.ClamSBParams` or :class:`~pathomil.models.abmil.AbmilParams`
            Head.
        """
        return self.__head

    @property
    def parameters(self) -> ParameterSet:
        """
        Gets the learnable parameters.

        Returns
        -------
        :class:`~pathomil.models.params.ParameterSet`
            Parameters.
        """
        return self.__head.parameters

    @property
    def seed(self) -> int:
        return self.__seed

    @property
    def feat_dim(self) -> int:
        return self.__head.feat_dim

    @property
    def n_classes(self) -> int:
        return self.__head.n_classes

    @property
    def feature_mean(self) -> np.ndarray:
        return None if self.__feature_mean is None else self.__feature_mean.copy()

    @property
    def feature_std(self) -> np.ndarray:
        return None if self.__feature_std is None else self.__feature_std.copy()

    @property
    def standardized(self) -> bool:
        """
        Checks whether instance features are standardized before the forward pass.
        """
        return self.__feature_mean is not None

    def with_vector(self, vector: np.ndarray) -> "MilModel":
        """
        Creates a model with the same structure but different parameter values.

        Parameters
        ----------
        vector : `numpy.ndarray`
            Flat parameter vector -- used without copying.

        Returns
        -------
        :class:`~pathomil.models.mil_model.MilModel`
            Model.
        """
        head = self.__head.with_parameters(self.__head.parameters.with_vector(vector))
        return MilModel(head, self.__seed, self.__feature_mean, self.__feature_std)

    def with_standardization(self, feature_mean: np.ndarray,
                             feature_std: np.ndarray) -> "MilModel":
        """
        Creates a model sharing the parameters but using given standardization statistics.
        """
        return MilModel(self.__head, self.__seed, feature_mean, feature_std)

    def copy(self) -> "MilModel":
        """
        Returns a deep copy.
        """
        return self.with_vector(self.parameters.vector.copy())

    def prepare_bag(self, bag: np.ndarray) -> np.ndarray:
        """
        Converts a bag to float64 and applies the standardization (if any).
        """
        bag = np.asarray(bag, dtype=np.float64)
        if self.__feature_mean is not None:
            bag = (bag - self.__feature_mean) / self.__feature_std
        return bag

    def forward(self, bag: np.ndarray, mode: str = MODE_EVAL,
                rng: CanonicalRng = None) -> ForwardOutput:
        """
        Forward pass.

        Parameters
        ----------
        bag : `numpy.ndarray`
            Instance features (n x feat_dim).
        mode : `str`, optional
            Either "train" or "eval".

            The default is "eval".
        rng : :class:`~pathomil.rng.CanonicalRng`, optional
            Random number generator -- required in training mode.

            The default is None.

        Returns
        -------
        :class:`~pathomil.models.output.ForwardOutput`
            Output.
        """
        bag = self.prepare_bag(bag)
        if isinstance(self.__head, ClamSBParams):
            return clam_sb_forward(bag, self.__head, mode, rng)
        return abmil_forward(bag, self.__head, mode, rng)

    def predict_proba(self, bag: np.ndarray) -> np.ndarray:
        """
        Class probabilities of a bag (evaluation mode).
        """
        return self.forward(bag).probs

    def __eq__(self, other) -> bool:
        if not isinstance(other, MilModel):
            raise TypeError("Can not compare 'MilModel' instance " +
                            f"with '{type(other)}' instance")

        return self.kind == other.kind and self.__head.dims == other.head.dims and \
            self.__seed == other.seed and self.parameters == other.parameters and \
            self.__head.dropout_rate == other.head.dropout_rate and \
            _equal_or_none(self.__feature_mean, other.feature_mean) and \
            _equal_or_none(self.__feature_std, other.feature_std)

    def __str__(self) -> str:
        return f"{self.__head} seed: {self.__seed} standardized: {self.standardized}"

    def to_bytes(self) -> bytes:
        """
        Serializes this model to the PMD1 format.

        Returns
        -------
        `bytes`
            PMD1 bytes.
        """
        buffers = []
        if self.__feature_mean is not None:
            buffers = [("feature_mean", self.__feature_mean), ("feature_std", self.__feature_std)]

        header = {"format_version": PMD1_VERSION, "kind": self.kind, "dims": self.__head.dims,
                  "hyper": {"dropout_rate": self.__head.dropout_rate}, "seed": self.__seed,
                  "params": [[name, list(shape)] for name, shape in self.parameters.layout],
                  "buffers": [[name, [int(values.shape[0])]] for name, values in buffers]}

        payload = [self.parameters.vector] + [values for _, values in buffers]
        blob = np.concatenate(payload).astype("<f4").tobytes()
        return pack_container(PMD1_MAGIC, header, blob)

    @staticmethod
    def from_bytes(data: bytes) -> "MilModel":
        """
        Deserializes a model from the PMD1 format.

        Parameters
        ----------
        data : `bytes`
            PMD1 bytes.

        Returns
        -------
        :class:`~pathomil.models.mil_model.MilModel`
            Model.
        """
        header, offset = unpack_container(data, PMD1_MAGIC)
        try:
            if header["format_version"] != PMD1_VERSION:
                raise FormatError(f"Unsupported PMD1 version {header['format_version']}",
                                  offset=8)
            kind = header["kind"]
            dims = dict(header["dims"])
            dropout_rate = float(header["hyper"]["dropout_rate"])
            seed = int(header["seed"])
            declared = [(name, tuple(shape)) for name, shape in header["params"]]
            buffer_decl = [(name, tuple(shape)) for name, shape in header["buffers"]]
        except (KeyError, TypeError, ValueError) as ex:
            if isinstance(ex, FormatError):
                raise
            raise FormatError(f"Invalid PMD1 header: {ex!r}", offset=8) from ex

        if kind == KIND_CLAM_SB:
            head_cls = ClamSBParams
        elif kind == KIND_ABMIL:
            head_cls = AbmilParams
        else:
            raise FormatError(f"Unknown model kind '{kind}'", offset=8)
        try:
            expected = head_cls.layout(**dims)
        except TypeError as ex:
            raise FormatError(f"Invalid model dimensions: {dims}", offset=8) from ex
        if declared != expected:
            raise FormatError("Declared parameters do not match the model dimensions", offset=8)
        if [name for name, _ in buffer_decl] not in ([], ["feature_mean", "feature_std"]):
            raise FormatError("Unknown buffers", offset=8)

        n_params = sum(math.prod(shape) for _, shape in declared)
        n_buffers = sum(math.prod(shape) for _, shape in buffer_decl)
        expected_len = 4 * (n_params + n_buffers)
        if len(data) - offset != expected_len:
            raise FormatError(f"Payload length mismatch: expected {expected_len} bytes but " +
                              f"got {len(data) - offset}", offset=offset)

        values = np.frombuffer(data, dtype="<f4", offset=offset).astype(np.float64)
        head = head_cls(ParameterSet(expected, values[:n_params].copy()),
                        dropout_rate=dropout_rate, **dims)

        feature_mean, feature_std = None, None
        if buffer_decl:
            size = buffer_decl[0][1][0]
            feature_mean = values[n_params:n_params + size]
            feature_std = values[n_params + size:]
        return MilModel(head, seed, feature_mean, feature_std)

    def save(self, f_out: str) -> None:
        """
        Writes this model to a PMD1 file (atomically).

        Parameters
        ----------
        f_out : `str`
            Path to the file.
        """
        atomic_write(f_out, self.to_bytes())

    @staticmethod
    def load(f_in: str) -> "MilModel":
        """
        Loads a model from a PMD1 file.

        Parameters
        ----------
        f_in : `str`
            Path to the file.

        Returns
        -------
        :class:`~pathomil.models.mil_model.MilModel`
            Model.
        """
        with open(f_in, "rb") as f:
            return MilModel.from_bytes(f.read())


def _equal_or_none(a: np.ndarray, b: np.ndarray) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def model_backward(model: MilModel, label: int, out: ForwardOutput,
                   loss_cfg: LossConfig) -> tuple[float, GradientSet]:
    """
    Total loss and exact gradients of all learnable parameters.

    CLAM-SB is trained with bag_weight * focal loss (with label smoothing) +
    (1 - bag_weight) * instance loss, ABMIL with the class-weighted cross-entropy.

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Model that produced `out`.
    label : `int`
        Class label of the bag.
    out : :class:`~pathomil.models.output.ForwardOutput`
        Output of the forward pass.
    loss_cfg : :class:`~pathomil.models.mil_model.LossConfig`
        Loss configuration.

    Returns
    -------
    `tuple[float, GradientSet]`
        Total loss and gradients.
    """
    if not isinstance(model, MilModel):
        raise TypeError("'model' must be an instance of 'pathomil.models.MilModel' " +
                        f"but not of '{type(model)}'")
    if not isinstance(loss_cfg, LossConfig):
        raise TypeError("'loss_cfg' must be an instance of 'pathomil.models.LossConfig' " +
                        f"but not of '{type(loss_cfg)}'")
    if out.kind != model.kind:
        raise ValueError(f"Cache mismatch: output of '{out.kind}' passed to '{model.kind}'")

    if model.kind == KIND_CLAM_SB:
        loss, grads, _ = clam_sb_backward(label, model.head, out, loss_cfg.focal,
                                          loss_cfg.bag_weight, loss_cfg.B)
    else:
        class_weights = loss_cfg.class_weights
        if class_weights is None:
            class_weights = [1.] * model.n_classes
        loss, grads = abmil_backward(label, model.head, out, np.array(class_weights))
    return loss, grads


def extract_attention(model: MilModel, bag: np.ndarray, class_index: int = None) -> np.ndarray:
    """
    Attention weights of all instances of a bag (evaluation mode).

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Model.
    bag : `numpy.ndarray`
        Instance features (n x feat_dim).
    class_index : `int`, optional
        Class whose attention branch is returned (ABMIL only) -- the predicted class if None.
        Ignored by CLAM-SB, which has a single attention branch.

        The default is None.

    Returns
    -------
    `numpy.ndarray`
        Attention weights (n,).
    """
    if class_index is not None and not 0 <= class_index < model.n_classes:
        raise ValueError(f"Class index {class_index} out of range [0, {model.n_classes})")

    out = model.forward(bag)
    if model.kind == KIND_CLAM_SB:
        return out.attention
    if class_index is None:
        class_index = out.predicted_class
    return out.attention[class_index]
