"""
Module provides the training configuration of the MIL models.
"""
import numpy as np

from ..serialization import serializable, JsonSerializable, TRAIN_CONFIG_ID
from ..nn.core import FocalLossConfig
from ..models.mil_model import LossConfig, MODEL_KINDS
from ..models.clam import KIND_CLAM_SB
from ..models.abmil import KIND_ABMIL


CLAM_DEFAULTS = {"lr": 3e-5, "reg": 1e-4, "dropout_rate": .4, "max_epochs": 100,
                 "warmup_epochs": 5, "patience": 20}
ABMIL_DEFAULTS = {"lr": 4e-4, "reg": 1e-4, "dropout_rate": .4, "max_epochs": 20,
                  "warmup_epochs": 0, "patience": 5}


def inverse_frequency_weights(labels: list[int], n_classes: int = 3) -> list[float]:
    """
    Class weights proportional to the inverse class frequency, normalized to mean 1.
    Classes absent from `labels` get the largest weight of the present classes.

    Parameters
    ----------
    labels : `list[int]`
        Labels.
    n_classes : `int`, optional
        Number of classes.

        The default is 3.

    Returns
    -------
    `list[float]`
        Class weights.
    """
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes]
    if counts.sum() == 0:
        return [1.] * n_classes

    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = 1. / counts[present]
    weights[~present] = weights[present].max()
    return (weights / weights.mean()).tolist()


@serializable(TRAIN_CONFIG_ID, ".pmil_train")
class TrainConfig(JsonSerializable):
    """
    Training configuration. Hyperparameters left at None are set to the defaults of the
    model kind -- CLAM-SB: lr 3e-5, reg 1e-4, dropout 0.4, at most 100 epochs, 5 warmup
    epochs, patience 20; ABMIL: lr 4e-4, reg 1e-4, dropout 0.4, at most 20 epochs,
    no warmup, patience 5.

    Parameters
    ----------
    model_kind : `str`, optional
        Either "clam-sb" or "abmil".

        The default is "clam-sb".
    lr : `float`, optional
        Learning rate (after warmup).

        The default is None.
    reg : `float`, optional
        L2 regularization strength.

        The default is None.
    dropout_rate : `float`, optional
        Dropout rate.

        The default is None.
    max_epochs : `int`, optional
        Maximum number of epochs.

        The default is None.
    warmup_epochs : `int`, optional
        Number of linear warmup epochs.

        The default is None.
    patience : `int`, optional
        Number of epochs without improvement of the validation loss after which training
        stops.

        The default is None.
    bag_weight : `float`, optional
        Weight of the bag loss in the CLAM-SB objective.

        The default is 0.5
    B : `int`, optional
        Number of pseudo-labeled instances per side in the CLAM-SB instance loss.

        The default is 8.
    focal_alpha : `list[float]`, optional
        Class weights of the focal loss (CLAM-SB).

        The default is (1, 3, 1).
    focal_gamma : `float`, optional
        Focusing exponent of the focal loss (CLAM-SB).

        The default is 2.
    smoothing_eps : `float`, optional
        Label smoothing factor (CLAM-SB).

        The default is 0.1
    class_weights : `list[float]`, optional
        Class weights of the cross-entropy loss (ABMIL) -- inverse class frequencies of
        the training bags (normalized to mean 1) if None.

        The default is None.
    standardize : `bool`, optional
        If True, features are standardized per dimension with statistics of the
        training bags.

        The default is False.
    seed : `int`, optional
        Seed of the initialization, the dropout masks, and the bag order.

        The default is 42.
    model_dims : `dict`, optional
        Dimensions of the model head (e.g. `embed_dim`) -- defaults of the head if None.

        The default is None.
    """
    def __init__(self, model_kind: str = KIND_CLAM_SB, lr: float = None, reg: float = None,
                 dropout_rate: float = None, max_epochs: int = None, warmup_epochs: int = None,
                 patience: int = None, bag_weight: float = .5, B: int = 8,
                 focal_alpha: list[float] = (1., 3., 1.), focal_gamma: float = 2.,
                 smoothing_eps: float = .1, class_weights: list[float] = None,
                 standardize: bool = False, seed: int = 42, model_dims: dict = None, **kwds):
        if model_kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind '{model_kind}' -- must be one of {MODEL_KINDS}")
        defaults = CLAM_DEFAULTS if model_kind == KIND_CLAM_SB else ABMIL_DEFAULTS
        lr = defaults["lr"] if lr is None else lr
        reg = defaults["reg"] if reg is None else reg
        dropout_rate = defaults["dropout_rate"] if dropout_rate is None else dropout_rate
        max_epochs = defaults["max_epochs"] if max_epochs is None else max_epochs
        warmup_epochs = defaults["warmup_epochs"] if warmup_epochs is None else warmup_epochs
        patience = defaults["patience"] if patience is None else patience

        if not isinstance(lr, (int, float)) or lr <= 0:
            raise ValueError("'lr' must be a positive number")
        if not isinstance(reg, (int, float)) or reg < 0:
            raise ValueError("'reg' must be a nonnegative number")
        if not isinstance(dropout_rate, (int, float)) or not 0 <= dropout_rate < 1:
            raise ValueError("'dropout_rate' must be in [0, 1)")
        if not isinstance(max_epochs, int) or max_epochs < 1:
            raise ValueError("'max_epochs' must be a positive integer")
        if not isinstance(warmup_epochs, int) or warmup_epochs < 0:
            raise ValueError("'warmup_epochs' must be a nonnegative integer")
        if not isinstance(patience, int) or patience < 1:
            raise ValueError("'patience' must be a positive integer")
        if not isinstance(standardize, bool):
            raise TypeError("'standardize' must be an instance of 'bool' " +
                            f"but not of '{type(standardize)}'")
        if not isinstance(seed, int):
            raise TypeError(f"'seed' must be an instance of 'int' but not of '{type(seed)}'")
        model_dims = {} if model_dims is None else dict(model_dims)
        if any(not isinstance(v, int) or v < 1 for v in model_dims.values()):
            raise ValueError("All model dimensions must be positive integers")

        # Validates the loss settings
        LossConfig(FocalLossConfig(focal_alpha, focal_gamma, smoothing_eps), bag_weight, B,
                   class_weights)

        self.__model_kind = model_kind
        self.__lr = float(lr)
        self.__reg = float(reg)
        self.__dropout_rate = float(dropout_rate)
        self.__max_epochs = max_epochs
        self.__warmup_epochs = warmup_epochs
        self.__patience = patience
        self.__bag_weight = float(bag_weight)
        self.__B = B
        self.__focal_alpha = [float(a) for a in focal_alpha]
        self.__focal_gamma = float(focal_gamma)
        self.__smoothing_eps = float(smoothing_eps)
        self.__class_weights = None if class_weights is None else \
            [float(w) for w in class_weights]
        self.__standardize = standardize
        self.__seed = seed
        self.__model_dims = model_dims

        super().__init__(**kwds)

    @property
    def model_kind(self) -> str:
        return self.__model_kind

    @property
    def lr(self) -> float:
        return self.__lr

    @property
    def reg(self) -> float:
        return self.__reg

    @property
    def dropout_rate(self) -> float:
        return self.__dropout_rate

    @property
    def max_epochs(self) -> int:
        return self.__max_epochs

    @property
    def warmup_epochs(self) -> int:
        return self.__warmup_epochs

    @property
    def patience(self) -> int:
        return self.__patience

    @property
    def bag_weight(self) -> float:
        return self.__bag_weight

    @property
    def B(self) -> int:
        return self.__B

    @property
    def focal(self) -> FocalLossConfig:
        """
        Gets the focal loss configuration.

        Returns
        -------
        :class:`~pathomil.nn.core.FocalLossConfig`
            Focal loss configuration.
        """
        return FocalLossConfig(self.__focal_alpha, self.__focal_gamma, self.__smoothing_eps)

    @property
    def class_weights(self) -> list[float]:
        return None if self.__class_weights is None else list(self.__class_weights)

    @property
    def standardize(self) -> bool:
        return self.__standardize

    @property
    def seed(self) -> int:
        return self.__seed

    @property
    def model_dims(self) -> dict:
        return dict(self.__model_dims)

    def with_seed(self, seed: int) -> "TrainConfig":
        """
        Returns a copy of this configuration with a different seed.
        """
        return TrainConfig(**(self.get_attributes() | {"seed": seed}))

    def loss_config(self, train_labels: list[int] = None) -> LossConfig:
        """
        Creates the loss configuration -- ABMIL class weights are derived from the
        training labels unless set explicitly.

        Parameters
        ----------
        train_labels : `list[int]`, optional
            Labels of the training bags.

            The default is None.

        Returns
        -------
        :class:`~pathomil.models.mil_model.LossConfig`
            Loss configuration.
        """
        class_weights = self.__class_weights
        if class_weights is None and self.__model_kind == KIND_ABMIL and \
                train_labels is not None:
            class_weights = inverse_frequency_weights(train_labels, len(self.__focal_alpha))
        return LossConfig(self.focal, self.__bag_weight, self.__B, class_weights)

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"model_kind": self.__model_kind,
                                           "lr": self.__lr,
                                           "reg": self.__reg,
                                           "dropout_rate": self.__dropout_rate,
                                           "max_epochs": self.__max_epochs,
                                           "warmup_epochs": self.__warmup_epochs,
                                           "patience": self.__patience,
                                           "bag_weight": self.__bag_weight,
                                           "B": self.__B,
                                           "focal_alpha": self.__focal_alpha,
                                           "focal_gamma": self.__focal_gamma,
                                           "smoothing_eps": self.__smoothing_eps,
                                           "class_weights": self.__class_weights,
                                           "standardize": self.__standardize,
                                           "seed": self.__seed,
                                           "model_dims": self.__model_dims}

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainConfig):
            raise TypeError("Can not compare 'TrainConfig' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        return " ".join(f"{key}: {value}" for key, value in self.get_attributes().items())
