"""
Module provides the training loop of the MIL models -- one bag per optimizer step,
linear learning rate warmup, and early stopping on the validation loss.
"""
import io
import logging
import warnings
import numpy as np
import pandas as pd
from tqdm import tqdm
import matplotlib
import matplotlib.pyplot as plt

from ..exceptions import TrainingError
from ..rng import CanonicalRng, derive_seed
from ..serialization import atomic_write
from ..nn.core import MODE_TRAIN, MODE_EVAL
from ..nn.optim import AdamState, adam_step
from ..models.mil_model import MilModel, LossConfig, model_backward
from ..data.bag import FeatureBag
from .train_config import TrainConfig


logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "val_acc"]

_ORDER_STREAM = 0
_DROPOUT_STREAM = 1


class TrainingResult():
    """
    Result of :func:`~pathomil.harness.training.train_model`.

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Model of the epoch with the lowest validation loss.
    history : `list[dict]`
        One record {epoch, train_loss, val_loss, val_acc} per epoch.
    best_epoch : `int`
        Epoch of the returned model.
    """
    def __init__(self, model: MilModel, history: list[dict], best_epoch: int):
        self.__model = model
        self.__history = history
        self.__best_epoch = best_epoch

    @property
    def model(self) -> MilModel:
        return self.__model

    @property
    def history(self) -> list[dict]:
        return [dict(record) for record in self.__history]

    @property
    def best_epoch(self) -> int:
        return self.__best_epoch

    @property
    def n_epochs(self) -> int:
        return len(self.__history)

    def __str__(self) -> str:
        return f"epochs: {self.n_epochs} best_epoch: {self.__best_epoch}"


def _check_bags(bags: list[FeatureBag], name: str) -> None:
    if any(not isinstance(bag, FeatureBag) for bag in bags):
        raise TypeError(f"All entries of '{name}' must be instances of " +
                        "'pathomil.data.FeatureBag'")


def _evaluate(model: MilModel, bags: list[FeatureBag],
              loss_cfg: LossConfig) -> tuple[float, float]:
    losses, correct = [], 0
    for bag in bags:
        out = model.forward(bag.features, MODE_EVAL)
        loss, _ = model_backward(model, bag.label, out, loss_cfg)
        losses.append(loss)
        correct += int(out.predicted_class == bag.label)
    return float(np.mean(losses)), correct / len(bags)


def feature_statistics(bags: list[FeatureBag]) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-dimension mean and standard deviation over all instances of several bags.
    """
    instances = np.concatenate([bag.features for bag in bags], axis=0)
    return instances.mean(axis=0), instances.std(axis=0)


def train_model(train_bags: list[FeatureBag], val_bags: list[FeatureBag],
                config: TrainConfig, verbose: bool = False) -> TrainingResult:
    """
    Trains a MIL model.

    Every epoch visits the training bags in an order shuffled by the canonical PRNG
    (one Adam step per bag) and then evaluates the loss and accuracy on the validation bags.
    Training stops after `patience` epochs without improvement of the validation loss or
    after `max_epochs` epochs; the parameters of the epoch with the lowest validation
    loss are returned. Without validation bags, the mean training loss of the epoch is
    monitored instead.

    Parameters
    ----------
    train_bags : `list[FeatureBag]`
        Training bags.
    val_bags : `list[FeatureBag]`
        Validation bags.
    config : :class:`~pathomil.harness.train_config.TrainConfig`
        Training configuration.
    verbose : `bool`, optional
        If True, a progress bar is shown.

        The default is False.

    Returns
    -------
    :class:`~pathomil.harness.training.TrainingResult`
        Best model and training history.
    """
    if not isinstance(config, TrainConfig):
        raise TypeError("'config' must be an instance of 'pathomil.harness.TrainConfig' " +
                        f"but not of '{type(config)}'")
    _check_bags(train_bags, "train_bags")
    _check_bags(val_bags, "val_bags")
    if len(train_bags) == 0:
        raise ValueError("Training set is empty")
    feat_dim = train_bags[0].feature_dim
    if any(bag.feature_dim != feat_dim for bag in list(train_bags) + list(val_bags)):
        raise ValueError("All bags must have the same feature dimensionality")

    train_labels = [bag.label for bag in train_bags]
    missing = sorted(set(range(len(config.focal.alpha))) - set(train_labels))
    if missing:
        warnings.warn(f"Classes {missing} do not occur in the training set")
    if len(val_bags) == 0:
        warnings.warn("No validation bags -- early stopping monitors the training loss")

    model = MilModel.create(config.model_kind, feat_dim, seed=config.seed,
                            dropout_rate=config.dropout_rate, **config.model_dims)
    if config.standardize:
        model = model.with_standardization(*feature_statistics(train_bags))
    loss_cfg = config.loss_config(train_labels)

    state = AdamState(config.lr, weight_decay_l2=config.reg,
                      warmup_epochs=config.warmup_epochs)
    order_rng = CanonicalRng(derive_seed(config.seed, _ORDER_STREAM))
    dropout_rng = CanonicalRng(derive_seed(config.seed, _DROPOUT_STREAM))

    history = []
    best_model, best_loss, best_epoch = model, np.inf, 0
    epochs_without_improvement = 0
    for epoch in tqdm(range(config.max_epochs), desc="Training", disable=not verbose):
        losses = []
        for i in order_rng.permutation(len(train_bags)):
            bag = train_bags[i]
            try:
                out = model.forward(bag.features, MODE_TRAIN, dropout_rng)
                loss, grads = model_backward(model, bag.label, out, loss_cfg)
            except FloatingPointError as ex:
                raise TrainingError(f"Epoch {epoch}, bag '{bag.slide_id}': {ex}") from ex
            if not np.isfinite(loss) or not grads.is_finite():
                raise TrainingError(f"Epoch {epoch}, bag '{bag.slide_id}': loss or " +
                                    "gradients are not finite")

            vector, state = adam_step(model.parameters.vector, grads.vector, state, epoch)
            model = model.with_vector(vector)
            losses.append(loss)

        train_loss = float(np.mean(losses))
        if len(val_bags) != 0:
            try:
                val_loss, val_acc = _evaluate(model, val_bags, loss_cfg)
            except FloatingPointError as ex:
                raise TrainingError(f"Epoch {epoch}, validation: {ex}") from ex
        else:
            val_loss, val_acc = train_loss, float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "val_acc": val_acc})
        logger.debug("epoch %d: train_loss %.6f val_loss %.6f val_acc %.4f", epoch,
                     train_loss, val_loss, val_acc)

        if val_loss < best_loss:
            best_model, best_loss, best_epoch = model, val_loss, epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                logger.info("Early stopping after epoch %d (best epoch %d, val_loss %.6f)",
                            epoch, best_epoch, best_loss)
                break

    return TrainingResult(best_model, history, best_epoch)


def predict_bags(model: MilModel, bags: list) -> np.ndarray:
    """
    Class probabilities of several bags (evaluation mode).

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Model.
    bags : `list`
        Bags -- instances of :class:`~pathomil.data.bag.FeatureBag` or feature matrices.

    Returns
    -------
    `numpy.ndarray`
        Probabilities (m x n_classes).
    """
    if not isinstance(model, MilModel):
        raise TypeError("'model' must be an instance of 'pathomil.models.MilModel' " +
                        f"but not of '{type(model)}'")

    probs = [model.predict_proba(bag.features if isinstance(bag, FeatureBag) else bag)
             for bag in bags]
    return np.array(probs, dtype=np.float64).reshape(len(probs), model.n_classes)


def history_to_dataframe(history: list[dict]) -> pd.DataFrame:
    """
    Converts a training history into a data frame with the columns
    epoch, train_loss, val_loss, val_acc.
    """
    return pd.DataFrame.from_records(history, columns=HISTORY_COLUMNS)


def write_history_csv(history: list[dict], f_out: str) -> None:
    """
    Writes a training history to a CSV file (atomically).

    Parameters
    ----------
    history : `list[dict]`
        Training history.
    f_out : `str`
        Path to the CSV file.
    """
    buffer = io.StringIO()
    history_to_dataframe(history).to_csv(buffer, index=False, lineterminator="\n")
    atomic_write(f_out, buffer.getvalue())


def plot_learning_curves(history: list[dict], show: bool = True,
                         ax: matplotlib.axes.Axes = None) -> matplotlib.axes.Axes:
    """
    Plots the training and validation loss over the epochs.

    Parameters
    ----------
    history : `list[dict]`
        Training history.
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

    df = history_to_dataframe(history)
    ax.plot(df["epoch"], df["train_loss"], ".-", label="Training loss")
    ax.plot(df["epoch"], df["val_loss"], ".-", label="Validation loss")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss")
    ax.legend()

    if show is True and fig is not None:
        plt.show()

    return ax
