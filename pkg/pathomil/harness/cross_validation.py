"""
Module provides stratified k-fold cross-validation of the MIL models -- folds can be
trained in parallel.
"""
import os
import logging
import numpy as np
from multiprocess import Pool, cpu_count

from ..exceptions import TrainingError
from ..rng import derive_seed
from ..serialization import to_stable_json, atomic_write
from ..data.bag import FeatureBag
from ..data.manifest import DatasetManifest, assert_split, SPLIT_TRAIN, SPLIT_VAL, \
    SPLIT_TEST, SPLIT_UNASSIGNED
from ..models.mil_model import MilModel
from ..metrics import MetricsReport, evaluate_metrics
from .train_config import TrainConfig
from .folds import stratified_kfold, FoldAssignment
from .training import train_model, predict_bags, write_history_csv


logger = logging.getLogger(__name__)

DEVELOPMENT_SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_UNASSIGNED)


class FoldResult():
    """
    Result of a single cross-validation fold.

    Parameters
    ----------
    fold : `int`
        Fold index.
    metrics : :class:`~pathomil.metrics.MetricsReport`
        Metrics on the held-out fold.
    history : `list[dict]`
        Training history.
    best_epoch : `int`
        Epoch of the selected model.
    model : :class:`~pathomil.models.mil_model.MilModel`
        Selected model.
    """
    def __init__(self, fold: int, metrics: MetricsReport, history: list[dict],
                 best_epoch: int, model: MilModel):
        self.__fold = fold
        self.__metrics = metrics
        self.__history = history
        self.__best_epoch = best_epoch
        self.__model = model

    @property
    def fold(self) -> int:
        return self.__fold

    @property
    def metrics(self) -> MetricsReport:
        return self.__metrics

    @property
    def history(self) -> list[dict]:
        return [dict(record) for record in self.__history]

    @property
    def best_epoch(self) -> int:
        return self.__best_epoch

    @property
    def model(self) -> MilModel:
        return self.__model

    def to_dict(self) -> dict:
        return {"fold": self.__fold, "auc": self.__metrics.auc_macro_ovr,
                "accuracy": self.__metrics.accuracy, "macro_f1": self.__metrics.macro_f1,
                "confusion": self.__metrics.confusion.tolist(),
                "n_samples": self.__metrics.n_samples, "best_epoch": self.__best_epoch,
                "n_epochs": len(self.__history)}


def _mean_or_none(values: list[float]) -> float:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


class CrossValidationReport():
    """
    Per-fold results and their means.

    Parameters
    ----------
    config : :class:`~pathomil.harness.train_config.TrainConfig`
        Training configuration.
    folds : :class:`~pathomil.harness.folds.FoldAssignment`
        Partition.
    results : `list[FoldResult]`
        Result of every fold (in fold order).
    """
    def __init__(self, config: TrainConfig, folds: FoldAssignment, results: list[FoldResult]):
        if len(results) != folds.k:
            raise ValueError(f"Expected {folds.k} fold results but got {len(results)}")

        self.__config = config
        self.__folds = folds
        self.__results = results

    @property
    def config(self) -> TrainConfig:
        return self.__config

    @property
    def folds(self) -> FoldAssignment:
        return self.__folds

    @property
    def results(self) -> list[FoldResult]:
        return list(self.__results)

    @property
    def mean(self) -> dict:
        """
        Gets the arithmetic means of AUC, accuracy, and macro F1 over all folds (the AUC
        mean is taken over the folds in which it is defined).

        Returns
        -------
        `dict`
            Means.
        """
        rows = [r.to_dict() for r in self.__results]
        return {"auc": _mean_or_none([row["auc"] for row in rows]),
                "accuracy": _mean_or_none([row["accuracy"] for row in rows]),
                "macro_f1": _mean_or_none([row["macro_f1"] for row in rows])}

    def rows(self) -> list[dict]:
        """
        One row {fold, auc, accuracy} per fold followed by the mean row (fold "mean").
        """
        rows = [{"fold": r.fold, "auc": r.metrics.auc_macro_ovr,
                 "accuracy": r.metrics.accuracy} for r in self.__results]
        mean = self.mean
        return rows + [{"fold": "mean", "auc": mean["auc"], "accuracy": mean["accuracy"]}]

    def to_dict(self) -> dict:
        return {"config": self.__config.get_attributes(), "k": self.__folds.k,
                "seed": self.__folds.seed,
                "folds": [r.to_dict() for r in self.__results], "mean": self.mean}

    def to_json(self) -> str:
        """
        Serializes this report to JSON with sorted keys -- identical runs result in
        identical bytes.
        """
        return to_stable_json(self.to_dict()) + "\n"

    def save(self, f_out: str) -> None:
        atomic_write(f_out, self.to_json())

    def __str__(self) -> str:
        return "\n".join(f"{row['fold']}: auc {row['auc']} accuracy {row['accuracy']}"
                         for row in self.rows())


def _run_fold(fold: int, train_bags: list[FeatureBag], val_bags: list[FeatureBag],
              config: TrainConfig) -> FoldResult:
    try:
        result = train_model(train_bags, val_bags, config)
    except TrainingError as ex:
        raise TrainingError(str(ex), fold=fold) from ex

    probs = predict_bags(result.model, val_bags)
    metrics = evaluate_metrics(probs, np.array([bag.label for bag in val_bags]))
    return FoldResult(fold, metrics, result.history, result.best_epoch, result.model)


def cross_validate(manifest: DatasetManifest, config: TrainConfig, k: int = 5,
                   n_jobs: int = 1, history_dir: str = None,
                   verbose: bool = False) -> CrossValidationReport:
    """
    Stratified k-fold cross-validation over all non-test entries of a manifest. For every
    fold, a model is trained on the remaining folds, with the held-out fold serving as
    early-stopping validation set, and evaluated on the held-out fold. Every fold uses a
    seed derived from the configured seed and the fold index, so results do not depend on
    `n_jobs`.

    Parameters
    ----------
    manifest : :class:`~pathomil.data.manifest.DatasetManifest`
        Manifest -- entries of the test split are excluded.
    config : :class:`~pathomil.harness.train_config.TrainConfig`
        Training configuration.
    k : `int`, optional
        Number of folds.

        The default is 5.
    n_jobs : `int`, optional
        Number of folds trained in parallel -- all CPUs if -1.

        The default is 1.
    history_dir : `str`, optional
        If not None, the training history of every fold is written to
        "<history_dir>/fold_<i>_history.csv".

        The default is None.
    verbose : `bool`, optional
        If True, per-fold results are logged.

        The default is False.

    Returns
    -------
    :class:`~pathomil.harness.cross_validation.CrossValidationReport`
        Report.
    """
    if not isinstance(manifest, DatasetManifest):
        raise TypeError("'manifest' must be an instance of 'pathomil.data.DatasetManifest' " +
                        f"but not of '{type(manifest)}'")
    if not isinstance(config, TrainConfig):
        raise TypeError("'config' must be an instance of 'pathomil.harness.TrainConfig' " +
                        f"but not of '{type(config)}'")
    if not isinstance(n_jobs, int):
        raise TypeError(f"'n_jobs' must be an instance of 'int' but not of '{type(n_jobs)}'")
    if not (n_jobs == -1 or n_jobs > 0):
        raise ValueError("'n_jobs' must be either -1 or a positive integer")

    entries = manifest.by_split(*DEVELOPMENT_SPLITS)
    n_test = len(manifest.by_split(SPLIT_TEST))
    if n_test != 0:
        logger.info("Excluding %d test entries from cross-validation", n_test)
    assert_split(entries, DEVELOPMENT_SPLITS)
    if len(entries) < k:
        raise ValueError(f"Cross-validation with k={k} needs at least {k} bags " +
                         f"but only {len(entries)} are available")

    bags = manifest.load_bags(entries)
    folds = stratified_kfold([bag.label for bag in bags], k, config.seed)

    tasks = []
    for i in range(k):
        train_bags = [bags[j] for j in folds.train_indices(i)]
        val_bags = [bags[j] for j in folds.fold(i)]
        tasks.append((i, train_bags, val_bags, config.with_seed(derive_seed(config.seed, i))))

    n_processes = cpu_count() if n_jobs == -1 else n_jobs
    n_processes = min(n_processes, k)
    if n_processes == 1:
        results = [_run_fold(*task) for task in tasks]
    else:
        with Pool(processes=n_processes, maxtasksperchild=1) as pool:
            results = pool.starmap(_run_fold, tasks)

    for result in results:
        if verbose:
            logger.info("fold %d: %s", result.fold, result.metrics)
        if history_dir is not None:
            os.makedirs(history_dir, exist_ok=True)
            write_history_csv(result.history,
                              os.path.join(history_dir, f"fold_{result.fold}_history.csv"))

    return CrossValidationReport(config, folds, results)


def split_summary(model: MilModel, manifest: DatasetManifest,
                  include_test: bool = False) -> dict[str, dict]:
    """
    Accuracy and macro F1 of a model on every split of a manifest. The test split is only
    evaluated on explicit request.

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Model.
    manifest : :class:`~pathomil.data.manifest.DatasetManifest`
        Manifest.
    include_test : `bool`, optional
        If True, the test split is evaluated as well.

        The default is False.

    Returns
    -------
    `dict[str, dict]`
        {n_samples, accuracy, macro_f1} per non-empty split.
    """
    splits = DEVELOPMENT_SPLITS + ((SPLIT_TEST,) if include_test else ())
    summary = {}
    for split in splits:
        entries = manifest.by_split(split)
        if len(entries) == 0:
            continue
        bags = manifest.load_bags(entries)
        report = evaluate_metrics(predict_bags(model, bags),
                                  np.array([bag.label for bag in bags]))
        summary[split] = {"n_samples": report.n_samples, "accuracy": report.accuracy,
                          "macro_f1": report.macro_f1}
    return summary
