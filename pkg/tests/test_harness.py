"""
Module provides tests to test the training harness -- i.e. folds, training, and
cross-validation.
"""
import os
import json
import numpy as np
import pandas as pd
import pytest
import matplotlib.pyplot as plt

from pathomil.models import KIND_CLAM_SB, KIND_ABMIL, extract_attention
from pathomil.data import SyntheticSpec, generate_synthetic_dataset, load_manifest, \
    SPLIT_TEST
from pathomil.harness import TrainConfig, CLAM_DEFAULTS, ABMIL_DEFAULTS, \
    inverse_frequency_weights, stratified_kfold, train_model, predict_bags, \
    write_history_csv, HISTORY_COLUMNS, cross_validate, split_summary, plot_learning_curves, \
    history_to_dataframe

from .utils import get_temp_folder


_CLAM_DIMS = {"embed_dim": 16, "attn_hidden": 8, "cls_hidden": 8}
_ABMIL_DIMS = {"n_heads": 2, "head_hidden": 8, "bottleneck_dim": 16}


def _small_dataset(seed: int = 5, test_fraction: float = 0.):
    spec = SyntheticSpec(n_bags_per_class=[6, 4, 5], feature_dim=8, min_instances=10,
                         max_instances=20, noise_sigma=.3, seed=seed,
                         test_fraction=test_fraction)
    return generate_synthetic_dataset(spec)


def test_stratified_kfold():
    labels = [0] * 10 + [1] * 5 + [2] * 5
    folds = stratified_kfold(labels, k=5, seed=42)
    assert len(folds) == 20
    assert folds.class_counts(np.array(labels)).tolist() == [[2, 1, 1]] * 5

    indices = sorted(i for fold in folds.folds for i in fold)
    assert indices == list(range(20))
    for i in range(5):
        assert not set(folds.fold(i)) & set(folds.train_indices(i))
        assert len(folds.fold(i)) + len(folds.train_indices(i)) == 20

    assert stratified_kfold(labels, k=5, seed=42) == folds

    labels = [0] * 105 + [1] * 21 + [2] * 84
    counts = stratified_kfold(labels, k=5).class_counts(np.array(labels))
    assert counts[:, 0].tolist() == [21] * 5
    assert set(counts[:, 1].tolist()) <= {4, 5} and counts[:, 1].sum() == 21
    assert set(counts[:, 2].tolist()) <= {16, 17} and counts[:, 2].sum() == 84
    sizes = counts.sum(axis=1)
    assert sizes.max() - sizes.min() <= 1

    # Fewer members than folds
    folds = stratified_kfold([0, 1, 2], k=5)
    assert sorted(len(fold) for fold in folds.folds) == [0, 0, 1, 1, 1]

    with pytest.raises(ValueError):
        stratified_kfold(labels, k=1)


def test_train_config():
    config = TrainConfig()
    for key, value in CLAM_DEFAULTS.items():
        assert getattr(config, key) == value

    config = TrainConfig(model_kind=KIND_ABMIL)
    for key, value in ABMIL_DEFAULTS.items():
        assert getattr(config, key) == value
    assert config.loss_config([0, 0, 0, 1, 2, 2]).class_weights is not None

    assert TrainConfig(lr=1e-3).lr == 1e-3
    assert TrainConfig().with_seed(7).seed == 7
    assert TrainConfig().with_seed(7) != TrainConfig()

    weights = inverse_frequency_weights([0, 0, 0, 1, 2, 2])
    assert np.mean(weights) == pytest.approx(1.)
    assert weights[1] > weights[2] > weights[0]

    with pytest.raises(ValueError):
        TrainConfig(model_kind="transmil")
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.)


def test_train_model():
    bags = _small_dataset().bags
    train_bags, val_bags = bags[::2], bags[1::2]

    config = TrainConfig(max_epochs=1, lr=1e-3, warmup_epochs=0, model_dims=_CLAM_DIMS)
    result = train_model(train_bags, val_bags, config)
    assert result.n_epochs == 1 and len(result.history) == 1
    assert result.best_epoch == 0
    assert list(result.history[0].keys()) == HISTORY_COLUMNS
    assert np.isfinite(result.history[0]["val_loss"])

    config = TrainConfig(max_epochs=4, lr=1e-3, warmup_epochs=0, seed=3,
                         model_dims=_CLAM_DIMS)
    first = train_model(train_bags, val_bags, config)
    second = train_model(train_bags, val_bags, config)
    assert first.history == second.history
    assert first.model == second.model

    probs = predict_bags(first.model, val_bags)
    assert probs.shape == (len(val_bags), 3)
    assert np.allclose(probs.sum(axis=1), 1.)

    f_out = os.path.join(get_temp_folder(), "history.csv")
    write_history_csv(first.history, f_out)
    df = pd.read_csv(f_out)
    assert list(df.columns) == HISTORY_COLUMNS
    assert len(df) == first.n_epochs
    assert history_to_dataframe(first.history)["val_loss"].tolist() == \
        [row["val_loss"] for row in first.history]

    ax = plot_learning_curves(first.history, show=False)
    assert ax is not None
    plt.close("all")

    with pytest.warns(UserWarning):
        result = train_model(train_bags, [], config)
    assert all(np.isnan(row["val_acc"]) for row in result.history)

    with pytest.raises(ValueError):
        train_model([], val_bags, config)


def test_train_model_abmil():
    bags = _small_dataset(seed=8).bags
    config = TrainConfig(model_kind=KIND_ABMIL, max_epochs=2,
                         model_dims=_ABMIL_DIMS)
    result = train_model(bags[::2], bags[1::2], config)
    assert result.model.kind == KIND_ABMIL
    assert 1 <= result.n_epochs <= 2


def test_cross_validate():
    folder = os.path.join(get_temp_folder(), "cv-dataset")
    manifest = load_manifest(_small_dataset(test_fraction=.2).save(folder))
    n_test = len(manifest.by_split(SPLIT_TEST))
    assert n_test > 0

    config = TrainConfig(max_epochs=2, lr=1e-3, warmup_epochs=0,
                         model_dims=_CLAM_DIMS)
    history_dir = os.path.join(folder, "histories")
    report = cross_validate(manifest, config, k=3, history_dir=history_dir)

    assert report.folds.k == 3
    assert len(report.folds) == len(manifest) - n_test
    assert sorted(os.listdir(history_dir)) == [f"fold_{i}_history.csv" for i in range(3)]

    rows = report.rows()
    assert len(rows) == 4 and rows[-1]["fold"] == "mean"
    assert abs(rows[-1]["accuracy"] - np.mean([row["accuracy"] for row in rows[:-1]])) < 1e-12

    values = json.loads(report.to_json())
    assert values["k"] == 3 and len(values["folds"]) == 3
    assert set(values["mean"].keys()) == {"auc", "accuracy", "macro_f1"}

    again = cross_validate(manifest, config, k=3)
    assert again.to_json() == report.to_json()

    f_out = os.path.join(folder, "cv.json")
    report.save(f_out)
    with open(f_out, "r", encoding="utf-8") as f:
        assert f.read() == report.to_json()

    with pytest.raises(ValueError):
        cross_validate(manifest, config, k=100)

    summary = split_summary(report.results[0].model, manifest)
    assert SPLIT_TEST not in summary
    assert sum(row["n_samples"] for row in summary.values()) == len(manifest) - n_test
    summary = split_summary(report.results[0].model, manifest, include_test=True)
    assert summary[SPLIT_TEST]["n_samples"] == n_test


@pytest.mark.slow
def test_cross_validate_parallel():
    folder = os.path.join(get_temp_folder(), "cv-parallel")
    manifest = load_manifest(_small_dataset().save(folder))
    config = TrainConfig(max_epochs=2, model_dims=_CLAM_DIMS)
    assert cross_validate(manifest, config, k=3, n_jobs=3).to_json() == \
        cross_validate(manifest, config, k=3, n_jobs=1).to_json()


def _acceptance_manifest(name: str):
    spec = SyntheticSpec(feature_dim=64, signal_fraction=.5, noise_sigma=.5, seed=42)
    dataset = generate_synthetic_dataset(spec)
    folder = os.path.join(get_temp_folder(), name)
    return dataset, load_manifest(dataset.save(folder))


@pytest.mark.slow
def test_clam_synthetic_acceptance():
    _, manifest = _acceptance_manifest("acceptance-clam")
    report = cross_validate(manifest, TrainConfig(model_kind=KIND_CLAM_SB), k=5, n_jobs=-1)
    assert report.mean["accuracy"] >= .90
    assert report.mean["auc"] >= .95


@pytest.mark.slow
def test_abmil_synthetic_acceptance():
    _, manifest = _acceptance_manifest("acceptance-abmil")
    report = cross_validate(manifest, TrainConfig(model_kind=KIND_ABMIL), k=5, n_jobs=-1)
    assert report.mean["accuracy"] >= .85


@pytest.mark.slow
def test_attention_localizes_signal():
    dataset, _ = _acceptance_manifest("acceptance-attention")
    folds = stratified_kfold([bag.label for bag in dataset.bags], k=5, seed=42)
    train_bags = [dataset.bags[i] for i in folds.train_indices(0)]
    val_indices = folds.fold(0)
    result = train_model(train_bags, [dataset.bags[i] for i in val_indices], TrainConfig())

    n_localized = 0
    for i in val_indices:
        attention = extract_attention(result.model, dataset.bags[i].features)
        signal = dataset.signal_masks[i]
        if attention[signal].mean() >= 2. * attention[~signal].mean():
            n_localized += 1
    assert n_localized >= .8 * len(val_indices)
