"""
Module provides tests to test the `pathomil.data` module -- i.e. feature bags, manifests,
the synthetic dataset generator, and the handcrafted patch descriptor.
"""
import os
import json
import numpy as np
import pytest

from pathomil.rng import CanonicalRng
from pathomil.exceptions import FormatError, ManifestError, LeakageError
from pathomil.data import FeatureBag, write_bag, read_bag, ManifestEntry, DatasetManifest, \
    load_manifest, assert_split, SyntheticSpec, generate_synthetic_dataset, DESCRIPTOR_DIM, \
    patch_descriptor, handcrafted_patch_features, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL
from pathomil.wsi import RasterImage, PatchGrid, generate_synthetic_slide

from .utils import get_temp_folder


def _random_bag(n: int = 7, d: int = 5, label: int = 2, seed: int = 0) -> FeatureBag:
    rng = CanonicalRng(seed)
    coords = np.stack((np.arange(n) * 256, np.zeros(n, dtype=np.int64)), axis=1)
    return FeatureBag(f"slide-{seed}", label, coords, rng.gaussian_array((n, d)))


def _write_json(f_out: str, records) -> None:
    with open(f_out, "w", encoding="utf-8") as f:
        json.dump(records, f)


def test_bag_format():
    bag = FeatureBag("ab", 1, np.array([[0, 0], [256, 0]]), np.ones((2, 3)))
    data = write_bag(bag)
    assert data[:20] == b"BAG1" + bytes([1, 0, 0, 0]) + bytes([2, 0, 0, 0]) + \
        bytes([3, 0, 0, 0]) + bytes([1]) + bytes([0, 0, 0])
    assert data[20:24] == bytes([2, 0]) + b"ab"
    assert len(data) == 24 + 2 * 8 + 2 * 3 * 4
    assert read_bag(data) == bag

    bag = _random_bag()
    data = write_bag(bag)
    restored = read_bag(data)
    assert np.array_equal(restored.features, bag.features.astype(np.float32))
    assert write_bag(restored) == data

    f_out = os.path.join(get_temp_folder(), "slide.bag")
    bag.save(f_out)
    assert FeatureBag.load(f_out) == restored


def test_bag_format_errors():
    data = write_bag(_random_bag())

    with pytest.raises(FormatError) as ex:
        read_bag(data[:-6])
    assert "expected" in str(ex.value)

    with pytest.raises(FormatError):
        read_bag(b"BAG2" + data[4:])
    with pytest.raises(FormatError):
        read_bag(data[:4] + bytes([2, 0, 0, 0]) + data[8:])
    with pytest.raises(FormatError):
        read_bag(data[:10])


def test_feature_bag():
    with pytest.raises(ValueError):
        FeatureBag("x", 3, np.zeros((1, 2)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        FeatureBag("x", 0, np.zeros((0, 2)), np.zeros((0, 4)))
    with pytest.raises(ValueError):
        FeatureBag("x", 0, np.zeros((2, 2)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        FeatureBag("x", 0, np.zeros((1, 2)), np.full((1, 4), np.nan))
    with pytest.raises(ValueError):
        FeatureBag("x", 0, np.zeros((1, 2)), np.array([[0., 1e39, 0., 0.]]))
    with pytest.raises(ValueError):
        FeatureBag("x", 0, np.zeros((1, 2)), np.array([[0., -1e39, 0., 0.]]))

    bag = FeatureBag("x", 0, np.zeros((1, 2)), np.array([[0., 3e38, 0., 0.]]))
    assert read_bag(write_bag(bag)).features[0, 1] == np.float32(3e38)


def test_synthetic_dataset():
    spec = SyntheticSpec(n_bags_per_class=[3, 2, 3], feature_dim=8, min_instances=10,
                         max_instances=30, seed=7)
    dataset = generate_synthetic_dataset(spec)
    assert len(dataset) == 8
    assert [bag.label for bag in dataset.bags] == [0, 0, 0, 1, 1, 2, 2, 2]

    for bag, signal in zip(dataset.bags, dataset.signal_masks):
        assert 10 <= bag.n_instances <= 30
        assert signal.sum() == int(np.ceil(.2 * bag.n_instances - 1e-9))

    # Determinism
    other = generate_synthetic_dataset(spec)
    assert [write_bag(b) for b in other.bags] == [write_bag(b) for b in dataset.bags]
    different = generate_synthetic_dataset(SyntheticSpec(n_bags_per_class=[3, 2, 3],
                                                         feature_dim=8, min_instances=10,
                                                         max_instances=30, seed=8))
    assert [write_bag(b) for b in different.bags] != [write_bag(b) for b in dataset.bags]

    dataset = generate_synthetic_dataset(SyntheticSpec(n_bags_per_class=[2, 2, 2],
                                                       feature_dim=4, signal_fraction=1.))
    assert all(signal.all() for signal in dataset.signal_masks)

    dataset = generate_synthetic_dataset(SyntheticSpec(n_bags_per_class=[2, 2, 2],
                                                       feature_dim=4, signal_fraction=0.))
    assert not any(signal.any() for signal in dataset.signal_masks)

    with pytest.raises(ValueError):
        SyntheticSpec(signal_fraction=1.5)
    with pytest.raises(ValueError):
        SyntheticSpec(feature_dim=1)


def test_synthetic_signal():
    spec = SyntheticSpec(n_bags_per_class=[1, 1, 1], feature_dim=6, min_instances=2000,
                         max_instances=2000, signal_fraction=1., noise_sigma=.1, seed=3)
    for bag in generate_synthetic_dataset(spec).bags:
        means = bag.features.mean(axis=0)
        assert int(np.argmax(means)) == bag.label
        assert abs(means[bag.label] - 1.) < .05


def test_synthetic_manifest():
    folder = os.path.join(get_temp_folder(), "synthetic-manifest")
    f_manifest = generate_synthetic_dataset(SyntheticSpec(feature_dim=8)).save(folder)

    manifest = load_manifest(f_manifest)
    assert len(manifest) == 210
    assert manifest.class_counts() == {0: 105, 1: 21, 2: 84}
    assert manifest.load_bag(manifest.entries[0]).slide_id == manifest.entries[0].slide_id

    spec = SyntheticSpec(n_bags_per_class=[10, 10, 10], feature_dim=4, test_fraction=.2)
    dataset = generate_synthetic_dataset(spec)
    manifest = dataset.manifest()
    test_entries = manifest.by_split(SPLIT_TEST)
    assert manifest.class_counts(test_entries) == {0: 2, 1: 2, 2: 2}


def test_manifest():
    folder = os.path.join(get_temp_folder(), "manifest")
    os.makedirs(folder, exist_ok=True)
    _random_bag(label=0).save(os.path.join(folder, "a.bag"))
    f_manifest = os.path.join(folder, "manifest.json")

    _write_json(f_manifest, [])
    assert len(load_manifest(f_manifest)) == 0

    _write_json(f_manifest, [{"slide_id": "a", "bag_path": "a.bag", "label": 0,
                              "split": "train"}])
    manifest = load_manifest(f_manifest)
    assert manifest.entries[0] == ManifestEntry("a", "a.bag", 0, SPLIT_TRAIN)

    _write_json(f_manifest, [{"slide_id": "a", "bag_path": "a.bag", "label": 0},
                             {"slide_id": "a", "bag_path": "a.bag", "label": 0}])
    with pytest.raises(ManifestError) as ex:
        load_manifest(f_manifest)
    assert "a" in str(ex.value)

    _write_json(f_manifest, [{"slide_id": "a", "bag_path": "a.bag", "label": 0,
                              "split": "holdout"}])
    with pytest.raises(ManifestError):
        load_manifest(f_manifest)

    _write_json(f_manifest, [{"slide_id": "b", "bag_path": "b.bag", "label": 0}])
    with pytest.raises(ManifestError):
        load_manifest(f_manifest)

    with open(f_manifest, "w", encoding="utf-8") as f:
        f.write("[{")
    with pytest.raises(ManifestError):
        load_manifest(f_manifest)


def test_split_separation():
    entries = [ManifestEntry("a", "a.bag", 0, SPLIT_TRAIN),
               ManifestEntry("b", "b.bag", 1, SPLIT_VAL),
               ManifestEntry("c", "c.bag", 2, SPLIT_TEST)]
    manifest = DatasetManifest(entries)
    assert_split(manifest.by_split(SPLIT_TRAIN, SPLIT_VAL), (SPLIT_TRAIN, SPLIT_VAL))
    with pytest.raises(LeakageError):
        assert_split(manifest.entries, (SPLIT_TRAIN, SPLIT_VAL))

    with pytest.raises(LeakageError):
        DatasetManifest([ManifestEntry("a", "a.bag", 0, SPLIT_TRAIN),
                         ManifestEntry("b", "a.bag", 0, SPLIT_TEST)])


def test_patch_descriptor():
    patch = RasterImage(np.full((32, 32, 3), (200, 40, 90), dtype=np.uint8))
    descriptor = patch_descriptor(patch)
    assert len(descriptor) == DESCRIPTOR_DIM == 30
    for group in range(3):
        hist = descriptor[8 * group:8 * (group + 1)]
        assert np.sum(hist == 1.) == 1 and np.sum(hist) == 1.
    assert descriptor[25] < 1e-12 and descriptor[27] < 1e-12
    assert descriptor[28] == 0.

    red = patch_descriptor(RasterImage(np.full((16, 16, 3), (255, 0, 0), dtype=np.uint8)))
    blue = patch_descriptor(RasterImage(np.full((16, 16, 3), (0, 0, 255), dtype=np.uint8)))
    assert np.linalg.norm(red - blue) > .5


def test_handcrafted_patch_features():
    img, _ = generate_synthetic_slide(width=768, height=512, n_blobs=2, seed=5)
    grid = PatchGrid(np.array([[0, 0], [256, 0], [512, 256]]))
    features = handcrafted_patch_features(img, grid)
    assert features.shape == (3, DESCRIPTOR_DIM)
    assert np.all(np.isfinite(features))
    assert np.all(features >= 0.) and np.all(features <= 1.)
    for group in range(3):
        assert np.allclose(features[:, 8 * group:8 * (group + 1)].sum(axis=1), 1., atol=1e-6)

    with pytest.raises(ValueError):
        handcrafted_patch_features(img, PatchGrid(np.array([[768, 0]])))
