"""
Module provides a deterministic generator of synthetic feature bags with known signal
instances -- a stand-in for foundation-model patch features.
"""
import math
import os
import numpy as np
from tqdm import tqdm

from ..rng import CanonicalRng, derive_seed
from ..serialization import serializable, JsonSerializable, SYNTHETIC_SPEC_ID, \
    to_stable_json, atomic_write
from .bag import FeatureBag
from .manifest import ManifestEntry, DatasetManifest, SPLIT_TEST, SPLIT_UNASSIGNED


@serializable(SYNTHETIC_SPEC_ID, ".pmil_synth")
class SyntheticSpec(JsonSerializable):
    """
    Specification of a synthetic dataset.

    A class-c bag consists of ceil(signal_fraction * n) signal instances
    e_c + N(0, noise_sigma^2 I) and background instances N(0, noise_sigma^2 I), where e_c is
    the c-th canonical basis vector.

    Parameters
    ----------
    n_bags_per_class : `list[int]`, optional
        Number of bags per class.

        The default is [105, 21, 84].
    feature_dim : `int`, optional
        Dimensionality of the instance features.

        The default is 64.
    min_instances : `int`, optional
        Minimum number of instances per bag.

        The default is 50.
    max_instances : `int`, optional
        Maximum number of instances per bag.

        The default is 200.
    signal_fraction : `float`, optional
        Fraction of signal instances per bag.

        The default is 0.2
    noise_sigma : `float`, optional
        Standard deviation of the Gaussian noise.

        The default is 1.
    seed : `int`, optional
        Master seed.

        The default is 42.
    test_fraction : `float`, optional
        Fraction of bags per class that are held out as test bags -- all other bags are
        left unassigned.

        The default is 0.
    """
    def __init__(self, n_bags_per_class: list[int] = (105, 21, 84), feature_dim: int = 64,
                 min_instances: int = 50, max_instances: int = 200,
                 signal_fraction: float = .2, noise_sigma: float = 1., seed: int = 42,
                 test_fraction: float = 0., **kwds):
        n_bags_per_class = [int(n) for n in n_bags_per_class]
        if len(n_bags_per_class) < 2 or any(n < 0 for n in n_bags_per_class):
            raise ValueError("'n_bags_per_class' must contain a nonnegative count for at " +
                             "least two classes")
        if not isinstance(feature_dim, int) or feature_dim < max(2, len(n_bags_per_class)):
            raise ValueError("'feature_dim' must be an integer >= max(2, number of classes)")
        if not isinstance(min_instances, int) or min_instances < 1:
            raise ValueError("'min_instances' must be a positive integer")
        if not isinstance(max_instances, int) or max_instances < min_instances:
            raise ValueError("'max_instances' must be an integer >= 'min_instances'")
        if not 0 <= signal_fraction <= 1:
            raise ValueError("'signal_fraction' must be in [0, 1]")
        if noise_sigma < 0:
            raise ValueError("'noise_sigma' can not be negative")
        if not isinstance(seed, int):
            raise TypeError(f"'seed' must be an instance of 'int' but not of '{type(seed)}'")
        if not 0 <= test_fraction < 1:
            raise ValueError("'test_fraction' must be in [0, 1)")

        self.__n_bags_per_class = n_bags_per_class
        self.__feature_dim = feature_dim
        self.__min_instances = min_instances
        self.__max_instances = max_instances
        self.__signal_fraction = float(signal_fraction)
        self.__noise_sigma = float(noise_sigma)
        self.__seed = seed
        self.__test_fraction = float(test_fraction)

        super().__init__(**kwds)

    @property
    def n_bags_per_class(self) -> list[int]:
        return list(self.__n_bags_per_class)

    @property
    def n_classes(self) -> int:
        return len(self.__n_bags_per_class)

    @property
    def feature_dim(self) -> int:
        return self.__feature_dim

    @property
    def min_instances(self) -> int:
        return self.__min_instances

    @property
    def max_instances(self) -> int:
        return self.__max_instances

    @property
    def signal_fraction(self) -> float:
        return self.__signal_fraction

    @property
    def noise_sigma(self) -> float:
        return self.__noise_sigma

    @property
    def seed(self) -> int:
        return self.__seed

    @property
    def test_fraction(self) -> float:
        return self.__test_fraction

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"n_bags_per_class": self.__n_bags_per_class,
                                           "feature_dim": self.__feature_dim,
                                           "min_instances": self.__min_instances,
                                           "max_instances": self.__max_instances,
                                           "signal_fraction": self.__signal_fraction,
                                           "noise_sigma": self.__noise_sigma,
                                           "seed": self.__seed,
                                           "test_fraction": self.__test_fraction}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SyntheticSpec):
            raise TypeError("Can not compare 'SyntheticSpec' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        return " ".join(f"{key}: {value}" for key, value in self.get_attributes().items())


class SyntheticDataset():
    """
    Generated bags, their per-instance signal flags, and their split assignment.

    Parameters
    ----------
    spec : :class:`~pathomil.data.synthetic.SyntheticSpec`
        Specification the dataset was generated from.
    bags : `list[FeatureBag]`
        Bags.
    signal_masks : `list[numpy.ndarray]`
        Boolean signal flags of the instances of every bag.
    splits : `list[str]`
        Split of every bag.
    """
    def __init__(self, spec: SyntheticSpec, bags: list[FeatureBag],
                 signal_masks: list[np.ndarray], splits: list[str]):
        if not len(bags) == len(signal_masks) == len(splits):
            raise ValueError("'bags', 'signal_masks', and 'splits' must have the same length")

        self.__spec = spec
        self.__bags = bags
        self.__signal_masks = signal_masks
        self.__splits = splits

    @property
    def spec(self) -> SyntheticSpec:
        return self.__spec

    @property
    def bags(self) -> list[FeatureBag]:
        return list(self.__bags)

    @property
    def signal_masks(self) -> list[np.ndarray]:
        return [m.copy() for m in self.__signal_masks]

    @property
    def splits(self) -> list[str]:
        return list(self.__splits)

    def __len__(self) -> int:
        return len(self.__bags)

    def manifest(self, bag_folder: str = "bags") -> DatasetManifest:
        """
        Creates the manifest of this dataset (bag files named `<slide_id>.bag`).
        """
        entries = [ManifestEntry(bag.slide_id, os.path.join(bag_folder, f"{bag.slide_id}.bag"),
                                 bag.label, split)
                   for bag, split in zip(self.__bags, self.__splits)]
        return DatasetManifest(entries)

    def save(self, folder_out: str) -> str:
        """
        Writes all bags, the manifest ("manifest.json"), and the signal flags
        ("signal_masks.json") to a folder.

        Parameters
        ----------
        folder_out : `str`
            Output folder -- created if it does not exist.

        Returns
        -------
        `str`
            Path to the manifest.
        """
        bag_folder = os.path.join(folder_out, "bags")
        os.makedirs(bag_folder, exist_ok=True)
        for bag in self.__bags:
            bag.save(os.path.join(bag_folder, f"{bag.slide_id}.bag"))

        f_manifest = os.path.join(folder_out, "manifest.json")
        self.manifest().save(f_manifest)
        atomic_write(os.path.join(folder_out, "signal_masks.json"),
                     to_stable_json({bag.slide_id: mask.astype(int).tolist()
                                     for bag, mask in zip(self.__bags, self.__signal_masks)},
                                    indent=None))
        return f_manifest


def _generate_bag(spec: SyntheticSpec, index: int, label: int) -> tuple[FeatureBag, np.ndarray]:
    rng = CanonicalRng(derive_seed(spec.seed, index))

    n = rng.randint(spec.min_instances, spec.max_instances)
    n_signal = min(n, math.ceil(spec.signal_fraction * n - 1e-9))
    signal = np.zeros(n, dtype=bool)
    signal[rng.permutation(n)[:n_signal]] = True

    features = spec.noise_sigma * rng.gaussian_array((n, spec.feature_dim))
    features[signal, label] += 1.

    idx = np.arange(n)
    side = math.ceil(math.sqrt(n))
    coords = np.stack(((idx % side) * 256, (idx // side) * 256), axis=1)

    return FeatureBag(f"synth_{index:04d}", label, coords, features), signal


def generate_synthetic_dataset(spec: SyntheticSpec, verbose: bool = False) -> SyntheticDataset:
    """
    Generates a synthetic dataset. Bags are ordered by class and named "synth_<index>";
    each bag is generated from its own sub-seed derived from the master seed and the bag
    index.

    Parameters
    ----------
    spec : :class:`~pathomil.data.synthetic.SyntheticSpec`
        Specification.
    verbose : `bool`, optional
        If True, a progress bar is shown.

        The default is False.

    Returns
    -------
    :class:`~pathomil.data.synthetic.SyntheticDataset`
        Dataset.
    """
    if not isinstance(spec, SyntheticSpec):
        raise TypeError("'spec' must be an instance of 'pathomil.data.SyntheticSpec' " +
                        f"but not of '{type(spec)}'")

    labels = [c for c, count in enumerate(spec.n_bags_per_class) for _ in range(count)]
    bags, signal_masks = [], []
    for index, label in enumerate(tqdm(labels, desc="Generating bags", disable=not verbose)):
        bag, signal = _generate_bag(spec, index, label)
        bags.append(bag)
        signal_masks.append(signal)

    splits = [SPLIT_UNASSIGNED] * len(bags)
    if spec.test_fraction > 0:
        rng = CanonicalRng(spec.seed)
        for c in range(spec.n_classes):
            members = [i for i, label in enumerate(labels) if label == c]
            rng.shuffle(members)
            for i in members[:round(spec.test_fraction * len(members))]:
                splits[i] = SPLIT_TEST

    return SyntheticDataset(spec, bags, signal_masks, splits)
