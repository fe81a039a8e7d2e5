"""
Module provides stratified k-fold partitions.
"""
import numpy as np

from ..rng import CanonicalRng


class FoldAssignment():
    """
    Partition of a dataset into k disjoint folds.

    Parameters
    ----------
    assignment : `numpy.ndarray`
        Fold index of every sample.
    k : `int`
        Number of folds.
    seed : `int`
        Seed the partition was drawn with.
    """
    def __init__(self, assignment: np.ndarray, k: int, seed: int):
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.ndim != 1:
            raise ValueError("'assignment' must be a 1d array")
        if not isinstance(k, int) or k < 2:
            raise ValueError("'k' must be an integer >= 2")
        if np.any(assignment < 0) or np.any(assignment >= k):
            raise ValueError(f"Fold indices must be in [0, {k - 1}]")

        self.__assignment = assignment
        self.__k = k
        self.__seed = seed

    @property
    def assignment(self) -> np.ndarray:
        return self.__assignment.copy()

    @property
    def k(self) -> int:
        return self.__k

    @property
    def seed(self) -> int:
        return self.__seed

    def __len__(self) -> int:
        return self.__assignment.shape[0]

    def fold(self, index: int) -> list[int]:
        """
        Indices of the samples held out in a fold (ascending).
        """
        if not 0 <= index < self.__k:
            raise ValueError(f"Fold index {index} out of range [0, {self.__k})")
        return np.flatnonzero(self.__assignment == index).tolist()

    def train_indices(self, index: int) -> list[int]:
        """
        Indices of the samples of all other folds (ascending).
        """
        if not 0 <= index < self.__k:
            raise ValueError(f"Fold index {index} out of range [0, {self.__k})")
        return np.flatnonzero(self.__assignment != index).tolist()

    @property
    def folds(self) -> list[list[int]]:
        return [self.fold(i) for i in range(self.__k)]

    def class_counts(self, labels: np.ndarray, n_classes: int = 3) -> np.ndarray:
        """
        Number of samples per fold and class.

        Parameters
        ----------
        labels : `numpy.ndarray`
            Labels of all samples.
        n_classes : `int`, optional
            Number of classes.

            The default is 3.

        Returns
        -------
        `numpy.ndarray`
            Counts (k x n_classes).
        """
        labels = np.asarray(labels, dtype=np.int64)
        counts = np.zeros((self.__k, n_classes), dtype=np.int64)
        np.add.at(counts, (self.__assignment, labels), 1)
        return counts

    def __eq__(self, other) -> bool:
        if not isinstance(other, FoldAssignment):
            raise TypeError("Can not compare 'FoldAssignment' instance " +
                            f"with '{type(other)}' instance")

        return self.__k == other.k and np.array_equal(self.__assignment, other.assignment)

    def __str__(self) -> str:
        return f"k: {self.__k} seed: {self.__seed} sizes: " + \
            str(np.bincount(self.__assignment, minlength=self.__k).tolist())


def stratified_kfold(labels: list[int], k: int = 5, seed: int = 42) -> FoldAssignment:
    """
    Stratified k-fold partition. Within each class (in ascending class order), the sample
    indices are shuffled by the canonical PRNG and dealt round-robin to the folds -- every
    class continues at the fold following the last fold of the previous class, so that
    the per-class counts of two folds differ by at most one and the fold sizes stay
    balanced. Classes with fewer than k members are allowed.

    Parameters
    ----------
    labels : `list[int]`
        Labels of all samples.
    k : `int`, optional
        Number of folds.

        The default is 5.
    seed : `int`, optional
        Seed.

        The default is 42.

    Returns
    -------
    :class:`~pathomil.harness.folds.FoldAssignment`
        Partition.
    """
    if not isinstance(k, int) or k < 2:
        raise ValueError("'k' must be an integer >= 2")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("'labels' must be a 1d array")

    rng = CanonicalRng(seed)
    assignment = np.zeros(labels.shape[0], dtype=np.int64)
    next_fold = 0
    for c in np.unique(labels).tolist():
        members = np.flatnonzero(labels == c).tolist()
        rng.shuffle(members)
        for i, index in enumerate(members):
            assignment[index] = (next_fold + i) % k
        next_fold = (next_fold + len(members)) % k

    return FoldAssignment(assignment, k, seed)
