"""
Module provides dataset manifests -- i.e. JSON arrays of
{slide_id, bag_path, label, split} records.
"""
import os
import json
from collections import Counter

from ..exceptions import ManifestError, LeakageError
from ..serialization import to_stable_json, atomic_write
from .bag import FeatureBag, LABELS


SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_TEST = "test"
SPLIT_UNASSIGNED = "unassigned"
SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST, SPLIT_UNASSIGNED)


class ManifestEntry():
    """
    Single manifest record.

    Parameters
    ----------
    slide_id : `str`
        Identifier of the slide.
    bag_path : `str`
        Path to the BAG1 file -- relative paths are resolved against the manifest's folder.
    label : `int`
        Risk class.
    split : `str`, optional
        One of "train", "val", "test", "unassigned".

        The default is "unassigned".
    """
    def __init__(self, slide_id: str, bag_path: str, label: int,
                 split: str = SPLIT_UNASSIGNED):
        if not isinstance(slide_id, str) or slide_id == "":
            raise ManifestError("'slide_id' must be a non-empty string")
        if not isinstance(bag_path, str) or bag_path == "":
            raise ManifestError(f"Entry '{slide_id}': 'bag_path' must be a non-empty string")
        if isinstance(label, bool) or not isinstance(label, int) or label not in LABELS:
            raise ManifestError(f"Entry '{slide_id}': label must be one of {LABELS} " +
                                f"but not {label!r}")
        if split not in SPLITS:
            raise ManifestError(f"Entry '{slide_id}': unknown split '{split}' " +
                                f"(must be one of {SPLITS})")

        self.__slide_id = slide_id
        self.__bag_path = bag_path
        self.__label = label
        self.__split = split

    @property
    def slide_id(self) -> str:
        return self.__slide_id

    @property
    def bag_path(self) -> str:
        return self.__bag_path

    @property
    def label(self) -> int:
        return self.__label

    @property
    def split(self) -> str:
        return self.__split

    def with_split(self, split: str) -> "ManifestEntry":
        """
        Returns a copy of this entry assigned to a different split.
        """
        return ManifestEntry(self.__slide_id, self.__bag_path, self.__label, split)

    def to_dict(self) -> dict:
        return {"slide_id": self.__slide_id, "bag_path": self.__bag_path,
                "label": self.__label, "split": self.__split}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ManifestEntry):
            raise TypeError("Can not compare 'ManifestEntry' instance " +
                            f"with '{type(other)}' instance")

        return self.to_dict() == other.to_dict()

    def __str__(self) -> str:
        return f"{self.__slide_id} ({self.__split}, label {self.__label}): {self.__bag_path}"


class DatasetManifest():
    """
    Dataset manifest.

    Parameters
    ----------
    entries : `list[ManifestEntry]`
        Entries -- slide ids must be unique.
    base_dir : `str`, optional
        Folder against which relative bag paths are resolved.

        The default is the current working directory.
    """
    def __init__(self, entries: list[ManifestEntry], base_dir: str = "."):
        if any(not isinstance(e, ManifestEntry) for e in entries):
            raise TypeError("All entries must be instances of 'pathomil.data.ManifestEntry'")

        duplicates = sorted(sid for sid, count in
                            Counter(e.slide_id for e in entries).items() if count > 1)
        if len(duplicates) != 0:
            raise ManifestError(f"Duplicated slide ids: {', '.join(duplicates)}")

        splits_by_path = {}
        for e in entries:
            splits_by_path.setdefault(os.path.normpath(e.bag_path), set()).add(e.split)
        shared = sorted(p for p, splits in splits_by_path.items()
                        if SPLIT_TEST in splits and len(splits) > 1)
        if len(shared) != 0:
            raise LeakageError(f"Bag files shared between test and non-test entries: {shared}")

        self.__entries = list(entries)
        self.__base_dir = base_dir

    @property
    def entries(self) -> list[ManifestEntry]:
        """
        Gets all entries.

        Returns
        -------
        `list[ManifestEntry]`
            Entries.
        """
        return list(self.__entries)

    @property
    def base_dir(self) -> str:
        return self.__base_dir

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.__entries]

    def __len__(self) -> int:
        return len(self.__entries)

    def by_split(self, *splits: str) -> list[ManifestEntry]:
        """
        Gets all entries of the given splits (in manifest order).
        """
        for split in splits:
            if split not in SPLITS:
                raise ValueError(f"Unknown split '{split}'")
        return [e for e in self.__entries if e.split in splits]

    def class_counts(self, entries: list[ManifestEntry] = None) -> dict[int, int]:
        """
        Counts the entries per class.

        Parameters
        ----------
        entries : `list[ManifestEntry]`, optional
            Subset of entries -- all entries if None.

            The default is None.

        Returns
        -------
        `dict[int, int]`
            Number of entries per class.
        """
        entries = self.__entries if entries is None else entries
        counts = Counter(e.label for e in entries)
        return {c: counts.get(c, 0) for c in LABELS}

    def resolve(self, entry: ManifestEntry) -> str:
        """
        Resolves the bag path of an entry.
        """
        if os.path.isabs(entry.bag_path):
            return entry.bag_path
        return os.path.join(self.__base_dir, entry.bag_path)

    def load_bag(self, entry: ManifestEntry) -> FeatureBag:
        """
        Loads the bag of an entry and checks it against the entry.
        """
        bag = FeatureBag.load(self.resolve(entry))
        if bag.label != entry.label:
            raise ManifestError(f"Entry '{entry.slide_id}': label {entry.label} does not " +
                                f"match the bag's label {bag.label}")
        return bag

    def load_bags(self, entries: list[ManifestEntry] = None) -> list[FeatureBag]:
        """
        Loads the bags of several entries (all entries if None).
        """
        entries = self.__entries if entries is None else entries
        return [self.load_bag(e) for e in entries]

    def to_json(self) -> str:
        return to_stable_json([e.to_dict() for e in self.__entries])

    def save(self, f_out: str) -> None:
        """
        Writes this manifest as JSON file (atomically).
        """
        atomic_write(f_out, self.to_json())

    def __str__(self) -> str:
        counts = Counter(e.split for e in self.__entries)
        return f"{len(self)} entries {dict(sorted(counts.items()))}"


def load_manifest(f_in: str, check_files: bool = True) -> DatasetManifest:
    """
    Loads and validates a manifest.

    Parameters
    ----------
    f_in : `str`
        Path to the JSON file.
    check_files : `bool`, optional
        If True, all bag files must exist.

        The default is True.

    Returns
    -------
    :class:`~pathomil.data.manifest.DatasetManifest`
        Manifest.
    """
    with open(f_in, "r", encoding="utf-8") as f:
        try:
            records = json.load(f)
        except json.JSONDecodeError as ex:
            raise ManifestError(f"'{f_in}' is not valid JSON: {ex}") from ex
    if not isinstance(records, list):
        raise ManifestError("A manifest must be a JSON array of entries")

    entries = []
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            raise ManifestError(f"Entry {i} is not a JSON object")
        unknown = set(record.keys()) - {"slide_id", "bag_path", "label", "split"}
        if unknown:
            raise ManifestError(f"Entry {i}: unknown fields {sorted(unknown)}")
        try:
            entries.append(ManifestEntry(record["slide_id"], record["bag_path"],
                                         record["label"], record.get("split", SPLIT_UNASSIGNED)))
        except KeyError as ex:
            raise ManifestError(f"Entry {i}: missing field {ex}") from ex

    manifest = DatasetManifest(entries, os.path.dirname(os.path.abspath(f_in)))
    if check_files:
        missing = [e.slide_id for e in entries if not os.path.isfile(manifest.resolve(e))]
        if len(missing) != 0:
            raise ManifestError(f"Missing bag files of: {', '.join(missing)}")

    return manifest


def assert_split(entries: list[ManifestEntry], allowed: tuple[str, ...]) -> None:
    """
    Guards against leakage across the training/test separation -- raises
    :class:`~pathomil.exceptions.LeakageError` if any entry is not in an allowed split.

    Parameters
    ----------
    entries : `list[ManifestEntry]`
        Entries.
    allowed : `tuple[str, ...]`
        Allowed splits.
    """
    offending = [e.slide_id for e in entries if e.split not in allowed]
    if len(offending) != 0:
        shown = ", ".join(offending[:5]) + (" ..." if len(offending) > 5 else "")
        raise LeakageError(f"{len(offending)} entries are not in the splits {allowed}: {shown}")
