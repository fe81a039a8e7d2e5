"""
Module provides feature bags -- i.e. one slide represented by the features and level-0
coordinates of its patches -- and their binary file format "BAG1".

BAG1 layout (all integers little-endian):
magic "BAG1" | u32 version (1) | u32 n | u32 d | u8 label | 3 zero bytes |
u16 length of the slide id + UTF-8 slide id | n x (u32 x, u32 y) |
n x d float32 features (row-major).
"""
import struct
import numpy as np

from ..exceptions import FormatError
from ..serialization import atomic_write


BAG1_MAGIC = b"BAG1"
BAG1_VERSION = 1
LABELS = (0, 1, 2)
LABEL_NAMES = ("low", "medium", "high")

_FIXED_HEADER = struct.Struct("<4sIIIB3x")


class FeatureBag():
    """
    Feature bag of a single slide.

    Parameters
    ----------
    slide_id : `str`
        Identifier of the slide.
    label : `int`
        Risk class -- 0 (low), 1 (medium), or 2 (high).
    coords : `numpy.ndarray`
        Level-0 top-left corners of the patches (n x 2) as (x, y).
    features : `numpy.ndarray`
        Instance features (n x d).
    """
    def __init__(self, slide_id: str, label: int, coords: np.ndarray, features: np.ndarray):
        if not isinstance(slide_id, str):
            raise TypeError("'slide_id' must be an instance of 'str' " +
                            f"but not of '{type(slide_id)}'")
        if len(slide_id.encode("utf-8")) > 0xFFFF:
            raise ValueError("'slide_id' is too long")
        if not isinstance(label, (int, np.integer)) or int(label) not in LABELS:
            raise ValueError(f"'label' must be one of {LABELS} but not {label}")
        coords = np.asarray(coords, dtype=np.int64)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ValueError("'features' must be a 2d array with at least one instance")
        if coords.shape != (features.shape[0], 2):
            raise ValueError(f"'coords' must be of shape ({features.shape[0]}, 2) " +
                             f"but not {coords.shape}")
        if np.any(coords < 0) or np.any(coords > 0xFFFFFFFF):
            raise ValueError("Coordinates must fit into unsigned 32-bit integers")
        if not np.all(np.isfinite(features)):
            raise ValueError("All features must be finite")
        with np.errstate(over="ignore"):
            if not np.all(np.isfinite(features.astype(np.float32))):
                raise ValueError("All features must be within the 32-bit float range")

        self.__slide_id = slide_id
        self.__label = int(label)
        self.__coords = coords
        self.__features = features

    @property
    def slide_id(self) -> str:
        return self.__slide_id

    @property
    def label(self) -> int:
        return self.__label

    @property
    def coords(self) -> np.ndarray:
        """
        Gets the patch coordinates.

        Returns
        -------
        `numpy.ndarray`
            Level-0 top-left corners (n x 2).
        """
        return self.__coords.copy()

    @property
    def features(self) -> np.ndarray:
        """
        Gets the instance features.

        Returns
        -------
        `numpy.ndarray`
            Features (n x d).
        """
        return self.__features.copy()

    @property
    def n_instances(self) -> int:
        return self.__features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.__features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureBag):
            raise TypeError("Can not compare 'FeatureBag' instance " +
                            f"with '{type(other)}' instance")

        return self.__slide_id == other.slide_id and self.__label == other.label and \
            np.array_equal(self.__coords, other.coords) and \
            np.array_equal(self.__features, other.features)

    def __str__(self) -> str:
        return f"slide_id: {self.__slide_id} label: {self.__label} " +\
            f"n: {self.n_instances} d: {self.feature_dim}"

    def save(self, f_out: str) -> None:
        """
        Writes this bag to a BAG1 file (atomically).

        Parameters
        ----------
        f_out : `str`
            Path to the file.
        """
        atomic_write(f_out, write_bag(self))

    @staticmethod
    def load(f_in: str) -> "FeatureBag":
        """
        Reads a bag from a BAG1 file.

        Parameters
        ----------
        f_in : `str`
            Path to the file.

        Returns
        -------
        :class:`~pathomil.data.bag.FeatureBag`
            Bag.
        """
        with open(f_in, "rb") as f:
            return read_bag(f.read())


def write_bag(bag: FeatureBag) -> bytes:
    """
    Serializes a bag to the BAG1 format -- features are stored as 32-bit floats.

    Parameters
    ----------
    bag : :class:`~pathomil.data.bag.FeatureBag`
        Bag.

    Returns
    -------
    `bytes`
        BAG1 bytes.
    """
    if not isinstance(bag, FeatureBag):
        raise TypeError("'bag' must be an instance of 'pathomil.data.FeatureBag' " +
                        f"but not of '{type(bag)}'")

    slide_id = bag.slide_id.encode("utf-8")
    header = _FIXED_HEADER.pack(BAG1_MAGIC, BAG1_VERSION, bag.n_instances, bag.feature_dim,
                                bag.label)
    return header + struct.pack("<H", len(slide_id)) + slide_id + \
        bag.coords.astype("<u4").tobytes() + bag.features.astype("<f4").tobytes()


def read_bag(data: bytes) -> FeatureBag:
    """
    Deserializes a bag from the BAG1 format.

    Parameters
    ----------
    data : `bytes`
        BAG1 bytes.

    Returns
    -------
    :class:`~pathomil.data.bag.FeatureBag`
        Bag.
    """
    if not isinstance(data, bytes):
        raise TypeError(f"'data' must be an instance of 'bytes' but not of '{type(data)}'")
    if len(data) < 4 or data[:4] != BAG1_MAGIC:
        raise FormatError(f"Bad magic: expected {BAG1_MAGIC!r} but got {data[:4]!r}", offset=0)
    if len(data) < _FIXED_HEADER.size + 2:
        raise FormatError(f"Truncated header: expected at least {_FIXED_HEADER.size + 2} " +
                          f"bytes but got {len(data)}", offset=len(data))

    _, version, n, d, label = _FIXED_HEADER.unpack_from(data, 0)
    if version != BAG1_VERSION:
        raise FormatError(f"Unsupported version {version} (expected {BAG1_VERSION})", offset=4)
    if n < 1 or d < 1:
        raise FormatError(f"Invalid bag dimensions n={n}, d={d}", offset=8)
    if label not in LABELS:
        raise FormatError(f"Invalid label {label}", offset=16)
    if data[17:20] != b"\x00\x00\x00":
        raise FormatError("Padding bytes must be zero", offset=17)

    offset = _FIXED_HEADER.size
    id_len, = struct.unpack_from("<H", data, offset)
    offset += 2
    expected = offset + id_len + 8 * n + 4 * n * d
    if len(data) != expected:
        raise FormatError(f"Length mismatch: expected {expected} bytes for n={n}, d={d} " +
                          f"but got {len(data)}", offset=min(len(data), expected))
    try:
        slide_id = data[offset:offset + id_len].decode("utf-8")
    except UnicodeDecodeError as ex:
        raise FormatError("Slide id is not valid UTF-8", offset=offset) from ex
    offset += id_len

    coords = np.frombuffer(data, dtype="<u4", count=2 * n, offset=offset).reshape(n, 2)
    offset += 8 * n
    features = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    if not np.all(np.isfinite(features)):
        raise FormatError("Features must be finite", offset=offset)

    return FeatureBag(slide_id, int(label), coords.astype(np.int64),
                      features.astype(np.float64))
