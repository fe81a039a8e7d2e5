"""
Module provides functions and classes for serialization.

Configuration objects are stored as (gzip compressed) msgpack files so that a run can be
repeated with exactly the same settings. Besides, this module provides the helpers shared by
the binary container formats (PMD1, PGB1) -- i.e. a 4-byte magic, a little-endian u32 header
length, a JSON header, and a binary payload.
"""
from typing import Any, Union
from abc import abstractmethod, ABC
import json
import gzip
import zlib
import os
import struct
import tempfile
import umsgpack
import numpy as np

from .exceptions import FormatError


TRAIN_CONFIG_ID                         = 0
FOCAL_LOSS_CONFIG_ID                    = 1
SEGMENTATION_CONFIG_ID                  = 2
SYNTHETIC_SPEC_ID                       = 3
GBDT_CONFIG_ID                          = 4
OVERLAY_CONFIG_ID                       = 5
METRICS_REPORT_ID                       = 6


def serializable(my_id: int, my_file_ext: str) -> Any:
    """
    Decorator for a serializable class -- i.e. subclass of
    :class:`~pathomil.serialization.Serializable`.

    This decorator registers a new class as a serializable class.

    Parameters
    ----------
    my_id : `int`
        ID of the class.
    my_file_ext : `str`
        File extension.
    """
    def wrapper(my_class):
        @staticmethod
        def unpackb(data: bytes) -> Any:
            return my_class(**umsgpack.unpackb(data))
        setattr(my_class, "unpackb", unpackb)

        @staticmethod
        def file_ext() -> str:
            return my_file_ext
        setattr(my_class, "file_ext", file_ext)

        return umsgpack.ext_serializable(my_id)(my_class)

    return wrapper


class Serializable(ABC):
    """
    Base class for a serializable class -- must be used in conjunction with the
    :func:`~pathomil.serialization.serializable` decorator.
    """
    def __init__(self, **kwds):
        super().__init__(**kwds)

    @abstractmethod
    def get_attributes(self) -> dict:
        """
        Gets all attributes to be serialized -- these attributes are passed to the
        constructor when the object is deserialized.

        Returns
        -------
        `dict`
            Dictionary of attributes -- i.e. pairs of attribute name + value.
        """
        return {}

    def file_ext(self) -> str:
        """
        Returns the file extension of this class.

        This function is automatically implemented by applying the
        :func:`~pathomil.serialization.serializable` decorator.

        Returns
        -------
        `str`
            File extension.
        """
        raise NotImplementedError()

    def packb(self) -> bytes:
        """
        Serializes the attributes of this object.

        Returns
        -------
        `bytes`
            Serialized object.
        """
        return umsgpack.packb(self.get_attributes())

    @classmethod
    def load_from_file(cls, f_in: str, use_zip: bool = True) -> Any:
        """
        Deserializes an instance of this class from a (compressed) file.

        Parameters
        ----------
        f_in : `str`
            Path to the file from which to deserialize the object.
        use_zip : `bool`, optional
            If True, the file `f_in` is supposed to be gzip compressed.

            The default is True.

        Returns
        -------
        `Any`
            Deserialized object.
        """
        obj = load_from_file(f_in, use_zip)
        if not isinstance(obj, cls):
            raise FormatError(f"'{f_in}' does not contain an instance of '{cls.__name__}' " +
                              f"but of '{type(obj).__name__}'")
        return obj

    def save_to_file(self, f_out: str, use_zip: bool = True) -> str:
        """
        Serializes this instance and stores it in a (compressed) file.

        Parameters
        ----------
        f_out : `str`
            Path to the file where this serialized object will be stored -- the file
            extension of this class is appended if missing.
        use_zip : `bool`, optional
            If True, the file will be gzip compressed.

            The default is True.

        Returns
        -------
        `str`
            Path to the written file.
        """
        if not f_out.endswith(self.file_ext()):
            f_out += self.file_ext()

        save_to_file(f_out, self, use_zip)
        return f_out


class JsonSerializable(Serializable):
    """
    Base class for serializable classes whose attributes also appear in JSON reports --
    :func:`~pathomil.serialization.to_stable_json` writes them as their attributes.
    Inherits from :class:`~pathomil.serialization.Serializable`.
    """


def __json_default(obj: Any) -> Any:
    if isinstance(obj, JsonSerializable):
        return obj.get_attributes()
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type '{type(obj)}' is not JSON serializable")


def to_stable_json(data: Any, indent: int = 2) -> str:
    """
    Serializes data to JSON with sorted keys -- i.e. identical data always results in
    identical bytes.

    Parameters
    ----------
    data : `Any`
        Data to be serialized. NumPy arrays and scalars as well as
        :class:`~pathomil.serialization.JsonSerializable` instances are supported.
    indent : `int`, optional
        Indentation -- if None, the most compact representation is used.

        The default is 2.

    Returns
    -------
    `str`
        JSON data.
    """
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(data, default=__json_default, sort_keys=True, indent=indent,
                      separators=separators, allow_nan=False)


def load_from_file(f_in: str, use_compression: bool = True) -> Any:
    """
    Deserializes data from a (compressed) file.

    Parameters
    ----------
    f_in : `str`
        Path to the file from which to deserialize the data.
    use_compression : `bool`, optional
        If True, the file `f_in` is supposed to be gzip compressed.

        The default is True.

    Returns
    -------
    `Any`
        Deserialized data.
    """
    with open(f_in, "rb") as f:
        data = f.read()

    try:
        if use_compression is True:
            data = gzip.decompress(data)
        return umsgpack.unpackb(data)
    except (gzip.BadGzipFile, EOFError, zlib.error) as ex:
        raise FormatError(f"'{f_in}' is not a gzip compressed file: {ex}") from ex
    except umsgpack.UnpackException as ex:
        raise FormatError(f"'{f_in}' is not a valid msgpack file: {ex!r}") from ex
    except (TypeError, ValueError) as ex:
        raise FormatError(f"'{f_in}' contains invalid attributes: {ex}") from ex


def save_to_file(f_out: str, data: Any, use_compression: bool = True) -> None:
    """
    Serializes data and stores it (atomically) in a (compressed) file.

    Parameters
    ----------
    f_out : `str`
        Path to the file where the serialized data will be stored.
    data : `Any`
        Data to be serialized.
    use_compression : `bool`, optional
        If True, the file will be gzip compressed.

        The default is True.
    """
    data = umsgpack.packb(data)
    if use_compression is True:
        data = gzip.compress(data, mtime=0)
    atomic_write(f_out, data)

def atomic_write(f_out: str, data: Union[bytes, str]) -> None:
    """
    Writes data to a file atomically -- i.e. the data is written to a temporary file in the
    same folder which then replaces `f_out`.

    Parameters
    ----------
    f_out : `str`
        Path to the file.
    data : `bytes` or `str`
        Data to be written -- strings are UTF-8 encoded.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    if not isinstance(data, bytes):
        raise TypeError(f"'data' must be an instance of 'bytes' or 'str' but not of '{type(data)}'")

    folder = os.path.dirname(os.path.abspath(f_out))
    fd, tmp_path = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(f_out))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, f_out)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def pack_container(magic: bytes, header: dict, payload: bytes) -> bytes:
    """
    Packs a binary container -- i.e. 4-byte magic, u32 little-endian header length,
    JSON header (sorted keys, compact), and the binary payload.

    Parameters
    ----------
    magic : `bytes`
        4-byte magic.
    header : `dict`
        JSON header.
    payload : `bytes`
        Binary payload.

    Returns
    -------
    `bytes`
        Container bytes.
    """
    if not isinstance(magic, bytes) or len(magic) != 4:
        raise ValueError("'magic' must be 4 bytes")

    header_bytes = to_stable_json(header, indent=None).encode("utf-8")
    return magic + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def unpack_container(data: bytes, magic: bytes) -> tuple[dict, int]:
    """
    Parses the magic and the JSON header of a binary container.

    Parameters
    ----------
    data : `bytes`
        Container bytes.
    magic : `bytes`
        Expected 4-byte magic.

    Returns
    -------
    `tuple[dict, int]`
        JSON header and the byte offset at which the payload starts.
    """
    if not isinstance(data, bytes):
        raise TypeError(f"'data' must be an instance of 'bytes' but not of '{type(data)}'")
    if len(data) < 8:
        raise FormatError(f"Truncated header: expected at least 8 bytes but got {len(data)}",
                          offset=len(data))
    if data[:4] != magic:
        raise FormatError(f"Bad magic: expected {magic!r} but got {data[:4]!r}", offset=0)

    header_len, = struct.unpack_from("<I", data, 4)
    if 8 + header_len > len(data):
        raise FormatError(f"Truncated JSON header: expected {header_len} bytes but only " +
                          f"{len(data) - 8} are available", offset=8)
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise FormatError(f"Invalid JSON header: {ex}", offset=8) from ex
    if not isinstance(header, dict):
        raise FormatError("JSON header must be an object", offset=8)

    return header, 8 + header_len
