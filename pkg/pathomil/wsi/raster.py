"""
Module provides 8-bit raster images, the power-of-two image pyramid emulating a
multi-resolution slide, and binary PPM/PGM codecs.
"""
import re
import numpy as np

from ..exceptions import FormatError
from ..serialization import atomic_write


class RasterImage():
    """
    8-bit raster image -- RGB (3 channels) or gray (1 channel).

    Parameters
    ----------
    pixels : `numpy.ndarray`
        Pixel data of shape (height, width, 3) for RGB or (height, width) for gray images.
        Values are converted to 8 bit -- a read-only copy is stored.
    """
    def __init__(self, pixels: np.ndarray):
        if not isinstance(pixels, np.ndarray):
            raise TypeError("'pixels' must be an instance of 'numpy.ndarray' " +
                            f"but not of '{type(pixels)}'")
        if not (pixels.ndim == 2 or (pixels.ndim == 3 and pixels.shape[2] == 3)):
            raise ValueError("'pixels' must be of shape (height, width) or (height, width, 3) " +
                             f"but not {pixels.shape}")
        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ValueError("Image must not be empty")
        if pixels.dtype != np.uint8:
            if np.any(pixels < 0) or np.any(pixels > 255):
                raise ValueError("Pixel values must be in [0, 255]")

        self.__pixels = np.array(pixels, dtype=np.uint8)
        self.__pixels.flags.writeable = False

    @property
    def pixels(self) -> np.ndarray:
        """
        Gets the (read-only) pixel data.

        Returns
        -------
        `numpy.ndarray`
            Pixels -- shape (height, width, 3) or (height, width).
        """
        return self.__pixels

    @property
    def width(self) -> int:
        return self.__pixels.shape[1]

    @property
    def height(self) -> int:
        return self.__pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.__pixels.ndim == 2 else 3

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            raise TypeError("Can not compare 'RasterImage' instance " +
                            f"with '{type(other)}' instance")

        return np.array_equal(self.__pixels, other.pixels)

    def __str__(self) -> str:
        return f"{self.width}x{self.height}x{self.channels}"


def round_half_up(values: np.ndarray) -> np.ndarray:
    """
    Rounds (nonnegative) values half up and converts them to 8 bit.
    """
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + .5), 0, 255).astype(np.uint8)


def downsample_by_two(pixels: np.ndarray) -> np.ndarray:
    """
    Halves the dimensions (rounding up) -- every output pixel is the mean of its 2x2 source
    block (ragged edges: mean of the available pixels), rounded half up.

    Parameters
    ----------
    pixels : `numpy.ndarray`
        8-bit pixels (height, width[, 3]).

    Returns
    -------
    `numpy.ndarray`
        Downsampled 8-bit pixels.
    """
    h, w = pixels.shape[:2]
    pad = [(0, h % 2), (0, w % 2)] + [(0, 0)] * (pixels.ndim - 2)
    values = np.pad(pixels.astype(np.int64), pad)
    counts = np.pad(np.ones((h, w), dtype=np.int64), pad[:2])

    h2, w2 = values.shape[0] // 2, values.shape[1] // 2
    sums = values.reshape((h2, 2, w2, 2) + values.shape[2:]).sum(axis=(1, 3))
    n = counts.reshape(h2, 2, w2, 2).sum(axis=(1, 3))
    if pixels.ndim == 3:
        n = n[:, :, None]

    return ((2 * sums + n) // (2 * n)).astype(np.uint8)


class ImagePyramid():
    """
    Power-of-two image pyramid -- level l has the downsample factor 2^l.

    Parameters
    ----------
    levels : `list[RasterImage]`
        Levels, starting with the full-resolution source.
    """
    def __init__(self, levels: list[RasterImage]):
        if len(levels) == 0:
            raise ValueError("A pyramid needs at least one level")
        if any(not isinstance(level, RasterImage) for level in levels):
            raise TypeError("All levels must be instances of 'pathomil.wsi.RasterImage'")
        for prev, cur in zip(levels, levels[1:]):
            if cur.width != -(-prev.width // 2) or cur.height != -(-prev.height // 2):
                raise ValueError("Every level must halve the dimensions of its predecessor")

        self.__levels = list(levels)

    @property
    def levels(self) -> list[RasterImage]:
        """
        Gets all levels.

        Returns
        -------
        `list[RasterImage]`
            Levels.
        """
        return list(self.__levels)

    @property
    def n_levels(self) -> int:
        return len(self.__levels)

    def level(self, index: int) -> RasterImage:
        """
        Gets a single level.
        """
        if not 0 <= index < len(self.__levels):
            raise ValueError(f"Level {index} does not exist")
        return self.__levels[index]

    @staticmethod
    def downsample(level: int) -> int:
        """
        Gets the downsample factor of a level -- i.e. 2^level.
        """
        return 2 ** level

    def __str__(self) -> str:
        return " | ".join(str(level) for level in self.__levels)


def build_pyramid(img: RasterImage, max_levels: int = 8) -> ImagePyramid:
    """
    Builds an image pyramid -- each level halves the dimensions of its predecessor (rounding
    up) until `max_levels` levels exist or the image shrinks to a single pixel.

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        Source image (level 0).
    max_levels : `int`, optional
        Maximum number of levels (including level 0).

        The default is 8.

    Returns
    -------
    :class:`~pathomil.wsi.raster.ImagePyramid`
        Pyramid.
    """
    if not isinstance(img, RasterImage):
        raise TypeError("'img' must be an instance of 'pathomil.wsi.RasterImage' " +
                        f"but not of '{type(img)}'")
    if not isinstance(max_levels, int) or max_levels < 1:
        raise ValueError("'max_levels' must be a positive integer")

    levels = [img]
    while len(levels) < max_levels and (levels[-1].width > 1 or levels[-1].height > 1):
        levels.append(RasterImage(downsample_by_two(levels[-1].pixels)))

    return ImagePyramid(levels)


def best_level_for_downsample(pyr: ImagePyramid, requested: float) -> int:
    """
    Selects the largest level whose downsample factor does not exceed the requested one.

    Parameters
    ----------
    pyr : :class:`~pathomil.wsi.raster.ImagePyramid`
        Pyramid.
    requested : `float`
        Requested downsample factor.

    Returns
    -------
    `int`
        Level index -- 0 if `requested` < 1.
    """
    if requested <= 0:
        raise ValueError("'requested' must be positive")

    best = 0
    for level in range(pyr.n_levels):
        if ImagePyramid.downsample(level) <= requested:
            best = level
    return best


_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
_COMMENT = re.compile(rb"#\s?([^\n]*)\n")


def decode_netpbm(data: bytes) -> tuple[RasterImage, list[str]]:
    """
    Decodes a binary PPM (P6) or PGM (P5) image.

    Parameters
    ----------
    data : `bytes`
        File contents.

    Returns
    -------
    `tuple[RasterImage, list[str]]`
        Image and the comments found in the header.
    """
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"Bad magic: expected b'P5' or b'P6' but got {data[:2]!r}", offset=0)
    channels = 3 if data[:2] == b"P6" else 1

    pos = 2
    tokens = []
    for _ in range(3):
        match = _HEADER_TOKEN.match(data, pos)
        if match is None:
            raise FormatError("Truncated header", offset=pos)
        try:
            tokens.append(int(match.group(1)))
        except ValueError as ex:
            raise FormatError(f"Invalid header token {match.group(1)!r}",
                              offset=match.start(1)) from ex
        pos = match.end()
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise FormatError("Missing whitespace after the header", offset=pos)
    header_end = pos + 1

    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise FormatError(f"Invalid dimensions {width}x{height}", offset=2)
    if not 1 <= maxval <= 255:
        raise FormatError(f"Unsupported maximum value {maxval}", offset=2)

    expected = width * height * channels
    if len(data) - header_end < expected:
        raise FormatError(f"Truncated pixel data: expected {expected} bytes but got " +
                          f"{len(data) - header_end}", offset=header_end)

    comments = [c.decode("utf-8", errors="replace").strip()
                for c in _COMMENT.findall(data[:header_end])]
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header_end)
    shape = (height, width, 3) if channels == 3 else (height, width)
    pixels = pixels.reshape(shape)
    if maxval != 255:
        pixels = round_half_up(pixels.astype(np.float64) * 255. / maxval)

    return RasterImage(pixels), comments


def encode_netpbm(img: RasterImage, comments: list[str] = None) -> bytes:
    """
    Encodes an image as binary PPM (RGB) or PGM (gray).

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        Image.
    comments : `list[str]`, optional
        Header comments -- e.g. "level=3".

        The default is None.

    Returns
    -------
    `bytes`
        File contents.
    """
    magic = "P6" if img.channels == 3 else "P5"
    lines = [magic] + [f"# {c}" for c in (comments or [])] + [f"{img.width} {img.height}", "255"]
    return ("\n".join(lines) + "\n").encode("utf-8") + img.pixels.tobytes()


def read_ppm(f_in: str) -> tuple[RasterImage, list[str]]:
    """
    Reads an RGB image from a binary PPM (P6) file.

    Parameters
    ----------
    f_in : `str`
        Path to the file.

    Returns
    -------
    `tuple[RasterImage, list[str]]`
        Image and header comments.
    """
    with open(f_in, "rb") as f:
        img, comments = decode_netpbm(f.read())
    if img.channels != 3:
        raise FormatError(f"'{f_in}' is not an RGB (P6) image", offset=0)
    return img, comments


def read_pgm(f_in: str) -> tuple[RasterImage, list[str]]:
    """
    Reads a gray image from a binary PGM (P5) file.

    Parameters
    ----------
    f_in : `str`
        Path to the file.

    Returns
    -------
    `tuple[RasterImage, list[str]]`
        Image and header comments.
    """
    with open(f_in, "rb") as f:
        img, comments = decode_netpbm(f.read())
    if img.channels != 1:
        raise FormatError(f"'{f_in}' is not a gray (P5) image", offset=0)
    return img, comments


def write_ppm(f_out: str, img: RasterImage, comments: list[str] = None) -> None:
    """
    Writes an RGB image to a binary PPM (P6) file (atomically).
    """
    if img.channels != 3:
        raise ValueError("PPM files require an RGB image")
    atomic_write(f_out, encode_netpbm(img, comments))


def write_pgm(f_out: str, img: RasterImage, comments: list[str] = None) -> None:
    """
    Writes a gray image to a binary PGM (P5) file (atomically).
    """
    if img.channels != 1:
        raise ValueError("PGM files require a gray image")
    atomic_write(f_out, encode_netpbm(img, comments))
