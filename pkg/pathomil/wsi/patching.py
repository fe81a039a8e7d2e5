"""
Module provides the extraction of non-overlapping patch grids from tissue masks.
"""
import numpy as np

from ..exceptions import FormatError
from ..serialization import atomic_write
from .segmentation import BinaryMask


class PatchGrid():
    """
    Non-overlapping square patches given by their level-0 top-left corners.

    Parameters
    ----------
    coords : `numpy.ndarray`
        Corners (n x 2) as (x, y) -- multiples of `patch_size`.
    patch_size : `int`, optional
        Patch size in level-0 pixels.

        The default is 256.
    level : `int`, optional
        Extraction level.

        The default is 0.
    coverage_threshold : `float`, optional
        Coverage threshold the grid was extracted with.

        The default is 0.5
    """
    def __init__(self, coords: np.ndarray, patch_size: int = 256, level: int = 0,
                 coverage_threshold: float = .5):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        if not isinstance(patch_size, int) or patch_size < 1:
            raise ValueError("'patch_size' must be a positive integer")
        if np.any(coords < 0) or np.any(coords % patch_size != 0):
            raise ValueError("All coordinates must be nonnegative multiples of 'patch_size'")
        if len({tuple(c) for c in coords.tolist()}) != coords.shape[0]:
            raise ValueError("Duplicated patch coordinates")

        self.__coords = coords
        self.__coords.flags.writeable = False
        self.__patch_size = patch_size
        self.__level = level
        self.__coverage_threshold = float(coverage_threshold)

    @property
    def coords(self) -> np.ndarray:
        """
        Gets the (read-only) patch corners.

        Returns
        -------
        `numpy.ndarray`
            Corners (n x 2) as (x, y).
        """
        return self.__coords

    @property
    def patch_size(self) -> int:
        return self.__patch_size

    @property
    def level(self) -> int:
        return self.__level

    @property
    def coverage_threshold(self) -> float:
        return self.__coverage_threshold

    def __len__(self) -> int:
        return self.__coords.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatchGrid):
            raise TypeError("Can not compare 'PatchGrid' instance " +
                            f"with '{type(other)}' instance")

        return np.array_equal(self.__coords, other.coords) and \
            self.__patch_size == other.patch_size and self.__level == other.level

    def __str__(self) -> str:
        return f"{len(self)} patches of size {self.__patch_size}"

    def to_text(self) -> str:
        """
        Converts the grid into text -- one "x y" line per patch.
        """
        return "".join(f"{x} {y}\n" for x, y in self.__coords.tolist())

    def save_text(self, f_out: str) -> None:
        """
        Writes the grid as text file (atomically) -- one "x y" line per patch.
        """
        atomic_write(f_out, self.to_text())

    @staticmethod
    def load_text(f_in: str, patch_size: int = 256) -> "PatchGrid":
        """
        Reads a grid from a text file with one "x y" line per patch.
        """
        coords = []
        with open(f_in, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    x, y = (int(v) for v in line.split())
                except ValueError as ex:
                    raise FormatError(f"Invalid grid line {line_no}: {line.strip()!r}") from ex
                coords.append((x, y))
        return PatchGrid(np.array(coords, dtype=np.int64).reshape(-1, 2), patch_size)


def footprint_coverage(mask: BinaryMask, x: int, y: int, patch_size: int) -> float:
    """
    Tissue fraction of a level-0 patch footprint projected onto the mask level --
    i.e. the mean of the mask over columns [floor(x/ds), ceil((x+ps)/ds)) and the
    corresponding rows.

    Parameters
    ----------
    mask : :class:`~pathomil.wsi.segmentation.BinaryMask`
        Mask.
    x : `int`
        Level-0 left edge.
    y : `int`
        Level-0 top edge.
    patch_size : `int`
        Patch size in level-0 pixels.

    Returns
    -------
    `float`
        Coverage in [0, 1].
    """
    ds = mask.downsample
    x0, x1 = x // ds, min(-(-(x + patch_size) // ds), mask.width)
    y0, y1 = y // ds, min(-(-(y + patch_size) // ds), mask.height)
    if x1 <= x0 or y1 <= y0:
        return 0.
    return float(mask.bits[y0:y1, x0:x1].mean())


def extract_patch_grid(mask: BinaryMask, patch_size: int = 256,
                       coverage_threshold: float = .5) -> PatchGrid:
    """
    Extracts all non-overlapping patches (aligned to multiples of `patch_size` and fully
    inside the level-0 image) whose footprint coverage reaches `coverage_threshold`.

    Parameters
    ----------
    mask : :class:`~pathomil.wsi.segmentation.BinaryMask`
        Tissue mask.
    patch_size : `int`, optional
        Patch size in level-0 pixels.

        The default is 256.
    coverage_threshold : `float`, optional
        Minimum tissue fraction of a patch footprint.

        The default is 0.5

    Returns
    -------
    :class:`~pathomil.wsi.patching.PatchGrid`
        Patch grid, sorted row-major (by y, then x).
    """
    if not isinstance(mask, BinaryMask):
        raise TypeError("'mask' must be an instance of 'pathomil.wsi.BinaryMask' " +
                        f"but not of '{type(mask)}'")
    if not isinstance(patch_size, int) or patch_size < 1:
        raise ValueError("'patch_size' must be a positive integer")
    if not 0 < coverage_threshold <= 1:
        raise ValueError("'coverage_threshold' must be in (0, 1]")

    integral = np.zeros((mask.height + 1, mask.width + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.bits, axis=0), axis=1)

    ds = mask.downsample
    coords = []
    for y in range(0, mask.level0_height - patch_size + 1, patch_size):
        y0, y1 = y // ds, min(-(-(y + patch_size) // ds), mask.height)
        for x in range(0, mask.level0_width - patch_size + 1, patch_size):
            x0, x1 = x // ds, min(-(-(x + patch_size) // ds), mask.width)
            area = (y1 - y0) * (x1 - x0)
            if area <= 0:
                continue
            tissue = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
            if tissue >= coverage_threshold * area:
                coords.append((x, y))

    return PatchGrid(np.array(coords, dtype=np.int64).reshape(-1, 2), patch_size,
                     level=0, coverage_threshold=coverage_threshold)
