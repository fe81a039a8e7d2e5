"""
Module provides the tissue segmentation -- a saturation-based Otsu threshold enhanced with
morphological gradients, followed by morphological filtering and removal of small
tissue fragments.
"""
import logging
import warnings
import numpy as np
from scipy.ndimage import label as label_components

from ..serialization import serializable, JsonSerializable, SEGMENTATION_CONFIG_ID
from .raster import RasterImage, ImagePyramid, best_level_for_downsample, round_half_up
from .filters import gaussian_blur, rgb_to_hsv, histogram, otsu_threshold, morph, \
    MORPH_GRADIENT, MORPH_CLOSE, MORPH_OPEN


logger = logging.getLogger(__name__)


@serializable(SEGMENTATION_CONFIG_ID, ".pmil_segcfg")
class SegmentationConfig(JsonSerializable):
    """
    Configuration of the tissue segmentation.

    Parameters
    ----------
    target_downsample : `float`, optional
        Requested downsample factor of the segmentation level.

        The default is 32.
    blur_sigma_base : `float`, optional
        Blur strength for a segmentation level of width 1024 -- the actual sigma scales
        linearly with the level width and is clamped to [0.5, 4].

        The default is 2.
    close_kernel : `int`, optional
        Kernel size of the morphological closing.

        The default is 5.
    open_kernel : `int`, optional
        Kernel size of the morphological opening.

        The default is 3.
    min_component_area_px : `int`, optional
        Connected tissue components (8-connectivity) smaller than this number of pixels
        (at the segmentation level) are removed.

        The default is 500.
    coverage_threshold : `float`, optional
        Minimum tissue fraction of a patch footprint.

        The default is 0.5
    min_saturation : `int`, optional
        Lower bound on the saturation threshold (8-bit scale).

        The default is 20.
    min_gradient : `int`, optional
        Lower bound on the threshold of the saturation gradient (8-bit scale).

        The default is 10.
    """
    def __init__(self, target_downsample: float = 32., blur_sigma_base: float = 2.,
                 close_kernel: int = 5, open_kernel: int = 3, min_component_area_px: int = 500,
                 coverage_threshold: float = .5, min_saturation: int = 20,
                 min_gradient: int = 10, **kwds):
        if not isinstance(target_downsample, (int, float)) or target_downsample <= 0:
            raise ValueError("'target_downsample' must be positive")
        if not isinstance(blur_sigma_base, (int, float)) or blur_sigma_base <= 0:
            raise ValueError("'blur_sigma_base' must be positive")
        for name, k in [("close_kernel", close_kernel), ("open_kernel", open_kernel)]:
            if not isinstance(k, int) or k < 3 or k % 2 == 0:
                raise ValueError(f"'{name}' must be an odd integer >= 3")
        if not isinstance(min_component_area_px, int) or min_component_area_px < 0:
            raise ValueError("'min_component_area_px' must be a nonnegative integer")
        if not isinstance(coverage_threshold, (int, float)) or not 0 < coverage_threshold <= 1:
            raise ValueError("'coverage_threshold' must be in (0, 1]")
        if not isinstance(min_saturation, int) or not 0 <= min_saturation <= 255:
            raise ValueError("'min_saturation' must be an integer in [0, 255]")
        if not isinstance(min_gradient, int) or not 0 <= min_gradient <= 255:
            raise ValueError("'min_gradient' must be an integer in [0, 255]")

        self.__target_downsample = float(target_downsample)
        self.__blur_sigma_base = float(blur_sigma_base)
        self.__close_kernel = close_kernel
        self.__open_kernel = open_kernel
        self.__min_component_area_px = min_component_area_px
        self.__coverage_threshold = float(coverage_threshold)
        self.__min_saturation = min_saturation
        self.__min_gradient = min_gradient

        super().__init__(**kwds)

    @property
    def target_downsample(self) -> float:
        return self.__target_downsample

    @property
    def blur_sigma_base(self) -> float:
        return self.__blur_sigma_base

    @property
    def close_kernel(self) -> int:
        return self.__close_kernel

    @property
    def open_kernel(self) -> int:
        return self.__open_kernel

    @property
    def min_component_area_px(self) -> int:
        return self.__min_component_area_px

    @property
    def coverage_threshold(self) -> float:
        return self.__coverage_threshold

    @property
    def min_saturation(self) -> int:
        return self.__min_saturation

    @property
    def min_gradient(self) -> int:
        return self.__min_gradient

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"target_downsample": self.__target_downsample,
                                           "blur_sigma_base": self.__blur_sigma_base,
                                           "close_kernel": self.__close_kernel,
                                           "open_kernel": self.__open_kernel,
                                           "min_component_area_px":
                                           self.__min_component_area_px,
                                           "coverage_threshold": self.__coverage_threshold,
                                           "min_saturation": self.__min_saturation,
                                           "min_gradient": self.__min_gradient}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentationConfig):
            raise TypeError("Can not compare 'SegmentationConfig' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        return " ".join(f"{key}: {value}" for key, value in self.get_attributes().items())


class BinaryMask():
    """
    Binary tissue mask at a given pyramid level.

    Parameters
    ----------
    bits : `numpy.ndarray`
        Boolean mask (height, width) at level `level`.
    level : `int`, optional
        Pyramid level of the mask.

        The default is 0.
    level0_width : `int`, optional
        Width of the level-0 image -- derived from the mask if None.

        The default is None.
    level0_height : `int`, optional
        Height of the level-0 image -- derived from the mask if None.

        The default is None.
    min_area_applied : `bool`, optional
        True if small components have been removed.

        The default is False.
    """
    def __init__(self, bits: np.ndarray, level: int = 0, level0_width: int = None,
                 level0_height: int = None, min_area_applied: bool = False):
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise ValueError("'bits' must be a 2d array")
        if not isinstance(level, int) or level < 0:
            raise ValueError("'level' must be a nonnegative integer")

        ds = 2 ** level
        if level0_width is None:
            level0_width = bits.shape[1] * ds
        if level0_height is None:
            level0_height = bits.shape[0] * ds
        if -(-level0_width // ds) != bits.shape[1] or -(-level0_height // ds) != bits.shape[0]:
            raise ValueError(f"Mask of shape {bits.shape} does not match level {level} of a " +
                             f"{level0_width}x{level0_height} image")

        self.__bits = bits.astype(bool)
        self.__bits.flags.writeable = False
        self.__level = level
        self.__level0_width = int(level0_width)
        self.__level0_height = int(level0_height)
        self.__min_area_applied = bool(min_area_applied)

    @property
    def bits(self) -> np.ndarray:
        """
        Gets the (read-only) mask.

        Returns
        -------
        `numpy.ndarray`
            Boolean mask (height, width).
        """
        return self.__bits

    @property
    def width(self) -> int:
        return self.__bits.shape[1]

    @property
    def height(self) -> int:
        return self.__bits.shape[0]

    @property
    def level(self) -> int:
        return self.__level

    @property
    def downsample(self) -> int:
        return 2 ** self.__level

    @property
    def level0_width(self) -> int:
        return self.__level0_width

    @property
    def level0_height(self) -> int:
        return self.__level0_height

    @property
    def min_area_applied(self) -> bool:
        return self.__min_area_applied

    @property
    def coverage(self) -> float:
        """
        Gets the fraction of tissue pixels.

        Returns
        -------
        `float`
            Tissue fraction.
        """
        return float(self.__bits.mean())

    def to_image(self) -> RasterImage:
        """
        Converts this mask into a gray image (0 = background, 255 = tissue).
        """
        return RasterImage(self.__bits.astype(np.uint8) * 255)

    @staticmethod
    def from_image(img: RasterImage, level: int = 0, level0_width: int = None,
                   level0_height: int = None) -> "BinaryMask":
        """
        Converts a gray image into a mask -- pixels >= 128 are tissue.
        """
        if img.channels != 1:
            raise ValueError("Masks must be gray images")
        return BinaryMask(img.pixels >= 128, level, level0_width, level0_height)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            raise TypeError("Can not compare 'BinaryMask' instance " +
                            f"with '{type(other)}' instance")

        return np.array_equal(self.__bits, other.bits) and self.__level == other.level and \
            self.__level0_width == other.level0_width and \
            self.__level0_height == other.level0_height

    def __str__(self) -> str:
        return f"{self.width}x{self.height} level: {self.__level} coverage: {self.coverage:.4f}"


def filter_small_components(mask, min_area: int):
    """
    Removes 8-connected components with less than `min_area` pixels.

    Parameters
    ----------
    mask : :class:`~pathomil.wsi.segmentation.BinaryMask` or `numpy.ndarray`
        Mask.
    min_area : `int`
        Minimum number of pixels of a component.

    Returns
    -------
    :class:`~pathomil.wsi.segmentation.BinaryMask` or `numpy.ndarray`
        Filtered mask -- same type as `mask`.
    """
    if not isinstance(min_area, int) or min_area < 0:
        raise ValueError("'min_area' must be a nonnegative integer")

    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if min_area > 0:
        labels, n_components = label_components(bits, structure=np.ones((3, 3), dtype=int))
        sizes = np.bincount(labels.ravel(), minlength=n_components + 1)
        keep = sizes >= min_area
        keep[0] = False
        bits = keep[labels]
        logger.debug("kept %d of %d components", int(keep.sum()), n_components)

    if isinstance(mask, BinaryMask):
        return BinaryMask(bits, mask.level, mask.level0_width, mask.level0_height,
                          min_area_applied=True)
    return bits


def adaptive_blur_sigma(level_width: int, blur_sigma_base: float) -> float:
    """
    Blur strength of a segmentation level -- blur_sigma_base * level_width / 1024,
    clamped to [0.5, 4].
    """
    return min(max(blur_sigma_base * level_width / 1024., .5), 4.)


def segment_tissue(pyr: ImagePyramid, cfg: SegmentationConfig = None) -> BinaryMask:
    """
    Segments the tissue of a slide.

    At the level closest to `cfg.target_downsample`, the image is blurred and converted to
    HSV. A saturation mask (S > max(otsu(S), min_saturation)) is combined with a gradient
    mask (morphological gradient of S above max(otsu(G), min_gradient), restricted to pixels
    whose saturation exceeds half the saturation threshold). The union is closed, opened,
    and cleaned from small components.

    If the saturation histogram is degenerate (a single value), the saturation floor alone
    decides -- a uniformly white slide yields an empty mask, a uniformly stained slide a
    full one.

    Parameters
    ----------
    pyr : :class:`~pathomil.wsi.raster.ImagePyramid`
        Slide pyramid.
    cfg : :class:`~pathomil.wsi.segmentation.SegmentationConfig`, optional
        Configuration -- defaults are used if None.

        The default is None.

    Returns
    -------
    :class:`~pathomil.wsi.segmentation.BinaryMask`
        Tissue mask at the segmentation level.
    """
    if not isinstance(pyr, ImagePyramid):
        raise TypeError("'pyr' must be an instance of 'pathomil.wsi.ImagePyramid' " +
                        f"but not of '{type(pyr)}'")
    if cfg is None:
        cfg = SegmentationConfig()
    if not isinstance(cfg, SegmentationConfig):
        raise TypeError("'cfg' must be an instance of 'pathomil.wsi.SegmentationConfig' " +
                        f"but not of '{type(cfg)}'")

    level = best_level_for_downsample(pyr, cfg.target_downsample)
    img = pyr.level(level)
    source = pyr.level(0)

    sigma = adaptive_blur_sigma(img.width, cfg.blur_sigma_base)
    _, saturation, _ = rgb_to_hsv(gaussian_blur(img, sigma))

    t_sat, degenerate_sat = otsu_threshold(histogram(saturation))
    thr_sat = cfg.min_saturation if degenerate_sat else max(t_sat, cfg.min_saturation)
    mask_sat = saturation > thr_sat

    gradient = morph(saturation, MORPH_GRADIENT, 3)
    t_grad, degenerate_grad = otsu_threshold(histogram(gradient))
    thr_grad = cfg.min_gradient if degenerate_grad else max(t_grad, cfg.min_gradient)
    mask_grad = (gradient > thr_grad) & (2 * saturation.astype(np.int64) > thr_sat)

    logger.debug("level %d sigma %.3f saturation threshold %d (otsu %d) " +
                 "gradient threshold %d (otsu %d)", level, sigma, thr_sat, t_sat, thr_grad, t_grad)

    bits = morph(mask_sat | mask_grad, MORPH_CLOSE, cfg.close_kernel)
    bits = morph(bits, MORPH_OPEN, cfg.open_kernel)
    mask = filter_small_components(BinaryMask(bits, level, source.width, source.height),
                                   cfg.min_component_area_px)

    if degenerate_sat and degenerate_grad and not mask.bits.any():
        warnings.warn("Degenerate saturation and gradient histograms -- the tissue mask " +
                      "is empty")
    return mask


def render_mask_overlay(img: RasterImage, mask, tint: tuple[int, int, int] = (0, 255, 0),
                        alpha: float = .5) -> RasterImage:
    """
    Blends the tint color into all masked pixels -- i.e. round((1 - alpha) p + alpha tint);
    all other pixels are left untouched.

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        RGB image at the level of the mask.
    mask : :class:`~pathomil.wsi.segmentation.BinaryMask` or `numpy.ndarray`
        Mask.
    tint : `tuple[int, int, int]`, optional
        Tint color.

        The default is green (0, 255, 0).
    alpha : `float`, optional
        Opacity of the tint.

        The default is 0.5

    Returns
    -------
    :class:`~pathomil.wsi.raster.RasterImage`
        Overlay.
    """
    if img.channels != 3:
        raise ValueError("'img' must be an RGB image")
    if not 0 <= alpha <= 1:
        raise ValueError("'alpha' must be in [0, 1]")
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if bits.shape != (img.height, img.width):
        raise ValueError(f"Dimension mismatch: image {img.width}x{img.height} vs. " +
                         f"mask {bits.shape[1]}x{bits.shape[0]}")

    pixels = img.pixels.astype(np.float64)
    blended = round_half_up((1. - alpha) * pixels + alpha * np.asarray(tint, dtype=np.float64))
    out = np.where(bits[:, :, None], blended, img.pixels)
    return RasterImage(out)
