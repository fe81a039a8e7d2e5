"""
Module provides a handcrafted 30-dimensional color/texture descriptor of patches -- used for
end-to-end runs on rasters when no foundation-model features are available.
"""
import numpy as np

from ..wsi.raster import RasterImage, round_half_up
from ..wsi.filters import rgb_to_hsv, morph, MORPH_GRADIENT
from ..wsi.patching import PatchGrid, footprint_coverage
from ..wsi.segmentation import BinaryMask


N_BINS = 8
DESCRIPTOR_NAMES = [f"hue_hist_{i}" for i in range(N_BINS)] + \
    [f"saturation_hist_{i}" for i in range(N_BINS)] + \
    [f"value_hist_{i}" for i in range(N_BINS)] + \
    ["saturation_mean", "saturation_std", "value_mean", "value_std",
     "morph_gradient_mean", "tissue_fraction"]
DESCRIPTOR_DIM = len(DESCRIPTOR_NAMES)

_TISSUE_SATURATION = 20


def _normalized_hist(bins: np.ndarray) -> np.ndarray:
    counts = np.bincount(bins.ravel(), minlength=N_BINS)[:N_BINS]
    return counts / bins.size


def patch_descriptor(patch: RasterImage, tissue_fraction: float = None) -> np.ndarray:
    """
    Computes the descriptor of a single RGB patch.

    Layout: 8-bin histograms of hue, saturation, and value (each summing to 1), mean and
    standard deviation of saturation and value (scaled to [0, 1]), mean 3x3 morphological
    gradient of the value channel (scaled to [0, 1]), and the tissue fraction.

    Parameters
    ----------
    patch : :class:`~pathomil.wsi.raster.RasterImage`
        RGB patch.
    tissue_fraction : `float`, optional
        Tissue fraction of the patch -- if None, the fraction of pixels with a saturation
        above 20/255 is used.

        The default is None.

    Returns
    -------
    `numpy.ndarray`
        Descriptor (30 values in [0, 1]).
    """
    hue, saturation, value = rgb_to_hsv(patch)

    hue_bins = np.minimum(np.floor(hue / 45.).astype(np.int64), N_BINS - 1)
    saturation_bins = saturation.astype(np.int64) // 32
    value_bins = np.clip(np.floor(N_BINS * value).astype(np.int64), 0, N_BINS - 1)

    s = saturation / 255.
    value8 = round_half_up(255. * value).astype(np.uint8)
    if min(value8.shape) >= 3:
        gradient = float(morph(value8, MORPH_GRADIENT, 3).mean()) / 255.
    else:
        gradient = 0.

    if tissue_fraction is None:
        tissue_fraction = float(np.mean(saturation > _TISSUE_SATURATION))

    return np.concatenate((_normalized_hist(hue_bins), _normalized_hist(saturation_bins),
                           _normalized_hist(value_bins),
                           [s.mean(), s.std(), value.mean(), value.std(), gradient,
                            tissue_fraction]))


def handcrafted_patch_features(img: RasterImage, grid: PatchGrid,
                               mask: BinaryMask = None) -> np.ndarray:
    """
    Computes the handcrafted descriptor of every patch of a grid.

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        Level-0 RGB slide.
    grid : :class:`~pathomil.wsi.patching.PatchGrid`
        Patch grid -- all patches must lie within the slide.
    mask : :class:`~pathomil.wsi.segmentation.BinaryMask`, optional
        Tissue mask -- if given, the tissue fraction is the mask coverage of the patch
        footprint; otherwise it is estimated from the saturation of the patch.

        The default is None.

    Returns
    -------
    `numpy.ndarray`
        Features (n x 30) in grid order.
    """
    if not isinstance(img, RasterImage):
        raise TypeError("'img' must be an instance of 'pathomil.wsi.RasterImage' " +
                        f"but not of '{type(img)}'")
    if not isinstance(grid, PatchGrid):
        raise TypeError("'grid' must be an instance of 'pathomil.wsi.PatchGrid' " +
                        f"but not of '{type(grid)}'")
    if mask is not None and not isinstance(mask, BinaryMask):
        raise TypeError("'mask' must be an instance of 'pathomil.wsi.BinaryMask' " +
                        f"but not of '{type(mask)}'")

    ps = grid.patch_size
    coords = grid.coords
    if len(coords) != 0 and (np.any(coords[:, 0] + ps > img.width) or
                             np.any(coords[:, 1] + ps > img.height)):
        raise ValueError("All patches must lie within the slide")

    pixels = img.pixels
    features = np.zeros((len(coords), DESCRIPTOR_DIM))
    for i, (x, y) in enumerate(coords.tolist()):
        patch = RasterImage(pixels[y:y + ps, x:x + ps])
        fraction = None if mask is None else footprint_coverage(mask, x, y, ps)
        features[i] = patch_descriptor(patch, fraction)

    return features
