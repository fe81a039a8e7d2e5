"""
Module provides the image filters of the tissue segmentation -- i.e. Gaussian blur,
RGB to HSV conversion, Otsu thresholding, and morphological operations.
"""
import math
import numpy as np
from scipy.ndimage import correlate1d, grey_dilation, grey_erosion

from .raster import RasterImage, round_half_up


MORPH_ERODE = "erode"
MORPH_DILATE = "dilate"
MORPH_OPEN = "open"
MORPH_CLOSE = "close"
MORPH_GRADIENT = "gradient"
MORPH_OPS = (MORPH_ERODE, MORPH_DILATE, MORPH_OPEN, MORPH_CLOSE, MORPH_GRADIENT)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """
    Normalized 1-D Gaussian kernel with radius ceil(3 sigma).

    Parameters
    ----------
    sigma : `float`
        Standard deviation.

    Returns
    -------
    `numpy.ndarray`
        Kernel of length 2 * ceil(3 sigma) + 1.
    """
    if sigma <= 0:
        raise ValueError("'sigma' must be positive")

    radius = math.ceil(3. * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-x * x / (2. * sigma * sigma))
    return w / w.sum()


def gaussian_blur_array(values: np.ndarray, sigma: float) -> np.ndarray:
    """
    Separable Gaussian blur of a 2-D (or 3-D, channel-last) float array. Pixels outside the
    image are ignored -- i.e. the truncated kernel is renormalized at the borders.

    Parameters
    ----------
    values : `numpy.ndarray`
        Values (height, width[, channels]).
    sigma : `float`
        Standard deviation in pixels.

    Returns
    -------
    `numpy.ndarray`
        Blurred values (float64).
    """
    w = gaussian_kernel(sigma)
    out = np.asarray(values, dtype=np.float64)
    for axis in (1, 0):
        ones = np.ones(out.shape[axis], dtype=np.float64)
        norm = correlate1d(ones, w, mode="constant", cval=0.)
        shape = [1] * out.ndim
        shape[axis] = -1
        out = correlate1d(out, w, axis=axis, mode="constant", cval=0.) / norm.reshape(shape)
    return out


def gaussian_blur(img: RasterImage, sigma: float) -> RasterImage:
    """
    Separable Gaussian blur with border renormalization; the result is rounded half up.

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        Image.
    sigma : `float`
        Standard deviation in pixels.

    Returns
    -------
    :class:`~pathomil.wsi.raster.RasterImage`
        Blurred image.
    """
    if not isinstance(img, RasterImage):
        raise TypeError("'img' must be an instance of 'pathomil.wsi.RasterImage' " +
                        f"but not of '{type(img)}'")
    return RasterImage(round_half_up(gaussian_blur_array(img.pixels, sigma)))


def rgb_to_hsv(img: RasterImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Converts an RGB image into its hue, saturation, and value channels.

    Parameters
    ----------
    img : :class:`~pathomil.wsi.raster.RasterImage`
        RGB image.

    Returns
    -------
    `tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]`
        Hue in degrees [0, 360) (float64), saturation as 8-bit values round(255 S),
        and value max/255 in [0, 1] (float64).
    """
    if img.channels != 3:
        raise ValueError("'img' must be an RGB image")

    rgb = img.pixels.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    c_max = rgb.max(axis=2)
    c_min = rgb.min(axis=2)
    delta = c_max - c_min

    safe_delta = np.where(delta == 0, 1., delta)
    hue = np.where(c_max == r, np.mod((g - b) / safe_delta, 6.),
                   np.where(c_max == g, (b - r) / safe_delta + 2., (r - g) / safe_delta + 4.))
    hue = np.where(delta == 0, 0., 60. * hue)
    hue = np.where(hue >= 360., hue - 360., hue)

    saturation = np.where(c_max == 0, 0., delta / np.where(c_max == 0, 1., c_max))
    return hue, round_half_up(255. * saturation), c_max / 255.


def histogram(values: np.ndarray) -> np.ndarray:
    """
    256-bin histogram of 8-bit values.
    """
    return np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256)


def otsu_threshold(hist: np.ndarray) -> tuple[int, bool]:
    """
    Otsu's threshold -- maximizes the between-class variance of the classes {<= t} and
    {> t} using exact integer arithmetic. Ties are resolved towards the smallest t.

    Parameters
    ----------
    hist : `numpy.ndarray`
        256 bin counts.

    Returns
    -------
    `tuple[int, bool]`
        Threshold t (foreground = value > t) and a flag indicating a degenerate histogram
        -- i.e. all mass in a single bin, in which case t is that bin.
    """
    hist = [int(c) for c in np.asarray(hist).ravel()]
    if len(hist) != 256:
        raise ValueError(f"'hist' must contain 256 bins but not {len(hist)}")
    if any(c < 0 for c in hist):
        raise ValueError("Histogram counts can not be negative")
    n_total = sum(hist)
    if n_total == 0:
        raise ValueError("Histogram is empty")

    occupied = [i for i, c in enumerate(hist) if c > 0]
    if len(occupied) == 1:
        return occupied[0], True

    sum_total = sum(i * c for i, c in enumerate(hist))
    best_t, best_num, best_den = 0, -1, 1
    w0, cum = 0, 0
    for t in range(256):
        w0 += hist[t]
        cum += t * hist[t]
        if w0 == 0 or w0 == n_total:
            continue
        num = (n_total * cum - sum_total * w0) ** 2
        den = w0 * (n_total - w0)
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    return best_t, False


def morph(values: np.ndarray, op: str, k: int) -> np.ndarray:
    """
    Morphological operation with a k x k square structuring element; borders are handled by
    edge replication.

    Parameters
    ----------
    values : `numpy.ndarray`
        Binary mask (bool) or gray image (8 bit).
    op : `str`
        One of "erode", "dilate", "open", "close", "gradient" (dilate - erode).
    k : `int`
        Odd kernel size >= 3.

    Returns
    -------
    `numpy.ndarray`
        Result of the same type as `values`.
    """
    if op not in MORPH_OPS:
        raise ValueError(f"Unknown morphological operation '{op}'")
    if not isinstance(k, int) or k < 3 or k % 2 == 0:
        raise ValueError(f"Kernel size must be odd and >= 3 but not {k}")

    is_mask = values.dtype == bool
    x = values.astype(np.uint8) if is_mask else values
    size = (k, k)

    def __erode(v):
        return grey_erosion(v, size=size, mode="nearest")

    def __dilate(v):
        return grey_dilation(v, size=size, mode="nearest")

    if op == MORPH_ERODE:
        out = __erode(x)
    elif op == MORPH_DILATE:
        out = __dilate(x)
    elif op == MORPH_OPEN:
        out = __dilate(__erode(x))
    elif op == MORPH_CLOSE:
        out = __erode(__dilate(x))
    else:
        out = __dilate(x) - __erode(x)

    return out.astype(bool) if is_mask else out
