"""
Module provides a generator of synthetic H&E-like slides -- pink/purple elliptical tissue
blobs with nuclei-like speckle on a noisy near-white background -- together with their
ground-truth tissue masks.
"""
import math
import numpy as np

from ..rng import CanonicalRng
from .raster import RasterImage


BACKGROUND_COLOR = (242, 238, 241)
TISSUE_COLOR = (226, 152, 196)
NUCLEUS_COLOR = (132, 72, 160)

_BAND_ROWS = 256


def _ellipse_mask(xs: np.ndarray, ys: np.ndarray, blob: tuple) -> np.ndarray:
    cx, cy, a, b, theta = blob
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx = xs - cx
    dy = ys - cy
    u = (dx * cos_t + dy * sin_t) / a
    v = (-dx * sin_t + dy * cos_t) / b
    return u * u + v * v <= 1.


def generate_synthetic_slide(width: int = 4096, height: int = 3072, n_blobs: int = 3,
                             seed: int = 42, nuclei_density: float = .08,
                             noise_amplitude: int = 6) -> tuple[RasterImage, np.ndarray]:
    """
    Generates a synthetic slide.

    Blob centers, radii (18% to 28% of the shorter side), aspect ratios, and orientations as
    well as the pixel noise and the nuclei positions are drawn from the canonical PRNG, so
    that the output is fully determined by the seed.

    Parameters
    ----------
    width : `int`, optional
        Width in pixels.

        The default is 4096.
    height : `int`, optional
        Height in pixels.

        The default is 3072.
    n_blobs : `int`, optional
        Number of tissue blobs.

        The default is 3.
    seed : `int`, optional
        Seed.

        The default is 42.
    nuclei_density : `float`, optional
        Fraction of tissue pixels colored like nuclei.

        The default is 0.08
    noise_amplitude : `int`, optional
        Amplitude of the uniform pixel noise (tissue pixels use 1.5 times this amplitude).

        The default is 6.

    Returns
    -------
    `tuple[RasterImage, numpy.ndarray]`
        Slide (level 0) and the boolean ground-truth tissue mask (height x width).
    """
    if not isinstance(width, int) or not isinstance(height, int) or width < 16 or height < 16:
        raise ValueError("'width' and 'height' must be integers >= 16")
    if not isinstance(n_blobs, int) or n_blobs < 0:
        raise ValueError("'n_blobs' must be a nonnegative integer")
    if not 0 <= nuclei_density <= 1:
        raise ValueError("'nuclei_density' must be in [0, 1]")
    if not isinstance(noise_amplitude, int) or not 0 <= noise_amplitude <= 50:
        raise ValueError("'noise_amplitude' must be an integer in [0, 50]")

    rng = CanonicalRng(seed)
    shorter = min(width, height)
    blobs = []
    for _ in range(n_blobs):
        a = shorter * (.18 + .1 * rng.uniform())
        b = a * (.6 + .4 * rng.uniform())
        theta = math.pi * rng.uniform()
        cx = a + (width - 2. * a) * rng.uniform()
        cy = a + (height - 2. * a) * rng.uniform()
        blobs.append((cx, cy, a, b, theta))

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    truth = np.zeros((height, width), dtype=bool)
    xs = np.arange(width, dtype=np.float64)[None, :] + .5

    background = np.array(BACKGROUND_COLOR, dtype=np.int16)
    tissue_color = np.array(TISSUE_COLOR, dtype=np.int16)
    nucleus_color = np.array(NUCLEUS_COLOR, dtype=np.int16)
    tissue_amplitude = noise_amplitude * 3 // 2

    for y0 in range(0, height, _BAND_ROWS):
        y1 = min(y0 + _BAND_ROWS, height)
        ys = np.arange(y0, y1, dtype=np.float64)[:, None] + .5

        tissue = np.zeros((y1 - y0, width), dtype=bool)
        for blob in blobs:
            tissue |= _ellipse_mask(xs, ys, blob)
        truth[y0:y1] = tissue

        u_noise = rng.uniform_array((y1 - y0, width))
        u_nuclei = rng.uniform_array((y1 - y0, width))
        nuclei = tissue & (u_nuclei < nuclei_density)

        amplitude = np.where(tissue, tissue_amplitude, noise_amplitude)
        noise = np.floor(u_noise * (2 * amplitude + 1)).astype(np.int16) - amplitude

        color = np.where(tissue[:, :, None], tissue_color, background)
        color = np.where(nuclei[:, :, None], nucleus_color, color)
        pixels[y0:y1] = np.clip(color + noise[:, :, None], 0, 255).astype(np.uint8)

    return RasterImage(pixels), truth


def generate_constant_slide(width: int, height: int,
                            color: tuple[int, int, int]) -> RasterImage:
    """
    Generates a slide of a single color -- e.g. a fully stained or an empty slide.
    """
    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :] = np.asarray(color, dtype=np.uint8)
    return RasterImage(pixels)
