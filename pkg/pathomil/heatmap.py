"""
Module provides attention heatmaps -- patch scores are mapped back onto the patch grid,
smoothed (Gaussian filter) or upsampled (bilinear interpolation), colored by the jet
colormap, and blended into the slide.
"""
import logging
import numpy as np

from .serialization import serializable, JsonSerializable, OVERLAY_CONFIG_ID, atomic_write
from .wsi.raster import RasterImage, ImagePyramid, round_half_up, write_ppm
from .wsi.filters import gaussian_blur_array
from .models.mil_model import MilModel, extract_attention
from .models.clam import KIND_CLAM_SB
from .data.bag import FeatureBag


logger = logging.getLogger(__name__)

MODE_GAUSSIAN = "gaussian"
MODE_BILINEAR = "bilinear"
RESAMPLE_MODES = (MODE_GAUSSIAN, MODE_BILINEAR)

MAX_OVERLAY_SIDE = 4096

JET_ANCHORS = np.array([[0., 0., 0., .5],
                        [.125, 0., 0., 1.],
                        [.375, 0., 1., 1.],
                        [.625, 1., 1., 0.],
                        [.875, 1., 0., 0.],
                        [1., .5, 0., 0.]])


@serializable(OVERLAY_CONFIG_ID, ".pmil_overlay")
class OverlayConfig(JsonSerializable):
    """
    Configuration of the heatmap rendering.

    Parameters
    ----------
    alpha : `float`, optional
        Opacity of the heatmap.

        The default is 0.4
    mode : `str`, optional
        Resampling of the heat grid -- "gaussian" (smoothing followed by bilinear
        upsampling) or "bilinear" (upsampling only). If None, CLAM-SB models are rendered
        with "gaussian" and ABMIL models with "bilinear".

        The default is None.
    sigma : `float`, optional
        Standard deviation of the Gaussian smoothing in grid cells.

        The default is 1.
    class_index : `int`, optional
        Attention branch rendered for ABMIL models -- the predicted class if None.

        The default is None.
    max_side : `int`, optional
        Longest side (in pixels) of the overlay -- the overlay is rendered at the first
        pyramid level not exceeding it.

        The default is 4096.
    """
    def __init__(self, alpha: float = .4, mode: str = None, sigma: float = 1.,
                 class_index: int = None, max_side: int = MAX_OVERLAY_SIDE, **kwds):
        if not isinstance(alpha, (int, float)) or not 0 <= alpha <= 1:
            raise ValueError("'alpha' must be in [0, 1]")
        if mode is not None and mode not in RESAMPLE_MODES:
            raise ValueError(f"Unknown mode '{mode}' -- must be one of {RESAMPLE_MODES}")
        if not isinstance(sigma, (int, float)) or sigma <= 0:
            raise ValueError("'sigma' must be positive")
        if class_index is not None and (not isinstance(class_index, int) or class_index < 0):
            raise ValueError("'class_index' must be a nonnegative integer")
        if not isinstance(max_side, int) or max_side < 1:
            raise ValueError("'max_side' must be a positive integer")

        self.__alpha = float(alpha)
        self.__mode = mode
        self.__sigma = float(sigma)
        self.__class_index = class_index
        self.__max_side = max_side

        super().__init__(**kwds)

    @property
    def alpha(self) -> float:
        return self.__alpha

    @property
    def mode(self) -> str:
        return self.__mode

    @property
    def sigma(self) -> float:
        return self.__sigma

    @property
    def class_index(self) -> int:
        return self.__class_index

    @property
    def max_side(self) -> int:
        return self.__max_side

    def resolve_mode(self, model_kind: str) -> str:
        """
        Gets the resampling mode used for a given model kind.
        """
        if self.__mode is not None:
            return self.__mode
        return MODE_GAUSSIAN if model_kind == KIND_CLAM_SB else MODE_BILINEAR

    def get_attributes(self) -> dict:
        return super().get_attributes() | {"alpha": self.__alpha, "mode": self.__mode,
                                           "sigma": self.__sigma,
                                           "class_index": self.__class_index,
                                           "max_side": self.__max_side}

    def __eq__(self, other) -> bool:
        if not isinstance(other, OverlayConfig):
            raise TypeError("Can not compare 'OverlayConfig' instance " +
                            f"with '{type(other)}' instance")

        return self.get_attributes() == other.get_attributes()

    def __str__(self) -> str:
        return " ".join(f"{key}: {value}" for key, value in self.get_attributes().items())


class HeatGrid():
    """
    Normalized patch scores on the patch grid.

    Parameters
    ----------
    values : `numpy.ndarray`
        Grid values in [0, 1] -- shape (grid height, grid width).
    patch_size : `int`
        Side of a grid cell in level-0 pixels.
    score_min : `float`
        Smallest raw score before normalization.
    score_max : `float`
        Largest raw score before normalization.
    """
    def __init__(self, values: np.ndarray, patch_size: int, score_min: float,
                 score_max: float):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("'values' must be a non-empty 2d array")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("Grid values must be in [0, 1]")

        self.__values = values
        self.__values.flags.writeable = False
        self.__patch_size = patch_size
        self.__score_min = float(score_min)
        self.__score_max = float(score_max)

    @property
    def values(self) -> np.ndarray:
        return self.__values

    @property
    def width(self) -> int:
        return self.__values.shape[1]

    @property
    def height(self) -> int:
        return self.__values.shape[0]

    @property
    def patch_size(self) -> int:
        return self.__patch_size

    @property
    def score_min(self) -> float:
        return self.__score_min

    @property
    def score_max(self) -> float:
        return self.__score_max

    def __str__(self) -> str:
        return f"{self.width}x{self.height} cells of {self.__patch_size} px " + \
            f"(scores in [{self.__score_min}, {self.__score_max}])"


def scores_to_grid(coords: np.ndarray, scores: np.ndarray, width: int, height: int,
                   patch_size: int = 256) -> HeatGrid:
    """
    Maps patch scores back onto the patch grid of a slide. The scores are min-max
    normalized to [0, 1] (0.5 if all scores are equal); cells without a patch are 0.

    Parameters
    ----------
    coords : `numpy.ndarray`
        Level-0 top-left corners (x, y) of the patches (n x 2).
    scores : `numpy.ndarray`
        Scores (n,).
    width : `int`
        Level-0 width of the slide.
    height : `int`
        Level-0 height of the slide.
    patch_size : `int`, optional
        Patch side in level-0 pixels.

        The default is 256.

    Returns
    -------
    :class:`~pathomil.heatmap.HeatGrid`
        Grid of ceil(width / patch_size) x ceil(height / patch_size) cells.
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if coords.shape[0] != scores.shape[0]:
        raise ValueError(f"Got {coords.shape[0]} coordinates but {scores.shape[0]} scores")
    if coords.shape[0] == 0:
        raise ValueError("At least one patch is needed")
    if not np.all(np.isfinite(scores)):
        raise ValueError("Scores must be finite")
    if not isinstance(patch_size, int) or patch_size < 1:
        raise ValueError("'patch_size' must be a positive integer")
    out_of_bounds = (coords[:, 0] < 0) | (coords[:, 1] < 0) | (coords[:, 0] >= width) | \
        (coords[:, 1] >= height)
    if np.any(out_of_bounds):
        x, y = coords[np.flatnonzero(out_of_bounds)[0]]
        raise ValueError(f"Patch ({x}, {y}) lies outside of the {width}x{height} slide")

    s_min, s_max = float(scores.min()), float(scores.max())
    if s_max > s_min:
        normalized = (scores - s_min) / (s_max - s_min)
    else:
        normalized = np.full(scores.shape, .5)

    grid = np.zeros((-(-height // patch_size), -(-width // patch_size)))
    grid[coords[:, 1] // patch_size, coords[:, 0] // patch_size] = normalized
    return HeatGrid(grid, patch_size, s_min, s_max)


def _linear_weights(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_src == 1 or n_dst == 1:
        zeros = np.zeros(n_dst, dtype=np.int64)
        return zeros, zeros, np.zeros(n_dst)

    # Node-aligned: the first and last output pixels coincide with the first and last nodes
    pos = np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_src - 2)
    return i0, i0 + 1, pos - i0


def resample_grid(values: np.ndarray, width: int, height: int, mode: str = MODE_BILINEAR,
                  sigma: float = 1.) -> np.ndarray:
    """
    Resamples a grid to the size of an image.

    Parameters
    ----------
    values : `numpy.ndarray`
        Grid values in [0, 1] (grid height x grid width).
    width : `int`
        Target width -- must not be smaller than the grid width.
    height : `int`
        Target height -- must not be smaller than the grid height.
    mode : `str`, optional
        "bilinear" for a bilinear upsampling, "gaussian" for a Gaussian smoothing
        (standard deviation `sigma` in grid cells) followed by a bilinear upsampling.

        The default is "bilinear".
    sigma : `float`, optional
        Standard deviation of the Gaussian smoothing in grid cells.

        The default is 1.

    Returns
    -------
    `numpy.ndarray`
        Resampled values in [0, 1] (height x width).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("'values' must be a 2d array")
    if mode not in RESAMPLE_MODES:
        raise ValueError(f"Unknown mode '{mode}' -- must be one of {RESAMPLE_MODES}")
    gh, gw = values.shape
    if width < gw or height < gh:
        raise ValueError(f"Target size {width}x{height} is smaller than the grid {gw}x{gh}")

    if mode == MODE_GAUSSIAN:
        values = gaussian_blur_array(values, sigma)

    x0, x1, fx = _linear_weights(gw, width)
    y0, y1, fy = _linear_weights(gh, height)
    rows = values[:, x0] * (1. - fx) + values[:, x1] * fx
    out = rows[y0, :] * (1. - fy)[:, None] + rows[y1, :] * fy[:, None]
    return np.clip(out, 0., 1.)


def jet_color(v) -> np.ndarray:
    """
    Jet colormap -- piecewise linear between fixed anchors, scaled to 8 bit with rounding
    half up.

    Parameters
    ----------
    v : `float` or `numpy.ndarray`
        Value(s) -- clamped to [0, 1].

    Returns
    -------
    `numpy.ndarray`
        8-bit RGB colors -- shape (3,) for a scalar, otherwise shape of `v` plus (3,).
    """
    v = np.clip(np.asarray(v, dtype=np.float64), 0., 1.)
    rgb = np.stack([np.interp(v, JET_ANCHORS[:, 0], JET_ANCHORS[:, c]) for c in (1, 2, 3)],
                   axis=-1)
    return round_half_up(255. * rgb)


def overlay_heatmap(slide: RasterImage, heat: np.ndarray, alpha: float = .4) -> RasterImage:
    """
    Blends the jet-colored heat image into a slide raster --
    i.e. round((1 - alpha) slide + alpha jet(heat)) per channel.

    Parameters
    ----------
    slide : :class:`~pathomil.wsi.raster.RasterImage`
        Slide raster (any pyramid level) -- gray images are expanded to RGB.
    heat : `numpy.ndarray`
        Heat values in [0, 1] of the same size as `slide`.
    alpha : `float`, optional
        Opacity of the heatmap.

        The default is 0.4

    Returns
    -------
    :class:`~pathomil.wsi.raster.RasterImage`
        RGB overlay.
    """
    if not isinstance(slide, RasterImage):
        raise TypeError("'slide' must be an instance of 'pathomil.wsi.RasterImage' " +
                        f"but not of '{type(slide)}'")
    if not 0 <= alpha <= 1:
        raise ValueError("'alpha' must be in [0, 1]")
    heat = np.asarray(heat, dtype=np.float64)
    if heat.shape != (slide.height, slide.width):
        raise ValueError(f"Dimension mismatch: slide {slide.width}x{slide.height} vs. " +
                         f"heat {heat.shape[1] if heat.ndim == 2 else '?'}x{heat.shape[0]}")

    pixels = slide.pixels
    if slide.channels == 1:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    colors = jet_color(heat).astype(np.float64)
    return RasterImage(round_half_up((1. - alpha) * pixels.astype(np.float64) + alpha * colors))


def overlay_level(pyr: ImagePyramid, max_side: int = MAX_OVERLAY_SIDE) -> int:
    """
    Selects the first pyramid level whose longer side does not exceed `max_side` --
    the coarsest level if no level is small enough.
    """
    for level in range(pyr.n_levels):
        img = pyr.level(level)
        if max(img.width, img.height) <= max_side:
            return level
    return pyr.n_levels - 1


class HeatmapRendering():
    """
    Rendered heatmap of a slide.

    Parameters
    ----------
    overlay : :class:`~pathomil.wsi.raster.RasterImage`
        Heatmap blended into the slide.
    heat : `numpy.ndarray`
        Resampled heat values at the rendering level.
    grid : :class:`~pathomil.heatmap.HeatGrid`
        Normalized patch scores.
    level : `int`
        Pyramid level the heatmap was rendered at.
    mode : `str`
        Resampling mode.
    """
    def __init__(self, overlay: RasterImage, heat: np.ndarray, grid: HeatGrid, level: int,
                 mode: str):
        self.__overlay = overlay
        self.__heat = heat
        self.__grid = grid
        self.__level = level
        self.__mode = mode

    @property
    def overlay(self) -> RasterImage:
        return self.__overlay

    @property
    def heat(self) -> np.ndarray:
        return self.__heat

    @property
    def grid(self) -> HeatGrid:
        return self.__grid

    @property
    def level(self) -> int:
        return self.__level

    @property
    def mode(self) -> str:
        return self.__mode

    def heat_image(self) -> RasterImage:
        """
        Jet-colored heat values without the slide.
        """
        return RasterImage(jet_color(self.__heat))

    def side_text(self) -> str:
        """
        Normalization range and rendering level as "key value" lines.
        """
        return f"score_min {self.__grid.score_min!r}\nscore_max {self.__grid.score_max!r}\n" + \
            f"level {self.__level}\nmode {self.__mode}\n"

    def save(self, f_out: str, f_side_out: str = None, f_heat_out: str = None) -> None:
        """
        Writes the overlay (PPM, the rendering level is stored as a header comment) and,
        optionally, the side file and the heat image.

        Parameters
        ----------
        f_out : `str`
            Path to the overlay PPM file.
        f_side_out : `str`, optional
            Path to the side text file.

            The default is None.
        f_heat_out : `str`, optional
            Path to the heat image PPM file.

            The default is None.
        """
        write_ppm(f_out, self.__overlay, [f"level={self.__level}"])
        if f_side_out is not None:
            atomic_write(f_side_out, self.side_text())
        if f_heat_out is not None:
            write_ppm(f_heat_out, self.heat_image(), [f"level={self.__level}"])


def render_heatmap(model: MilModel, bag: FeatureBag, pyr: ImagePyramid,
                   config: OverlayConfig = None, patch_size: int = 256) -> HeatmapRendering:
    """
    Renders the attention heatmap of a bag -- attention weights (evaluation mode) are mapped
    onto the patch grid, resampled to a pyramid level whose longer side does not exceed
    `config.max_side`, and blended into that level.

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Trained model.
    bag : :class:`~pathomil.data.bag.FeatureBag`
        Bag of the slide.
    pyr : :class:`~pathomil.wsi.raster.ImagePyramid`
        Pyramid of the slide.
    config : :class:`~pathomil.heatmap.OverlayConfig`, optional
        Rendering configuration -- defaults if None.

        The default is None.
    patch_size : `int`, optional
        Patch side in level-0 pixels.

        The default is 256.

    Returns
    -------
    :class:`~pathomil.heatmap.HeatmapRendering`
        Rendered heatmap.
    """
    if not isinstance(model, MilModel):
        raise TypeError("'model' must be an instance of 'pathomil.models.MilModel' " +
                        f"but not of '{type(model)}'")
    if not isinstance(bag, FeatureBag):
        raise TypeError("'bag' must be an instance of 'pathomil.data.FeatureBag' " +
                        f"but not of '{type(bag)}'")
    if not isinstance(pyr, ImagePyramid):
        raise TypeError("'pyr' must be an instance of 'pathomil.wsi.ImagePyramid' " +
                        f"but not of '{type(pyr)}'")
    if config is None:
        config = OverlayConfig()

    attention = extract_attention(model, bag.features, config.class_index)
    base = pyr.level(0)
    grid = scores_to_grid(bag.coords, attention, base.width, base.height, patch_size)

    level = overlay_level(pyr, config.max_side)
    img = pyr.level(level)
    mode = config.resolve_mode(model.kind)
    heat = resample_grid(grid.values, img.width, img.height, mode, config.sigma)
    logger.info("Rendering heatmap of '%s' at level %d (%s) with mode '%s'", bag.slide_id,
                level, img, mode)

    return HeatmapRendering(overlay_heatmap(img, heat, config.alpha), heat, grid, level, mode)
