"""
Module provides tests to test the `pathomil.heatmap` module.
"""
import os
import numpy as np
import pytest

from pathomil.rng import CanonicalRng
from pathomil.models import MilModel, KIND_CLAM_SB, KIND_ABMIL
from pathomil.data import FeatureBag
from pathomil.wsi import RasterImage, build_pyramid, read_ppm
from pathomil.heatmap import OverlayConfig, MODE_GAUSSIAN, MODE_BILINEAR, scores_to_grid, \
    resample_grid, jet_color, overlay_heatmap, overlay_level, render_heatmap

from .utils import get_temp_folder


def test_jet_color():
    assert jet_color(.875).tolist() == [255, 0, 0]
    assert jet_color(0.).tolist() == [0, 0, 128]
    assert jet_color(.5).tolist() == [128, 255, 128]
    assert jet_color(1.).tolist() == [128, 0, 0]
    assert jet_color(-3.).tolist() == jet_color(0.).tolist()
    assert jet_color(np.zeros((4, 5))).shape == (4, 5, 3)


def test_scores_to_grid():
    coords = np.array([[0, 0], [512, 256]])
    grid = scores_to_grid(coords, np.array([2., 4.]), 700, 600)
    assert grid.values.shape == (3, 3)
    assert grid.values[0, 0] == 0. and grid.values[1, 2] == 1.
    assert grid.score_min == 2. and grid.score_max == 4.
    assert np.count_nonzero(grid.values) == 1

    grid = scores_to_grid(coords, np.array([.3, .3]), 700, 600)
    assert grid.values[0, 0] == .5 and grid.values[1, 2] == .5

    with pytest.raises(ValueError):
        scores_to_grid(coords, np.array([1.]), 700, 600)
    with pytest.raises(ValueError):
        scores_to_grid(np.array([[768, 0]]), np.array([1.]), 700, 600)
    with pytest.raises(ValueError):
        scores_to_grid(coords, np.array([1., np.nan]), 700, 600)


def test_resample_grid():
    out = resample_grid(np.array([[0., 1.]]), 3, 1)
    assert np.allclose(out, [[0., .5, 1.]])

    assert np.allclose(resample_grid(np.full((3, 4), .7), 40, 30), .7)
    assert np.allclose(resample_grid(np.full((3, 4), .7), 40, 30, MODE_GAUSSIAN), .7)

    values = CanonicalRng(4).uniform_array((4, 5))
    out = resample_grid(values, 9, 7)
    assert np.allclose(out[::2, ::2], values)
    assert np.all((out >= 0.) & (out <= 1.))

    spike = np.zeros((5, 5))
    spike[2, 2] = 1.
    for mode in (MODE_BILINEAR, MODE_GAUSSIAN):
        out = resample_grid(spike, 41, 41, mode)
        assert np.unravel_index(np.argmax(out), out.shape) == (20, 20)

    with pytest.raises(ValueError):
        resample_grid(np.zeros((4, 4)), 3, 8)
    with pytest.raises(ValueError):
        resample_grid(np.zeros((4, 4)), 8, 8, "nearest")


def test_overlay_heatmap():
    slide = RasterImage(np.full((2, 3, 3), 45, dtype=np.uint8))
    heat = np.full((2, 3), .875)

    assert overlay_heatmap(slide, heat, alpha=0.) == slide
    assert np.all(overlay_heatmap(slide, heat, alpha=1.).pixels == [255, 0, 0])
    assert np.all(overlay_heatmap(slide, heat, alpha=.5).pixels[:, :, 0] == 150)

    gray = RasterImage(np.full((2, 3), 45, dtype=np.uint8))
    assert overlay_heatmap(gray, heat, alpha=.5).channels == 3

    with pytest.raises(ValueError):
        overlay_heatmap(slide, np.zeros((3, 2)))


def test_overlay_level():
    pyr = build_pyramid(RasterImage(np.zeros((300, 1000), dtype=np.uint8)))
    assert overlay_level(pyr) == 0
    assert overlay_level(pyr, 500) == 1
    assert overlay_level(pyr, 300) == 2
    assert overlay_level(build_pyramid(RasterImage(np.zeros((300, 1000), dtype=np.uint8)),
                                       max_levels=2), 10) == 1


def test_overlay_config():
    assert OverlayConfig().resolve_mode(KIND_CLAM_SB) == MODE_GAUSSIAN
    assert OverlayConfig().resolve_mode(KIND_ABMIL) == MODE_BILINEAR
    assert OverlayConfig(mode=MODE_BILINEAR).resolve_mode(KIND_CLAM_SB) == MODE_BILINEAR

    with pytest.raises(ValueError):
        OverlayConfig(alpha=1.5)
    with pytest.raises(ValueError):
        OverlayConfig(mode="nearest")


def test_render_heatmap():
    rng = CanonicalRng(6)
    img = RasterImage(np.full((512, 768, 3), 200, dtype=np.uint8))
    coords = np.array([[0, 0], [256, 0], [512, 256]])
    bag = FeatureBag("slide", 1, coords, rng.gaussian_array((3, 4)))
    model = MilModel.create(KIND_CLAM_SB, 4, seed=1, embed_dim=8, attn_hidden=4,
                            cls_hidden=4)

    rendering = render_heatmap(model, bag, build_pyramid(img), OverlayConfig(max_side=400))
    assert rendering.level == 1
    assert rendering.mode == MODE_GAUSSIAN
    assert (rendering.overlay.width, rendering.overlay.height) == (384, 256)
    assert rendering.heat.shape == (256, 384)
    assert rendering.grid.values.shape == (2, 3)

    folder = get_temp_folder()
    f_out = os.path.join(folder, "overlay.ppm")
    f_side = os.path.join(folder, "overlay.txt")
    rendering.save(f_out, f_side)
    restored, comments = read_ppm(f_out)
    assert restored == rendering.overlay
    assert "level=1" in comments
    with open(f_side, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert [line.split()[0] for line in lines] == ["score_min", "score_max", "level", "mode"]
    assert lines[2] == "level 1" and lines[3] == "mode gaussian"

    # Identical renderings for identical inputs
    again = render_heatmap(model, bag, build_pyramid(img), OverlayConfig(max_side=400))
    assert again.overlay == rendering.overlay
