"""
Module provides tests to test the `pathomil.wsi` module -- i.e. the image pyramid, the filters,
the tissue segmentation, and the patch grid extraction.
"""
import os
from fractions import Fraction
import numpy as np
import pytest

from pathomil.rng import CanonicalRng
from pathomil.exceptions import FormatError
from pathomil.wsi import RasterImage, build_pyramid, best_level_for_downsample, \
    gaussian_kernel, gaussian_blur, gaussian_blur_array, rgb_to_hsv, histogram, otsu_threshold, \
    morph, MORPH_ERODE, MORPH_DILATE, MORPH_OPEN, MORPH_CLOSE, MORPH_GRADIENT, \
    SegmentationConfig, BinaryMask, filter_small_components, segment_tissue, \
    render_mask_overlay, PatchGrid, footprint_coverage, extract_patch_grid, \
    generate_synthetic_slide, generate_constant_slide, TISSUE_COLOR, decode_netpbm, \
    encode_netpbm, write_pgm, read_pgm, read_ppm

from .utils import get_temp_folder


def _brute_force_otsu(hist: list[int]) -> int:
    n = sum(hist)
    total = sum(i * c for i, c in enumerate(hist))
    best_t, best_var = None, None
    w0, s0 = 0, 0
    for t in range(256):
        w0 += hist[t]
        s0 += t * hist[t]
        w1 = n - w0
        if w0 == 0 or w1 == 0:
            continue
        mu0 = Fraction(s0, w0)
        mu1 = Fraction(total - s0, w1)
        var = Fraction(w0 * w1, n * n) * (mu0 - mu1) ** 2
        if best_var is None or var > best_var:
            best_t, best_var = t, var
    return best_t


def test_pyramid():
    pyr = build_pyramid(RasterImage(np.full((4, 4), 100, dtype=np.uint8)))
    assert pyr.level(1) == RasterImage(np.full((2, 2), 100, dtype=np.uint8))

    pyr = build_pyramid(RasterImage(np.array([[10, 20], [30, 40]], dtype=np.uint8)))
    assert pyr.n_levels == 2
    assert pyr.level(1).pixels[0, 0] == 25

    pyr = build_pyramid(RasterImage(np.zeros((5, 7, 3), dtype=np.uint8)))
    assert (pyr.level(1).width, pyr.level(1).height) == (4, 3)
    assert pyr.level(pyr.n_levels - 1).width == 1

    with pytest.raises(ValueError):
        pyr.level(pyr.n_levels)


def test_best_level_for_downsample():
    pyr = build_pyramid(RasterImage(np.zeros((16, 16), dtype=np.uint8)), max_levels=4)
    assert [pyr.downsample(level) for level in range(pyr.n_levels)] == [1, 2, 4, 8]
    assert best_level_for_downsample(pyr, 4) == 2
    assert best_level_for_downsample(pyr, 3) == 1
    assert best_level_for_downsample(pyr, .5) == 0
    assert best_level_for_downsample(pyr, 100) == 3


def test_gaussian_blur():
    img = RasterImage(np.full((9, 11, 3), 77, dtype=np.uint8))
    assert gaussian_blur(img, 1.5) == img

    pixels = np.zeros((21, 21), dtype=np.uint8)
    pixels[10, 10] = 255
    k = gaussian_kernel(1.)
    assert len(k) == 7 and abs(k.sum() - 1.) < 1e-12
    expected = int(np.floor(255. * k[3] * k[3] + .5))
    assert gaussian_blur(RasterImage(pixels), 1.).pixels[10, 10] == expected

    # Direct 2-D convolution with border renormalization
    values = CanonicalRng(4).uniform_array((12, 9)) * 255.
    sigma = 1.3
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    direct = np.zeros_like(values)
    for y in range(values.shape[0]):
        for x in range(values.shape[1]):
            num, den = 0., 0.
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < values.shape[0] and 0 <= xx < values.shape[1]:
                        w = k[dy + r] * k[dx + r]
                        num += w * values[yy, xx]
                        den += w
            direct[y, x] = num / den
    assert np.max(np.abs(gaussian_blur_array(values, sigma) - direct)) < .5

    with pytest.raises(ValueError):
        gaussian_kernel(0.)


def test_rgb_to_hsv():
    img = RasterImage(np.array([[[255, 0, 0], [128, 128, 128], [0, 128, 255]]], dtype=np.uint8))
    hue, saturation, value = rgb_to_hsv(img)

    assert hue[0, 0] == 0. and saturation[0, 0] == 255 and value[0, 0] == 1.
    assert saturation[0, 1] == 0
    assert abs(hue[0, 2] - 209.88) < .01
    assert saturation[0, 2] == 255

    with pytest.raises(ValueError):
        rgb_to_hsv(RasterImage(np.zeros((2, 2), dtype=np.uint8)))


def test_otsu_threshold():
    hist = np.zeros(256, dtype=np.int64)
    hist[93] = 40
    assert otsu_threshold(hist) == (93, True)

    hist = np.zeros(256, dtype=np.int64)
    hist[50] = 100
    hist[200] = 100
    assert otsu_threshold(hist) == (50, False)

    rng = CanonicalRng(1000)
    n_checked = 0
    for _ in range(1000):
        hist = [0] * 256
        for _ in range(rng.randint(2, 12)):
            hist[rng.randbelow(256)] += rng.randint(1, 500)
        if sum(c > 0 for c in hist) < 2:
            continue
        t, degenerate = otsu_threshold(np.array(hist))
        assert not degenerate
        assert t == _brute_force_otsu(hist)
        n_checked += 1
    assert n_checked > 900

    with pytest.raises(ValueError):
        otsu_threshold(np.zeros(256))
    with pytest.raises(ValueError):
        otsu_threshold(np.ones(255))


def test_morph():
    mask = np.zeros((7, 7), dtype=bool)
    mask[3, 3] = True
    dilated = morph(mask, MORPH_DILATE, 3)
    assert dilated.dtype == bool
    assert dilated.sum() == 9 and dilated[2:5, 2:5].all()
    assert not morph(mask, MORPH_ERODE, 3).any()

    gray = np.full((6, 5), 42, dtype=np.uint8)
    assert not morph(gray, MORPH_GRADIENT, 3).any()

    rng = CanonicalRng(17)
    for _ in range(20):
        m = rng.uniform_array((24, 31)) < .5
        for k in (3, 5):
            opened = morph(m, MORPH_OPEN, k)
            closed = morph(m, MORPH_CLOSE, k)
            assert np.array_equal(morph(opened, MORPH_OPEN, k), opened)
            assert np.array_equal(morph(closed, MORPH_CLOSE, k), closed)
            assert np.array_equal(morph(m, MORPH_DILATE, k), ~morph(~m, MORPH_ERODE, k))

    with pytest.raises(ValueError):
        morph(mask, MORPH_DILATE, 4)
    with pytest.raises(ValueError):
        morph(mask, "thin", 3)


def test_filter_small_components():
    mask = np.zeros((10, 10), dtype=bool)
    mask[1, 1:4] = True
    assert not filter_small_components(mask, 4).any()
    assert np.array_equal(filter_small_components(mask, 0), mask)

    mask = np.zeros((40, 40), dtype=bool)
    mask[0:2, 0:5] = True
    mask[10:30, 5:35] = True
    filtered = filter_small_components(mask, 500)
    assert filtered.sum() == 600
    assert not filtered[0:2, 0:5].any()

    # Diagonal neighbors are connected
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0] = mask[1, 1] = mask[2, 2] = True
    assert filter_small_components(mask, 3).sum() == 3

    binary_mask = filter_small_components(BinaryMask(mask), 4)
    assert isinstance(binary_mask, BinaryMask) and binary_mask.min_area_applied
    assert binary_mask.coverage == 0.


def test_segment_white_slide():
    pyr = build_pyramid(generate_constant_slide(512, 384, (255, 255, 255)))
    with pytest.warns(UserWarning):
        mask = segment_tissue(pyr)
    assert not mask.bits.any()


def test_segment_stained_slide():
    pyr = build_pyramid(generate_constant_slide(1024, 768, TISSUE_COLOR))
    mask = segment_tissue(pyr)
    assert mask.level == 5
    assert (mask.width, mask.height) == (32, 24)
    assert mask.coverage >= .98


@pytest.mark.slow
def test_segment_synthetic_slide():
    img, truth = generate_synthetic_slide(seed=42)
    pyr = build_pyramid(img)
    cfg = SegmentationConfig()
    mask = segment_tissue(pyr, cfg)

    ds = mask.downsample
    upsampled = np.repeat(np.repeat(mask.bits, ds, axis=0), ds, axis=1)
    upsampled = upsampled[:img.height, :img.width]
    assert np.sum(upsampled & truth) >= .95 * np.sum(truth)
    assert np.sum(upsampled & ~truth) <= .05 * np.sum(~truth)

    # Determinism
    assert segment_tissue(pyr, cfg) == mask

    unfiltered = segment_tissue(pyr, SegmentationConfig(min_component_area_px=0))
    assert not np.any(mask.bits & ~unfiltered.bits)

    grid = extract_patch_grid(mask, 256, cfg.coverage_threshold)
    assert len(grid) > 0
    for x, y in grid.coords.tolist():
        assert x + 256 <= img.width and y + 256 <= img.height
        assert footprint_coverage(mask, x, y, 256) >= cfg.coverage_threshold
    assert grid == extract_patch_grid(mask, 256, cfg.coverage_threshold)


def test_extract_patch_grid():
    grid = extract_patch_grid(BinaryMask(np.ones((512, 512), dtype=bool)))
    assert grid.coords.tolist() == [[0, 0], [256, 0], [0, 256], [256, 256]]

    assert len(extract_patch_grid(BinaryMask(np.zeros((512, 512), dtype=bool)))) == 0

    bits = np.zeros((256, 256), dtype=bool)
    bits[:, :128] = True
    mask = BinaryMask(bits)
    assert footprint_coverage(mask, 0, 0, 256) == .5
    assert len(extract_patch_grid(mask, 256, .5)) == 1
    assert len(extract_patch_grid(mask, 256, .6)) == 0

    # Mask at level 2 of a 1000x600 slide -- partial patches at the border are skipped
    mask = BinaryMask(np.ones((150, 250), dtype=bool), level=2, level0_width=1000,
                      level0_height=600)
    grid = extract_patch_grid(mask, 256)
    assert len(grid) == 3 * 2
    assert np.all(grid.coords[:, 0] + 256 <= 1000) and np.all(grid.coords[:, 1] + 256 <= 600)


def test_patch_grid_text():
    grid = PatchGrid(np.array([[0, 0], [256, 512]]))
    assert grid.to_text() == "0 0\n256 512\n"

    f_out = os.path.join(get_temp_folder(), "grid.txt")
    grid.save_text(f_out)
    assert PatchGrid.load_text(f_out) == grid

    with open(f_out, "w", encoding="utf-8") as f:
        f.write("0 0\nabc\n")
    with pytest.raises(FormatError):
        PatchGrid.load_text(f_out)

    with pytest.raises(ValueError):
        PatchGrid(np.array([[0, 0], [0, 0]]))
    with pytest.raises(ValueError):
        PatchGrid(np.array([[3, 0]]))


def test_render_mask_overlay():
    img = RasterImage(np.full((2, 3, 3), 100, dtype=np.uint8))
    mask = np.array([[True, False, True], [False, False, True]])

    assert render_mask_overlay(img, mask, alpha=0.) == img

    out = render_mask_overlay(img, mask, tint=(200, 200, 200), alpha=1.)
    assert np.all(out.pixels[mask] == 200)
    assert np.all(out.pixels[~mask] == 100)

    out = render_mask_overlay(img, mask, tint=(200, 200, 200), alpha=.5)
    assert np.all(out.pixels[mask] == 150)

    with pytest.raises(ValueError):
        render_mask_overlay(img, np.ones((3, 3), dtype=bool))


def test_netpbm():
    img = RasterImage(np.arange(12, dtype=np.uint8).reshape(2, 2, 3))
    data = encode_netpbm(img, ["level=3"])
    decoded, comments = decode_netpbm(data)
    assert decoded == img
    assert comments == ["level=3"]

    with pytest.raises(FormatError):
        decode_netpbm(b"P3\n2 2\n255\n")
    with pytest.raises(FormatError):
        decode_netpbm(data[:-1])

    f_out = os.path.join(get_temp_folder(), "mask.pgm")
    mask = BinaryMask(np.eye(4, dtype=bool))
    write_pgm(f_out, mask.to_image(), ["level=0"])
    gray, comments = read_pgm(f_out)
    assert BinaryMask.from_image(gray) == mask
    assert comments == ["level=0"]
    with pytest.raises(FormatError):
        read_ppm(f_out)
