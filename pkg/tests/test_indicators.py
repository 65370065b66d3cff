import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import channel_image, constant_image
from reference import indicators_ref, texture_ref
from statfusion.glcm import build_glcm, glcm_from_probabilities
from statfusion.imageio import ImageRgb
from statfusion.indicators import (
    FEATURE_NAMES,
    ExtractionConfig,
    channel_difference,
    channel_ratio,
    extract_batch,
    extract_indicators,
    histogram5,
    spectral_stats,
    textural_features,
)

NO_RESIZE = ExtractionConfig(resize=False)
IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def test_layout():
    assert len(FEATURE_NAMES) == 54 == len(set(FEATURE_NAMES))
    assert FEATURE_NAMES[:3] == ("R_mean", "R_std", "R_skewness")
    assert FEATURE_NAMES[16] == "G_mean"
    assert FEATURE_NAMES[48:] == ("diff_R_G", "diff_R_B", "diff_G_B", "ratio_R_G", "ratio_R_B", "ratio_G_B")


def test_spectral_constant():
    assert spectral_stats(constant_image((100, 100, 100)), 0) == (100.0, 0.0, 0.0)


def test_spectral_symmetric():
    mean, std, skew = spectral_stats(channel_image([0, 0, 255, 255]), 0)
    assert (mean, std) == (127.5, 127.5)
    assert skew == pytest.approx(0.0, abs=1e-12)


def test_spectral_skewed():
    # mean 63.75; variance (3 * 63.75^2 + 191.25^2) / 4 = 12192.1875; skew 2/sqrt(3)
    mean, std, skew = spectral_stats(channel_image([0, 0, 0, 255]), 0)
    assert mean == 63.75
    assert std == pytest.approx(math.sqrt(12192.1875), rel=1e-12)
    assert std == pytest.approx(110.4182, abs=1e-4)
    assert skew == pytest.approx(2 / math.sqrt(3), rel=1e-12)


@pytest.mark.parametrize(
    "values, expected",
    [
        ([0, 0, 0, 0], [1, 0, 0, 0, 0]),
        ([255] * 4, [0, 0, 0, 0, 1]),
        ([0, 0, 128, 128], [0.5, 0, 0.5, 0, 0]),
        ([51, 52, 102, 103], [0.25, 0.5, 0.25, 0, 0]),
        ([153, 154, 204, 205], [0, 0, 0.25, 0.5, 0.25]),
    ],
)
def test_histogram5(values, expected):
    assert histogram5(channel_image(values), 1).tolist() == expected


def test_difference_and_ratio():
    img = constant_image((100, 50, 0))
    assert channel_difference(img, 0, 1) == 50
    assert channel_ratio(img, 0, 1) == 2
    assert channel_ratio(img, 0, 2) == 0.0
    same = constant_image((7, 7, 7))
    assert channel_difference(same, 0, 1) == 0 and channel_ratio(same, 1, 2) == 1


def test_texture_diagonal():
    f = textural_features(glcm_from_probabilities(np.array([[0.5, 0.0], [0.0, 0.5]])))
    expected = [3.0, 0.25, 1.0, 0.0, 0.0, math.log(2), 0.5, 1.0]
    np.testing.assert_allclose(f, expected, rtol=0, atol=1e-12)


def test_texture_single_cell():
    p = np.zeros((4, 4))
    p[2, 2] = 1.0
    f = textural_features(glcm_from_probabilities(p))
    assert f[5] == 0.0 and f[6] == 1.0 and f[3] == 0.0 and f[7] == 0.0
    assert f[0] == 6.0 and f[2] == 1.0


def test_texture_uniform():
    f = textural_features(glcm_from_probabilities(np.full((2, 2), 0.25)))
    expected = [3.0, 0.25, 0.75, 0.5, 0.5, math.log(4), 0.25, 0.0]
    np.testing.assert_allclose(f, expected, rtol=0, atol=1e-12)


@given(st.integers(2, 5).flatmap(
    lambda z: arrays(np.int64, st.tuples(st.integers(1, 5), st.integers(2, 6)), elements=st.integers(0, z - 1))
    .map(lambda g: (z, g))))
@settings(max_examples=150, deadline=None)
def test_texture_matches_reference(case):
    z, grid = case
    g = build_glcm(grid, z)
    ref = texture_ref(g.p.tolist())
    ref[7] = max(-1.0, min(1.0, ref[7]))
    np.testing.assert_allclose(textural_features(g), ref, rtol=1e-10, atol=1e-12)


FIXTURE = np.array(
    [
        [[12, 200, 33], [250, 0, 77], [128, 128, 128], [5, 60, 240]],
        [[90, 14, 180], [33, 33, 200], [255, 255, 0], [140, 70, 35]],
        [[0, 0, 0], [61, 122, 183], [199, 99, 49], [17, 230, 101]],
        [[180, 180, 20], [44, 88, 132], [210, 5, 160], [100, 150, 200]],
    ],
    dtype=np.uint8,
)


@pytest.mark.parametrize("levels", [4, 8, 32])
def test_fixture_matches_reference(levels):
    vec = extract_indicators(ImageRgb(FIXTURE), ExtractionConfig(levels=levels, resize=False))
    np.testing.assert_allclose(vec.values, indicators_ref(FIXTURE.tolist(), levels), rtol=1e-10, atol=1e-10)


def test_constant_grey_image():
    v = extract_indicators(constant_image((90, 90, 90)), NO_RESIZE)
    for c in "RGB":
        assert v[f"{c}_mean"] == 90 and v[f"{c}_std"] == 0 and v[f"{c}_skewness"] == 0
        assert v[f"{c}_tex_entropy"] == 0 and v[f"{c}_tex_second_moment"] == 1
    assert all(v[n] == 0 for n in ("diff_R_G", "diff_R_B", "diff_G_B"))
    assert all(v[n] == 1 for n in ("ratio_R_G", "ratio_R_B", "ratio_G_B"))


def test_row_permutation_keeps_texture(rng):
    arr = rng.integers(0, 256, size=(6, 7, 3), dtype=np.uint8)
    a = extract_indicators(ImageRgb(arr), NO_RESIZE)
    b = extract_indicators(ImageRgb(arr[rng.permutation(6)]), NO_RESIZE)
    tex = [i for i, n in enumerate(FEATURE_NAMES) if "_tex_" in n]
    np.testing.assert_array_equal(a.values[tex], b.values[tex])


def check_invariants(values):
    assert values.shape == (54,)
    assert np.all(np.isfinite(values))
    for c in "RGB":
        hist = [values[IDX[f"{c}_hist_bin_{b}"]] for b in range(1, 6)]
        assert abs(sum(hist) - 1.0) <= 1e-9
        assert values[IDX[f"{c}_std"]] >= 0
        assert 0 < values[IDX[f"{c}_tex_second_moment"]] <= 1
        assert values[IDX[f"{c}_tex_entropy"]] >= 0
        assert 0 < values[IDX[f"{c}_tex_homogeneity"]] <= 1
        assert -1 <= values[IDX[f"{c}_tex_correlation"]] <= 1
        contrast = values[IDX[f"{c}_tex_contrast"]]
        dissim = values[IDX[f"{c}_tex_dissimilarity"]]
        assert dissim ** 2 <= contrast * (1 + 1e-12) + 1e-12


images = arrays(np.uint8, st.tuples(st.integers(2, 12), st.integers(2, 12), st.just(3)))


@given(images, st.sampled_from([2, 8, 32]))
@settings(max_examples=150, deadline=None)
def test_invariants_random_images(arr, levels):
    check_invariants(extract_indicators(ImageRgb(arr), ExtractionConfig(levels=levels, resize=False)).values)


@given(images)
@settings(max_examples=50, deadline=None)
def test_contrast_zero_iff_diagonal(arr):
    img = ImageRgb(arr)
    v = extract_indicators(img, NO_RESIZE)
    for c, name in enumerate("RGB"):
        g = build_glcm((img.channel(c).astype(int) * 32) // 256, 32)
        on_diag = np.isclose(np.trace(g.p), 1.0, rtol=0, atol=1e-12)
        assert (v[f"{name}_tex_contrast"] == 0) == on_diag


@given(images, st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_brightness_shift(arr, delta):
    arr = np.minimum(arr, 255 - delta)
    a = extract_indicators(ImageRgb(arr), NO_RESIZE)
    b = extract_indicators(ImageRgb(arr + delta), NO_RESIZE)
    for c in "RGB":
        assert b[f"{c}_mean"] == pytest.approx(a[f"{c}_mean"] + delta, abs=1e-9)
        assert b[f"{c}_std"] == pytest.approx(a[f"{c}_std"], abs=1e-9)
        assert b[f"{c}_skewness"] == pytest.approx(a[f"{c}_skewness"], abs=1e-7)
    for n in ("diff_R_G", "diff_R_B", "diff_G_B"):
        assert b[n] == pytest.approx(a[n], abs=1e-9)


@given(images)
@settings(max_examples=60, deadline=None)
def test_replication_upsample(arr):
    up = np.repeat(np.repeat(arr, 2, axis=0), 2, axis=1)
    a = extract_indicators(ImageRgb(arr), NO_RESIZE)
    b = extract_indicators(ImageRgb(up), NO_RESIZE)
    for c in "RGB":
        for stat in ("mean", "std", "skewness"):
            assert b[f"{c}_{stat}"] == pytest.approx(a[f"{c}_{stat}"], rel=1e-9, abs=1e-9)
        for k in range(1, 6):
            assert b[f"{c}_hist_bin_{k}"] == pytest.approx(a[f"{c}_hist_bin_{k}"], abs=1e-12)


def test_resize_default_and_determinism(rng):
    img = ImageRgb(rng.integers(0, 256, size=(40, 30, 3), dtype=np.uint8))
    a = extract_indicators(img)
    b = extract_indicators(img)
    assert np.array_equal(a.values, b.values)
    check_invariants(a.values)
    assert not np.array_equal(a.values, extract_indicators(img, NO_RESIZE).values)


def test_batch_order_independent_of_workers(rng):
    imgs = [ImageRgb(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)) for _ in range(12)]
    serial = extract_batch(imgs, NO_RESIZE, workers=1)
    threaded = extract_batch(imgs, NO_RESIZE, workers=4)
    assert np.array_equal(serial, threaded)
    assert np.array_equal(serial[3], extract_indicators(imgs[3], NO_RESIZE).values)
