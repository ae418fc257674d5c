import numpy as np
import pytest

from ncf.data import (Distribution2D, PixelCloud, denormalize, encode_ppm, fit_normalization, load_ppm,
                      normalize, parse_ppm, sample_2d, save_ppm, synthetic_image)
from ncf.transport import SampleSet


def test_eight_gaussians_balanced_and_tight():
    s = sample_2d("eight_gaussians", 8000, seed=0).points
    ang = 2 * np.pi * np.arange(8) / 8
    centers = 0.8 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dist = np.linalg.norm(s[:, None] - centers[None], axis=2)
    nearest = dist.argmin(axis=1)
    assert np.all(dist.min(axis=1) < 4 * 0.05 * np.sqrt(2) + 1e-12)
    counts = np.bincount(nearest, minlength=8)
    chi2 = np.sum((counts - 1000.0) ** 2 / 1000.0)
    assert chi2 < 24.32  # 0.999 quantile of chi-square with 7 degrees of freedom


def test_checkerboard_avoids_black_cells():
    s = sample_2d("checkerboard", 20_000, seed=1).points
    i = np.floor((s[:, 0] + 1) / 0.5).astype(int)
    j = np.floor((s[:, 1] + 1) / 0.5).astype(int)
    assert np.mean((i + j) % 2 == 1) < 1e-3
    assert np.all(np.abs(s) <= 1)


@pytest.mark.parametrize("kind", ["swiss_roll", "double_moons", "checkerboard", "eight_gaussians"])
def test_samplers_deterministic_and_bounded(kind):
    a = sample_2d(kind, 3000, seed=4)
    b = sample_2d(kind, 3000, seed=4)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.labels is None
    assert np.abs(normalize(a).points).max() <= 1 + 1e-12
    assert np.abs(a.points).max() < 1.3


def test_labeled_mixture_presets():
    s = sample_2d("vertical_gaussians", 4000, seed=0)
    assert s.n_classes == 2
    for k, center in enumerate([(0.0, 0.5), (0.0, -0.5)]):
        np.testing.assert_allclose(s.points[s.labels == k].mean(axis=0), center, atol=0.02)
    t = sample_2d("horizontal_gaussians", 4000, seed=0)
    np.testing.assert_allclose(t.points[t.labels == 1].mean(axis=0), (0.5, 0.0), atol=0.02)


def test_custom_mixture_labels():
    dist = Distribution2D("labeled_gaussian_mixture", centers=((0, 0), (1, 1), (2, 2)), sigma=0.01, labels=(0, 1, 0))
    s = sample_2d(dist, 600, seed=0)
    assert s.n_classes == 2
    assert np.all(np.abs(s.points[s.labels == 1] - 1.0) < 0.1)


def test_unknown_kind_and_bad_n():
    with pytest.raises(ValueError, match="unknown distribution"):
        sample_2d("spiral", 10)
    with pytest.raises(ValueError):
        sample_2d("swiss_roll", 0)


def test_normalize_examples():
    pts = np.array([[-1.0, 0.0], [1.0, 1.0], [0.3, -1.0]])
    s = normalize(SampleSet(pts))
    np.testing.assert_allclose(s.points, pts, atol=1e-15)
    rng = np.random.default_rng(0)
    raw = SampleSet(rng.uniform(-5, 20, (100, 3)))
    n = normalize(raw)
    np.testing.assert_allclose(n.points.min(axis=0), -1.0)
    np.testing.assert_allclose(n.points.max(axis=0), 1.0)
    np.testing.assert_allclose(denormalize(n).points, raw.points, atol=1e-12)


def test_normalize_zero_range_warns():
    with pytest.warns(RuntimeWarning, match="zero-range"):
        s = normalize(SampleSet(np.array([[1.0, 2.0], [3.0, 2.0]])))
    assert s.scale[1] == 1.0


def test_isotropic_normalization_single_scale():
    rng = np.random.default_rng(0)
    shift, scale = fit_normalization(rng.standard_normal((500, 3)) * [1, 2, 3], mode="isotropic")
    assert np.all(scale == scale[0])
    with pytest.raises(ValueError):
        fit_normalization(np.zeros((2, 2)), mode="minmax")


def test_ppm_examples(tmp_path):
    white = parse_ppm(b"P6\n1 1\n255\n" + bytes([255, 255, 255]))
    np.testing.assert_array_equal(white.pixels, [[1.0, 1.0, 1.0]])
    two = parse_ppm(b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 0, 0]))
    np.testing.assert_array_equal(two.pixels, [[0, 0, 0], [1, 0, 0]])
    rng = np.random.default_rng(0)
    img = PixelCloud(rng.random((64, 3)), 8, 8)
    save_ppm(img, tmp_path / "a.ppm")
    back = load_ppm(tmp_path / "a.ppm")
    assert (back.width, back.height) == (8, 8)
    assert np.abs(back.pixels - img.pixels).max() <= 1 / 510 + 1e-15
    raw = (tmp_path / "a.ppm").read_bytes()
    assert encode_ppm(load_ppm(tmp_path / "a.ppm")) == raw


def test_ppm_header_comments():
    img = parse_ppm(b"P6\n# made by hand\n1 1\n255\n" + bytes([0, 128, 255]))
    np.testing.assert_allclose(img.pixels, [[0, 128 / 255, 1]])


@pytest.mark.parametrize("data", [b"P5\n1 1\n255\n\x00", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n2 2\n255\n" + bytes(5),
                                  b"P6 x 1 255\n"])
def test_ppm_malformed(data):
    with pytest.raises(ValueError):
        parse_ppm(data)


def test_synthetic_image_geometry():
    img = synthetic_image([(1, 0, 0), (0, 0, 1)], 16, 8, seed=1)
    assert img.pixels.shape == (128, 3)
    assert img.pixels.min() >= 0 and img.pixels.max() <= 1


def test_cube_normalization_fits_unit_cube_with_one_scale():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((300, 2)) * [4, 1], rng.standard_normal((200, 2)) + 3
    shift, scale = fit_normalization(a, b, mode="cube")
    assert np.all(scale == scale[0])
    z = (np.concatenate([a, b]) - shift) / scale
    assert z.min() >= -1 - 1e-12 and z.max() <= 1 + 1e-12
    assert np.isclose(np.max(np.abs(z)), 1.0)
