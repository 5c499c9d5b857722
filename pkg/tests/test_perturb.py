import numpy as np
import pytest

from depthforge.errors import ConfigError, DomainError
from depthforge.losses import CutMixMask
from depthforge.perturb import (
    PerturbConfig,
    _hsv_to_rgb,
    _rgb_to_hsv,
    color_jitter,
    cutmix_images,
    distort,
    gaussian_blur,
    sample_cutmix_mask,
)

IDENTITY = PerturbConfig(
    brightness=(1.0, 1.0),
    contrast=(1.0, 1.0),
    saturation=(1.0, 1.0),
    hue=(0.0, 0.0),
    blur_sigma=(0.0, 0.0),
)


def random_image(rng, h=8, w=8):
    return rng.uniform(0.0, 1.0, size=(3, h, w))


class TestPerturbConfig:
    def test_defaults(self):
        cfg = PerturbConfig()
        assert cfg.brightness == (0.6, 1.4)
        assert cfg.hue == (-0.1, 0.1)
        assert cfg.cutmix_probability == 0.5

    def test_rejects_disordered_range(self):
        with pytest.raises(ConfigError):
            PerturbConfig(brightness=(1.4, 0.6))

    def test_rejects_bad_probability(self):
        with pytest.raises(ConfigError):
            PerturbConfig(cutmix_probability=1.5)


class TestColorJitter:
    def test_identity_config_is_bit_exact(self):
        rng = np.random.default_rng(0)
        image = random_image(rng)
        out = color_jitter(image, IDENTITY, np.random.default_rng(1))
        assert np.array_equal(out, image)

    def test_brightness_doubling(self):
        cfg = PerturbConfig(
            brightness=(2.0, 2.0), contrast=(1.0, 1.0),
            saturation=(1.0, 1.0), hue=(0.0, 0.0),
        )
        image = np.full((3, 2, 2), 0.25)
        out = color_jitter(image, cfg, np.random.default_rng(2))
        assert np.allclose(out, 0.5, atol=1e-15)

    def test_zero_contrast_flattens_to_mean_luminance(self):
        cfg = PerturbConfig(
            brightness=(1.0, 1.0), contrast=(0.0, 0.0),
            saturation=(1.0, 1.0), hue=(0.0, 0.0),
        )
        rng = np.random.default_rng(3)
        image = random_image(rng, 4, 4)
        luma = np.tensordot([0.299, 0.587, 0.114], image, axes=1).mean()
        out = color_jitter(image, cfg, np.random.default_rng(4))
        assert np.allclose(out, luma, atol=1e-12)

    def test_zero_saturation_is_grayscale(self):
        cfg = PerturbConfig(
            brightness=(1.0, 1.0), contrast=(1.0, 1.0),
            saturation=(0.0, 0.0), hue=(0.0, 0.0),
        )
        image = random_image(np.random.default_rng(5), 4, 4)
        out = color_jitter(image, cfg, np.random.default_rng(6))
        assert np.allclose(out[0], out[1], atol=1e-12)
        assert np.allclose(out[1], out[2], atol=1e-12)

    def test_output_stays_in_range(self):
        cfg = PerturbConfig()
        rng = np.random.default_rng(7)
        for _ in range(25):
            out = color_jitter(random_image(rng), cfg, rng)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_same_seed_same_output(self):
        cfg = PerturbConfig()
        image = random_image(np.random.default_rng(8))
        a = color_jitter(image, cfg, np.random.default_rng(99))
        b = color_jitter(image, cfg, np.random.default_rng(99))
        assert np.array_equal(a, b)


class TestHsv:
    def test_roundtrip(self):
        rng = np.random.default_rng(9)
        rgb = rng.uniform(size=(3, 5, 5))
        back = _hsv_to_rgb(_rgb_to_hsv(rgb))
        assert np.allclose(back, rgb, atol=1e-12)

    def test_hue_third_turn_sends_red_to_green(self):
        red = np.zeros((3, 1, 1))
        red[0] = 1.0
        hsv = _rgb_to_hsv(red)
        hsv[0] = (hsv[0] + 1.0 / 3.0) % 1.0
        out = _hsv_to_rgb(hsv)
        assert np.allclose(out[:, 0, 0], [0.0, 1.0, 0.0], atol=1e-12)


class TestGaussianBlur:
    def test_sigma_zero_identity(self):
        image = random_image(np.random.default_rng(10))
        assert np.array_equal(gaussian_blur(image, 0.0), image)

    def test_constant_image_unchanged(self):
        image = np.full((3, 6, 6), 0.42)
        assert np.allclose(gaussian_blur(image, 1.7), 0.42, atol=1e-12)

    def test_impulse_matches_dense_convolution(self):
        sigma = 1.0
        radius = int(np.ceil(3 * sigma))
        offsets = np.arange(-radius, radius + 1)
        k1 = np.exp(-0.5 * (offsets / sigma) ** 2)
        k1 /= k1.sum()
        kernel2d = np.outer(k1, k1)

        n = 9
        image = np.zeros((1, n, n))
        image[0, n // 2, n // 2] = 1.0
        out = gaussian_blur(image, sigma)
        assert abs(out[0, n // 2, n // 2] - kernel2d[radius, radius]) < 1e-12

        # Full-map check against a brute-force 2-D convolution with
        # reflected edges.
        padded = np.pad(image[0], radius, mode="reflect")
        dense = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                dense[i, j] = (padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1] * kernel2d).sum()
        assert np.allclose(out[0], dense, atol=1e-12)

    def test_large_sigma_on_small_image(self):
        image = random_image(np.random.default_rng(11), 4, 4)
        out = gaussian_blur(image, 2.0)  # radius 6 exceeds the extent
        assert out.shape == image.shape
        assert np.isfinite(out).all()

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            gaussian_blur(np.zeros((3, 2, 2)), -1.0)


class TestCutMixMask:
    def test_forced_quarter_square(self):
        cfg = PerturbConfig(cutmix_area=(0.25, 0.25), cutmix_aspect=(1.0, 1.0))
        mask = sample_cutmix_mask(4, 4, cfg, np.random.default_rng(12))
        assert mask.rectangle[2:] == (2, 2)
        assert int(mask.mask.sum()) == 4

    def test_thousand_draw_area_bounds(self):
        cfg = PerturbConfig()
        rng = np.random.default_rng(13)
        h = w = 32
        lo = 0.25 * h * w - w
        hi = 0.75 * h * w + w
        for _ in range(1000):
            mask = sample_cutmix_mask(h, w, cfg, rng)
            count = int(mask.mask.sum())
            assert lo <= count <= hi
            assert int((~mask.mask).sum()) == h * w - count

    def test_rejects_tiny_maps(self):
        with pytest.raises(DomainError):
            sample_cutmix_mask(1, 8, PerturbConfig(), np.random.default_rng(14))

    def test_never_fills_whole_map(self):
        cfg = PerturbConfig(cutmix_area=(1.0, 1.0), cutmix_aspect=(1.0, 1.0))
        mask = sample_cutmix_mask(4, 4, cfg, np.random.default_rng(15))
        assert 0 < int(mask.mask.sum()) < 16


class TestCutMixImages:
    def test_all_true_returns_first(self):
        rng = np.random.default_rng(16)
        a, b = random_image(rng, 4, 4), random_image(rng, 4, 4)
        out = cutmix_images(a, b, np.ones((4, 4), dtype=bool))
        assert np.array_equal(out, a)

    def test_equal_pair_any_mask(self):
        rng = np.random.default_rng(17)
        a = random_image(rng, 4, 4)
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 1:3] = True
        out = cutmix_images(a, a.copy(), CutMixMask(mask, (1, 1, 2, 2)))
        assert np.array_equal(out, a)

    def test_left_column_hand_case(self):
        a = np.arange(12, dtype=float).reshape(3, 2, 2)
        b = a + 100.0
        mask = np.array([[True, False], [True, False]])
        out = cutmix_images(a, b, mask)
        assert np.array_equal(out[:, :, 0], a[:, :, 0])
        assert np.array_equal(out[:, :, 1], b[:, :, 1])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DomainError):
            cutmix_images(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)), np.ones((2, 2), dtype=bool))


def test_distort_deterministic_and_in_range():
    cfg = PerturbConfig()
    image = random_image(np.random.default_rng(18))
    a = distort(image, cfg, np.random.default_rng(7))
    b = distort(image, cfg, np.random.default_rng(7))
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
