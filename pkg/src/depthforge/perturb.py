"""Strong perturbations for the student's view of unlabeled images.

Color jitter and Gaussian blur are always applied together by ``distort``;
CutMix mask sampling and image mixing are separate because the training
loop fires them with a configured probability and needs the mask for the
regional loss. Everything is pure given an explicit ``numpy.random.Generator``,
so parallel workers just hold independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .losses import CutMixMask
from .validation import check_image


def _check_range(name: str, rng_pair, low_floor: float | None = None) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in rng_pair)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (low, high) pair") from None
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must be an ordered finite range, got ({lo}, {hi})")
    if low_floor is not None and lo < low_floor:
        raise ConfigError(f"{name} lower bound must be >= {low_floor}, got {lo}")
    return lo, hi


@dataclass(frozen=True)
class PerturbConfig:
    """Ranges for the strong-perturbation suite; all overridable per run."""

    brightness: tuple[float, float] = (0.6, 1.4)
    contrast: tuple[float, float] = (0.6, 1.4)
    saturation: tuple[float, float] = (0.6, 1.4)
    hue: tuple[float, float] = (-0.1, 0.1)
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    cutmix_probability: float = 0.5
    cutmix_area: tuple[float, float] = (0.25, 0.75)
    cutmix_aspect: tuple[float, float] = (0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "brightness", _check_range("brightness", self.brightness, 0.0))
        object.__setattr__(self, "contrast", _check_range("contrast", self.contrast, 0.0))
        object.__setattr__(self, "saturation", _check_range("saturation", self.saturation, 0.0))
        object.__setattr__(self, "hue", _check_range("hue", self.hue))
        object.__setattr__(self, "blur_sigma", _check_range("blur_sigma", self.blur_sigma, 0.0))
        object.__setattr__(self, "cutmix_area", _check_range("cutmix_area", self.cutmix_area, 0.0))
        object.__setattr__(self, "cutmix_aspect", _check_range("cutmix_aspect", self.cutmix_aspect, 0.0))
        p = float(self.cutmix_probability)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"cutmix_probability must lie in [0,1], got {p}")
        object.__setattr__(self, "cutmix_probability", p)
        object.__setattr__(self, "seed", int(self.seed))


# Rec. 601 luminance weights, the usual grayscale projection.
_LUMA = np.array([0.299, 0.587, 0.114])


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    v = maxc
    spread = maxc - minc
    s = np.where(maxc > 0.0, spread / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0.0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0.0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _apply_brightness(image, factor):
    return np.clip(image * factor, 0.0, 1.0)


def _apply_contrast(image, factor):
    # Contrast pulls toward the scalar mean luminance; factor 0 flattens
    # the whole image onto it.
    mean_luma = float(np.tensordot(_LUMA, image, axes=1).mean())
    return np.clip(mean_luma + factor * (image - mean_luma), 0.0, 1.0)


def _apply_saturation(image, factor):
    luma = np.tensordot(_LUMA, image, axes=1)
    return np.clip(luma + factor * (image - luma), 0.0, 1.0)


def _apply_hue(image, shift):
    hsv = _rgb_to_hsv(image)
    hsv[0] = (hsv[0] + shift) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)


def color_jitter(image: np.ndarray, config: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation, and hue, in a random order.

    Factors are drawn per operation as each is applied, so the draw
    sequence depends only on the rng state. An operation whose factor
    lands exactly on identity is skipped, which keeps collapsed-identity
    configs bit-exact.
    """
    image = check_image(image, "image")
    steps = (
        (config.brightness, _apply_brightness, 1.0),
        (config.contrast, _apply_contrast, 1.0),
        (config.saturation, _apply_saturation, 1.0),
        (config.hue, _apply_hue, 0.0),
    )
    out = image
    for index in rng.permutation(len(steps)):
        value_range, apply, identity = steps[index]
        drawn = rng.uniform(value_range[0], value_range[1])
        if drawn != identity:
            out = apply(out, drawn)
    return out


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    """Indices of a reflect-padded axis of length n, pad radius on each side."""
    if n == 1:
        return np.zeros(1 + 2 * radius, dtype=np.intp)
    period = 2 * n - 2
    idx = np.mod(np.arange(-radius, n + radius), period)
    return np.where(idx < n, idx, period - idx)


def _blur_axis(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (kernel.size - 1) // 2
    moved = np.moveaxis(data, axis, -1)
    padded = moved[..., _reflect_indices(moved.shape[-1], radius)]
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=-1)
    return np.moveaxis(windows @ kernel, -1, axis)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflection at the edges; sigma 0 is identity."""
    sigma = float(sigma)
    if sigma < 0.0:
        raise DomainError(f"blur sigma must be >= 0, got {sigma}")
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0.0:
        return image.copy()
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    out = _blur_axis(image, kernel, axis=-2)
    out = _blur_axis(out, kernel, axis=-1)
    return np.clip(out, 0.0, 1.0)


def distort(image: np.ndarray, config: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    """The always-on part of strong perturbation: jitter then blur."""
    out = color_jitter(image, config, rng)
    sigma = rng.uniform(config.blur_sigma[0], config.blur_sigma[1])
    return gaussian_blur(out, sigma)


def sample_cutmix_mask(h: int, w: int, config: PerturbConfig, rng: np.random.Generator) -> CutMixMask:
    """Draw a rectangle of configured area fraction and aspect ratio.

    Extents come from area = fraction*h*w and aspect = height/width, rounded
    to whole pixels and clamped inside the map; placement is uniform. The
    rounding keeps the true count within one row/column of the requested
    area. A rectangle that would swallow the whole map is trimmed by one
    column so the mask stays a proper subset.
    """
    if h < 2 or w < 2:
        raise DomainError(f"cutmix needs an image of at least 2x2, got {h}x{w}")
    fraction = rng.uniform(config.cutmix_area[0], config.cutmix_area[1])
    aspect = rng.uniform(config.cutmix_aspect[0], config.cutmix_aspect[1])
    area = fraction * h * w
    rect_h = int(np.clip(round(np.sqrt(area * aspect)), 1, h))
    rect_w = int(np.clip(round(np.sqrt(area / aspect)), 1, w))
    if rect_h == h and rect_w == w:
        rect_w -= 1
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + rect_h, left : left + rect_w] = True
    return CutMixMask(mask, (top, left, rect_h, rect_w))


def cutmix_images(u_a: np.ndarray, u_b: np.ndarray, mask) -> np.ndarray:
    """Composite: rectangle pixels from ``u_a``, the rest from ``u_b``."""
    region = mask.mask if isinstance(mask, CutMixMask) else np.asarray(mask, dtype=bool)
    u_a = np.asarray(u_a, dtype=np.float64)
    u_b = np.asarray(u_b, dtype=np.float64)
    if u_a.shape != u_b.shape:
        raise DomainError(f"cutmix_images: shapes differ, {u_a.shape} vs {u_b.shape}")
    if u_a.shape[-2:] != region.shape:
        raise DomainError("cutmix_images: mask does not match image H×W")
    return np.where(region, u_a, u_b)
