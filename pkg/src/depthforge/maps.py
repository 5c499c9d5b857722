"""Depth and disparity containers plus the transforms shared across the package.

All pixel grids are float64 numpy arrays in row-major order. Containers are
frozen dataclasses holding read-only arrays: safe to share between threads
and to use as checksum subjects. Invalid pixels are stored as 0.0 and
excluded from every reduction through the mask; no NaN sentinels.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError
from .validation import as_float_array, as_mask, check_image, frozen_copy

DEGENERATE_RANGE = 1e-12


def array_checksum(*arrays: np.ndarray) -> str:
    """SHA-256 over shape headers and raw float64 bytes, C order."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        digest.update(repr(arr.shape).encode("ascii"))
        digest.update(arr.tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class DepthMap:
    """H×W depth values (arbitrary length units) with a validity mask.

    Valid pixels must be finite and strictly positive. Invalid pixels are
    rewritten to 0.0 on construction so storage stays finite.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = as_float_array(self.values, "depth values", require_finite=False)
        if values.ndim != 2:
            raise DomainError(f"depth values must be 2-D, got shape {values.shape}")
        valid = as_mask(self.valid, shape=values.shape, name="depth valid mask")
        selected = values[valid]
        if not np.all(np.isfinite(selected)):
            raise DomainError("depth map has non-finite valid pixels")
        if np.any(selected <= 0.0):
            raise DomainError("depth map has nonpositive valid pixels")
        object.__setattr__(self, "values", frozen_copy(np.where(valid, values, 0.0)))
        object.__setattr__(self, "valid", frozen_copy(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DisparityMap:
    """H×W normalized disparity in [0,1] with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = as_float_array(self.values, "disparity values", require_finite=False)
        if values.ndim != 2:
            raise DomainError(f"disparity values must be 2-D, got shape {values.shape}")
        valid = as_mask(self.valid, shape=values.shape, name="disparity valid mask")
        selected = values[valid]
        if not np.all(np.isfinite(selected)):
            raise DomainError("disparity map has non-finite valid pixels")
        if selected.size and (selected.min() < 0.0 or selected.max() > 1.0):
            raise DomainError("disparity map has valid pixels outside [0,1]")
        object.__setattr__(self, "values", frozen_copy(np.where(valid, values, 0.0)))
        object.__setattr__(self, "valid", frozen_copy(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DepthSample:
    """A labeled training item: RGB image, depth map, optional sky mask.

    Sky pixels must be marked valid in the depth mask; their disparity is
    defined as 0 (farthest) by ``depth_to_disparity``.
    """

    image: np.ndarray
    depth: DepthMap
    sky: np.ndarray | None = None

    def __post_init__(self):
        image = check_image(self.image, "sample image")
        if image.shape[1:] != self.depth.shape:
            raise DomainError(
                f"image H×W {image.shape[1:]} does not match depth {self.depth.shape}"
            )
        object.__setattr__(self, "image", frozen_copy(image))
        if self.sky is not None:
            sky = as_mask(self.sky, shape=self.depth.shape, name="sky mask")
            if np.any(sky & ~self.depth.valid):
                raise DomainError("sky mask covers pixels not marked valid")
            object.__setattr__(self, "sky", frozen_copy(sky))


@dataclass(frozen=True)
class PseudoSample:
    """An unlabeled image paired with the teacher's prediction on it.

    ``source_checksum`` fingerprints the clean image the teacher saw, so the
    student loop can assert its pseudo-label targets predate perturbation.
    """

    image: np.ndarray
    pseudo_disparity: DisparityMap
    source_checksum: str = ""

    def __post_init__(self):
        image = check_image(self.image, "pseudo-sample image")
        if image.shape[1:] != self.pseudo_disparity.shape:
            raise DomainError(
                "pseudo-sample image H×W does not match its disparity map"
            )
        object.__setattr__(self, "image", frozen_copy(image))


class MaskedStats(NamedTuple):
    count: int
    minimum: float
    maximum: float
    mean: float


def masked_stats(values, mask) -> MaskedStats:
    """Count/min/max/mean over mask-true pixels; NaN fields when none are."""
    values = as_float_array(values, "values", require_finite=False)
    mask = as_mask(mask, shape=values.shape, name="mask")
    selected = values[mask]
    if selected.size == 0:
        return MaskedStats(0, math.nan, math.nan, math.nan)
    return MaskedStats(
        int(selected.size),
        float(selected.min()),
        float(selected.max()),
        float(selected.mean()),
    )


def depth_to_disparity(depth: DepthMap, sky: np.ndarray | None = None) -> DisparityMap:
    """Convert depth to normalized disparity: d = 1/t, min-max scaled to [0,1].

    The min-max range is taken over all valid pixels, sky included, and sky
    pixels are forced to 0 afterwards; that way a far-but-finite sky depth
    anchors the far end of the range instead of distorting it. A degenerate
    range (below 1e-12) maps every valid pixel to the neutral constant 0.5.
    Invalid pixels stay 0 and stay flagged invalid.
    """
    valid = depth.valid
    if not valid.any():
        raise DomainError("depth_to_disparity: no valid pixels")
    if sky is not None:
        sky = as_mask(sky, shape=depth.shape, name="sky mask")
        if np.any(sky & ~valid):
            raise DomainError("depth_to_disparity: sky mask covers invalid pixels")
    raw = np.zeros(depth.shape)
    raw[valid] = 1.0 / depth.values[valid]
    lo = raw[valid].min()
    hi = raw[valid].max()
    out = np.zeros(depth.shape)
    if hi - lo < DEGENERATE_RANGE:
        out[valid] = 0.5
    else:
        out[valid] = (raw[valid] - lo) / (hi - lo)
    if sky is not None:
        out[sky] = 0.0
    return DisparityMap(out, valid)


def disparity_from_sample(sample: DepthSample) -> DisparityMap:
    """The training target for a labeled sample, sky rule included."""
    return depth_to_disparity(sample.depth, sample.sky)


def horizontal_flip(sample: DepthSample) -> DepthSample:
    """Mirror image, depth, and masks along width. An involution."""
    flipped_depth = DepthMap(
        np.ascontiguousarray(sample.depth.values[:, ::-1]),
        np.ascontiguousarray(sample.depth.valid[:, ::-1]),
    )
    sky = None
    if sample.sky is not None:
        sky = np.ascontiguousarray(sample.sky[:, ::-1])
    return DepthSample(
        image=np.ascontiguousarray(sample.image[:, :, ::-1]),
        depth=flipped_depth,
        sky=sky,
    )
