"""Synthetic scene generation: sky, a receding ground plane, and primitives.

Scenes are built so luminance is a monotone function of disparity (near is
bright, far is dark), which gives a model something real to learn while the
affine-invariant loss ignores the absolute scale of it. Domains differ in
nuisance statistics only: primitive shape mix, texture grain, noise gain,
and palette. That makes "train domain" and "shifted domain" genuinely
different distributions that still share the depth cue, which is exactly
the structure a zero-shot transfer check needs.

Everything is a pure function of (spec, seed): sample i of split s is drawn
from ``SeedSequence(entropy=spec.seed, spawn_key=(s, i))``, so splits can
never collide and any sample can be regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .maps import DepthMap, DepthSample

SPLIT_LABELED = 0
SPLIT_UNLABELED = 1
SPLIT_TEST = 2


@dataclass(frozen=True)
class SceneSpec:
    """Geometry and texture knobs for one scene distribution."""

    height: int = 64
    width: int = 64
    primitive_count: tuple[int, int] = (3, 7)
    depth_range: tuple[float, float] = (1.0, 10.0)
    sky_fraction: float = 0.25
    noise_amplitude: float = 0.04
    domain_id: int = 0
    seed: int = 0

    def __post_init__(self):
        t_min, t_max = (float(v) for v in self.depth_range)
        if not (t_max > t_min > 0.0):
            raise ConfigError(f"depth_range must satisfy t_max > t_min > 0, got ({t_min}, {t_max})")
        lo, hi = (int(v) for v in self.primitive_count)
        if lo < 0 or hi < lo:
            raise ConfigError(f"primitive_count must be an ordered pair >= 0, got ({lo}, {hi})")
        if not 0.0 <= float(self.sky_fraction) < 1.0:
            raise ConfigError("sky_fraction must lie in [0, 1)")
        if int(self.height) < 8 or int(self.width) < 8:
            raise ConfigError("scene must be at least 8x8")
        if float(self.noise_amplitude) < 0.0:
            raise ConfigError("noise_amplitude must be >= 0")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "primitive_count", (lo, hi))
        object.__setattr__(self, "depth_range", (t_min, t_max))
        object.__setattr__(self, "sky_fraction", float(self.sky_fraction))
        object.__setattr__(self, "noise_amplitude", float(self.noise_amplitude))
        object.__setattr__(self, "domain_id", int(self.domain_id))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class DomainProfile:
    """Nuisance statistics distinguishing one domain from another."""

    disk_probability: float
    texture_block: int  # noise grain: pixels per block (1 = per-pixel iid)
    noise_gain: float
    tint: tuple[float, float, float]


def domain_profile(domain_id: int) -> DomainProfile:
    # Even ids: rectangle-heavy, coarse blocky grain, warm palette.
    # Odd ids: disk-heavy, fine loud grain, cool palette.
    if domain_id % 2 == 0:
        return DomainProfile(0.25, 8, 1.0, (1.0, 0.92, 0.82))
    return DomainProfile(0.8, 1, 3.0, (0.82, 0.92, 1.0))


def _depth_luminance(depth: np.ndarray, t_min: float, t_max: float) -> np.ndarray:
    disparity = 1.0 / depth
    span = 1.0 / t_min - 1.0 / t_max
    normalized = (disparity - 1.0 / t_max) / span
    return 0.15 + 0.7 * normalized


def generate_sample(spec: SceneSpec, rng: np.random.Generator) -> DepthSample:
    """One scene: sky above a jittered horizon, ramped ground, primitives.

    Primitives live below the horizon and are painted back to front, so an
    overlap pixel always stores the smallest (nearest) primitive depth.
    """
    h, w = spec.height, spec.width
    t_min, t_max = spec.depth_range
    profile = domain_profile(spec.domain_id)

    base_horizon = spec.sky_fraction * h
    jitter = rng.integers(-h // 16, h // 16 + 1) if base_horizon > 0 else 0
    horizon = int(np.clip(round(base_horizon) + jitter, 0, h - 4))

    depth = np.empty((h, w))
    depth[:horizon] = t_max
    rows = np.arange(horizon, h)
    ramp = (rows - horizon + 1.0) / (h - horizon)
    ground_disparity = 1.0 / t_max + ramp * (1.0 / t_min - 1.0 / t_max)
    depth[horizon:] = (1.0 / ground_disparity)[:, None]

    tint = np.empty((3, h, w))
    tint[:] = np.asarray(profile.tint)[:, None, None]
    # Sky keeps a fixed cool cast in every domain so the horizon reads.
    tint[:, :horizon] = np.array([0.75, 0.85, 1.0])[:, None, None]

    count = int(rng.integers(spec.primitive_count[0], spec.primitive_count[1] + 1))
    primitives = []
    for _ in range(count):
        kind = "disk" if rng.random() < profile.disk_probability else "rect"
        prim_depth = rng.uniform(1.05 * t_min, 0.8 * t_max)
        cy = int(rng.integers(horizon, h))
        cx = int(rng.integers(0, w))
        half_y = int(rng.integers(2, max(3, h // 8) + 1))
        half_x = int(rng.integers(2, max(3, w // 8) + 1))
        shade = rng.uniform(0.8, 1.2, size=3)
        primitives.append((prim_depth, kind, cy, cx, half_y, half_x, shade))

    yy, xx = np.mgrid[0:h, 0:w]
    for prim_depth, kind, cy, cx, half_y, half_x, shade in sorted(
        primitives, key=lambda p: -p[0]
    ):
        if kind == "disk":
            radius = max(half_y, half_x)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
        else:
            mask = (np.abs(yy - cy) <= half_y) & (np.abs(xx - cx) <= half_x)
        mask &= yy >= horizon  # primitives never poke into the sky
        depth[mask] = prim_depth
        tint[:, mask] = (np.asarray(profile.tint) * shade)[:, None]

    luminance = _depth_luminance(depth, t_min, t_max)
    image = luminance[None] * tint

    amplitude = spec.noise_amplitude * profile.noise_gain
    if amplitude > 0.0:
        block = profile.texture_block
        if block > 1:
            coarse = rng.normal(size=(-(-h // block), -(-w // block)))
            noise = np.kron(coarse, np.ones((block, block)))[:h, :w]
        else:
            noise = rng.normal(size=(h, w))
        image = image + amplitude * noise[None]

    image = np.clip(image, 0.0, 1.0)
    valid = np.ones((h, w), dtype=bool)
    sky = np.zeros((h, w), dtype=bool)
    sky[:horizon] = True
    return DepthSample(image, DepthMap(depth, valid), sky)


def sample_rng(seed: int, split_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(split_id, index)))


@dataclass(frozen=True)
class DataConfig:
    """Scene distribution plus split sizes (labeled : unlabeled kept at 1:2)."""

    scene: SceneSpec = SceneSpec()
    labeled: int = 200
    unlabeled: int = 400
    test: int = 100

    def __post_init__(self):
        for name in ("labeled", "unlabeled", "test"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"split size {name} must be positive")
            object.__setattr__(self, name, int(getattr(self, name)))


@dataclass(frozen=True)
class SynthData:
    labeled: tuple[DepthSample, ...]
    unlabeled: tuple[np.ndarray, ...]  # images only, no depth attached
    test: tuple[DepthSample, ...]


def generate_datasets(config: DataConfig) -> SynthData:
    """Labeled and unlabeled from the spec's domain, test from the next one."""
    spec = config.scene
    shifted = replace(spec, domain_id=spec.domain_id + 1)

    keys = set()
    def draw(split_id, index, active_spec):
        key = (split_id, index)
        assert key not in keys, "split seed collision"
        keys.add(key)
        return generate_sample(active_spec, sample_rng(spec.seed, split_id, index))

    labeled = tuple(draw(SPLIT_LABELED, i, spec) for i in range(config.labeled))
    unlabeled = tuple(
        draw(SPLIT_UNLABELED, i, spec).image for i in range(config.unlabeled)
    )
    test = tuple(draw(SPLIT_TEST, i, shifted) for i in range(config.test))
    return SynthData(labeled, unlabeled, test)


def mean_gradient_magnitude(images) -> float:
    """Average first-difference magnitude of luminance; a texture statistic."""
    weights = np.array([0.299, 0.587, 0.114])
    total = 0.0
    for image in images:
        luminance = np.tensordot(weights, np.asarray(image), axes=1)
        gy = np.abs(np.diff(luminance, axis=0)).mean()
        gx = np.abs(np.diff(luminance, axis=1)).mean()
        total += 0.5 * (gy + gx)
    return total / len(images)
