"""Finite-difference verification of every loss path and the model forward.

Each check compares the reverse-mode gradient against central differences
at several generic points and reports the worst relative error. The CLI
``gradcheck`` subcommand runs this suite; so does the acceptance test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .losses import (
    affine_invariant_loss,
    cutmix_unlabeled_loss,
    feature_alignment_loss,
    overall_loss,
)
from .model import forward_graph, init_params, param_nodes

DEFAULT_POINTS = 10
DEFAULT_EPS = 1e-5
DEFAULT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_relative_error: float
    threshold: float = DEFAULT_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.threshold


def _sweep(name: str, fn, points, eps: float) -> GradCheckResult:
    worst = 0.0
    for point in points:
        worst = max(worst, ad.gradcheck(fn, point, eps=eps))
    return GradCheckResult(name, worst)


def _plain_loss_check(rng: np.random.Generator, n_points: int, eps: float) -> GradCheckResult:
    gt = rng.normal(size=(3, 4))
    valid = np.ones((3, 4), dtype=bool)
    valid[0, 0] = False

    def fn(x: ad.Node) -> ad.Node:
        return affine_invariant_loss(x, gt, valid)

    points = [rng.normal(size=(3, 4)) for _ in range(n_points)]
    return _sweep("affine_invariant_loss", fn, points, eps)


def _cutmix_checks(rng: np.random.Generator, n_points: int, eps: float) -> list[GradCheckResult]:
    shape = (4, 4)
    mask = np.zeros(shape, dtype=bool)
    mask[:, :2] = True
    teacher_a = rng.random(shape)
    teacher_b = rng.random(shape)

    def mixed(x: ad.Node) -> ad.Node:
        return cutmix_unlabeled_loss(x, teacher_a, teacher_b, mask)

    # Constant inside the rectangle: that region's normalization is
    # degenerate, so the loss takes the full-map fallback branch.
    teacher_flat = teacher_a.copy()
    teacher_flat[mask] = 0.5

    def fallback(x: ad.Node) -> ad.Node:
        return cutmix_unlabeled_loss(x, teacher_flat, teacher_b, mask)

    points = [rng.normal(size=shape) for _ in range(n_points)]
    return [
        _sweep("cutmix_loss_mixed", mixed, points, eps),
        _sweep("cutmix_loss_fallback", fallback, points, eps),
    ]


def _feature_check(rng: np.random.Generator, n_points: int, eps: float) -> GradCheckResult:
    frozen = rng.normal(size=(5, 6))

    def fn(x: ad.Node) -> ad.Node:
        return feature_alignment_loss(x, frozen, margin=0.85)

    points = [rng.normal(size=(5, 6)) for _ in range(n_points)]
    return _sweep("feature_alignment_loss", fn, points, eps)


def _forward_checks(rng: np.random.Generator, n_points: int, eps: float) -> list[GradCheckResult]:
    """Loss-through-model gradients for every parameter tensor."""
    patch_size, feature_dim = 4, 4
    image = rng.random((3, 8, 8))
    gt = rng.random((8, 8))
    frozen_features = rng.normal(size=(4, feature_dim))

    results = []
    for point_index in range(n_points):
        params = init_params(patch_size, feature_dim, rng)
        for name in sorted(params):

            def fn(x: ad.Node, name=name, params=params) -> ad.Node:
                nodes = param_nodes(params)
                nodes[name] = x
                disparity, features = forward_graph(nodes, image, patch_size)
                labeled = affine_invariant_loss(disparity, gt)
                aligned = feature_alignment_loss(features, frozen_features, margin=0.85)
                return overall_loss(labeled, aligned)

            error = ad.gradcheck(fn, params[name], eps=eps)
            results.append((name, error))
    worst: dict[str, float] = {}
    for name, error in results:
        worst[name] = max(worst.get(name, 0.0), error)
    return [
        GradCheckResult(f"loss_through_model[{name}]", error)
        for name, error in sorted(worst.items())
    ]


def run_gradient_suite(
    seed: int = 0, n_points: int = DEFAULT_POINTS, eps: float = DEFAULT_EPS
) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    results = [_plain_loss_check(rng, n_points, eps)]
    results.extend(_cutmix_checks(rng, n_points, eps))
    results.append(_feature_check(rng, n_points, eps))
    results.extend(_forward_checks(rng, n_points, eps))
    return results
