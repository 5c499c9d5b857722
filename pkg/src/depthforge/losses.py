"""The three training losses and their average combination.

Every loss returns a scalar autodiff Node so a caller can chain
``autodiff.backward`` through it. Prediction arguments may be Nodes (to
train through) or plain arrays (to evaluate); targets are always treated
as constants.

Conventions this module commits to:

* Normalization statistics (median, mean absolute deviation) run over the
  valid set only; a scale below 1e-12 raises DegenerateSampleError and the
  caller skips and counts the sample.
* CutMix regional statistics are recomputed per region, never borrowed from
  the full map; a degenerate region falls back to the plain loss on the
  whole sample.
* The feature-alignment loss averages (1 - cos) over the locations still
  inside the margin; with nothing inside it is 0. Under this reading the
  loss can only drop as the margin admits easier locations, so it is
  monotone nonincreasing in the margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegenerateSampleError, DomainError
from .validation import as_mask, frozen_copy

DEGENERATE_SCALE = 1e-12


def _as_node(x) -> ad.Node:
    return x if isinstance(x, ad.Node) else ad.Node(np.asarray(x, dtype=np.float64))


def _constant(x) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, ad.Node) else x, dtype=np.float64)


def check_margin(margin: float) -> float:
    margin = float(margin)
    if not 0.0 < margin <= 1.0:
        raise DomainError(f"tolerance margin must lie in (0, 1], got {margin}")
    return margin


@dataclass(frozen=True)
class AffineNormalized:
    """A map normalized to zero median and unit mean absolute deviation.

    ``values`` holds d-hat over the valid pixels only, in row-major scan
    order of the mask; ``t`` and ``s`` stay in the graph because the loss
    gradient must flow through both statistics.
    """

    values: ad.Node
    t: ad.Node
    s: ad.Node


@dataclass(frozen=True)
class CutMixMask:
    """Binary rectangle mask M; true inside the stored (top, left, h, w)."""

    mask: np.ndarray
    rectangle: tuple[int, int, int, int]

    def __post_init__(self):
        mask = as_mask(self.mask, name="cutmix mask")
        if mask.ndim != 2:
            raise DomainError("cutmix mask must be 2-D")
        top, left, height, width = (int(v) for v in self.rectangle)
        expected = np.zeros_like(mask)
        if height <= 0 or width <= 0:
            raise DomainError("cutmix rectangle must have positive extent")
        expected[top : top + height, left : left + width] = True
        if not np.array_equal(mask, expected):
            raise DomainError("cutmix mask does not equal its stored rectangle")
        total = int(mask.sum())
        if not 0 < total < mask.size:
            raise DomainError("cutmix mask must cover neither nothing nor everything")
        object.__setattr__(self, "mask", frozen_copy(mask))
        object.__setattr__(self, "rectangle", (top, left, height, width))

    @property
    def area_fraction(self) -> float:
        return float(self.mask.sum()) / self.mask.size


def normalize_affine(d, valid=None) -> AffineNormalized:
    """Shift by the median and scale by the mean absolute deviation.

    ``valid`` defaults to everything. Requires at least 2 valid pixels.
    """
    node = _as_node(d)
    if valid is None:
        valid = np.ones(node.value.shape, dtype=bool)
    valid = as_mask(valid, shape=node.value.shape, name="valid mask")
    indices = np.flatnonzero(valid)
    if indices.size < 2:
        raise DomainError(f"normalize_affine needs >= 2 valid pixels, got {indices.size}")
    selected = ad.take(node, indices)
    t = ad.median(selected)
    s = ad.reduce_mean(ad.absolute(ad.sub(selected, t)))
    if float(s.value) < DEGENERATE_SCALE:
        raise DegenerateSampleError(
            f"affine normalization scale {float(s.value):.3e} below {DEGENERATE_SCALE:.0e}"
        )
    return AffineNormalized(ad.div(ad.sub(selected, t), s), t, s)


def affine_invariant_loss(pred, gt, valid=None) -> ad.Node:
    """Mean absolute difference after normalizing both sides independently.

    Blind to per-sample scale and shift of either argument by construction.
    Raises DegenerateSampleError when either side cannot be normalized.
    """
    pred_hat = normalize_affine(pred, valid)
    gt_hat = normalize_affine(_constant(gt), valid)
    return ad.reduce_mean(ad.absolute(ad.sub(pred_hat.values, gt_hat.values)))


def cutmix_unlabeled_loss(student_out_mixed, teacher_a, teacher_b, mask) -> ad.Node:
    """Area-weighted regional loss for a CutMix-composited unlabeled sample.

    Inside the rectangle the student answers to ``teacher_a``'s prediction,
    outside to ``teacher_b``'s; each region is normalized over its own
    pixels. An empty region contributes weight 0. If either region is
    degenerate under affine normalization, the whole sample falls back to
    the plain loss against ``teacher_a`` over the full map.
    """
    loss, _ = cutmix_loss_with_info(student_out_mixed, teacher_a, teacher_b, mask)
    return loss


def cutmix_loss_with_info(student_out_mixed, teacher_a, teacher_b, mask) -> tuple[ad.Node, bool]:
    """``cutmix_unlabeled_loss`` plus whether the degenerate fallback fired."""
    region = mask.mask if isinstance(mask, CutMixMask) else as_mask(mask, name="cutmix mask")
    student = _as_node(student_out_mixed)
    if student.value.shape != region.shape:
        raise DomainError("cutmix: student output and mask shapes differ")
    a = _constant(teacher_a)
    b = _constant(teacher_b)
    if a.shape != region.shape or b.shape != region.shape:
        raise DomainError("cutmix: teacher maps and mask shapes differ")

    size = region.size
    terms: list[tuple[float, ad.Node]] = []
    try:
        for target, selector in ((a, region), (b, ~region)):
            weight = float(selector.sum()) / size
            if weight == 0.0:
                continue
            terms.append((weight, affine_invariant_loss(student, target, selector)))
    except DegenerateSampleError:
        return affine_invariant_loss(student, a), True

    total = None
    for weight, loss in terms:
        piece = ad.mul(loss, weight) if weight != 1.0 else loss
        total = piece if total is None else ad.add(total, piece)
    return total, False


def feature_alignment_loss(f, f_frozen, margin: float = 0.85) -> ad.Node:
    """Pull student features toward a frozen encoder, inside a margin.

    Rows of ``f`` whose cosine to the matching ``f_frozen`` row exceeds the
    margin are done aligning and drop out; the rest contribute 1 - cos,
    averaged over the contributing rows (0 when none contribute). Gradient
    flows only into ``f``; ``f_frozen`` is detached.
    """
    margin = check_margin(margin)
    student = _as_node(f)
    frozen = ad.Node(_constant(f_frozen))
    if student.value.shape != frozen.value.shape:
        raise DomainError(
            f"feature grids differ: {student.value.shape} vs {frozen.value.shape}"
        )
    cos = ad.cosine_rows(student, frozen)
    included = np.flatnonzero(cos.value <= margin)
    if included.size == 0:
        return ad.Node(0.0)
    return ad.reduce_mean(ad.sub(1.0, ad.take(cos, included)))


def overall_loss(*terms) -> ad.Node:
    """Arithmetic mean of the loss terms that are present (not None)."""
    present = [_as_node(t) for t in terms if t is not None]
    if not present:
        raise DomainError("overall_loss: no terms present")
    total = present[0]
    for term in present[1:]:
        total = ad.add(total, term)
    return ad.div(total, float(len(present)))
