"""Zero-shot evaluation: align a relative prediction to ground truth, then score.

Predictions come out of the model as normalized disparity with arbitrary
effective scale and shift, so each image is first fitted to the ground
truth's disparity by least squares (the conventional protocol), inverted
back to depth, and scored with the usual suite: AbsRel, threshold
accuracies, RMSE, RMSE log, log10. Images weigh equally in aggregates no
matter how many valid pixels each has.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .concurrency import parallel_map
from .errors import DomainError
from .maps import DepthMap, DepthSample
from .model import ToyDepthModel, load_checkpoint
from .validation import as_float_array, as_mask

DISPARITY_CLAMP = 1e-6
_CONSTANT_EPS = 1e-12

CSV_COLUMNS = ("absrel", "d1", "d2", "d3", "rmse", "rmse_log", "log10")


@dataclass(frozen=True)
class Alignment:
    """Per-image scale/shift fitted in disparity space.

    ``degenerate`` marks the median-ratio fallback used when the prediction
    is constant and the least-squares system is singular.
    """

    scale: float
    shift: float
    degenerate: bool = False

    def apply(self, pred_disparity: np.ndarray) -> np.ndarray:
        aligned = self.scale * pred_disparity + self.shift
        return np.clip(aligned, DISPARITY_CLAMP, None)


@dataclass(frozen=True)
class MetricReport:
    absrel: float
    delta1: float
    delta2: float
    delta3: float
    rmse: float
    rmse_log: float
    log10: float
    n_pixels: int
    n_images: int
    alignments: tuple[Alignment, ...] = ()

    def __post_init__(self):
        if not self.delta1 <= self.delta2 <= self.delta3:
            raise DomainError("threshold accuracies must be nondecreasing")
        for name in ("delta1", "delta2", "delta3"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} outside [0,1]: {value}")
        if self.absrel < 0.0 or self.rmse < 0.0:
            raise DomainError("absrel and rmse must be nonnegative")

    def row(self) -> tuple[float, ...]:
        return (
            self.absrel,
            self.delta1,
            self.delta2,
            self.delta3,
            self.rmse,
            self.rmse_log,
            self.log10,
        )


def _selected(pred, gt, valid):
    pred = as_float_array(pred, "prediction")
    gt = as_float_array(gt, "ground truth")
    if pred.shape != gt.shape:
        raise DomainError(f"shapes differ: {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    valid = as_mask(valid, shape=pred.shape, name="valid mask")
    return pred[valid], gt[valid], valid


def _median_ratio(p: np.ndarray, g: np.ndarray) -> Alignment:
    p_med = float(np.median(p))
    g_med = float(np.median(g))
    if abs(p_med) > _CONSTANT_EPS:
        return Alignment(g_med / p_med, 0.0, degenerate=True)
    return Alignment(0.0, g_med, degenerate=True)


def align_least_squares(pred_disparity, gt_disparity, valid=None) -> Alignment:
    """argmin over (s, t) of sum((s*p + t - g)^2), solved in closed form."""
    p, g, _ = _selected(pred_disparity, gt_disparity, valid)
    if p.size < 2:
        raise DomainError("alignment needs at least 2 valid pixels")
    if np.ptp(p) < _CONSTANT_EPS:
        return _median_ratio(p, g)
    n = float(p.size)
    sp = float(p.sum())
    spp = float((p * p).sum())
    sg = float(g.sum())
    spg = float((p * g).sum())
    det = n * spp - sp * sp
    if det == 0.0:
        return _median_ratio(p, g)
    scale = (n * spg - sp * sg) / det
    shift = (spp * sg - sp * spg) / det
    return Alignment(scale, shift)


def align_median_mad(pred_disparity, gt_disparity, valid=None) -> Alignment:
    """Alternative alignment matching medians and mean absolute deviations.

    The translation/scale-matching flavor of normalization recast as an
    affine map from prediction to ground truth; selectable via the eval
    flag for comparison against least squares.
    """
    p, g, _ = _selected(pred_disparity, gt_disparity, valid)
    if p.size < 2:
        raise DomainError("alignment needs at least 2 valid pixels")
    p_med = float(np.median(p))
    g_med = float(np.median(g))
    p_mad = float(np.abs(p - p_med).mean())
    g_mad = float(np.abs(g - g_med).mean())
    if p_mad < _CONSTANT_EPS:
        return _median_ratio(p, g)
    scale = g_mad / p_mad
    return Alignment(scale, g_med - p_med * scale)


_ALIGNERS = {"lstsq": align_least_squares, "median": align_median_mad}


def compute_metrics(
    pred_disparity, gt_depth: DepthMap, valid=None, alignment: Alignment | None = None
) -> MetricReport:
    """Score one already-aligned disparity map against ground-truth depth.

    The input is clamped below at 1e-6 and inverted to depth; metrics are
    averaged over this image's valid pixels. Fitting the alignment is the
    caller's job (see ``evaluate_predictions``); pass it here only so the
    report can record it. Aggregation across images lives in
    ``aggregate_reports`` so each image keeps equal weight there.
    """
    mask = gt_depth.valid if valid is None else (as_mask(valid, gt_depth.shape, "valid") & gt_depth.valid)
    if not mask.any():
        raise DomainError("compute_metrics: no valid pixels")
    pred = as_float_array(pred_disparity, "prediction")
    if pred.shape != gt_depth.shape:
        raise DomainError(f"shapes differ: {pred.shape} vs {gt_depth.shape}")

    pred_depth = 1.0 / np.clip(pred[mask], DISPARITY_CLAMP, None)
    true_depth = gt_depth.values[mask]

    abs_rel = float(np.mean(np.abs(pred_depth - true_depth) / true_depth))
    ratio = np.maximum(pred_depth / true_depth, true_depth / pred_depth)
    deltas = [float(np.mean(ratio < 1.25**k)) for k in (1, 2, 3)]
    rmse = float(np.sqrt(np.mean((pred_depth - true_depth) ** 2)))
    rmse_log = float(np.sqrt(np.mean((np.log(pred_depth) - np.log(true_depth)) ** 2)))
    log10 = float(np.mean(np.abs(np.log10(pred_depth) - np.log10(true_depth))))

    return MetricReport(
        absrel=abs_rel,
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        rmse=rmse,
        rmse_log=rmse_log,
        log10=log10,
        n_pixels=int(mask.sum()),
        n_images=1,
        alignments=() if alignment is None else (alignment,),
    )


def aggregate_reports(reports) -> MetricReport:
    """Equal-weight mean over per-image reports, in fixed input order."""
    reports = list(reports)
    if not reports:
        raise DomainError("aggregate_reports: no reports")
    n = len(reports)
    sums = np.zeros(7)
    for report in reports:
        sums += np.asarray(report.row())
    mean = sums / n
    return MetricReport(
        absrel=float(mean[0]),
        delta1=float(mean[1]),
        delta2=float(mean[2]),
        delta3=float(mean[3]),
        rmse=float(mean[4]),
        rmse_log=float(mean[5]),
        log10=float(mean[6]),
        n_pixels=sum(r.n_pixels for r in reports),
        n_images=sum(r.n_images for r in reports),
        alignments=tuple(a for r in reports for a in r.alignments),
    )


def score_image(pred_disparity, gt_depth: DepthMap, aligner: str = "lstsq") -> MetricReport:
    """The per-image pipeline: fit alignment, apply it, then score."""
    if aligner not in _ALIGNERS:
        raise DomainError(f"unknown aligner {aligner!r}; choose from {sorted(_ALIGNERS)}")
    mask = gt_depth.valid
    gt_disparity = np.zeros(gt_depth.shape)
    gt_disparity[mask] = 1.0 / gt_depth.values[mask]
    alignment = _ALIGNERS[aligner](pred_disparity, gt_disparity, mask)
    aligned = alignment.apply(as_float_array(pred_disparity, "prediction"))
    return compute_metrics(aligned, gt_depth, alignment=alignment)


def evaluate_predictions(predictions, samples, aligner: str = "lstsq") -> MetricReport:
    """Score parallel lists of predicted disparities and labeled samples."""
    predictions = list(predictions)
    samples = list(samples)
    if len(predictions) != len(samples):
        raise DomainError("evaluate_predictions: length mismatch")
    reports = [
        score_image(pred, sample.depth, aligner=aligner)
        for pred, sample in zip(predictions, samples)
    ]
    return aggregate_reports(reports)


def evaluate_model(model: ToyDepthModel, samples, aligner: str = "lstsq", workers: int | None = None) -> MetricReport:
    samples = list(samples)
    predictions = parallel_map(lambda s: model.predict_disparity(s.image), samples, workers)
    return evaluate_predictions(predictions, samples, aligner=aligner)


def evaluate_checkpoint(path, samples, aligner: str = "lstsq", workers: int | None = None) -> MetricReport:
    params, patch_size, feature_dim = load_checkpoint(path)
    model = ToyDepthModel(params, patch_size, feature_dim)
    return evaluate_model(model, samples, aligner=aligner, workers=workers)


def metrics_csv(rows: dict[str, MetricReport]) -> str:
    """One line per dataset with the fixed column set, full float precision."""
    lines = ["dataset," + ",".join(CSV_COLUMNS)]
    for name, report in rows.items():
        values = ",".join(f"{v:.12g}" for v in report.row())
        lines.append(f"{name},{values}")
    return "\n".join(lines) + "\n"


def true_disparity_oracle(sample: DepthSample) -> np.ndarray:
    """The cheating predictor: ground-truth disparity, for oracle tests."""
    disparity = np.zeros(sample.depth.shape)
    mask = sample.depth.valid
    disparity[mask] = 1.0 / sample.depth.values[mask]
    return disparity
