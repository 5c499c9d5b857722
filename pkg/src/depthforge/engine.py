"""Teacher/student training loops and run orchestration.

The pipeline has five stages: synthesize data, train a teacher on the
labeled split, pseudo-label the unlabeled split with it, train a student
on the joint set, evaluate on the shifted test split. Every stage draws
randomness from a role-specific stream spawned off one master seed, so a
whole run is a pure function of its configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .concurrency import parallel_map
from .errors import ConfigError, DegenerateSampleError, DomainError
from .evaluation import MetricReport, evaluate_model
from .losses import (
    affine_invariant_loss,
    check_margin,
    cutmix_loss_with_info,
    feature_alignment_loss,
    overall_loss,
)
from .maps import DepthSample, DisparityMap, PseudoSample, array_checksum, disparity_from_sample
from .model import (
    FrozenEncoder,
    ParamSet,
    AdamWState,
    ToyDepthModel,
    adamw_step,
    forward_graph,
    group_rates,
    init_params,
    linear_schedule,
    param_nodes,
    params_checksum,
)
from .perturb import PerturbConfig, cutmix_images, distort, sample_cutmix_mask
from .synth import DataConfig, SynthData, generate_datasets

# Seed roles. Each consumer spawns its generator from the master seed and
# one of these spawn keys, so adding draws to one stage never shifts the
# streams of another.
ROLE_TEACHER_INIT = 0
ROLE_TEACHER_LOOP = 1
ROLE_STUDENT_INIT = 2
ROLE_STUDENT_LOOP = 3
ROLE_FROZEN_ENCODER = 4

FEAT_TARGETS = ("unlabeled", "labeled", "both")


def role_rng(master_seed: int, role: int, *extra: int) -> np.random.Generator:
    """Independent stream for one seed role of a run."""
    key = (role,) + tuple(int(x) for x in extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=key))


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run depends on besides the data itself.

    The three ``enable_*`` flags stage the pipeline: with all of them off
    the student reduces to plain labeled-only training, matching the
    teacher in everything but its seed roles.
    """

    teacher_epochs: int = 20
    unlabeled_sweeps: int = 1
    ratio: tuple[int, int] = (1, 2)  # labeled : unlabeled items per batch
    batch_size: int = 6
    encoder_lr: float = 1e-3
    patch_size: int = 8
    feature_dim: int = 32
    perturb: PerturbConfig = PerturbConfig()
    feat_margin: float = 0.85
    feat_align_target: str = "unlabeled"
    # The frozen encoder normally sees the same perturbed input as the
    # student; flip this to hand it the clean image instead.
    feat_align_clean_input: bool = False
    enable_unlabeled: bool = True
    enable_strong_perturb: bool = True
    enable_feat_align: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.teacher_epochs < 0:
            raise ConfigError("teacher_epochs must be >= 0")
        if self.unlabeled_sweeps < 1:
            raise ConfigError("unlabeled_sweeps must be >= 1")
        l_share, u_share = self.ratio
        if l_share < 1 or u_share < 1:
            raise ConfigError("both ratio parts must be positive")
        if self.batch_size < 1 or self.batch_size % (l_share + u_share) != 0:
            raise ConfigError("batch_size must be a positive multiple of the ratio total")
        if not self.encoder_lr > 0.0:
            raise ConfigError("encoder_lr must be positive")
        if self.patch_size < 1 or self.feature_dim < 1:
            raise ConfigError("patch_size and feature_dim must be positive")
        check_margin(self.feat_margin)
        if self.feat_align_target not in FEAT_TARGETS:
            raise ConfigError(f"feat_align_target must be one of {FEAT_TARGETS}")

    def batch_split(self) -> tuple[int, int]:
        """(labeled, unlabeled) items per joint-training batch."""
        l_share, u_share = self.ratio
        n_labeled = self.batch_size * l_share // (l_share + u_share)
        return n_labeled, self.batch_size - n_labeled


@dataclass
class TrainResult:
    """Trained parameters plus the loss trace and bookkeeping counters."""

    params: ParamSet
    patch_size: int
    feature_dim: int
    step_losses: list[float] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    skipped_degenerate: int = 0
    cutmix_applied: int = 0
    cutmix_fallbacks: int = 0

    @property
    def model(self) -> ToyDepthModel:
        return ToyDepthModel(self.params, self.patch_size, self.feature_dim)

    def checksum(self) -> str:
        return params_checksum(self.params)


def _flip_image(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, :, ::-1])


def _flip_map(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values[:, ::-1])


def _labeled_targets(samples: Sequence[DepthSample]) -> list[DisparityMap]:
    return [disparity_from_sample(sample) for sample in samples]


def _train_labeled_only(
    samples: Sequence[DepthSample],
    config: RunConfig,
    init_role: int,
    loop_role: int,
) -> TrainResult:
    """Shuffled-epoch supervised training; both loops delegate here."""
    if not samples:
        raise DomainError("labeled training requires at least one sample")
    params = init_params(config.patch_size, config.feature_dim, role_rng(config.seed, init_role))
    result = TrainResult(params, config.patch_size, config.feature_dim)
    if config.teacher_epochs == 0:
        return result

    rng = role_rng(config.seed, loop_role)
    targets = _labeled_targets(samples)
    n = len(samples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.teacher_epochs * steps_per_epoch
    state = AdamWState()

    for epoch in range(config.teacher_epochs):
        order = rng.permutation(n)
        epoch_losses: list[float] = []
        for batch_index in range(steps_per_epoch):
            chunk = order[batch_index * config.batch_size : (batch_index + 1) * config.batch_size]
            nodes = param_nodes(result.params)
            item_losses: list[ad.Node] = []
            for sample_index in chunk:
                sample = samples[sample_index]
                target = targets[sample_index]
                image, values, valid = sample.image, target.values, target.valid
                if rng.random() < 0.5:
                    image = _flip_image(image)
                    values, valid = _flip_map(values), _flip_map(valid)
                disparity, _ = forward_graph(nodes, image, config.patch_size)
                try:
                    item_losses.append(affine_invariant_loss(disparity, values, valid))
                except DegenerateSampleError:
                    result.skipped_degenerate += 1
            if not item_losses:
                continue
            batch_loss = overall_loss(*item_losses)
            ad.backward(batch_loss)
            grads = {name: nodes[name].grad for name in result.params}
            step = epoch * steps_per_epoch + batch_index
            rates = group_rates(result.params, linear_schedule(config.encoder_lr, step, total_steps))
            result.params = adamw_step(result.params, grads, state, rates)
            loss_value = float(batch_loss.value)
            result.step_losses.append(loss_value)
            epoch_losses.append(loss_value)
        if not epoch_losses:
            raise DegenerateSampleError(f"every sample in epoch {epoch} was degenerate")
        result.epoch_means.append(float(np.mean(epoch_losses)))
    return result


def train_teacher(labeled: Sequence[DepthSample], config: RunConfig) -> TrainResult:
    """Supervised baseline; also the pseudo-label source for the student."""
    return _train_labeled_only(labeled, config, ROLE_TEACHER_INIT, ROLE_TEACHER_LOOP)


def pseudo_label(
    model: ToyDepthModel, images: Sequence[np.ndarray], workers: int | None = None
) -> list[PseudoSample]:
    """Teacher predictions on clean unlabeled images, provenance-stamped.

    Deterministic and order-preserving regardless of worker count; each
    sample records a checksum of the exact image it was predicted from.
    """

    def label_one(image: np.ndarray) -> PseudoSample:
        disparity = model.predict_disparity(image)
        return PseudoSample(
            image=image,
            pseudo_disparity=DisparityMap(disparity, np.ones(disparity.shape, dtype=bool)),
            source_checksum=array_checksum(image),
        )

    return parallel_map(label_one, images, workers=workers)


def _check_provenance(item: PseudoSample) -> None:
    if item.source_checksum and array_checksum(item.image) != item.source_checksum:
        raise DomainError("pseudo-label provenance mismatch: image changed since labeling")


def train_student(
    labeled: Sequence[DepthSample],
    pseudo: Sequence[PseudoSample],
    config: RunConfig,
    frozen: FrozenEncoder | None = None,
) -> TrainResult:
    """Joint training on labeled samples and pseudo-labeled images.

    Per step the batch holds ``batch_split()`` items: labeled ones drawn
    with replacement, unlabeled ones consumed in a per-sweep shuffled
    order (the final short slice wraps around to keep the ratio exact).
    A sweep makes ceil(N_u / per-batch-unlabeled) steps. With
    ``enable_unlabeled`` off this is labeled-only training under the
    student's seed roles; pseudo labels and the frozen encoder are unused.
    """
    if not config.enable_unlabeled:
        return _train_labeled_only(labeled, config, ROLE_STUDENT_INIT, ROLE_STUDENT_LOOP)
    if not labeled:
        raise DomainError("student training requires labeled samples")
    if not pseudo:
        raise DomainError("enable_unlabeled is set but no pseudo-labeled samples were given")
    if config.enable_feat_align and frozen is None:
        frozen = FrozenEncoder.from_rng(
            role_rng(config.seed, ROLE_FROZEN_ENCODER), config.patch_size, config.feature_dim
        )

    params = init_params(
        config.patch_size, config.feature_dim, role_rng(config.seed, ROLE_STUDENT_INIT)
    )
    result = TrainResult(params, config.patch_size, config.feature_dim)
    # Folding the perturbation seed in keeps distortion draws and item
    # order reproducible as one stream while still letting two perturb
    # seeds decorrelate whole runs.
    rng = role_rng(config.seed, ROLE_STUDENT_LOOP, config.perturb.seed)

    targets = _labeled_targets(labeled)
    n_labeled_pool, n_unlabeled_pool = len(labeled), len(pseudo)
    n_l, n_u = config.batch_split()
    steps_per_sweep = math.ceil(n_unlabeled_pool / n_u)
    total_steps = config.unlabeled_sweeps * steps_per_sweep
    state = AdamWState()
    align_unlabeled = config.enable_feat_align and config.feat_align_target in ("unlabeled", "both")
    align_labeled = config.enable_feat_align and config.feat_align_target in ("labeled", "both")

    for sweep in range(config.unlabeled_sweeps):
        order = rng.permutation(n_unlabeled_pool)
        sweep_losses: list[float] = []
        for batch_index in range(steps_per_sweep):
            chunk = order[batch_index * n_u : (batch_index + 1) * n_u]
            if chunk.size < n_u:
                chunk = np.concatenate([chunk, order[: n_u - chunk.size]])
            labeled_idx = rng.integers(0, n_labeled_pool, size=n_l)
            nodes = param_nodes(result.params)
            labeled_losses: list[ad.Node] = []
            unlabeled_losses: list[ad.Node] = []
            feat_losses: list[ad.Node] = []

            for sample_index in labeled_idx:
                sample = labeled[sample_index]
                target = targets[sample_index]
                image, values, valid = sample.image, target.values, target.valid
                if rng.random() < 0.5:
                    image = _flip_image(image)
                    values, valid = _flip_map(values), _flip_map(valid)
                disparity, feats = forward_graph(nodes, image, config.patch_size)
                try:
                    labeled_losses.append(affine_invariant_loss(disparity, values, valid))
                except DegenerateSampleError:
                    result.skipped_degenerate += 1
                    continue
                if align_labeled:
                    feat_losses.append(
                        feature_alignment_loss(feats, frozen.encode(image), config.feat_margin)
                    )

            items = [pseudo[i] for i in chunk]
            for item in items:
                _check_provenance(item)
            if config.enable_strong_perturb:
                inputs = [distort(item.image, config.perturb, rng) for item in items]
            else:
                inputs = [item.image for item in items]

            for k, item in enumerate(items):
                mixed_with = None
                if config.enable_strong_perturb and n_u > 1:
                    if rng.random() < config.perturb.cutmix_probability:
                        mixed_with = (k + int(rng.integers(1, n_u))) % n_u
                if mixed_with is not None:
                    partner = items[mixed_with]
                    h, w = item.pseudo_disparity.values.shape
                    mask = sample_cutmix_mask(h, w, config.perturb, rng)
                    training_input = cutmix_images(inputs[k], inputs[mixed_with], mask)
                    disparity, feats = forward_graph(nodes, training_input, config.patch_size)
                    try:
                        loss, fell_back = cutmix_loss_with_info(
                            disparity,
                            item.pseudo_disparity.values,
                            partner.pseudo_disparity.values,
                            mask,
                        )
                    except DegenerateSampleError:
                        result.skipped_degenerate += 1
                        continue
                    result.cutmix_applied += 1
                    result.cutmix_fallbacks += int(fell_back)
                else:
                    training_input = inputs[k]
                    disparity, feats = forward_graph(nodes, training_input, config.patch_size)
                    try:
                        loss = affine_invariant_loss(disparity, item.pseudo_disparity.values)
                    except DegenerateSampleError:
                        result.skipped_degenerate += 1
                        continue
                unlabeled_losses.append(loss)
                if align_unlabeled:
                    reference = item.image if config.feat_align_clean_input else training_input
                    feat_losses.append(
                        feature_alignment_loss(feats, frozen.encode(reference), config.feat_margin)
                    )

            terms = [
                overall_loss(*labeled_losses) if labeled_losses else None,
                overall_loss(*unlabeled_losses) if unlabeled_losses else None,
                overall_loss(*feat_losses) if feat_losses else None,
            ]
            if all(term is None for term in terms):
                continue
            step_loss = overall_loss(*terms)
            ad.backward(step_loss)
            grads = {name: nodes[name].grad for name in result.params}
            step = sweep * steps_per_sweep + batch_index
            rates = group_rates(result.params, linear_schedule(config.encoder_lr, step, total_steps))
            result.params = adamw_step(result.params, grads, state, rates)
            loss_value = float(step_loss.value)
            result.step_losses.append(loss_value)
            sweep_losses.append(loss_value)
        if not sweep_losses:
            raise DegenerateSampleError(f"every sample in sweep {sweep} was degenerate")
        result.epoch_means.append(float(np.mean(sweep_losses)))
    return result


# ---------------------------------------------------------------------------
# Orchestration


@dataclass
class PipelineResult:
    """Artifacts of one full run. ``report`` is the JSON-shaped summary;
    wall-clock time lives only on this object so reports stay bit-equal
    across reruns."""

    datasets: SynthData
    teacher: TrainResult
    pseudo: list[PseudoSample]
    student: TrainResult
    metrics: dict[str, MetricReport]
    report: dict
    wall_seconds: float = 0.0


def metric_dict(report: MetricReport) -> dict:
    return {
        "absrel": report.absrel,
        "d1": report.delta1,
        "d2": report.delta2,
        "d3": report.delta3,
        "rmse": report.rmse,
        "rmse_log": report.rmse_log,
        "log10": report.log10,
        "n_pixels": report.n_pixels,
        "n_images": report.n_images,
    }


def train_summary(result: TrainResult) -> dict:
    return {
        "steps": len(result.step_losses),
        "epoch_mean_loss": list(result.epoch_means),
        "final_loss": result.step_losses[-1] if result.step_losses else None,
        "skipped_degenerate": result.skipped_degenerate,
        "cutmix_applied": result.cutmix_applied,
        "cutmix_fallbacks": result.cutmix_fallbacks,
        "checksum": result.checksum(),
    }


def run_config_dict(config: RunConfig) -> dict:
    """JSON-friendly echo of a run configuration (tuples become lists)."""
    perturb = config.perturb
    return {
        "teacher_epochs": config.teacher_epochs,
        "unlabeled_sweeps": config.unlabeled_sweeps,
        "ratio": list(config.ratio),
        "batch_size": config.batch_size,
        "encoder_lr": config.encoder_lr,
        "patch_size": config.patch_size,
        "feature_dim": config.feature_dim,
        "perturb": {
            "brightness": list(perturb.brightness),
            "contrast": list(perturb.contrast),
            "saturation": list(perturb.saturation),
            "hue": list(perturb.hue),
            "blur_sigma": list(perturb.blur_sigma),
            "cutmix_probability": perturb.cutmix_probability,
            "cutmix_area": list(perturb.cutmix_area),
            "cutmix_aspect": list(perturb.cutmix_aspect),
            "seed": perturb.seed,
        },
        "feat_margin": config.feat_margin,
        "feat_align_target": config.feat_align_target,
        "feat_align_clean_input": config.feat_align_clean_input,
        "enable_unlabeled": config.enable_unlabeled,
        "enable_strong_perturb": config.enable_strong_perturb,
        "enable_feat_align": config.enable_feat_align,
        "seed": config.seed,
    }


def run_pipeline(run: RunConfig, data: DataConfig, workers: int | None = None) -> PipelineResult:
    """Synthesize, train teacher, pseudo-label, train student, evaluate."""
    import time

    started = time.perf_counter()
    datasets = generate_datasets(data)
    teacher = train_teacher(datasets.labeled, run)
    pseudo = pseudo_label(teacher.model, datasets.unlabeled, workers=workers)
    frozen = FrozenEncoder.from_rng(
        role_rng(run.seed, ROLE_FROZEN_ENCODER), run.patch_size, run.feature_dim
    )
    student = train_student(datasets.labeled, pseudo, run, frozen)
    metrics = {
        "teacher": evaluate_model(teacher.model, datasets.test, workers=workers),
        "student": evaluate_model(student.model, datasets.test, workers=workers),
    }
    report = {
        "config": run_config_dict(run),
        "teacher": train_summary(teacher),
        "student": train_summary(student),
        "metrics": {name: metric_dict(rep) for name, rep in metrics.items()},
    }
    return PipelineResult(
        datasets=datasets,
        teacher=teacher,
        pseudo=pseudo,
        student=student,
        metrics=metrics,
        report=report,
        wall_seconds=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# Ablation grid


@dataclass(frozen=True)
class AblationRow:
    """One evaluated configuration of the staged pipeline."""

    name: str
    enable_unlabeled: bool
    enable_strong_perturb: bool
    enable_feat_align: bool
    feat_margin: float | None
    feat_align_target: str | None
    report: MetricReport


@dataclass
class AblationResult:
    rows: list[AblationRow]
    csv_text: str
    teacher: TrainResult


ABLATION_CSV_HEADER = "config,unlabeled,perturb,feat,alpha,feat_target,absrel,d1"

# Staged flag combinations plus the margin sweep and the alignment-target
# swap. The 0.85/unlabeled row is the full pipeline; the margin-1.0 row
# keeps every feature location in the alignment loss.
ABLATION_SPECS: tuple[tuple[str, dict], ...] = (
    ("labeled_only", {"enable_unlabeled": False, "enable_strong_perturb": False, "enable_feat_align": False}),
    ("pseudo", {"enable_unlabeled": True, "enable_strong_perturb": False, "enable_feat_align": False}),
    ("pseudo_perturb", {"enable_unlabeled": True, "enable_strong_perturb": True, "enable_feat_align": False}),
    ("feat_a100_u", {"feat_margin": 1.0, "feat_align_target": "unlabeled"}),
    ("feat_a085_u", {"feat_margin": 0.85, "feat_align_target": "unlabeled"}),
    ("feat_a070_u", {"feat_margin": 0.70, "feat_align_target": "unlabeled"}),
    ("feat_a085_l", {"feat_margin": 0.85, "feat_align_target": "labeled"}),
)


def run_ablation_grid(
    run: RunConfig, data: DataConfig, workers: int | None = None
) -> AblationResult:
    """Evaluate the staged configurations on one shared teacher.

    The teacher and its pseudo labels are computed once; each non-baseline
    row trains its own student. Rows with identical effective configs
    reuse the cached student, and the CSV carries one row per requested
    configuration either way.
    """
    datasets = generate_datasets(data)
    teacher = train_teacher(datasets.labeled, run)
    pseudo = pseudo_label(teacher.model, datasets.unlabeled, workers=workers)
    frozen = FrozenEncoder.from_rng(
        role_rng(run.seed, ROLE_FROZEN_ENCODER), run.patch_size, run.feature_dim
    )

    cache: dict[tuple, TrainResult] = {}
    rows: list[AblationRow] = []
    for name, overrides in ABLATION_SPECS:
        merged = {
            "enable_unlabeled": True,
            "enable_strong_perturb": True,
            "enable_feat_align": True,
            **overrides,
        }
        variant = replace(run, **merged)
        feat_on = variant.enable_feat_align
        if not variant.enable_unlabeled:
            model = teacher.model
        else:
            key = (
                variant.enable_strong_perturb,
                feat_on,
                variant.feat_margin if feat_on else None,
                variant.feat_align_target if feat_on else None,
            )
            if key not in cache:
                cache[key] = train_student(datasets.labeled, pseudo, variant, frozen)
            model = cache[key].model
        report = evaluate_model(model, datasets.test, workers=workers)
        rows.append(
            AblationRow(
                name=name,
                enable_unlabeled=variant.enable_unlabeled,
                enable_strong_perturb=variant.enable_strong_perturb,
                enable_feat_align=feat_on,
                feat_margin=variant.feat_margin if feat_on else None,
                feat_align_target=variant.feat_align_target if feat_on else None,
                report=report,
            )
        )
    return AblationResult(rows=rows, csv_text=ablation_csv(rows), teacher=teacher)


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    lines = [ABLATION_CSV_HEADER]
    for row in rows:
        alpha = "" if row.feat_margin is None else f"{row.feat_margin:.2f}"
        target = row.feat_align_target or ""
        lines.append(
            f"{row.name},{int(row.enable_unlabeled)},{int(row.enable_strong_perturb)},"
            f"{int(row.enable_feat_align)},{alpha},{target},"
            f"{row.report.absrel:.12g},{row.report.delta1:.12g}"
        )
    return "\n".join(lines) + "\n"
