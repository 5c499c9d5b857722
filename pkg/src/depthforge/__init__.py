"""depthforge: self-training for relative depth on a desk-scale budget."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config, serialize_config, with_seed
from .engine import (
    PipelineResult,
    RunConfig,
    TrainResult,
    pseudo_label,
    run_ablation_grid,
    run_pipeline,
    train_student,
    train_teacher,
)
from .errors import (
    ConfigError,
    DegenerateSampleError,
    DepthForgeError,
    DomainError,
    PfmError,
)
from .estimators import SelfTrainingDepthRegressor, ToyDepthRegressor
from .evaluation import (
    MetricReport,
    align_least_squares,
    compute_metrics,
    evaluate_model,
    metrics_csv,
    score_image,
)
from .fileio import pfm_read, pfm_write, ppm_read, ppm_write
from .losses import (
    affine_invariant_loss,
    cutmix_unlabeled_loss,
    feature_alignment_loss,
    normalize_affine,
    overall_loss,
)
from .maps import (
    DepthMap,
    DepthSample,
    DisparityMap,
    PseudoSample,
    array_checksum,
    depth_to_disparity,
)
from .model import FrozenEncoder, ToyDepthModel, load_checkpoint, save_checkpoint
from .perturb import PerturbConfig, cutmix_images, distort, sample_cutmix_mask
from .synth import DataConfig, SceneSpec, generate_datasets

__all__ = [
    "ConfigError",
    "DataConfig",
    "DegenerateSampleError",
    "DepthForgeError",
    "DepthMap",
    "DepthSample",
    "DisparityMap",
    "DomainError",
    "ExperimentConfig",
    "FrozenEncoder",
    "MetricReport",
    "PerturbConfig",
    "PfmError",
    "PipelineResult",
    "PseudoSample",
    "RunConfig",
    "SceneSpec",
    "SelfTrainingDepthRegressor",
    "ToyDepthModel",
    "ToyDepthRegressor",
    "TrainResult",
    "affine_invariant_loss",
    "align_least_squares",
    "array_checksum",
    "compute_metrics",
    "cutmix_images",
    "cutmix_unlabeled_loss",
    "depth_to_disparity",
    "distort",
    "evaluate_model",
    "feature_alignment_loss",
    "generate_datasets",
    "load_checkpoint",
    "load_config",
    "metrics_csv",
    "normalize_affine",
    "overall_loss",
    "parse_config",
    "pfm_read",
    "pfm_write",
    "ppm_read",
    "ppm_write",
    "pseudo_label",
    "run_ablation_grid",
    "run_pipeline",
    "sample_cutmix_mask",
    "save_checkpoint",
    "score_image",
    "serialize_config",
    "train_student",
    "train_teacher",
    "with_seed",
    "__version__",
]
