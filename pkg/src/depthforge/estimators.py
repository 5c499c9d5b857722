"""Scikit-learn style estimator facade over the training engine.

``ToyDepthRegressor`` is the supervised baseline; the self-training
variant adds the unlabeled branch. Both follow the usual contract:
hyperparameters are constructor arguments echoed by ``get_params``, all
work happens in ``fit``, and fitted state lands in trailing-underscore
attributes. ``X`` is a sequence of labeled samples (``DepthSample``), not
a feature matrix; targets ride inside the samples, so ``y`` stays None.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .engine import (
    ROLE_FROZEN_ENCODER,
    RunConfig,
    pseudo_label,
    role_rng,
    train_student,
    train_teacher,
)
from .errors import DomainError
from .evaluation import evaluate_model
from .model import FrozenEncoder
from .perturb import PerturbConfig


def _check_samples(X, name: str):
    samples = list(X)
    if not samples:
        raise DomainError(f"{name} must hold at least one sample")
    return samples


class ToyDepthRegressor(BaseEstimator):
    """Supervised relative-depth model with the affine-invariant loss."""

    def __init__(
        self,
        teacher_epochs: int = 20,
        batch_size: int = 6,
        encoder_lr: float = 1e-3,
        patch_size: int = 8,
        feature_dim: int = 32,
        seed: int = 0,
    ):
        self.teacher_epochs = teacher_epochs
        self.batch_size = batch_size
        self.encoder_lr = encoder_lr
        self.patch_size = patch_size
        self.feature_dim = feature_dim
        self.seed = seed

    def _run_config(self) -> RunConfig:
        return RunConfig(
            teacher_epochs=self.teacher_epochs,
            batch_size=self.batch_size,
            encoder_lr=self.encoder_lr,
            patch_size=self.patch_size,
            feature_dim=self.feature_dim,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        samples = _check_samples(X, "X")
        self.result_ = train_teacher(samples, self._run_config())
        self.model_ = self.result_.model
        return self

    def predict(self, X) -> np.ndarray:
        """Normalized disparity, stacked (N, H, W)."""
        if not hasattr(self, "model_"):
            raise DomainError("estimator is not fitted; call fit first")
        return np.stack([self.model_.predict_disparity(image) for image in X])

    def score(self, X, y=None) -> float:
        """Mean delta1 accuracy on labeled samples (higher is better)."""
        if not hasattr(self, "model_"):
            raise DomainError("estimator is not fitted; call fit first")
        return float(evaluate_model(self.model_, _check_samples(X, "X")).delta1)


class SelfTrainingDepthRegressor(ToyDepthRegressor):
    """Teacher → pseudo-labels → perturbed student, as one estimator."""

    def __init__(
        self,
        teacher_epochs: int = 20,
        batch_size: int = 6,
        encoder_lr: float = 1e-3,
        patch_size: int = 8,
        feature_dim: int = 32,
        seed: int = 0,
        unlabeled_sweeps: int = 1,
        ratio: tuple[int, int] = (1, 2),
        perturb: PerturbConfig | None = None,
        feat_margin: float = 0.85,
        feat_align_target: str = "unlabeled",
        enable_strong_perturb: bool = True,
        enable_feat_align: bool = True,
    ):
        super().__init__(
            teacher_epochs=teacher_epochs,
            batch_size=batch_size,
            encoder_lr=encoder_lr,
            patch_size=patch_size,
            feature_dim=feature_dim,
            seed=seed,
        )
        self.unlabeled_sweeps = unlabeled_sweeps
        self.ratio = ratio
        self.perturb = perturb
        self.feat_margin = feat_margin
        self.feat_align_target = feat_align_target
        self.enable_strong_perturb = enable_strong_perturb
        self.enable_feat_align = enable_feat_align

    def _run_config(self) -> RunConfig:
        return RunConfig(
            teacher_epochs=self.teacher_epochs,
            unlabeled_sweeps=self.unlabeled_sweeps,
            ratio=tuple(self.ratio),
            batch_size=self.batch_size,
            encoder_lr=self.encoder_lr,
            patch_size=self.patch_size,
            feature_dim=self.feature_dim,
            perturb=self.perturb if self.perturb is not None else PerturbConfig(),
            feat_margin=self.feat_margin,
            feat_align_target=self.feat_align_target,
            enable_unlabeled=True,
            enable_strong_perturb=self.enable_strong_perturb,
            enable_feat_align=self.enable_feat_align,
            seed=self.seed,
        )

    def fit(self, X, y=None, unlabeled=None):
        """Train on labeled samples plus raw unlabeled images."""
        samples = _check_samples(X, "X")
        if unlabeled is None:
            raise DomainError("self-training needs unlabeled= images; "
                              "use ToyDepthRegressor for labeled-only fits")
        images = list(unlabeled)
        if not images:
            raise DomainError("unlabeled must hold at least one image")
        config = self._run_config()
        self.teacher_ = train_teacher(samples, config)
        self.pseudo_ = pseudo_label(self.teacher_.model, images)
        self.frozen_ = FrozenEncoder.from_rng(
            role_rng(config.seed, ROLE_FROZEN_ENCODER), config.patch_size, config.feature_dim
        )
        self.result_ = train_student(samples, self.pseudo_, config, self.frozen_)
        self.model_ = self.result_.model
        return self
