"""Training-loop behavior: seeding, batching, flags, counters, reports."""

import json
from dataclasses import replace

import numpy as np
import pytest

from depthforge.engine import (
    ABLATION_CSV_HEADER,
    ROLE_STUDENT_INIT,
    ROLE_STUDENT_LOOP,
    ROLE_TEACHER_INIT,
    RunConfig,
    _train_labeled_only,
    pseudo_label,
    role_rng,
    run_ablation_grid,
    run_pipeline,
    train_student,
    train_teacher,
)
from depthforge.errors import ConfigError, DomainError
from depthforge.maps import PseudoSample, array_checksum
from depthforge.model import init_params, params_checksum
from depthforge.perturb import PerturbConfig
from depthforge.synth import DataConfig, SceneSpec, generate_datasets


def tiny_data(seed=0, labeled=6, unlabeled=8, test=4):
    scene = SceneSpec(height=16, width=16, seed=seed)
    return generate_datasets(DataConfig(scene=scene, labeled=labeled, unlabeled=unlabeled, test=test))


def tiny_run(**overrides):
    defaults = dict(teacher_epochs=2, batch_size=6, patch_size=8, feature_dim=8, seed=0)
    defaults.update(overrides)
    return RunConfig(**defaults)


class TestRunConfig:
    def test_defaults_valid(self):
        config = RunConfig()
        assert config.batch_split() == (2, 4)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"teacher_epochs": -1},
            {"unlabeled_sweeps": 0},
            {"ratio": (0, 2)},
            {"ratio": (1, -1)},
            {"batch_size": 5},  # not a multiple of 1+2
            {"batch_size": 0},
            {"encoder_lr": 0.0},
            {"patch_size": 0},
            {"feature_dim": 0},
            {"feat_margin": 0.0},
            {"feat_margin": 1.5},
            {"feat_align_target": "everything"},
        ],
    )
    def test_invalid_configs_rejected(self, overrides):
        with pytest.raises((ConfigError, DomainError)):
            RunConfig(**overrides)

    def test_batch_split_respects_ratio(self):
        config = RunConfig(ratio=(1, 3), batch_size=8)
        assert config.batch_split() == (2, 6)


class TestSeedRoles:
    def test_same_role_reproduces(self):
        a = role_rng(7, ROLE_TEACHER_INIT).random(4)
        b = role_rng(7, ROLE_TEACHER_INIT).random(4)
        np.testing.assert_array_equal(a, b)

    def test_roles_are_independent_streams(self):
        a = role_rng(7, ROLE_TEACHER_INIT).random(4)
        b = role_rng(7, ROLE_STUDENT_INIT).random(4)
        assert not np.array_equal(a, b)

    def test_extra_key_changes_stream(self):
        a = role_rng(7, ROLE_STUDENT_LOOP, 0).random(4)
        b = role_rng(7, ROLE_STUDENT_LOOP, 1).random(4)
        assert not np.array_equal(a, b)


class TestTeacher:
    def test_zero_epochs_returns_fresh_init(self):
        data = tiny_data()
        result = train_teacher(data.labeled, tiny_run(teacher_epochs=0))
        expected = init_params(8, 8, role_rng(0, ROLE_TEACHER_INIT))
        assert result.checksum() == params_checksum(expected)
        assert result.step_losses == [] and result.epoch_means == []

    def test_step_count(self):
        data = tiny_data()
        result = train_teacher(data.labeled, tiny_run(teacher_epochs=3))
        # 6 samples, batch 6 -> 1 step per epoch
        assert len(result.step_losses) == 3
        assert len(result.epoch_means) == 3

    def test_deterministic(self):
        data = tiny_data()
        first = train_teacher(data.labeled, tiny_run())
        second = train_teacher(data.labeled, tiny_run())
        assert first.checksum() == second.checksum()
        assert first.step_losses == second.step_losses

    def test_seed_changes_result(self):
        data = tiny_data()
        assert (
            train_teacher(data.labeled, tiny_run(seed=0)).checksum()
            != train_teacher(data.labeled, tiny_run(seed=1)).checksum()
        )

    def test_loss_decreases_with_training(self):
        data = tiny_data(labeled=12)
        result = train_teacher(data.labeled, tiny_run(teacher_epochs=10))
        assert result.epoch_means[-1] < result.epoch_means[0]

    def test_empty_labeled_rejected(self):
        with pytest.raises(DomainError):
            train_teacher([], tiny_run())


class TestPseudoLabel:
    def test_outputs_and_checksums(self):
        data = tiny_data()
        teacher = train_teacher(data.labeled, tiny_run())
        pseudo = pseudo_label(teacher.model, data.unlabeled)
        assert len(pseudo) == len(data.unlabeled)
        for item, image in zip(pseudo, data.unlabeled):
            values = item.pseudo_disparity.values
            assert values.shape == image.shape[1:]
            assert 0.0 < values.min() and values.max() < 1.0
            assert item.source_checksum == array_checksum(image)

    def test_parallel_matches_serial(self):
        data = tiny_data()
        teacher = train_teacher(data.labeled, tiny_run())
        serial = pseudo_label(teacher.model, data.unlabeled, workers=1)
        threaded = pseudo_label(teacher.model, data.unlabeled, workers=4)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.pseudo_disparity.values, b.pseudo_disparity.values)


class TestStudent:
    def make_pseudo(self, data, run):
        teacher = train_teacher(data.labeled, run)
        return pseudo_label(teacher.model, data.unlabeled)

    def test_flags_off_is_labeled_only_with_student_roles(self):
        data = tiny_data()
        run = tiny_run(enable_unlabeled=False, enable_strong_perturb=False, enable_feat_align=False)
        via_student = train_student(data.labeled, [], run)
        direct = _train_labeled_only(data.labeled, run, ROLE_STUDENT_INIT, ROLE_STUDENT_LOOP)
        assert via_student.checksum() == direct.checksum()

    def test_student_init_differs_from_teacher(self):
        data = tiny_data()
        run = tiny_run(teacher_epochs=0, enable_unlabeled=False)
        teacher = train_teacher(data.labeled, run)
        student = train_student(data.labeled, [], run)
        assert teacher.checksum() != student.checksum()

    def test_step_count_covers_unlabeled_pool(self):
        data = tiny_data(unlabeled=10)
        run = tiny_run()  # batch 6, ratio 1:2 -> 4 unlabeled per step
        pseudo = self.make_pseudo(data, run)
        result = train_student(data.labeled, pseudo, run)
        assert len(result.step_losses) == 3  # ceil(10 / 4)
        two_sweeps = train_student(data.labeled, pseudo, replace(run, unlabeled_sweeps=2))
        assert len(two_sweeps.step_losses) == 6

    def test_deterministic(self):
        data = tiny_data()
        run = tiny_run()
        pseudo = self.make_pseudo(data, run)
        assert (
            train_student(data.labeled, pseudo, run).checksum()
            == train_student(data.labeled, pseudo, run).checksum()
        )

    def test_cutmix_counters(self):
        data = tiny_data(unlabeled=16)
        run = tiny_run()
        pseudo = self.make_pseudo(data, run)
        mixed = train_student(data.labeled, pseudo, run)
        assert mixed.cutmix_applied > 0

        never = replace(run, perturb=PerturbConfig(cutmix_probability=0.0))
        plain = train_student(data.labeled, pseudo, never)
        assert plain.cutmix_applied == 0 and plain.cutmix_fallbacks == 0

    def test_perturb_off_means_no_cutmix(self):
        data = tiny_data()
        run = tiny_run(enable_strong_perturb=False)
        pseudo = self.make_pseudo(data, run)
        result = train_student(data.labeled, pseudo, run)
        assert result.cutmix_applied == 0

    def test_provenance_mismatch_rejected(self):
        data = tiny_data()
        run = tiny_run()
        pseudo = self.make_pseudo(data, run)
        tampered = list(pseudo)
        item = tampered[0]
        tampered[0] = PseudoSample(
            np.clip(item.image * 0.9, 0.0, 1.0), item.pseudo_disparity, item.source_checksum
        )
        with pytest.raises(DomainError, match="provenance"):
            train_student(data.labeled, tampered, run)

    def test_unlabeled_flag_requires_pseudo(self):
        data = tiny_data()
        with pytest.raises(DomainError):
            train_student(data.labeled, [], tiny_run())

    @pytest.mark.parametrize("target", ["labeled", "both"])
    def test_feat_align_targets(self, target):
        data = tiny_data()
        run = tiny_run(feat_align_target=target)
        pseudo = self.make_pseudo(data, run)
        result = train_student(data.labeled, pseudo, run)
        assert len(result.step_losses) == 2

    def test_clean_reference_switch_changes_training(self):
        data = tiny_data()
        run = tiny_run()
        pseudo = self.make_pseudo(data, run)
        perturbed_ref = train_student(data.labeled, pseudo, run)
        clean_ref = train_student(
            data.labeled, pseudo, replace(run, feat_align_clean_input=True)
        )
        assert perturbed_ref.checksum() != clean_ref.checksum()


class TestPipeline:
    def test_report_reproducible_and_clock_free(self):
        data_config = DataConfig(
            scene=SceneSpec(height=16, width=16, seed=3), labeled=6, unlabeled=8, test=4
        )
        run = tiny_run(seed=3)
        first = run_pipeline(run, data_config)
        second = run_pipeline(run, data_config)
        assert first.report == second.report
        assert first.wall_seconds > 0.0
        assert "wall" not in json.dumps(first.report)
        assert set(first.metrics) == {"teacher", "student"}
        assert first.report["config"]["seed"] == 3

    def test_report_is_json_serializable(self):
        data_config = DataConfig(
            scene=SceneSpec(height=16, width=16, seed=1), labeled=6, unlabeled=8, test=4
        )
        result = run_pipeline(tiny_run(seed=1), data_config)
        text = json.dumps(result.report, sort_keys=True)
        assert json.loads(text) == result.report


@pytest.fixture(scope="module")
def grid():
    data_config = DataConfig(
        scene=SceneSpec(height=16, width=16, seed=2), labeled=6, unlabeled=8, test=4
    )
    return run_ablation_grid(tiny_run(seed=2), data_config)


class TestAblationGrid:
    def test_row_set(self, grid):
        names = [row.name for row in grid.rows]
        assert names == [
            "labeled_only",
            "pseudo",
            "pseudo_perturb",
            "feat_a100_u",
            "feat_a085_u",
            "feat_a070_u",
            "feat_a085_l",
        ]

    def test_alpha_grid_covered(self, grid):
        alphas = sorted(
            row.feat_margin
            for row in grid.rows
            if row.enable_feat_align and row.feat_align_target == "unlabeled"
        )
        assert alphas == [0.70, 0.85, 1.00]

    def test_csv_shape(self, grid):
        lines = grid.csv_text.strip().split("\n")
        assert lines[0] == ABLATION_CSV_HEADER
        assert len(lines) == 1 + len(grid.rows)
        first = lines[1].split(",")
        assert first[0] == "labeled_only" and first[1:4] == ["0", "0", "0"]
        float(first[6]), float(first[7])  # absrel and d1 parse

    def test_labeled_only_row_is_teacher_eval(self, grid):
        assert grid.rows[0].report.n_images == 4
        assert grid.rows[0].feat_margin is None
