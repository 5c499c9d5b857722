"""On-disk dataset and pseudo-label store round trips."""

import numpy as np
import pytest

from depthforge.datasets import (
    load_datasets,
    load_pseudo_labels,
    write_datasets,
    write_pseudo_labels,
)
from depthforge.engine import pseudo_label, train_teacher
from depthforge.errors import ConfigError, DomainError
from depthforge.synth import DataConfig, SceneSpec, generate_datasets


@pytest.fixture(scope="module")
def small_data():
    config = DataConfig(scene=SceneSpec(height=16, width=16, seed=4), labeled=3, unlabeled=5, test=2)
    return generate_datasets(config)


class TestDatasetStore:
    def test_round_trip_counts_and_content(self, small_data, tmp_path):
        write_datasets(tmp_path, small_data, config_echo={"seed": 4})
        loaded, manifest = load_datasets(tmp_path)
        assert manifest["counts"] == {"labeled": 3, "unlabeled": 5, "test": 2}
        assert manifest["config"] == {"seed": 4}
        assert len(loaded.labeled) == 3 and len(loaded.unlabeled) == 5 and len(loaded.test) == 2

        for original, reread in zip(small_data.labeled, loaded.labeled):
            # Depth is PFM: exact to 32-bit rounding. Images are 8-bit PPM.
            expected_depth = original.depth.values.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(reread.depth.values, expected_depth)
            np.testing.assert_array_equal(reread.depth.valid, original.depth.valid)
            np.testing.assert_array_equal(reread.sky, original.sky)
            np.testing.assert_allclose(reread.image, original.image, atol=0.5 / 255 + 1e-12)

    def test_valid_mask_derived_from_positive_depth(self, small_data, tmp_path):
        write_datasets(tmp_path, small_data)
        loaded, _ = load_datasets(tmp_path)
        for sample in loaded.labeled:
            np.testing.assert_array_equal(sample.depth.valid, sample.depth.values > 0)

    def test_writes_are_byte_deterministic(self, small_data, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_datasets(a, small_data)
        write_datasets(b, small_data)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DomainError, match="manifest"):
            load_datasets(tmp_path)

    def test_wrong_kind_rejected(self, small_data, tmp_path):
        write_datasets(tmp_path, small_data)
        pseudo_dir = tmp_path / "pseudo"
        write_pseudo_labels(pseudo_dir, [])
        with pytest.raises(ConfigError, match="kind"):
            load_datasets(pseudo_dir)


class TestPseudoStore:
    def test_round_trip_with_provenance(self, small_data, tmp_path):
        from depthforge.engine import RunConfig

        run = RunConfig(teacher_epochs=1, batch_size=3, ratio=(1, 2), feature_dim=8, seed=4)
        teacher = train_teacher(small_data.labeled, run)
        pseudo = pseudo_label(teacher.model, small_data.unlabeled)
        write_pseudo_labels(tmp_path, pseudo, model_checksum=teacher.checksum())
        loaded = load_pseudo_labels(tmp_path, small_data.unlabeled)
        assert len(loaded) == len(pseudo)
        for original, reread in zip(pseudo, loaded):
            expected = original.pseudo_disparity.values.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(reread.pseudo_disparity.values, expected)
            assert reread.source_checksum == original.source_checksum

    def test_wrong_images_rejected(self, small_data, tmp_path):
        from depthforge.engine import RunConfig

        run = RunConfig(teacher_epochs=0, batch_size=3, feature_dim=8)
        teacher = train_teacher(small_data.labeled, run)
        pseudo = pseudo_label(teacher.model, small_data.unlabeled)
        write_pseudo_labels(tmp_path, pseudo)
        wrong = [np.clip(img * 0.5, 0, 1) for img in small_data.unlabeled]
        with pytest.raises(DomainError, match="different image"):
            load_pseudo_labels(tmp_path, wrong)

    def test_count_mismatch_rejected(self, small_data, tmp_path):
        write_pseudo_labels(tmp_path, [])
        with pytest.raises(DomainError, match="pair"):
            load_pseudo_labels(tmp_path, small_data.unlabeled)
