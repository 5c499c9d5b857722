"""Command-line surface: artifacts, exit codes, determinism, config echo."""

import json
from pathlib import Path

import pytest

from depthforge.cli import main

TINY_CONFIG = {
    "run": {"teacher_epochs": 1, "batch_size": 6, "feature_dim": 8, "patch_size": 8},
    "data": {
        "scene": {"height": 16, "width": 16},
        "labeled": 6,
        "unlabeled": 8,
        "test": 4,
    },
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def run_stages(root: Path, config: Path, seed: int) -> None:
    base = ["--config", str(config), "--seed", str(seed)]
    assert main(["gen-data", *base, "--out", str(root / "data")]) == 0
    assert main(["train-teacher", *base, "--data", str(root / "data"), "--out", str(root / "teacher")]) == 0
    assert main([
        "pseudo-label", *base,
        "--data", str(root / "data"),
        "--checkpoint", str(root / "teacher" / "teacher.ckpt"),
        "--out", str(root / "pseudo"),
    ]) == 0
    assert main([
        "train-student", *base,
        "--data", str(root / "data"),
        "--pseudo", str(root / "pseudo"),
        "--out", str(root / "student"),
    ]) == 0
    assert main([
        "eval", *base,
        "--data", str(root / "data"),
        "--checkpoint", str(root / "student" / "student.ckpt"),
        "--out", str(root / "eval"),
    ]) == 0


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


class TestFiveStageSequence:
    def test_artifacts_exist_and_rerun_is_byte_identical(self, tmp_path, tiny_config):
        first, second = tmp_path / "first", tmp_path / "second"
        run_stages(first, tiny_config, seed=5)
        run_stages(second, tiny_config, seed=5)

        expected = [
            "data/manifest.json",
            "teacher/teacher.ckpt",
            "teacher/report.json",
            "pseudo/manifest.json",
            "student/student.ckpt",
            "student/report.json",
            "eval/metrics.csv",
        ]
        for rel in expected:
            assert (first / rel).is_file(), rel
        assert tree_bytes(first) == tree_bytes(second)

    def test_seed_changes_artifacts(self, tmp_path, tiny_config):
        a, b = tmp_path / "a", tmp_path / "b"
        run_stages(a, tiny_config, seed=5)
        run_stages(b, tiny_config, seed=6)
        assert (a / "teacher/teacher.ckpt").read_bytes() != (b / "teacher/teacher.ckpt").read_bytes()

    def test_every_artifact_dir_echoes_config_and_seed(self, tmp_path, tiny_config):
        root = tmp_path / "run"
        run_stages(root, tiny_config, seed=5)
        echoes = [
            json.loads((root / stage / "config.json").read_text())
            for stage in ("data", "teacher", "pseudo", "student", "eval")
        ]
        for echo in echoes:
            assert echo == echoes[0]
            assert echo["run"]["seed"] == 5
            assert echo["data"]["scene"]["seed"] == 5
            assert echo["run"]["feature_dim"] == 8

    def test_metrics_csv_header(self, tmp_path, tiny_config):
        root = tmp_path / "run"
        run_stages(root, tiny_config, seed=5)
        lines = (root / "eval" / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == "dataset,absrel,d1,d2,d3,rmse,rmse_log,log10"
        assert len(lines) == 2 and lines[1].startswith("test,")


class TestExitCodes:
    def test_missing_data_dir(self, tmp_path, capsys):
        code = main([
            "eval",
            "--data", str(tmp_path / "nope"),
            "--checkpoint", str(tmp_path / "x.ckpt"),
            "--out", str(tmp_path / "out"),
        ])
        assert code == 1
        assert "nope" in capsys.readouterr().err

    def test_missing_checkpoint_names_path(self, tmp_path, tiny_config, capsys):
        assert main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / "data")]) == 0
        code = main([
            "eval",
            "--data", str(tmp_path / "data"),
            "--checkpoint", str(tmp_path / "absent.ckpt"),
            "--out", str(tmp_path / "out"),
        ])
        assert code == 1
        assert "absent.ckpt" in capsys.readouterr().err

    def test_bad_config_is_domain_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"run": {"not_a_key": 1}}')
        code = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as info:
            main(["no-such-command"])
        assert info.value.code == 2
        with pytest.raises(SystemExit) as info:
            main(["gen-data"])  # --out is required
        assert info.value.code == 2

    def test_bad_thread_env_is_config_error(self, tmp_path, tiny_config, monkeypatch, capsys):
        monkeypatch.setenv("DEPTHFORGE_THREADS", "many")
        code = main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / "d")])
        assert code == 1
        assert "DEPTHFORGE_THREADS" in capsys.readouterr().err


class TestAblateAndGradcheck:
    def test_ablate_writes_csv(self, tmp_path, tiny_config):
        out = tmp_path / "ablation"
        assert main(["ablate", "--config", str(tiny_config), "--seed", "2", "--out", str(out)]) == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert lines[0].startswith("config,unlabeled,perturb,feat,alpha")
        assert len(lines) == 8
        assert (out / "config.json").is_file()

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_timing_goes_to_stderr_only(self, tmp_path, tiny_config, capsys):
        assert main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / "d")]) == 0
        captured = capsys.readouterr()
        assert "finished in" in captured.err
        assert "finished in" not in captured.out
