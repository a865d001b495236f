"""
Tests for the command-line surface and its exit codes.
"""

import pytest

from t3dnet.core.errors import EXIT_FORMAT, EXIT_IO, EXIT_OK, EXIT_USAGE
from t3dnet.main import main

GEN_ARGS = ["--classes", "sphere,cube,cone", "--train-per-class", "4", "--test-per-class", "2", "--points", "32"]


@pytest.fixture
def dataset_file(tmp_path):
    path = tmp_path / "data" / "micro.pcds"
    assert main(["gen-data", *GEN_ARGS, "--out", str(path)]) == EXIT_OK
    return path


class TestUsage:

    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_flag(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "x.pcds"), "--colour", "red"]) == EXIT_USAGE

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("t3dnet ")

    def test_invalid_value(self, tmp_path):
        assert main(["gen-data", "--points", "4", "--out", str(tmp_path / "x.pcds")]) == EXIT_USAGE


class TestData:

    def test_gen_data_is_deterministic(self, tmp_path, dataset_file, capsys):
        other = tmp_path / "again.pcds"
        assert main(["gen-data", *GEN_ARGS, "--out", str(other)]) == EXIT_OK
        assert other.read_bytes() == dataset_file.read_bytes()
        assert (tmp_path / "again.pcds.json").exists()
        assert "3 classes" in capsys.readouterr().out

    def test_output_under_a_file(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("", encoding="utf-8")
        assert main(["gen-data", *GEN_ARGS, "--out", str(blocker / "x.pcds")]) == EXIT_IO

    def test_ingest_missing_root(self, tmp_path):
        assert main(["ingest-off", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x.pcds")]) == EXIT_USAGE


class TestTrainEvalReport:

    def test_missing_dataset(self, micro_config_file, tmp_path):
        code = main([
            "train", "--mode", "teacher", "--config", str(micro_config_file),
            "--data", str(tmp_path / "missing.pcds"), "--out", str(tmp_path / "run"),
        ])
        assert code == EXIT_USAGE

    def test_teacher_mode_without_teacher(self, micro_config_file, dataset_file, tmp_path):
        code = main([
            "train", "--mode", "kd", "--config", str(micro_config_file),
            "--data", str(dataset_file), "--out", str(tmp_path / "run"),
        ])
        assert code == EXIT_USAGE

    def test_corrupted_checkpoint(self, micro_config_file, dataset_file, tmp_path):
        bad = tmp_path / "bad.t3dn"
        bad.write_bytes(b"NOPE" + bytes(40))
        code = main(["eval", "--checkpoint", str(bad), "--config", str(micro_config_file), "--data", str(dataset_file)])
        assert code == EXIT_FORMAT

    def test_train_eval_report(self, micro_config_file, dataset_file, tmp_path, capsys):
        run = tmp_path / "run"
        code = main([
            "train", "--mode", "tiny", "--config", str(micro_config_file), "--data", str(dataset_file),
            "--epochs", "2", "--batch-size", "4", "--seed", "1", "--out", str(run),
        ])
        assert code == EXIT_OK
        assert (run / "manifest.json").exists()
        assert "stage 1: best test OA" in capsys.readouterr().out

        code = main([
            "eval", "--checkpoint", str(run / "checkpoint_stage1.t3dn"),
            "--config", str(micro_config_file), "--data", str(dataset_file),
        ])
        assert code == EXIT_OK
        assert capsys.readouterr().out.startswith("tiny test: OA ")

        code = main([
            "report", f"tiny={run}", "--config", str(micro_config_file),
            "--baseline", "tiny", "--curves", "--out", str(tmp_path / "report"),
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "ΔAcc vs tiny" in out
        assert "+0.00%" in out
        assert (tmp_path / "report" / "curves.csv").exists()

    def test_plan_file(self, micro_config_file, dataset_file, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text('{"mode": "netaug", "epochs_stage1": 1, "batch_size": 4}', encoding="utf-8")
        run = tmp_path / "run"
        code = main([
            "train", "--plan", str(plan), "--config", str(micro_config_file),
            "--data", str(dataset_file), "--out", str(run),
        ])
        assert code == EXIT_OK
        assert (run / "selections_stage1.jsonl").exists()

    def test_bad_plan_file(self, micro_config_file, dataset_file, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text("[1, 2]", encoding="utf-8")
        code = main(["train", "--plan", str(plan), "--config", str(micro_config_file), "--data", str(dataset_file)])
        assert code == EXIT_USAGE
