"""
Tests for sweep expansion, aggregation and execution.
"""

import json
from types import SimpleNamespace

import pytest

from t3dnet.core.errors import ConfigError
from t3dnet.main import main
from t3dnet.models.plan import TrainPlan
from t3dnet.services import sweep_service
from t3dnet.services.sweep_service import (
    SubRunOutcome,
    aggregate,
    expand_sweep,
    render_csv,
    render_markdown,
    run_sweep,
)
from t3dnet.services.trainer import Trainer

BASE = {"teacher_checkpoint": "teacher.t3dn", "epochs_stage1": 1, "epochs_stage2": 1, "batch_size": 4}


class TestExpand:

    def test_temperature(self, tmp_path):
        runs = expand_sweep("temperature", BASE, [0], tmp_path)
        assert [r.label for r in runs] == ["T=1", "T=2", "T=5", "T=10", "T=15", "T=20"]
        assert {r.plan.mode for r in runs} == {"kd-only"}
        assert runs[-1].plan.kd.T == 20.0
        assert runs[0].plan.output_dir == str(tmp_path / "T=1" / "seed0")

    def test_seeds_fan_out(self, tmp_path):
        runs = expand_sweep("scale", BASE, [0, 3], tmp_path)
        assert len(runs) == 6
        assert [r.plan.width_scale for r in runs[:2]] == ["1/2", "1/2"]
        assert runs[1].plan.seeds.model_dump() == {"init": 3, "data": 3, "subnet": 3}

    def test_mode_sweep_needs_teacher(self, tmp_path):
        with pytest.raises(ConfigError, match="teacher"):
            expand_sweep("mode", {"epochs_stage1": 1}, [0], tmp_path)

    def test_invalid(self, tmp_path):
        with pytest.raises(ConfigError):
            expand_sweep("depth", BASE, [0], tmp_path)
        with pytest.raises(ConfigError):
            expand_sweep("temperature", BASE, [], tmp_path)


class TestAggregate:

    def outcomes(self):
        return [
            SubRunOutcome("a", 0, "x", oa=0.5),
            SubRunOutcome("a", 1, "x", oa=0.7),
            SubRunOutcome("b", 0, "x", oa=0.8),
            SubRunOutcome("b", 1, "x", error="diverged"),
        ]

    def test_mean_std_and_delta(self):
        result = aggregate("mode", [0, 1], self.outcomes())
        a, b = result.rows
        assert a.mean == pytest.approx(0.6)
        assert a.std == pytest.approx(0.1)
        assert b.std is None
        assert b.failed == 1
        assert result.baseline == "a"
        assert result.delta(b) == pytest.approx(0.2)
        assert len(result.failed) == 1

    def test_std_column_only_with_several_seeds(self):
        multi = render_markdown(aggregate("mode", [0, 1], self.outcomes()))
        single = render_markdown(aggregate("mode", [0], [SubRunOutcome("a", 0, "x", oa=0.5)]))
        assert "OA (std)" in multi
        assert "OA (std)" not in single
        assert render_csv(aggregate("mode", [0], [SubRunOutcome("a", 0, "x", oa=0.5)])).splitlines()[0] == "label,oa_mean,delta,failed"

    def test_explicit_baseline(self):
        result = aggregate("mode", [0, 1], self.outcomes(), baseline="b")
        assert result.delta(result.rows[0]) == pytest.approx(-0.2)


class TestRunSweep:

    def test_all_failed_runs_still_write_the_table(self, micro_config_file, tmp_path):
        base = dict(BASE, architecture=str(micro_config_file), dataset=str(tmp_path / "missing.pcds"))
        result = run_sweep("temperature", base, [0], tmp_path / "sweep")
        assert len(result.failed) == 6
        assert (tmp_path / "sweep" / "sweep.md").exists()
        manifest = json.loads((tmp_path / "sweep" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["status"] == "failed"
        assert manifest["error"] == "6 of 6 sub-runs failed"

    def test_unexpected_error_fails_only_its_row(self, monkeypatch, tmp_path):
        def fake_run_plan(plan, command):
            if plan.kd.T == 5.0:
                raise OSError("disk full")
            return SimpleNamespace(final=SimpleNamespace(best_oa=0.5))

        monkeypatch.setattr(sweep_service, "run_plan", fake_run_plan)
        result = run_sweep("temperature", BASE, [0], tmp_path / "sweep")
        assert [(o.label, o.error) for o in result.failed] == [("T=5", "OSError: disk full")]
        rows = {row.label: row for row in result.rows}
        assert rows["T=5"].failed == 1
        assert rows["T=1"].mean == 0.5
        assert (tmp_path / "sweep" / "sweep.csv").exists()
        manifest = json.loads((tmp_path / "sweep" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["error"] == "1 of 6 sub-runs failed"

    def test_cli_exit_code_on_failure(self, micro_config_file, tmp_path):
        code = main([
            "sweep", "--sweep", "temperature",
            "--config", str(micro_config_file),
            "--data", str(tmp_path / "missing.pcds"),
            "--teacher", "teacher.t3dn",
            "--epochs", "1",
            "--out", str(tmp_path / "sweep"),
        ])
        assert code == 1

    def test_bad_parallel(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep("temperature", BASE, [0], tmp_path, parallel=0)

    def test_temperature_sweep_runs(self, micro_spec, micro_dataset, micro_config_file, micro_dataset_file, tmp_path):
        teacher = Trainer(TrainPlan.resolve({"mode": "teacher", "epochs_stage1": 1, "batch_size": 4}),
                          micro_spec, micro_dataset, tmp_path / "teacher").run()
        base = dict(
            BASE,
            architecture=str(micro_config_file),
            dataset=str(micro_dataset_file),
            teacher_checkpoint=str(teacher.final.checkpoint_path),
        )
        result = run_sweep("temperature", base, [0], tmp_path / "sweep")
        assert not result.failed
        assert all(0.0 <= row.mean <= 1.0 for row in result.rows)
        assert (tmp_path / "sweep" / "T=20" / "seed0" / "checkpoint_stage1.t3dn").exists()
        table = (tmp_path / "sweep" / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert table[0] == "label,oa_mean,delta,failed"
        assert table[1].startswith("T=1,")
        assert table[1].endswith(",0.0,0")
