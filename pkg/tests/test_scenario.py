"""
情境編排測試 - 階段解析、記憶體與 CSV 成果、失敗標記
"""
import logging
import os

import pytest

from config import ScenarioConfig
from dependencies import get_file_service, get_report_service, get_scenario_service
from services.file_service import FileService
from services.platforms.csv_platform import CSVDirectoryPlatform
from services.platforms.memory_platform import MemoryPlatform
from services.scenario_service import ScenarioService, build_data
from utils.common.errors import StageFailure, ValidationFailure


def _flat_config(**run):
    payload = {
        "grid": {"h": 0.05, "r_max": 64.0},
        "run": dict({"t_max": 40.0, "observers": [10.0], "dt_out": 0.1,
                     "stages": ["check", "normalize", "build", "evolve", "fit", "report"]}, **run),
        "output": {"name": "flat-test"},
    }
    return ScenarioConfig.model_validate(payload)


@pytest.fixture(scope="module")
def scenario_service():
    return get_scenario_service()


@pytest.fixture(scope="module")
def flat_result(scenario_service):
    sink = MemoryPlatform()
    return scenario_service.run_scenario(_flat_config(), sink), sink


@pytest.mark.parametrize("requested, expected", [
    (["check"], ["check"]),
    (["fit"], ["normalize", "build", "evolve", "fit"]),
    (["report"], ["normalize", "build", "evolve", "fit", "report"]),
    (["lowfreq", "check"], ["check", "normalize", "build", "lowfreq"]),
])
def test_resolve_stages(requested, expected):
    """前置階段自動補齊並依管線排序"""
    assert ScenarioService.resolve_stages(requested) == expected


def test_default_window(scenario_service):
    cfg = ScenarioConfig.model_validate({"grid": {"r_max": 400.0}, "run": {"t_max": 300.0}})
    assert scenario_service.default_window(cfg, 10.0) == (96.0, 285.0)
    windowed = cfg.with_overrides({"run.fit_window": [100.0, 200.0]})
    assert scenario_service.default_window(windowed, 10.0) == (100.0, 200.0)


def test_build_data_families():
    cfg = _flat_config()
    data = build_data(cfg, 1)
    assert data.ell == 1 and data.support == (2.0, 14.0)
    assert data.u0(8.0) == pytest.approx(1.0)
    assert data.u1(8.0) == 0.0
    ball = build_data(cfg.with_overrides({"data.family": "step_ball"}), 0)
    assert not ball.smooth


def test_flat_scenario_in_memory(flat_result):
    """平坦情境：所有階段完成，Huygens 底線遠低於門檻"""
    result, sink = flat_result
    assert result.completed
    assert result.location == "memory"
    assert "series_l0_r10" in result.series
    for name in ("metric_check", "coefficients_l0", "series_l0_r10", "energy_l0", "decay_summary"):
        assert name in sink.frames
    assert "decay_report.md" in sink.texts and "decay_report.html" in sink.texts
    fits = sink.manifest["derived"]["fits"]["series_l0_r10"]
    assert fits["floor_ratio"] < 1e-8
    assert result.report["status"].tolist() == ["unverified"]
    assert sink.manifest["metric_check"]["passed"] is True
    assert sink.manifest["stages"] == ["check", "normalize", "build", "evolve", "fit", "report"]
    assert "decay_summary.csv" in sink.manifest["artifacts"]
    assert sink.incomplete is None


def test_identical_configs_give_identical_artifacts(scenario_service):
    cfg = _flat_config(t_max=20.0, stages=["evolve"])
    first, second = MemoryPlatform(), MemoryPlatform()
    scenario_service.run_scenario(cfg, first)
    scenario_service.run_scenario(cfg, second)
    assert first.digests == second.digests
    assert "series_l0_r10.csv" in first.digests


def test_stage_failure_marks_incomplete(scenario_service):
    """演化階段失敗時清單記錄失敗階段並標記未完成"""
    cfg = _flat_config(t_max=20.0, stages=["evolve"]).with_overrides({"run.cfl_factor": 3.0})
    sink = MemoryPlatform()
    with pytest.raises(StageFailure) as info:
        scenario_service.run_scenario(cfg, sink)
    assert info.value.stage == "evolve"
    assert info.value.exit_code == 2
    assert sink.incomplete.startswith("evolve")
    assert sink.manifest["failed_stage"] == "evolve"


def test_unknown_custom_profiles(scenario_service):
    cfg = ScenarioConfig.model_validate({"metric": {"preset": "custom"}, "run": {"stages": ["check"]}})
    with pytest.raises(ValidationFailure):
        scenario_service.run_scenario(cfg, MemoryPlatform())


def test_csv_artifacts(scenario_service, tmp_path):
    """CSV 平台寫出版本化表格與含摘要的清單"""
    cfg = ScenarioConfig.model_validate({"run": {"stages": ["check"]}})
    sink = CSVDirectoryPlatform(get_file_service(), get_file_service().run_directory("csv", str(tmp_path)))
    scenario_service.run_scenario(cfg, sink)
    frame, schema = FileService.read_csv(str(tmp_path / "metric_check.csv"))
    assert schema == "metric_check v1"
    assert len(frame) > 0
    manifest = FileService.read_json(str(tmp_path / "manifest.json"))
    assert manifest["artifacts"]["metric_check.csv"] == sink.digests["metric_check.csv"]
    assert manifest["fourier_convention"]
    assert not os.path.exists(tmp_path / "INCOMPLETE")


def test_report_rendering(flat_result):
    result, _ = flat_result
    md, html = get_report_service().render(result.report, "flat check")
    assert md.startswith("# Decay summary: flat check")
    assert "unverified" in md
    assert "<table>" in html


def test_stage_durations_are_logged(scenario_service, caplog):
    caplog.set_level(logging.INFO)
    scenario_service.run_scenario(ScenarioConfig.model_validate({"run": {"stages": ["check"]}}), MemoryPlatform())
    messages = [record.getMessage() for record in caplog.records]
    assert "Stage 'check' started" in messages
    assert any(m.startswith("Stage 'check' finished in") for m in messages)
