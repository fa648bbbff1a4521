"""
命令列測試 - 子命令、覆寫與退出碼
"""
import json

from main import cli
from routes import cli_router
from routes.base import _parse_override

EXPECTED_COMMANDS = {"check-metric", "normalize", "build-operator", "evolve", "synthesize", "resolvent",
                     "expand-r0", "lowfreq-scan", "fit-tail", "report"}


def _summary(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_all_commands_registered():
    assert set(cli_router.commands) == EXPECTED_COMMANDS


def test_check_metric_flat(tmp_path, capsys):
    """平坦度規的假設檢驗成功並輸出 JSON 摘要"""
    code = cli(["check-metric", "--preset", "flat", "--output", str(tmp_path)])
    assert code == 0
    summary = _summary(capsys)
    assert summary["passed"] is True
    assert summary["signature"] == [1, 3]
    assert summary["location"] == str(tmp_path)
    assert (tmp_path / "manifest.json").exists()


def test_normalize_family(tmp_path, capsys):
    code = cli(["normalize", "--preset", "family_k2", "--output", str(tmp_path)])
    assert code == 0
    summary = _summary(capsys)
    assert set(summary) == {"cutoff_radius", "matching_shift", "normalization_residuals", "location"}
    assert summary["matching_shift"] != 0.0


def test_raw_overrides(tmp_path):
    code = cli(["check-metric", "--preset", "family_k2", "--set", "metric.epsilon=0.02",
                "--output", str(tmp_path)])
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["metric"]["epsilon"] == 0.02


def test_parse_override():
    assert _parse_override("run.observers=[10, 20]") == ("run.observers", [10, 20])
    assert _parse_override("output.name=k2-run") == ("output.name", "k2-run")


def test_usage_errors_exit_2():
    assert cli(["teleport"]) == 2
    assert cli([]) == 2
    assert cli(["check-metric", "--order", "3"]) == 2


def test_invalid_config_exits_2(tmp_path):
    """違反因果裕度或缺少設定檔時回傳 2"""
    assert cli(["evolve", "--t-max", "1000", "--output", str(tmp_path)]) == 2
    assert cli(["check-metric", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli(["check-metric", "--set", "metric.epsilon", "--output", str(tmp_path)]) == 2


def test_config_file_round_trip(tmp_path, capsys):
    path = tmp_path / "flat.cfg"
    path.write_text('metric.preset = "flat"\nrun.stages = ["check"]\n', encoding="utf-8")
    code = cli(["check-metric", "--config", str(path), "--output", str(tmp_path / "out")])
    assert code == 0
    assert _summary(capsys)["passed"] is True
