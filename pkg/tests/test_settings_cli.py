"""
运行时配置、运行配置加载与命令行测试
"""
import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

from engine.main import EXIT_ERROR, EXIT_OK, run
from engine.settings import DEFAULT_CONFIG_PATH, NumericsSettings, _flatten_yaml, get_settings, load_run_config, load_settings
from shared.errors import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def settings_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        yaml.safe_dump({"numerics": {"chart_T": 0.5}, "runtime": {"threads": 3}, "logging": {"level": "DEBUG"}}),
        encoding="utf-8",
    )
    return path


def test_default_settings():
    settings = get_settings()
    assert settings.chart_T == 0.9
    assert settings.threads >= 1
    assert settings.log_file == ""


def test_shipped_yaml_keys_are_all_settings():
    raw = yaml.safe_load(DEFAULT_CONFIG_PATH.read_text(encoding="utf-8"))
    # extra="ignore" 会静默丢弃未声明的键
    assert set(_flatten_yaml(raw)) <= set(NumericsSettings.model_fields)


def test_yaml_settings(settings_file):
    settings = load_settings(settings_file)
    assert settings.chart_T == 0.5
    assert settings.threads == 3
    assert settings.log_level == "DEBUG"


def test_environment_overrides_yaml(settings_file, monkeypatch):
    monkeypatch.setenv("MMASYM_THREADS", "5")
    assert load_settings(settings_file).threads == 5


def test_missing_settings_file_uses_defaults(tmp_path):
    assert load_settings(tmp_path / "absent.yaml").crit_tol == 1e-9


@pytest.mark.parametrize("name", ["so2_reference.json", "so2_null.json", "t2_resolve.json", "so3.json"])
def test_shipped_configs_load(name):
    config = load_run_config(CONFIG_DIR / name)
    assert config.action.d >= 1
    assert config.mu_grid.values() == sorted(config.mu_grid.values(), reverse=True)


def test_yaml_run_config(tmp_path):
    raw = json.loads((CONFIG_DIR / "so2_reference.json").read_text(encoding="utf-8"))
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    assert load_run_config(path) == load_run_config(CONFIG_DIR / "so2_reference.json")


def test_invalid_run_config(tmp_path):
    raw = json.loads((CONFIG_DIR / "so2_reference.json").read_text(encoding="utf-8"))
    raw["mu_grid"] = {"min": 0.5, "max": 0.1, "count": 4}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    with pytest.raises(ConfigError, match="mu_grid"):
        load_run_config(path)


def test_missing_run_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")


def test_unparsable_run_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_cli_analyze(tmp_path):
    code = run(["analyze", "--config", str(CONFIG_DIR / "t2_resolve.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "analysis.json").read_text(encoding="utf-8"))
    assert payload["kappa"] == 2
    assert len(payload["branches"]) == 2


def test_cli_missing_config(tmp_path):
    code = run(["analyze", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)])
    assert code == EXIT_ERROR


def test_cli_requires_config():
    with pytest.raises(SystemExit):
        run(["verify"])


def test_cli_l0(tmp_path):
    code = run(["l0", "--config", str(CONFIG_DIR / "so2_reference.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "l0.json").read_text(encoding="utf-8"))
    assert payload["method"] == "chart_grid"
    assert payload["L0"] > 0.0


def test_cli_null_oracle_and_verify(tmp_path):
    config = str(CONFIG_DIR / "so2_null.json")
    assert run(["oracle", "--config", config, "--out", str(tmp_path), "--threads", "2"]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "sweep.csv")
    assert len(frame) == 6
    assert run(["verify", "--config", config, "--out", str(tmp_path), "--seed", "7"]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert report["verdicts"] == {"PASS_NULL": True}
    assert report["provenance"]["seed"] == 7
