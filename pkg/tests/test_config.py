# tests/test_config.py
from pathlib import Path

import pytest
import yaml

import config.settings as settings
from config.settings import RunConfig, get_config, reload_config
from infra.errors import ConfigError
from services.estimator import GaugePolicy
from utils.preintegration import IntegrationMode

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def write_config(tmp_path, payload) -> str:
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def test_builtin_defaults_are_valid():
    config = RunConfig()
    assert config.validate_config() == []
    assert config.seed == 42
    scenario = config.scenario()
    assert scenario.duration == 10.0
    assert len(scenario.rig) == 4
    assert config.solver().gauge is GaugePolicy.POSE
    assert config.estimate().mode is IntegrationMode.EXACT
    assert config.bench().rates[0] == 0.0


@pytest.mark.parametrize("name", ["default.yaml", "noise_free.yaml", "single_camera.yaml"])
def test_shipped_configs_load(name):
    config = RunConfig(str(CONFIG_DIR / name))
    config.scenario()
    config.solver()
    config.bench()
    config.consistency()
    config.estimate()


def test_shipped_variants():
    noise_free = RunConfig(str(CONFIG_DIR / "noise_free.yaml"))
    assert noise_free.scenario().noise_free
    assert noise_free.scenario().initial_bias.as_vector().tolist() == [0.0] * 6
    assert noise_free.estimate().ate_bound == 1e-6

    single = RunConfig(str(CONFIG_DIR / "single_camera.yaml"))
    assert len(single.rig()) == 1


def test_file_values_merge_over_defaults(tmp_path):
    config = RunConfig(write_config(tmp_path, {"schema_version": 1, "imu": {"sigma_g": 1e-3}}))
    assert config.noise().sigma_g == 1e-3
    assert config.noise().sigma_a == 2.0e-3


def test_command_line_overrides(tmp_path):
    config = RunConfig(seed_override=7, out_override=str(tmp_path / "out"))
    assert config.seed == 7
    assert config.scenario().seed == 7
    assert config.output_dir == tmp_path / "out"


@pytest.mark.parametrize("payload", [
    {"schema_version": 2},
    {"schema_version": 1, "seed": "abc"},
    {"schema_version": 1, "imu": {"sigma_g": -1.0}},
    {"schema_version": 1, "rig": {"preset": "stereo"}},
    {"schema_version": 1, "solver": {"trust_radius": 1.0}},
    {"schema_version": 1, "estimate": {"mode": "rk4"}},
    {"schema_version": 1, "consistency": {"scenarios": ["spin"]}},
    {"schema_version": 1, "intrinsics": {"g_sensitivity": [1.0, 2.0]}},
])
def test_invalid_values_are_rejected(tmp_path, payload):
    with pytest.raises(ConfigError):
        RunConfig(write_config(tmp_path, payload))


def test_unreadable_files_are_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(str(tmp_path / "absent.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("imu: [unclosed\n")
    with pytest.raises(ConfigError):
        RunConfig(str(bad))
    listed = tmp_path / "list.yaml"
    listed.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        RunConfig(str(listed))


def test_scenario_and_solver_errors_become_config_errors(tmp_path):
    config = RunConfig(write_config(tmp_path, {"schema_version": 1, "scenario": {"duration": 0.0}}))
    with pytest.raises(ConfigError):
        config.scenario()
    config = RunConfig(write_config(tmp_path, {"schema_version": 1, "solver": {"window_size": 1}}))
    with pytest.raises(ConfigError):
        config.solver()


def test_explicit_cameras(tmp_path):
    camera = {"rotation": [0.0, 0.0, 0.0], "translation": [0.1, 0.0, 0.0],
              "fx": 300.0, "fy": 300.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480}
    config = RunConfig(write_config(tmp_path, {"schema_version": 1, "rig": {"cameras": [camera, camera]}}))
    rig = config.rig()
    assert len(rig) == 2
    assert rig.cameras[1].fx == 300.0


def test_job_count_from_environment(monkeypatch):
    monkeypatch.setenv("PREINT_N_JOBS", "3")
    assert RunConfig().n_jobs == 3
    monkeypatch.setenv("PREINT_N_JOBS", "many")
    assert RunConfig().n_jobs == 1


def test_global_instance(monkeypatch):
    monkeypatch.setattr(settings, "_config_instance", None)
    first = get_config(seed_override=5)
    assert get_config() is first
    assert first.seed == 5
    reload_config()
    assert get_config().seed == 5
