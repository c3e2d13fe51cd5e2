# tests/test_pipeline.py
from pathlib import Path

import numpy as np
import pytest

from config.settings import RunConfig
from services.estimator import SolverConfig
from services.simulation import default_rig, mono_rig
from services.vio_pipeline import align_yaw_translation, ate_rmse, run_estimation
from utils.imu_model import ImuBias
from utils.lie_core import so3_exp
from utils.residuals import NavState

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def test_alignment_recovers_yaw_and_translation(rng):
    truth = rng.normal(scale=3.0, size=(20, 3))
    yaw = 0.7
    t = np.array([1.0, -2.0, 0.5])
    Rz = so3_exp([0.0, 0.0, yaw]).matrix
    estimated = (truth - t) @ Rz  # so that Rz e + t == truth

    found_yaw, found_t = align_yaw_translation(estimated, truth)
    assert found_yaw == pytest.approx(yaw, abs=1e-12)
    np.testing.assert_allclose(found_t, t, atol=1e-12)


def test_ate_is_zero_for_a_rigidly_moved_trajectory(rng):
    q, t = so3_exp([0.0, 0.0, -1.2]), np.array([4.0, 0.0, -1.0])
    truth = [NavState(so3_exp(rng.normal(size=3)), rng.normal(size=3), np.zeros(3), ImuBias.zero()) for _ in range(8)]
    moved = [s.transformed(q, t) for s in truth]
    position, rotation = ate_rmse(moved, truth)
    assert position < 1e-12
    assert rotation < 1e-12


def test_noise_free_run_is_exact(make_scenario):
    result = run_estimation(make_scenario(duration=2.0), SolverConfig())
    assert result.metrics["keyframes"] == 11
    assert len(result.estimates) == len(result.truth) == 11
    assert result.metrics["ate_rmse_m"] < 1e-6
    assert result.metrics["rotation_rmse_rad"] < 1e-6


def test_window_capacity_is_respected(make_scenario):
    result = run_estimation(make_scenario(duration=2.0), SolverConfig(window_size=4))
    assert result.metrics["keyframes"] == 11
    assert len(result.reports) == 10
    assert result.metrics["ate_rmse_m"] < 1e-6


def test_bias_bootstrap_is_optional(make_scenario):
    result = run_estimation(make_scenario(duration=2.0), SolverConfig(), bootstrap_bias=False)
    assert result.metrics["ate_rmse_m"] < 1e-6
    np.testing.assert_array_equal(result.metrics["seed_gyro_bias"], np.zeros(3))


@pytest.mark.slow
def test_default_config_run_stays_within_bound():
    config = RunConfig(str(CONFIG_DIR / "default.yaml"))
    settings = config.estimate()
    result = run_estimation(config.scenario(), config.solver(), mode=settings.mode)
    assert result.metrics["keyframes"] == 51
    assert np.isfinite(result.metrics["final_cost"])
    assert result.metrics["ate_rmse_m"] < settings.ate_bound


@pytest.mark.slow
def test_four_cameras_beat_one(make_scenario):
    quad, mono = [], []
    for seed in range(10):
        for rig, errors in ((default_rig(), quad), (mono_rig(), mono)):
            scenario = make_scenario(duration=2.0, noise_free=False, landmark_count=300, seed=seed, rig=rig)
            errors.append(run_estimation(scenario, SolverConfig()).metrics["ate_rmse_m"])
    assert np.mean(quad) <= np.mean(mono)
