# tests/conftest.py
from dataclasses import replace

import numpy as np
import pytest

from services.estimator import NewKeyframe, SolverConfig, slide_window, start_window
from services.simulation import AnalyticTrajectory, SimScenario, default_rig, generate_scene, reference_states, simulate_imu
from utils.imu_model import ImuBias, ImuIntrinsics, ImuNoise, compensate_stream
from utils.preintegration import preintegrate

GRAVITY = np.array([0.0, 0.0, -9.81])


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def noise():
    return ImuNoise(sigma_g=1.6968e-4, sigma_a=2.0e-3, sigma_bg=1.9393e-5, sigma_ba=3.0e-3, rate=200.0)


@pytest.fixture
def make_scenario(noise):
    """Factory for small synthetic scenarios; keyword arguments override fields."""

    def _make(**overrides) -> SimScenario:
        fields = dict(
            trajectory=AnalyticTrajectory(),
            imu_rate=200.0,
            duration=0.8,
            keyframe_interval=0.2,
            noise=noise,
            intrinsics=ImuIntrinsics.identity(),
            initial_bias=ImuBias.zero(),
            rig=default_rig(),
            landmark_count=200,
            pixel_sigma=1.0,
            seed=7,
            gravity=GRAVITY,
            noise_free=True,
        )
        fields.update(overrides)
        return SimScenario(**fields)

    return _make


@pytest.fixture
def truth_window():
    """
    Factory building a window holding every keyframe of a scenario at its
    reference state, plus the reference states and the scene.
    """

    def _build(scenario: SimScenario, config: SolverConfig = None):
        config = config or SolverConfig(window_size=50)
        sim = simulate_imu(scenario)
        measurements = compensate_stream(sim.raw, scenario.intrinsics, scenario.imu_rate)
        indices = scenario.keyframe_indices()
        truth = reference_states(scenario, sim, indices)
        scene = generate_scene(scenario, truth)

        window = start_window(NewKeyframe(0, truth[0], None, tuple(scene.observations[0])),
                              scenario.rig, scenario.gravity, config)
        for f in range(1, len(indices)):
            segment = tuple(measurements[indices[f - 1]:indices[f]])
            preint = preintegrate(segment, truth[f - 1].bias, scenario.noise)
            window = slide_window(window, NewKeyframe(f, truth[f], preint, tuple(scene.observations[f]), segment), config)
        return window, truth, scene

    return _build


def perturb_window(window, rng, rotation=2e-3, translation=2e-2, landmark=1e-2):
    """Every non-anchor state and every landmark moved by a small random amount."""
    states = {}
    for i, (frame_id, state) in enumerate(window.states.items()):
        if i == 0:
            states[frame_id] = state
            continue
        delta = np.zeros(15)
        delta[0:3] = rng.normal(scale=rotation, size=3)
        delta[3:9] = rng.normal(scale=translation, size=6)
        states[frame_id] = state.retract(delta)
    landmarks = {l: p + rng.normal(scale=landmark, size=3) for l, p in window.landmarks.items()}
    return replace(window, states=states, landmarks=landmarks)
