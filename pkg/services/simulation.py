# services/simulation.py
"""
Synthetic ground truth for pre-integration and estimation runs.

- AnalyticTrajectory: sinusoidal position and single-axis oscillating attitude
  with closed-form body rates and specific force
- simulate_imu: true inputs pushed through the intrinsic and noise model,
  with the biases random-walking
- fine_oracle: substep refinement of the exact constant-input step
- generate_scene: landmarks in a shell plus multi-camera observations
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation as ScipyRotation

from infra.errors import SceneError, TrajectoryRangeError
from utils.imu_model import (
    CompensatedImuMeasurement,
    ImuBias,
    ImuIntrinsics,
    ImuNoise,
    RawImuMeasurement,
    apply_intrinsics,
    compensated_bias,
)
from utils.lie_core import (
    ExtendedPose,
    InputPhaseStep,
    Rotation3,
    compose_input_phases,
    exact_state_step,
    input_phase,
    input_phase_power,
    so3_exp,
)
from utils.residuals import CameraRig, Landmark, NavState, Observation, PinholeCamera, Z_MIN

logger = logging.getLogger(__name__)

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])
MIN_VISIBLE_LANDMARKS = 8

Signal = Callable[[float], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class AnalyticTrajectory:
    """
    p(t) = p0 + amplitude * sin(frequency * t + phase)   (per axis)
    R(t) = base_rotation * Exp(rot_amplitude * sin(rot_frequency * t) * rot_axis)
    """

    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    amplitude: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.0, 0.3]))
    frequency: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.9, 1.2]))
    phase: np.ndarray = field(default_factory=lambda: np.array([0.0, np.pi / 2, 0.0]))
    rot_axis: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.3, 1.0]))
    rot_amplitude: float = 1.0
    rot_frequency: float = 3.0
    base_rotation: Rotation3 = field(default_factory=Rotation3.identity)

    def __post_init__(self):
        for name in ("p0", "amplitude", "frequency", "phase"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))
        axis = np.array(self.rot_axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        object.__setattr__(self, "rot_axis", axis / norm if norm > 0.0 else np.array([0.0, 0.0, 1.0]))

    @classmethod
    def stationary(cls, p0=(0.0, 0.0, 0.0)) -> "AnalyticTrajectory":
        return cls(p0=np.asarray(p0, dtype=float), amplitude=np.zeros(3), rot_amplitude=0.0)

    @property
    def peak_rate(self) -> float:
        return abs(self.rot_amplitude * self.rot_frequency)

    def position(self, t: float) -> np.ndarray:
        return self.p0 + self.amplitude * np.sin(self.frequency * t + self.phase)

    def velocity(self, t: float) -> np.ndarray:
        return self.amplitude * self.frequency * np.cos(self.frequency * t + self.phase)

    def acceleration(self, t: float) -> np.ndarray:
        return -self.amplitude * self.frequency ** 2 * np.sin(self.frequency * t + self.phase)

    def rotation(self, t: float) -> Rotation3:
        angle = self.rot_amplitude * np.sin(self.rot_frequency * t)
        return self.base_rotation @ so3_exp(angle * self.rot_axis)

    def body_rate(self, t: float) -> np.ndarray:
        return self.rot_amplitude * self.rot_frequency * np.cos(self.rot_frequency * t) * self.rot_axis

    def body_inputs(self, t: float, g=DEFAULT_GRAVITY) -> Tuple[np.ndarray, np.ndarray]:
        """(angular rate, specific force) in the body frame; specific force = R^T (p'' - g)."""
        g = np.asarray(g, dtype=float)
        return self.body_rate(t), self.rotation(t).matrix.T @ (self.acceleration(t) - g)


@dataclass(frozen=True)
class SimScenario:
    trajectory: AnalyticTrajectory
    imu_rate: float
    duration: float
    keyframe_interval: float
    noise: ImuNoise
    intrinsics: ImuIntrinsics
    initial_bias: ImuBias
    rig: CameraRig
    landmark_count: int
    pixel_sigma: float
    seed: int
    gravity: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())
    noise_free: bool = False
    landmark_radii: Tuple[float, float] = (2.0, 10.0)
    outlier_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.array(self.gravity, dtype=float).reshape(3))
        if not self.duration > 0.0:
            raise ValueError(f"Scenario duration must be positive, got {self.duration}")
        if self.imu_rate < 2.0 / self.keyframe_interval:
            raise ValueError(f"IMU rate {self.imu_rate} Hz is below 2 / keyframe interval")
        spk = self.keyframe_interval * self.imu_rate
        if abs(spk - round(spk)) > 1e-9:
            raise ValueError("Keyframe interval must be a whole number of IMU periods")
        if self.pixel_sigma <= 0.0:
            raise ValueError("pixel_sigma must be positive")

    @property
    def sample_count(self) -> int:
        return int(round(self.duration * self.imu_rate))

    @property
    def samples_per_keyframe(self) -> int:
        return int(round(self.keyframe_interval * self.imu_rate))

    def keyframe_indices(self) -> np.ndarray:
        return np.arange(0, self.sample_count + 1, self.samples_per_keyframe)

    def sample_time(self, k) -> np.ndarray:
        return np.asarray(k) / self.imu_rate


@dataclass
class ImuSimulation:
    """Raw stream plus the hidden truth that produced it (raw-frame biases)."""

    times: np.ndarray
    raw: List[RawImuMeasurement]
    true_gyro: np.ndarray
    true_accel: np.ndarray
    bias_gyro: np.ndarray
    bias_accel: np.ndarray

    def true_bias(self, k: int) -> ImuBias:
        return ImuBias(self.bias_gyro[k], self.bias_accel[k])


@dataclass
class Scene:
    landmarks: Dict[int, Landmark]
    observations: Dict[int, List[Observation]]  # keyframe id -> observations

    def mean_track_length(self) -> float:
        frames_per_landmark: Dict[int, set] = {}
        for frame_id, observations in self.observations.items():
            for obs in observations:
                frames_per_landmark.setdefault(obs.landmark_id, set()).add(frame_id)
        if not frames_per_landmark:
            return 0.0
        return float(np.mean([len(frames) for frames in frames_per_landmark.values()]))


def truth_state(scenario: SimScenario, t: float) -> NavState:
    if not -1e-12 <= t <= scenario.duration + 1e-12:
        raise TrajectoryRangeError(f"t={t} outside [0, {scenario.duration}]")
    traj = scenario.trajectory
    return NavState(
        rotation=traj.rotation(t),
        position=traj.position(t),
        velocity=traj.velocity(t),
        bias=compensated_bias(scenario.initial_bias, scenario.intrinsics),
    )


def simulate_imu(scenario: SimScenario) -> ImuSimulation:
    n = scenario.sample_count + 1
    dt = 1.0 / scenario.imu_rate
    times = scenario.sample_time(np.arange(n))
    inputs = [scenario.trajectory.body_inputs(t, scenario.gravity) for t in times]
    true_gyro = np.array([w for w, _ in inputs])
    true_accel = np.array([a for _, a in inputs])

    noise = scenario.noise
    rng = np.random.default_rng(scenario.seed)
    white_g = rng.standard_normal((n, 3)) * noise.sigma_g / np.sqrt(dt)
    white_a = rng.standard_normal((n, 3)) * noise.sigma_a / np.sqrt(dt)
    walk_g = rng.standard_normal((n - 1, 3)) * noise.sigma_bg * np.sqrt(dt)
    walk_a = rng.standard_normal((n - 1, 3)) * noise.sigma_ba * np.sqrt(dt)
    if scenario.noise_free:
        white_g[:] = white_a[:] = walk_g[:] = walk_a[:] = 0.0

    bias_gyro = scenario.initial_bias.gyro + np.vstack([np.zeros(3), np.cumsum(walk_g, axis=0)])
    bias_accel = scenario.initial_bias.accel + np.vstack([np.zeros(3), np.cumsum(walk_a, axis=0)])

    raw = [
        apply_intrinsics(true_gyro[k], true_accel[k], scenario.intrinsics,
                         ImuBias(bias_gyro[k], bias_accel[k]), (white_g[k], white_a[k]), t=float(times[k]))
        for k in range(n)
    ]
    logger.info(f"Simulated {n} IMU samples over {scenario.duration:.2f} s (seed {scenario.seed})")
    return ImuSimulation(times, raw, true_gyro, true_accel, bias_gyro, bias_accel)


def sample_imu(scenario: SimScenario) -> List[RawImuMeasurement]:
    return simulate_imu(scenario).raw


def fine_oracle(measurements: Sequence[CompensatedImuMeasurement], x0: NavState, g, substeps: int,
                signal: Optional[Signal] = None) -> NavState:
    """
    Integrate the kinematics by splitting every sample interval into `substeps`
    exact constant-input steps.

    Without `signal` each sample is held over its interval (bias x0.bias removed)
    and the substep powers are formed by repeated squaring. With `signal`, the
    analytic unbiased inputs are evaluated at substep midpoints instead.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    total = InputPhaseStep.identity()
    for m in measurements:
        h = m.dt_to_next / substeps
        if signal is None:
            step = input_phase(h, m.gyro - x0.bias.gyro, m.accel - x0.bias.accel)
            total = compose_input_phases(total, input_phase_power(step, substeps))
            continue
        for i in range(substeps):
            omega, accel = signal(m.t + (i + 0.5) * h)
            total = compose_input_phases(total, input_phase(h, omega, accel))

    pose = exact_state_step(ExtendedPose(x0.rotation, x0.position, x0.velocity), total, g)
    return NavState(pose.rotation, pose.position, pose.velocity, x0.bias)


def reference_states(scenario: SimScenario, sim: ImuSimulation, indices: Optional[Sequence[int]] = None) -> List[NavState]:
    """
    Exact integration of the noise-free sampled inputs from the analytic state at
    t=0, reported at `indices` (keyframes by default) with the true
    compensated-frame bias of that sample.
    """
    indices = scenario.keyframe_indices() if indices is None else np.asarray(indices)
    wanted = set(int(k) for k in indices)
    dt = 1.0 / scenario.imu_rate
    start = truth_state(scenario, 0.0)
    pose = ExtendedPose(start.rotation, start.position, start.velocity)

    states: Dict[int, NavState] = {}
    last = int(max(wanted))
    for k in range(last + 1):
        if k in wanted:
            bias = compensated_bias(sim.true_bias(k), scenario.intrinsics)
            states[k] = NavState(pose.rotation, pose.position, pose.velocity, bias)
        if k < last:
            pose = exact_state_step(pose, input_phase(dt, sim.true_gyro[k], sim.true_accel[k]), scenario.gravity)
    return [states[int(k)] for k in indices]


def default_rig(width: int = 640, height: int = 480, focal: float = 320.0) -> CameraRig:
    """Forward stereo pair plus left and right side cameras."""
    # camera z = body x, camera x = -body y, camera y = -body z
    forward = Rotation3(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))
    left = so3_exp([0.0, 0.0, np.pi / 2]) @ forward
    right = so3_exp([0.0, 0.0, -np.pi / 2]) @ forward
    mounts = [
        (forward, (0.10, 0.06, 0.0)),
        (forward, (0.10, -0.06, 0.0)),
        (left, (0.0, 0.10, 0.0)),
        (right, (0.0, -0.10, 0.0)),
    ]
    return CameraRig(tuple(
        PinholeCamera(rotation, np.array(t), focal, focal, width / 2.0, height / 2.0, width, height)
        for rotation, t in mounts
    ))


def mono_rig(width: int = 640, height: int = 480, focal: float = 320.0) -> CameraRig:
    return CameraRig(default_rig(width, height, focal).cameras[:1])


def _sample_landmarks(rng: np.random.Generator, center: np.ndarray, count: int, radii: Tuple[float, float]) -> Dict[int, Landmark]:
    directions = rng.standard_normal((count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    r_lo, r_hi = radii
    radius = np.cbrt(rng.uniform(r_lo ** 3, r_hi ** 3, size=count))
    points = center + directions * radius[:, None]
    return {i: Landmark(i, points[i]) for i in range(count)}


def generate_scene(scenario: SimScenario, keyframe_states: Sequence[NavState]) -> Scene:
    """
    Landmarks uniform (by volume) in a shell around the trajectory centre and
    their noisy projections into every camera of every keyframe.
    """
    rng = np.random.default_rng([scenario.seed, 1])
    landmarks = _sample_landmarks(rng, scenario.trajectory.p0, scenario.landmark_count, scenario.landmark_radii)
    ids = np.array(sorted(landmarks))
    points = np.array([landmarks[i].position for i in ids])

    observations: Dict[int, List[Observation]] = {}
    for frame_id, state in enumerate(keyframe_states):
        frame_obs: List[Observation] = []
        R = state.rotation.matrix
        p_b = (points - state.position) @ R
        for k, camera in enumerate(scenario.rig.cameras):
            p_c = (p_b - camera.extrinsic_translation) @ camera.extrinsic_rotation.matrix
            z = p_c[:, 2]
            in_front = z > Z_MIN
            z_safe = np.where(in_front, z, 1.0)
            pixels = np.stack([camera.fx * p_c[:, 0] / z_safe + camera.cx,
                               camera.fy * p_c[:, 1] / z_safe + camera.cy], axis=1)
            noise = rng.standard_normal(pixels.shape) * scenario.pixel_sigma
            outlier = rng.uniform(size=len(ids)) < scenario.outlier_fraction
            random_pixels = rng.uniform([0.0, 0.0], [camera.width, camera.height], size=pixels.shape)
            visible = in_front & np.array([camera.in_image(px) for px in pixels])
            if not scenario.noise_free:
                pixels = np.where(outlier[:, None], random_pixels, pixels + noise)
            for idx in np.flatnonzero(visible):
                if camera.in_image(pixels[idx]):
                    frame_obs.append(Observation.in_camera(camera, frame_id, k, int(ids[idx]), pixels[idx],
                                                           scenario.pixel_sigma))

        distinct = len({obs.landmark_id for obs in frame_obs})
        if distinct < MIN_VISIBLE_LANDMARKS:
            raise SceneError(f"Keyframe {frame_id} sees only {distinct} landmarks (need {MIN_VISIBLE_LANDMARKS})")
        observations[frame_id] = frame_obs

    scene = Scene(landmarks, observations)
    logger.info(f"Scene: {len(landmarks)} landmarks, {sum(len(o) for o in observations.values())} observations, "
                f"mean track length {scene.mean_track_length():.2f} keyframes")
    return scene


def ground_truth_frame(times: Sequence[float], states: Sequence[NavState]) -> pd.DataFrame:
    """t,qw,qx,qy,qz,px,py,pz,vx,vy,vz with qw >= 0"""
    quats = ScipyRotation.from_matrix(np.array([s.rotation.matrix for s in states])).as_quat()  # x, y, z, w
    quats = np.where(quats[:, 3:4] < 0.0, -quats, quats)
    positions = np.array([s.position for s in states])
    velocities = np.array([s.velocity for s in states])
    return pd.DataFrame({
        "t": np.asarray(times, dtype=float),
        "qw": quats[:, 3], "qx": quats[:, 0], "qy": quats[:, 1], "qz": quats[:, 2],
        "px": positions[:, 0], "py": positions[:, 1], "pz": positions[:, 2],
        "vx": velocities[:, 0], "vy": velocities[:, 1], "vz": velocities[:, 2],
    })
