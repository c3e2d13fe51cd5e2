# config/settings.py
import copy
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from infra.errors import ConfigError
from services.estimator import GaugePolicy, SolverConfig
from services.simulation import AnalyticTrajectory, SimScenario, default_rig, mono_rig
from utils.imu_model import ImuBias, ImuIntrinsics, ImuNoise
from utils.lie_core import Rotation3, so3_exp
from utils.preintegration import IntegrationMode
from utils.residuals import CameraRig, PinholeCamera

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RIG_PRESETS = {"quad": default_rig, "mono": mono_rig}
DEFAULT_OUTPUT_DIR = "runs/latest"


@dataclass(frozen=True)
class BenchSettings:
    rates: Tuple[float, ...]
    horizons: Tuple[float, ...]
    imu_rate: float
    substeps: int
    rotation_axis: np.ndarray
    specific_force: np.ndarray


@dataclass(frozen=True)
class ConsistencySettings:
    trials: int
    duration: float
    imu_rate: float
    confidence: float
    scenarios: Tuple[str, ...]
    rotation_peak_rate: float
    injected_noise_scale: float
    b_inflation: float


@dataclass(frozen=True)
class EstimateSettings:
    mode: IntegrationMode
    ate_bound: float
    divergence_bound: float


class RunConfig:
    """
    Run configuration loader
    Loads one YAML (or JSON) file and deep-merges it over the built-in defaults
    """

    def __init__(self, config_path: Optional[str] = None, seed_override: Optional[int] = None,
                 out_override: Optional[str] = None):
        self.config_path = config_path
        self._seed_override = seed_override
        self._out_override = out_override
        self._config: Dict[str, Any] = {}
        self._load_config()

    def _load_config(self):
        """Load configuration from file over the defaults"""
        config = self._get_default_config()
        if self.config_path:
            try:
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    loaded = yaml.safe_load(f) or {}
            except FileNotFoundError as e:
                raise ConfigError(f"Config file not found: {self.config_path}") from e
            except yaml.YAMLError as e:
                raise ConfigError(f"Config parsing error in {self.config_path}: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigError(f"Config root in {self.config_path} must be a mapping")
            self._deep_merge(config, loaded)

        if self._seed_override is not None:
            config['seed'] = int(self._seed_override)
        if self._out_override is not None:
            config['output_dir'] = str(self._out_override)
        self._config = config

        issues = self.validate_config()
        if issues:
            raise ConfigError("Invalid configuration: " + "; ".join(issues))
        logger.info(f"Loaded run config v{self.schema_version} from {self.config_path or '<defaults>'} (seed {self.seed})")

    def _deep_merge(self, base: Dict, overrides: Dict):
        """Deep merge override values into base config"""
        for key, value in overrides.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._deep_merge(base[key], value)
            else:
                base[key] = value

    @staticmethod
    def _get_default_config() -> Dict:
        """Built-in defaults: the frozen-seed noisy scenario"""
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": 42,
            "output_dir": DEFAULT_OUTPUT_DIR,
            "gravity": [0.0, 0.0, -9.81],
            "imu": {
                "rate": 200.0,
                "sigma_g": 1.6968e-4,
                "sigma_a": 2.0e-3,
                "sigma_bg": 1.9393e-5,
                "sigma_ba": 3.0e-3,
            },
            "intrinsics": {
                "scale_accel": [1.002, 0.998, 1.001],
                "misalignment_accel": [0.001, -0.0005, 0.0008],
                "scale_gyro": [0.999, 1.0015, 1.0005],
                "misalignment_gyro": [-0.0007, 0.0004, 0.0012],
                "g_sensitivity": [[1.0e-4, 0.0, 0.0], [0.0, -1.0e-4, 0.0], [0.0, 0.0, 5.0e-5]],
                "gyro_rotation": [0.001, -0.002, 0.0015],
            },
            "trajectory": {
                "p0": [0.0, 0.0, 0.0],
                "amplitude": [1.5, 1.0, 0.3],
                "frequency": [0.6, 0.9, 1.2],
                "phase": [0.0, float(np.pi / 2), 0.0],
                "rot_axis": [0.2, 0.3, 1.0],
                "rot_amplitude": 1.0,
                "rot_frequency": 3.0,
            },
            "scenario": {
                "duration": 10.0,
                "keyframe_interval": 0.2,
                "initial_bias": {"gyro": [0.002, -0.001, 0.0015], "accel": [0.02, -0.03, 0.01]},
                "landmark_count": 400,
                "landmark_radii": [2.0, 10.0],
                "pixel_sigma": 1.0,
                "outlier_fraction": 0.0,
                "noise_free": False,
            },
            "rig": {"preset": "quad"},
            "solver": {"gauge": "pose"},
            "bench": {
                "rates": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
                "horizons": [0.1, 0.5, 1.0, 2.0],
                "imu_rate": 200.0,
                "substeps": 10000,
                "rotation_axis": [1.0, 2.0, 3.0],
                "specific_force": [0.5, -0.3, 9.81],
            },
            "consistency": {
                "trials": 500,
                "duration": 1.0,
                "imu_rate": 200.0,
                "confidence": 0.99,
                "scenarios": ["translation", "rotation"],
                "rotation_peak_rate": 3.0,
                "injected_noise_scale": 1.0,
                "b_inflation": 1.0,
            },
            "estimate": {
                "mode": "exact",
                "ate_bound": 0.1,
                "divergence_bound": 1.0,
            },
            "parallel": {"n_jobs": 1},
        }

    @property
    def schema_version(self) -> int:
        return int(self._config.get('schema_version', SCHEMA_VERSION))

    @property
    def seed(self) -> int:
        return int(self._config['seed'])

    @property
    def output_dir(self) -> Path:
        return Path(self._config['output_dir'])

    @property
    def gravity(self) -> np.ndarray:
        return np.array(self._config['gravity'], dtype=float)

    @property
    def n_jobs(self) -> int:
        """Worker count; PREINT_N_JOBS takes precedence over parallel.n_jobs"""
        env = os.getenv('PREINT_N_JOBS')
        if env:
            try:
                return int(env)
            except ValueError:
                logger.warning(f"Ignoring non-integer PREINT_N_JOBS={env!r}")
        return int(self._config.get('parallel', {}).get('n_jobs', 1))

    def section(self, name: str) -> Dict:
        return copy.deepcopy(self._config.get(name, {}))

    # Model pieces
    def noise(self, rate: Optional[float] = None) -> ImuNoise:
        imu = self._config['imu']
        return ImuNoise(float(imu['sigma_g']), float(imu['sigma_a']), float(imu['sigma_bg']), float(imu['sigma_ba']),
                        float(rate if rate is not None else imu['rate']))

    def intrinsics(self) -> ImuIntrinsics:
        cfg = self._config['intrinsics']
        return ImuIntrinsics(
            S_alpha=np.diag(cfg['scale_accel']),
            M_alpha=_unitriangular(cfg['misalignment_accel']),
            S_omega=np.diag(cfg['scale_gyro']),
            M_omega=_unitriangular(cfg['misalignment_gyro']),
            A_omega=np.array(cfg['g_sensitivity'], dtype=float),
            C_omega=so3_exp(cfg['gyro_rotation']),
        )

    def trajectory(self) -> AnalyticTrajectory:
        cfg = self._config['trajectory']
        return AnalyticTrajectory(
            p0=np.array(cfg['p0'], dtype=float),
            amplitude=np.array(cfg['amplitude'], dtype=float),
            frequency=np.array(cfg['frequency'], dtype=float),
            phase=np.array(cfg['phase'], dtype=float),
            rot_axis=np.array(cfg['rot_axis'], dtype=float),
            rot_amplitude=float(cfg['rot_amplitude']),
            rot_frequency=float(cfg['rot_frequency']),
        )

    def rig(self) -> CameraRig:
        cfg = self._config['rig']
        if 'cameras' in cfg:
            return CameraRig(tuple(
                PinholeCamera(
                    so3_exp(cam['rotation']) if np.size(cam['rotation']) == 3 else Rotation3.from_matrix(cam['rotation'], tol=1e-9),
                    np.array(cam['translation'], dtype=float),
                    float(cam['fx']), float(cam['fy']), float(cam['cx']), float(cam['cy']),
                    int(cam['width']), int(cam['height']),
                )
                for cam in cfg['cameras']
            ))
        return RIG_PRESETS[cfg.get('preset', 'quad')]()

    def scenario(self) -> SimScenario:
        cfg = self._config['scenario']
        bias = cfg['initial_bias']
        rate = float(self._config['imu']['rate'])
        try:
            return SimScenario(
                trajectory=self.trajectory(),
                imu_rate=rate,
                duration=float(cfg['duration']),
                keyframe_interval=float(cfg['keyframe_interval']),
                noise=self.noise(rate),
                intrinsics=self.intrinsics(),
                initial_bias=ImuBias(bias['gyro'], bias['accel']),
                rig=self.rig(),
                landmark_count=int(cfg['landmark_count']),
                pixel_sigma=float(cfg['pixel_sigma']),
                seed=self.seed,
                gravity=self.gravity,
                noise_free=bool(cfg['noise_free']),
                landmark_radii=tuple(float(r) for r in cfg['landmark_radii']),
                outlier_fraction=float(cfg['outlier_fraction']),
            )
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"Invalid scenario: {e}") from e

    def solver(self) -> SolverConfig:
        cfg = self.section('solver')
        try:
            cfg['gauge'] = GaugePolicy(cfg.get('gauge', 'pose'))
            return SolverConfig(**cfg)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid solver section: {e}") from e

    def bench(self) -> BenchSettings:
        cfg = self._config['bench']
        return BenchSettings(
            rates=tuple(float(r) for r in cfg['rates']),
            horizons=tuple(float(h) for h in cfg['horizons']),
            imu_rate=float(cfg['imu_rate']),
            substeps=int(cfg['substeps']),
            rotation_axis=np.array(cfg['rotation_axis'], dtype=float),
            specific_force=np.array(cfg['specific_force'], dtype=float),
        )

    def consistency(self) -> ConsistencySettings:
        cfg = self._config['consistency']
        return ConsistencySettings(
            trials=int(cfg['trials']),
            duration=float(cfg['duration']),
            imu_rate=float(cfg['imu_rate']),
            confidence=float(cfg['confidence']),
            scenarios=tuple(cfg['scenarios']),
            rotation_peak_rate=float(cfg['rotation_peak_rate']),
            injected_noise_scale=float(cfg['injected_noise_scale']),
            b_inflation=float(cfg['b_inflation']),
        )

    def estimate(self) -> EstimateSettings:
        cfg = self._config['estimate']
        return EstimateSettings(
            mode=IntegrationMode(cfg['mode']),
            ate_bound=float(cfg['ate_bound']),
            divergence_bound=float(cfg['divergence_bound']),
        )

    def reload_config(self):
        self._load_config()

    def validate_config(self) -> List[str]:
        """Validate configuration and return list of issues"""
        issues = []
        cfg = self._config

        if cfg.get('schema_version') != SCHEMA_VERSION:
            issues.append(f"Unsupported schema_version {cfg.get('schema_version')} (expected {SCHEMA_VERSION})")
        if not isinstance(cfg.get('seed'), (int, np.integer)) or isinstance(cfg.get('seed'), bool):
            issues.append(f"seed must be an integer, got {cfg.get('seed')!r}")
        if np.shape(cfg.get('gravity')) != (3,):
            issues.append("gravity must be a 3-vector")

        imu = cfg.get('imu', {})
        for key in ('rate', 'sigma_g', 'sigma_a', 'sigma_bg', 'sigma_ba'):
            value = imu.get(key)
            if not isinstance(value, (int, float)) or value <= 0:
                issues.append(f"imu.{key} must be a positive number")

        intr = cfg.get('intrinsics', {})
        for key in ('scale_accel', 'misalignment_accel', 'scale_gyro', 'misalignment_gyro', 'gyro_rotation'):
            if np.shape(intr.get(key)) != (3,):
                issues.append(f"intrinsics.{key} must have 3 entries")
        if np.shape(intr.get('g_sensitivity')) != (3, 3):
            issues.append("intrinsics.g_sensitivity must be 3x3")

        rig = cfg.get('rig', {})
        if 'cameras' not in rig and rig.get('preset', 'quad') not in RIG_PRESETS:
            issues.append(f"rig.preset must be one of {sorted(RIG_PRESETS)}")
        elif 'cameras' in rig and not rig['cameras']:
            issues.append("rig.cameras must list at least one camera")

        solver_fields = set(SolverConfig.__dataclass_fields__)
        unknown = set(cfg.get('solver', {})) - solver_fields
        if unknown:
            issues.append(f"Unknown solver keys: {sorted(unknown)}")

        scenarios = cfg.get('consistency', {}).get('scenarios', [])
        bad = [s for s in scenarios if s not in ('translation', 'rotation')]
        if bad:
            issues.append(f"Unknown consistency scenarios: {bad}")
        if cfg.get('estimate', {}).get('mode') not in ('exact', 'euler'):
            issues.append("estimate.mode must be 'exact' or 'euler'")
        if cfg.get('bench', {}).get('substeps', 0) < 1:
            issues.append("bench.substeps must be >= 1")

        return issues


def _unitriangular(lower: List[float]) -> np.ndarray:
    """[m21, m31, m32] -> lower unitriangular 3x3"""
    m = np.eye(3)
    m[1, 0], m[2, 0], m[2, 1] = (float(x) for x in lower)
    return m


# Global configuration instance
_config_instance: Optional[RunConfig] = None


def get_config(config_path: Optional[str] = None, seed_override: Optional[int] = None,
               out_override: Optional[str] = None) -> RunConfig:
    """Get global configuration instance (built on first use)"""
    global _config_instance

    if _config_instance is None:
        _config_instance = RunConfig(config_path, seed_override, out_override)

    return _config_instance


def reload_config():
    """Reload global configuration"""
    global _config_instance
    if _config_instance:
        _config_instance.reload_config()
