# utils/imu_model.py
"""
IMU measurement types, the extended intrinsic model and its compensation.

Forward model:
    accel_raw = S_a M_a a + b_a + n_a
    gyro_raw  = S_w M_w C_w w + A_w a + b_w + n_w

Compensation inverts it up to bias and noise, which stay in the compensated
frame and are estimated downstream.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from infra.errors import IntegrationError, IntrinsicsError
from utils.lie_core import Rotation3

logger = logging.getLogger(__name__)

MAX_INTRINSICS_CONDITION = 1e3


def _vec3(value) -> np.ndarray:
    out = np.array(value, dtype=float).reshape(3)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RawImuMeasurement:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", _vec3(self.gyro))
        object.__setattr__(self, "accel", _vec3(self.accel))


@dataclass(frozen=True)
class CompensatedImuMeasurement:
    """Biased but scale-correct, skew-free sample held constant for dt_to_next."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray
    dt_to_next: float

    def __post_init__(self):
        object.__setattr__(self, "gyro", _vec3(self.gyro))
        object.__setattr__(self, "accel", _vec3(self.accel))


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "gyro", _vec3(self.gyro))
        object.__setattr__(self, "accel", _vec3(self.accel))
        if not (np.all(np.isfinite(self.gyro)) and np.all(np.isfinite(self.accel))):
            raise ValueError("ImuBias must be finite")

    @classmethod
    def zero(cls) -> "ImuBias":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v) -> "ImuBias":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])

    def __add__(self, other: "ImuBias") -> "ImuBias":
        return ImuBias(self.gyro + other.gyro, self.accel + other.accel)

    def __sub__(self, other: "ImuBias") -> "ImuBias":
        return ImuBias(self.gyro - other.gyro, self.accel - other.accel)


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities plus the nominal sample rate."""

    sigma_g: float
    sigma_a: float
    sigma_bg: float
    sigma_ba: float
    rate: float

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba", "rate"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise IntrinsicsError(f"ImuNoise.{name} must be strictly positive, got {value}")

    @property
    def nominal_dt(self) -> float:
        return 1.0 / self.rate


def _is_lower_unitriangular(m: np.ndarray) -> bool:
    return np.allclose(np.diag(m), 1.0, rtol=0.0, atol=1e-12) and np.allclose(np.triu(m, 1), 0.0, rtol=0.0, atol=0.0)


@dataclass(frozen=True)
class ImuIntrinsics:
    S_alpha: np.ndarray
    M_alpha: np.ndarray
    S_omega: np.ndarray
    M_omega: np.ndarray
    A_omega: np.ndarray
    C_omega: Rotation3

    def __post_init__(self):
        for name in ("S_alpha", "M_alpha", "S_omega", "M_omega", "A_omega"):
            m = np.array(getattr(self, name), dtype=float).reshape(3, 3)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if not isinstance(self.C_omega, Rotation3):
            object.__setattr__(self, "C_omega", Rotation3.from_matrix(self.C_omega, tol=1e-9))

        for name in ("S_alpha", "S_omega"):
            s = getattr(self, name)
            if np.any(s - np.diag(np.diag(s))) or np.any(np.diag(s) <= 0.0):
                raise IntrinsicsError(f"{name} must be diagonal with strictly positive entries")
        for name in ("M_alpha", "M_omega"):
            if not _is_lower_unitriangular(getattr(self, name)):
                raise IntrinsicsError(f"{name} must be lower unitriangular")
        if self.C_omega.orthonormality_error() > 1e-9:
            raise IntrinsicsError("C_omega must be orthonormal")

        for name, sm in (("accelerometer", self.SM_alpha), ("gyroscope", self.SM_omega)):
            cond = np.linalg.cond(sm)
            if not cond < MAX_INTRINSICS_CONDITION:
                raise IntrinsicsError(f"{name} S*M condition number {cond:.3e} exceeds {MAX_INTRINSICS_CONDITION:.0e}")

    @classmethod
    def identity(cls) -> "ImuIntrinsics":
        """Bias-and-noise-only IMU model"""
        eye = np.eye(3)
        return cls(eye, eye, eye, eye, np.zeros((3, 3)), Rotation3.identity())

    @property
    def SM_alpha(self) -> np.ndarray:
        return self.S_alpha @ self.M_alpha

    @property
    def SM_omega(self) -> np.ndarray:
        return self.S_omega @ self.M_omega


def apply_intrinsics(true_gyro, true_accel, intrinsics: ImuIntrinsics, bias: ImuBias,
                     noise_sample: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                     t: float = 0.0) -> RawImuMeasurement:
    """Forward model; noise_sample is (n_gyro, n_accel) or None for noise-free."""
    w = np.asarray(true_gyro, dtype=float)
    a = np.asarray(true_accel, dtype=float)
    n_g, n_a = (np.zeros(3), np.zeros(3)) if noise_sample is None else noise_sample

    accel_raw = intrinsics.SM_alpha @ a + bias.accel + n_a
    gyro_raw = intrinsics.SM_omega @ (intrinsics.C_omega.matrix @ w) + intrinsics.A_omega @ a + bias.gyro + n_g
    return RawImuMeasurement(t, gyro_raw, accel_raw)


def compensate(raw: RawImuMeasurement, intrinsics: ImuIntrinsics, dt_to_next: float) -> CompensatedImuMeasurement:
    accel = np.linalg.solve(intrinsics.SM_alpha, raw.accel)
    gyro = intrinsics.C_omega.matrix.T @ np.linalg.solve(intrinsics.SM_omega, raw.gyro - intrinsics.A_omega @ accel)
    return CompensatedImuMeasurement(raw.t, gyro, accel, dt_to_next)


def compensate_stream(raws: Sequence[RawImuMeasurement], intrinsics: ImuIntrinsics,
                      rate: float) -> List[CompensatedImuMeasurement]:
    """Compensate a batch; dt_to_next from consecutive stamps, nominal 1/rate for the last one."""
    out = []
    for k, raw in enumerate(raws):
        dt = raws[k + 1].t - raw.t if k + 1 < len(raws) else 1.0 / rate
        if not dt > 0.0:
            raise IntegrationError(f"Non-increasing IMU timestamps at sample {k} (t={raw.t})")
        out.append(compensate(raw, intrinsics, dt))
    return out


def compensated_bias(bias: ImuBias, intrinsics: ImuIntrinsics) -> ImuBias:
    """Raw-frame bias expressed in the compensated frame (what the estimator sees)."""
    accel = np.linalg.solve(intrinsics.SM_alpha, bias.accel)
    gyro = intrinsics.C_omega.matrix.T @ np.linalg.solve(intrinsics.SM_omega, bias.gyro - intrinsics.A_omega @ accel)
    return ImuBias(gyro, accel)


def discrete_noise_covariance(noise: ImuNoise, dt: float) -> np.ndarray:
    """12x12 diagonal over (n_gyro, n_accel, tau_gyro, tau_accel), each sigma^2 / dt."""
    if not dt > 0.0:
        raise ValueError(f"discrete_noise_covariance needs dt > 0, got {dt}")
    densities = np.repeat([noise.sigma_g, noise.sigma_a, noise.sigma_bg, noise.sigma_ba], 3)
    return np.diag(densities ** 2 / dt)
