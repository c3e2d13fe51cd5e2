# utils/lie_core.py
"""
Rotation and extended-pose (SE_2(3)) primitives for exact IMU pre-integration.

Holds the two closed-form exponentials that split the inertial kinematics into
a gravity/time phase (left) and a body-input phase (right), plus the J1/J2
integrals of the rotation exponential with a series branch for small angles.

All values are immutable; every operation is a pure function.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

# dt*theta (or theta) below this switches to Taylor series
SERIES_THRESHOLD = 1e-4
# angle this close to pi uses symmetric-part axis extraction in so3_log
NEAR_PI_THRESHOLD = 1e-6
ORTHONORMALITY_TOL = 1e-12

_I3 = np.eye(3)


def _frozen(array, shape) -> np.ndarray:
    out = np.array(array, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Rotation3:
    """3x3 rotation matrix. Use `from_matrix` to validate external input."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (3, 3)))

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(_I3)

    @classmethod
    def from_matrix(cls, matrix, tol: float = ORTHONORMALITY_TOL) -> "Rotation3":
        rotation = cls(matrix)
        error = rotation.orthonormality_error()
        if error > tol or abs(np.linalg.det(rotation.matrix) - 1.0) > tol:
            raise ValueError(f"Matrix is not a rotation (orthonormality error {error:.3e})")
        return rotation

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.matrix.T @ self.matrix - _I3)))

    def normalized(self) -> "Rotation3":
        """Nearest rotation in the Frobenius sense (explicit re-orthonormalization)."""
        u, _, vt = np.linalg.svd(self.matrix)
        d = np.sign(np.linalg.det(u @ vt))
        return Rotation3(u @ np.diag([1.0, 1.0, d]) @ vt)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    @property
    def T(self) -> np.ndarray:
        return self.matrix.T

    def __matmul__(self, other):
        if isinstance(other, Rotation3):
            return Rotation3(self.matrix @ other.matrix)
        return self.matrix @ np.asarray(other, dtype=float)


RotationLike = Union[Rotation3, np.ndarray]


def _as_matrix(rotation: RotationLike) -> np.ndarray:
    return rotation.matrix if isinstance(rotation, Rotation3) else np.asarray(rotation, dtype=float)


@dataclass(frozen=True)
class ExtendedPose:
    """SE_2(3) element (R, p, v); the 5x5 form is only built on request."""

    rotation: Rotation3
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position, (3,)))
        object.__setattr__(self, "velocity", _frozen(self.velocity, (3,)))

    @classmethod
    def identity(cls) -> "ExtendedPose":
        return cls(Rotation3.identity(), np.zeros(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        xi = np.eye(5)
        xi[:3, :3] = self.rotation.matrix
        xi[:3, 3] = self.position
        xi[:3, 4] = self.velocity
        return xi

    @classmethod
    def from_matrix(cls, xi: np.ndarray) -> "ExtendedPose":
        xi = np.asarray(xi, dtype=float)
        return cls(Rotation3.from_matrix(xi[:3, :3], tol=1e-9), xi[:3, 3], xi[:3, 4])


@dataclass(frozen=True)
class InputPhaseStep:
    """
    Body-input exponential exp(dt(U - B + D)) for constant unbiased inputs.

    As a 5x5 matrix: [[dR, p_column, v_column], [0, 1, 0], [0, dt, 1]].
    """

    rotation_step: Rotation3
    p_column: np.ndarray
    v_column: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "p_column", _frozen(self.p_column, (3,)))
        object.__setattr__(self, "v_column", _frozen(self.v_column, (3,)))

    @classmethod
    def identity(cls) -> "InputPhaseStep":
        return cls(Rotation3.identity(), np.zeros(3), np.zeros(3), 0.0)

    def as_matrix(self) -> np.ndarray:
        phi = np.eye(5)
        phi[:3, :3] = self.rotation_step.matrix
        phi[:3, 3] = self.p_column
        phi[:3, 4] = self.v_column
        phi[4, 3] = self.dt
        return phi


def so3_hat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_vee(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _rodrigues_coefficients(theta: float) -> Tuple[float, float]:
    """sin(t)/t and (1 - cos t)/t^2"""
    if theta < SERIES_THRESHOLD:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    half_sin = np.sin(0.5 * theta)
    return np.sin(theta) / theta, 2.0 * half_sin * half_sin / (theta * theta)


def so3_exp(phi) -> Rotation3:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a, b = _rodrigues_coefficients(theta)
    k = so3_hat(phi)
    return Rotation3(_I3 + a * k + b * (k @ k))


def so3_log(rotation: RotationLike) -> np.ndarray:
    """
    Principal logarithm, norm in [0, pi].

    Near pi the axis comes from the symmetric part: the column of R + I with the
    largest diagonal entry. Its sign is then aligned with vee(R - R^T) when that
    is informative; at exactly pi the extracted column's own sign is kept.
    """
    r = _as_matrix(rotation)
    skew = so3_vee(r - r.T)  # 2 sin(theta) * axis
    cos_theta = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    theta = float(np.arctan2(0.5 * np.linalg.norm(skew), cos_theta))

    if theta < SERIES_THRESHOLD:
        t2 = theta * theta
        return 0.5 * skew / (1.0 - t2 / 6.0 + t2 * t2 / 120.0)

    if np.pi - theta > NEAR_PI_THRESHOLD:
        return theta / (2.0 * np.sin(theta)) * skew

    sym = 0.5 * (r + r.T) - cos_theta * _I3  # (1 - cos theta) * a a^T
    k = int(np.argmax(np.diag(sym)))
    axis = sym[:, k] / np.sqrt(sym[k, k])
    axis /= np.linalg.norm(axis)
    if np.dot(axis, skew) < 0.0:
        axis = -axis
    return theta * axis


def so3_right_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = so3_hat(phi)
    if theta < SERIES_THRESHOLD:
        t2 = theta * theta
        c1 = 0.5 - t2 / 24.0
        c2 = 1.0 / 6.0 - t2 / 120.0
    else:
        half_sin = np.sin(0.5 * theta)
        c1 = 2.0 * half_sin * half_sin / (theta * theta)
        c2 = (theta - np.sin(theta)) / theta ** 3
    return _I3 - c1 * k + c2 * (k @ k)


def so3_right_jacobian_inverse(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = so3_hat(phi)
    if theta < SERIES_THRESHOLD:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return _I3 + 0.5 * k + c * (k @ k)


def se23_compose(a: ExtendedPose, b: ExtendedPose) -> ExtendedPose:
    ra = a.rotation.matrix
    return ExtendedPose(
        Rotation3(ra @ b.rotation.matrix),
        ra @ b.position + a.position,
        ra @ b.velocity + a.velocity,
    )


def se23_inverse(x: ExtendedPose) -> ExtendedPose:
    rt = x.rotation.matrix.T
    return ExtendedPose(Rotation3(rt), -rt @ x.position, -rt @ x.velocity)


def gravity_phase(T: float, g) -> np.ndarray:
    """
    exp(-T (G - D)) as a dense 5x5 matrix.

    Blocks: [[I, -T^2 g / 2, -T g], [0, 1, 0], [0, T, 1]].
    """
    if T < 0.0:
        raise ValueError(f"gravity_phase needs T >= 0, got {T}")
    g = np.asarray(g, dtype=float)
    gamma = np.eye(5)
    gamma[:3, 3] = -0.5 * T * T * g
    gamma[:3, 4] = -T * g
    gamma[4, 3] = T
    return gamma


def jacobian_coefficients(dt: float, theta: float, series: bool) -> Tuple[float, float, float]:
    """
    Coefficients of J1 = dt I + c1 K + c2 K^2 and J2 = dt^2/2 I + c2 K + c3 K^2
    where K = hat(omega), theta = |omega|.
    """
    x = dt * theta
    if series:
        x2 = x * x
        c1 = dt ** 2 * (0.5 - x2 / 24.0 + x2 * x2 / 720.0)
        c2 = dt ** 3 * (1.0 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0)
        c3 = dt ** 4 * (1.0 / 24.0 - x2 / 720.0 + x2 * x2 / 40320.0)
        return c1, c2, c3
    half_sin = np.sin(0.5 * x)
    one_minus_cos = 2.0 * half_sin * half_sin
    c1 = one_minus_cos / theta ** 2
    c2 = (x - np.sin(x)) / theta ** 3
    c3 = (0.5 * x * x - one_minus_cos) / theta ** 4
    return c1, c2, c3


def right_jacobians(dt: float, omega) -> Tuple[np.ndarray, np.ndarray]:
    """
    J1 = int_0^dt exp(s hat(omega)) ds, J2 = int_0^dt int_0^s exp(u hat(omega)) du ds.
    """
    if dt <= 0.0:
        raise ValueError(f"right_jacobians needs dt > 0, got {dt}")
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    c1, c2, c3 = jacobian_coefficients(dt, theta, series=dt * theta < SERIES_THRESHOLD)
    k = so3_hat(omega)
    k2 = k @ k
    j1 = dt * _I3 + c1 * k + c2 * k2
    j2 = 0.5 * dt * dt * _I3 + c2 * k + c3 * k2
    return j1, j2


def input_phase(dt: float, omega_unbiased, accel_unbiased) -> InputPhaseStep:
    omega = np.asarray(omega_unbiased, dtype=float)
    accel = np.asarray(accel_unbiased, dtype=float)
    j1, j2 = right_jacobians(dt, omega)
    return InputPhaseStep(so3_exp(dt * omega), j2 @ accel, j1 @ accel, dt)


def compose_input_phases(a: InputPhaseStep, b: InputPhaseStep) -> InputPhaseStep:
    """5x5 product a*b of two input-phase elements, which stays in the same form."""
    ra = a.rotation_step.matrix
    return InputPhaseStep(
        Rotation3(ra @ b.rotation_step.matrix),
        a.p_column + b.dt * a.v_column + ra @ b.p_column,
        a.v_column + ra @ b.v_column,
        a.dt + b.dt,
    )


def input_phase_power(step: InputPhaseStep, n: int) -> InputPhaseStep:
    """step^n by repeated squaring."""
    if n < 1:
        raise ValueError(f"input_phase_power needs n >= 1, got {n}")
    result = None
    base = step
    while n:
        if n & 1:
            result = base if result is None else compose_input_phases(result, base)
        n >>= 1
        if n:
            base = compose_input_phases(base, base)
    return result


def exact_state_step(pose: ExtendedPose, step: InputPhaseStep, g) -> ExtendedPose:
    """
    Advance a world-frame pose through one input-phase element:
    xi+ = exp(T (G - D)) xi Phi, with T = step.dt.
    """
    g = np.asarray(g, dtype=float)
    r = pose.rotation.matrix
    T = step.dt
    return ExtendedPose(
        Rotation3(r @ step.rotation_step.matrix),
        pose.position + T * pose.velocity + 0.5 * T * T * g + r @ step.p_column,
        pose.velocity + T * g + r @ step.v_column,
    )
