# utils/residuals.py
"""
Factor layer consumed by the estimator: keyframe state, camera rig, the IMU
pre-integration residual and the multi-camera reprojection residual, with
analytic Jacobians.

Perturbation convention for Jacobians: rotation R <- Exp(dphi) R (left, world
frame); position, velocity, biases and landmarks additive. State tangent order
is (dphi, dp, dv, dbg, dba).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from utils.imu_model import ImuBias
from utils.lie_core import Rotation3, so3_exp, so3_hat, so3_log, so3_right_jacobian, so3_right_jacobian_inverse
from utils.preintegration import PreintegratedImu, bias_corrected_deltas

logger = logging.getLogger(__name__)

Z_MIN = 0.05


def _vec3(value) -> np.ndarray:
    out = np.array(value, dtype=float).reshape(3)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NavState:
    rotation: Rotation3
    position: np.ndarray
    velocity: np.ndarray
    bias: ImuBias

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "velocity", _vec3(self.velocity))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))
                and np.all(np.isfinite(self.rotation.matrix))):
            raise ValueError("NavState must be finite")

    def retract(self, delta) -> "NavState":
        delta = np.asarray(delta, dtype=float)
        return NavState(
            rotation=Rotation3(so3_exp(delta[0:3]).matrix @ self.rotation.matrix),
            position=self.position + delta[3:6],
            velocity=self.velocity + delta[6:9],
            bias=ImuBias(self.bias.gyro + delta[9:12], self.bias.accel + delta[12:15]),
        )

    def transformed(self, world_rotation: Rotation3, translation) -> "NavState":
        """Same body motion seen from another world frame: x' = (Q R, Q p + t, Q v)."""
        q = world_rotation.matrix
        return replace(
            self,
            rotation=Rotation3(q @ self.rotation.matrix),
            position=q @ self.position + np.asarray(translation, dtype=float),
            velocity=q @ self.velocity,
        )


class CameraModel(ABC):
    """Projection interface; pose and extrinsics handling live in the residual code."""

    width: int
    height: int

    @abstractmethod
    def project_point(self, p_c: np.ndarray) -> Optional[np.ndarray]:
        """Pixel of a camera-frame point, or None when not visible"""

    @abstractmethod
    def projection_jacobian(self, p_c: np.ndarray) -> np.ndarray:
        """2x3 derivative of the pixel w.r.t. the camera-frame point"""

    @abstractmethod
    def back_project(self, pixel: np.ndarray) -> np.ndarray:
        """Unit bearing in the camera frame"""

    def in_image(self, pixel: np.ndarray) -> bool:
        return 0.0 <= pixel[0] < self.width and 0.0 <= pixel[1] < self.height


@dataclass(frozen=True)
class PinholeCamera(CameraModel):
    extrinsic_rotation: Rotation3  # R_bc: camera axes in the body frame
    extrinsic_translation: np.ndarray  # t_bc: camera centre in the body frame (m)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "extrinsic_translation", _vec3(self.extrinsic_translation))
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("Focal lengths must be positive")
        if self.extrinsic_rotation.orthonormality_error() > 1e-9:
            raise ValueError("Camera extrinsic rotation is not orthonormal")

    def project_point(self, p_c: np.ndarray) -> Optional[np.ndarray]:
        if p_c[2] <= Z_MIN:
            return None
        pixel = np.array([self.fx * p_c[0] / p_c[2] + self.cx, self.fy * p_c[1] / p_c[2] + self.cy])
        return pixel if self.in_image(pixel) else None

    def projection_jacobian(self, p_c: np.ndarray) -> np.ndarray:
        x, y, z = p_c
        return np.array([
            [self.fx / z, 0.0, -self.fx * x / (z * z)],
            [0.0, self.fy / z, -self.fy * y / (z * z)],
        ])

    def back_project(self, pixel: np.ndarray) -> np.ndarray:
        ray = np.array([(pixel[0] - self.cx) / self.fx, (pixel[1] - self.cy) / self.fy, 1.0])
        return ray / np.linalg.norm(ray)


@dataclass(frozen=True)
class CameraRig:
    cameras: Tuple[CameraModel, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ValueError("CameraRig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)

    def camera_center(self, k: int, pose) -> np.ndarray:
        return pose.rotation.matrix @ self.cameras[k].extrinsic_translation + pose.position

    def camera_rotation(self, k: int, pose) -> np.ndarray:
        return pose.rotation.matrix @ self.cameras[k].extrinsic_rotation.matrix


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))


@dataclass(frozen=True)
class Observation:
    frame_id: int
    camera_index: int
    landmark_id: int
    pixel: np.ndarray
    sigma_px: float
    image_size: Optional[Tuple[int, int]] = field(default=None, compare=False)  # (width, height) when known

    def __post_init__(self):
        pixel = np.array(self.pixel, dtype=float).reshape(2)
        pixel.setflags(write=False)
        object.__setattr__(self, "pixel", pixel)
        if not self.sigma_px > 0.0:
            raise ValueError(f"sigma_px must be positive, got {self.sigma_px}")
        if self.image_size is not None:
            width, height = self.image_size
            if not (np.all(np.isfinite(pixel)) and 0.0 <= pixel[0] < width and 0.0 <= pixel[1] < height):
                raise ValueError(f"Pixel {pixel.tolist()} outside the {width}x{height} image")

    @classmethod
    def in_camera(cls, camera: CameraModel, frame_id: int, camera_index: int, landmark_id: int, pixel,
                  sigma_px: float) -> "Observation":
        return cls(frame_id, camera_index, landmark_id, pixel, sigma_px, (camera.width, camera.height))


def imu_residual(x_i: NavState, x_j: NavState, p: PreintegratedImu, g) -> np.ndarray:
    """(e_R, e_p, e_v, e_bg, e_ba), pre-integrated estimate minus the state-implied value."""
    g = np.asarray(g, dtype=float)
    T = p.delta_t
    delta_R, delta_p, delta_v = bias_corrected_deltas(p, x_i.bias)
    R_i = x_i.rotation.matrix
    e_R = so3_log(x_j.rotation.matrix.T @ R_i @ delta_R.matrix)
    e_p = delta_p - R_i.T @ (x_j.position - x_i.position - T * x_i.velocity - 0.5 * T * T * g)
    e_v = delta_v - R_i.T @ (x_j.velocity - x_i.velocity - T * g)
    e_bg = x_j.bias.gyro - x_i.bias.gyro
    e_ba = x_j.bias.accel - x_i.bias.accel
    return np.concatenate([e_R, e_p, e_v, e_bg, e_ba])


def imu_residual_jacobians(x_i: NavState, x_j: NavState, p: PreintegratedImu, g) -> Tuple[np.ndarray, np.ndarray]:
    """15x15 derivatives of imu_residual w.r.t. the tangents of x_i and x_j."""
    g = np.asarray(g, dtype=float)
    T = p.delta_t
    dbg = x_i.bias.gyro - p.bias_lin.gyro
    delta_R, _, _ = bias_corrected_deltas(p, x_i.bias)
    R_i = x_i.rotation.matrix
    R_i_dR = R_i @ delta_R.matrix
    e_R = so3_log(x_j.rotation.matrix.T @ R_i_dR)
    jr_inv = so3_right_jacobian_inverse(e_R)
    w = x_j.position - x_i.position - T * x_i.velocity - 0.5 * T * T * g
    u = x_j.velocity - x_i.velocity - T * g
    I3 = np.eye(3)

    J_i = np.zeros((15, 15))
    J_i[0:3, 0:3] = jr_inv @ R_i_dR.T
    J_i[0:3, 9:12] = jr_inv @ so3_right_jacobian(p.jac_dR_dbg @ dbg) @ p.jac_dR_dbg
    J_i[3:6, 0:3] = -R_i.T @ so3_hat(w)
    J_i[3:6, 3:6] = R_i.T
    J_i[3:6, 6:9] = T * R_i.T
    J_i[3:6, 9:12] = p.jac_dp_dbg
    J_i[3:6, 12:15] = p.jac_dp_dba
    J_i[6:9, 0:3] = -R_i.T @ so3_hat(u)
    J_i[6:9, 6:9] = R_i.T
    J_i[6:9, 9:12] = p.jac_dv_dbg
    J_i[6:9, 12:15] = p.jac_dv_dba
    J_i[9:12, 9:12] = -I3
    J_i[12:15, 12:15] = -I3

    J_j = np.zeros((15, 15))
    J_j[0:3, 0:3] = -jr_inv @ R_i_dR.T
    J_j[3:6, 3:6] = -R_i.T
    J_j[6:9, 6:9] = -R_i.T
    J_j[9:12, 9:12] = I3
    J_j[12:15, 12:15] = I3
    return J_i, J_j


def _to_camera(rig: CameraRig, k: int, pose, p_n) -> np.ndarray:
    camera = rig.cameras[k]
    p_b = pose.rotation.matrix.T @ (np.asarray(p_n, dtype=float) - pose.position)
    return camera.extrinsic_rotation.matrix.T @ (p_b - camera.extrinsic_translation)


def project(rig: CameraRig, k: int, T_world_body, p_n) -> Optional[np.ndarray]:
    """Pixel of world point p_n in camera k of a rig at body pose (rotation, position); None if not visible."""
    if not 0 <= k < len(rig):
        raise IndexError(f"Camera index {k} out of range for a {len(rig)}-camera rig")
    return rig.cameras[k].project_point(_to_camera(rig, k, T_world_body, p_n))


def project_with_jacobians(rig: CameraRig, k: int, T_world_body, p_n):
    """
    (pixel, d pixel / d(dphi, dp) [2x6], d pixel / d p_n [2x3]) or None if not visible.
    """
    camera = rig.cameras[k]
    R = T_world_body.rotation.matrix
    d = np.asarray(p_n, dtype=float) - T_world_body.position
    p_c = _to_camera(rig, k, T_world_body, p_n)
    pixel = camera.project_point(p_c)
    if pixel is None:
        return None
    dpix_db = camera.projection_jacobian(p_c) @ camera.extrinsic_rotation.matrix.T
    jac_pose = np.hstack([dpix_db @ R.T @ so3_hat(d), -dpix_db @ R.T])
    jac_point = dpix_db @ R.T
    return pixel, jac_pose, jac_point


def reprojection_residual(obs: Observation, rig: CameraRig, x_i: NavState, lm: Landmark) -> Optional[np.ndarray]:
    pixel = project(rig, obs.camera_index, x_i, lm.position)
    if pixel is None:
        return None
    return (obs.pixel - pixel) / obs.sigma_px


def reprojection_residuals_batch(rig: CameraRig, camera_index: np.ndarray, pixels: np.ndarray, sigmas: np.ndarray,
                                 body_rotations: np.ndarray, body_positions: np.ndarray, points: np.ndarray):
    """
    Vectorized whitened reprojection residuals for pinhole rigs.

    Arrays are per observation: camera_index (n,), pixels (n,2), sigmas (n,),
    body_rotations (n,3,3), body_positions (n,3), points (n,3).
    Returns (residuals (n,2), jac_pose (n,2,6), jac_point (n,2,3), visible (n,));
    rows that are not visible are zeroed.
    """
    cams = rig.cameras
    R_bc = np.array([c.extrinsic_rotation.matrix for c in cams])[camera_index]
    t_bc = np.array([c.extrinsic_translation for c in cams])[camera_index]
    fx = np.array([c.fx for c in cams])[camera_index]
    fy = np.array([c.fy for c in cams])[camera_index]
    cx = np.array([c.cx for c in cams])[camera_index]
    cy = np.array([c.cy for c in cams])[camera_index]
    width = np.array([c.width for c in cams])[camera_index]
    height = np.array([c.height for c in cams])[camera_index]

    d = points - body_positions
    p_b = np.einsum("nji,nj->ni", body_rotations, d)
    p_c = np.einsum("nji,nj->ni", R_bc, p_b - t_bc)
    x, y, z = p_c[:, 0], p_c[:, 1], p_c[:, 2]
    visible = z > Z_MIN
    z_safe = np.where(visible, z, 1.0)
    u = fx * x / z_safe + cx
    v = fy * y / z_safe + cy
    visible &= (u >= 0.0) & (u < width) & (v >= 0.0) & (v < height)

    scale = 1.0 / sigmas
    residuals = (pixels - np.stack([u, v], axis=1)) * scale[:, None]

    dproj = np.zeros((len(x), 2, 3))
    dproj[:, 0, 0] = fx / z_safe
    dproj[:, 0, 2] = -fx * x / z_safe ** 2
    dproj[:, 1, 1] = fy / z_safe
    dproj[:, 1, 2] = -fy * y / z_safe ** 2
    # d residual / d p_b, whitened: -(1/sigma) dproj R_bc^T
    dres_db = -scale[:, None, None] * np.einsum("nik,njk->nij", dproj, R_bc)
    dres_dworld = np.einsum("nik,njk->nij", dres_db, body_rotations)  # dres_db @ R^T

    d_hat = np.zeros((len(x), 3, 3))
    d_hat[:, 0, 1], d_hat[:, 0, 2] = -d[:, 2], d[:, 1]
    d_hat[:, 1, 0], d_hat[:, 1, 2] = d[:, 2], -d[:, 0]
    d_hat[:, 2, 0], d_hat[:, 2, 1] = -d[:, 1], d[:, 0]

    jac_pose = np.concatenate([dres_dworld @ d_hat, -dres_dworld], axis=2)
    jac_point = dres_dworld

    residuals[~visible] = 0.0
    jac_pose[~visible] = 0.0
    jac_point[~visible] = 0.0
    return residuals, jac_pose, jac_point, visible


def huber_weight(whitened_norm: float, delta: float) -> float:
    """IRLS weight of the Huber loss"""
    if whitened_norm <= delta:
        return 1.0
    return delta / whitened_norm


def huber_cost(whitened_norm, delta):
    """Huber rho applied to a squared whitened norm: s^2 inside delta, 2 delta s - delta^2 outside."""
    s = np.asarray(whitened_norm, dtype=float)
    return np.where(s <= delta, s * s, 2.0 * delta * s - delta * delta)
