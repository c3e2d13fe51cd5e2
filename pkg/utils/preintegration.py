# utils/preintegration.py
"""
Exact IMU pre-integration on SE_2(3): mean, 15x15 error covariance and
first-order bias-correction Jacobians, with an Euler-mode baseline.

Error-state order is (rotation, position, velocity, gyro bias, accel bias).
Rotation error convention: delta_R_hat = delta_R_true * Exp(e_R).
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from infra.errors import CovarianceConditionError, IntegrationError
from utils.imu_model import CompensatedImuMeasurement, ImuBias, ImuNoise, discrete_noise_covariance
from utils.lie_core import (
    Rotation3,
    SERIES_THRESHOLD,
    jacobian_coefficients,
    right_jacobians,
    so3_exp,
    so3_hat,
    so3_right_jacobian,
)

logger = logging.getLogger(__name__)

# dt*|omega| below this evaluates dJ/domega with series coefficients
DERIVATIVE_SERIES_THRESHOLD = 0.05
BIAS_CORRECTION_RADIUS = 0.05
REGULARIZATION_SCALE = 1e-12
MAX_CONDITION = 1e14
PSD_TOLERANCE = -1e-10

_I3 = np.eye(3)
R_, P_, V_, BG_, BA_ = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


class IntegrationMode(Enum):
    EXACT = "exact"
    EULER = "euler"


@dataclass(frozen=True)
class PreintegratedImu:
    delta_R: Rotation3
    delta_p: np.ndarray
    delta_v: np.ndarray
    delta_t: float
    bias_lin: ImuBias
    cov: np.ndarray
    jac_dR_dbg: np.ndarray
    jac_dp_dbg: np.ndarray
    jac_dp_dba: np.ndarray
    jac_dv_dbg: np.ndarray
    jac_dv_dba: np.ndarray
    mode: IntegrationMode
    noise: ImuNoise
    b_inflation: float = 1.0  # debug: scales B to inject covariance faults

    def check_invariants(self, tol: float = 1e-12):
        asym = float(np.max(np.abs(self.cov - self.cov.T)))
        if asym > tol:
            raise AssertionError(f"covariance asymmetric by {asym:.3e}")
        min_eig = float(np.linalg.eigvalsh(self.cov).min())
        if min_eig < -tol:
            raise AssertionError(f"covariance has eigenvalue {min_eig:.3e}")
        if self.delta_R.orthonormality_error() > tol:
            raise AssertionError("delta_R lost orthonormality")


def new_preintegration(bias_lin: ImuBias, noise: ImuNoise, mode: IntegrationMode = IntegrationMode.EXACT,
                       b_inflation: float = 1.0) -> PreintegratedImu:
    zero3 = np.zeros((3, 3))
    return PreintegratedImu(
        delta_R=Rotation3.identity(),
        delta_p=np.zeros(3),
        delta_v=np.zeros(3),
        delta_t=0.0,
        bias_lin=bias_lin,
        cov=np.zeros((15, 15)),
        jac_dR_dbg=zero3,
        jac_dp_dbg=zero3,
        jac_dp_dba=zero3,
        jac_dv_dbg=zero3,
        jac_dv_dba=zero3,
        mode=mode,
        noise=noise,
        b_inflation=b_inflation,
    )


def jacobian_derivatives(dt: float, omega, accel) -> Tuple[np.ndarray, np.ndarray]:
    """
    d(J1 a)/d(omega) and d(J2 a)/d(omega) for fixed a.

    With K = hat(omega): J1 a = dt a + c1 K a + c2 K^2 a and
    J2 a = dt^2/2 a + c2 K a + c3 K^2 a, so each derivative is
        -c hat(a) - c' (hat(K a) + K hat(a)) + (K a) dc/domega + (K^2 a) dc'/domega.
    Series coefficients below DERIVATIVE_SERIES_THRESHOLD, closed forms above.
    """
    omega = np.asarray(omega, dtype=float)
    a = np.asarray(accel, dtype=float)
    theta = float(np.linalg.norm(omega))
    x = dt * theta
    c1, c2, c3 = jacobian_coefficients(dt, theta, series=x < SERIES_THRESHOLD)

    # (dc/dtheta) / theta, so that dc/domega = (...) * omega^T
    if x < DERIVATIVE_SERIES_THRESHOLD:
        t2 = theta * theta
        g1 = -dt ** 4 / 12.0 + dt ** 6 * t2 / 180.0
        g2 = -dt ** 5 / 60.0 + dt ** 7 * t2 / 1260.0
        g3 = -dt ** 6 / 360.0 + dt ** 8 * t2 / 10080.0
    else:
        s, c = np.sin(x), np.cos(x)
        g1 = (dt * s / theta ** 2 - 2.0 * (1.0 - c) / theta ** 3) / theta
        g2 = (dt * (1.0 - c) / theta ** 3 - 3.0 * (x - s) / theta ** 4) / theta
        g3 = ((dt * dt * theta - dt * s) / theta ** 4 - 4.0 * (0.5 * x * x + c - 1.0) / theta ** 5) / theta

    k = so3_hat(omega)
    ka = k @ a
    kka = k @ ka
    a_hat = so3_hat(a)
    d_ka = -a_hat
    d_kka = -(so3_hat(ka) + k @ a_hat)

    d_j1a = c1 * d_ka + c2 * d_kka + g1 * np.outer(ka, omega) + g2 * np.outer(kka, omega)
    d_j2a = c2 * d_ka + c3 * d_kka + g2 * np.outer(ka, omega) + g3 * np.outer(kka, omega)
    return d_j1a, d_j2a


def _step_jacobians(mode: IntegrationMode, dt: float, omega, accel):
    if mode is IntegrationMode.EULER:
        zero = np.zeros((3, 3))
        return dt * _I3, 0.5 * dt * dt * _I3, zero, zero
    j1, j2 = right_jacobians(dt, omega)
    d_j1a, d_j2a = jacobian_derivatives(dt, omega, accel)
    return j1, j2, d_j1a, d_j2a


def _checked_step(p: PreintegratedImu, m: CompensatedImuMeasurement, dt: float = None) -> Tuple[float, np.ndarray, np.ndarray]:
    delta = m.dt_to_next if dt is None else dt
    if not delta > 0.0:
        raise IntegrationError(f"Cannot integrate non-positive dt {delta} at t={m.t}")
    if not (np.all(np.isfinite(m.gyro)) and np.all(np.isfinite(m.accel))):
        raise IntegrationError(f"Non-finite IMU measurement at t={m.t}")
    return delta, m.gyro - p.bias_lin.gyro, m.accel - p.bias_lin.accel


def _transition(p: PreintegratedImu, delta: float, dR_step, j1, j2, j1a, j2a, d_j1a, d_j2a):
    R_old = p.delta_R.matrix
    D1 = -R_old @ d_j2a
    D2 = R_old @ d_j1a

    A = np.eye(15)
    A[R_, R_] = dR_step.T
    A[R_, BG_] = -delta * _I3
    A[P_, R_] = -R_old @ so3_hat(j2a)
    A[P_, V_] = delta * _I3
    A[P_, BG_] = D1
    A[P_, BA_] = -R_old @ j2
    A[V_, R_] = -R_old @ so3_hat(j1a)
    A[V_, BG_] = -D2
    A[V_, BA_] = -R_old @ j1

    B = np.zeros((15, 12))
    B[R_, 0:3] = delta * _I3
    B[P_, 0:3] = -D1
    B[P_, 3:6] = R_old @ j2
    B[V_, 0:3] = D2
    B[V_, 3:6] = R_old @ j1
    B[BG_, 6:9] = -delta * _I3
    B[BA_, 9:12] = -delta * _I3
    return A, B * p.b_inflation


def step_matrices(p: PreintegratedImu, m: CompensatedImuMeasurement, dt: float = None) -> Tuple[np.ndarray, np.ndarray]:
    """Error-state transition A (15x15) and noise input B (15x12) of one step."""
    delta, omega, accel = _checked_step(p, m, dt)
    j1, j2, d_j1a, d_j2a = _step_jacobians(p.mode, delta, omega, accel)
    return _transition(p, delta, so3_exp(delta * omega).matrix, j1, j2, j1 @ accel, j2 @ accel, d_j1a, d_j2a)


def integrate(p: PreintegratedImu, m: CompensatedImuMeasurement, dt: float = None) -> PreintegratedImu:
    """
    One zero-order-hold step. `dt` overrides m.dt_to_next (window truncation).
    """
    delta, omega, accel = _checked_step(p, m, dt)
    j1, j2, d_j1a, d_j2a = _step_jacobians(p.mode, delta, omega, accel)
    dR_step = so3_exp(delta * omega).matrix
    R_old = p.delta_R.matrix
    j1a = j1 @ accel
    j2a = j2 @ accel
    A, B = _transition(p, delta, dR_step, j1, j2, j1a, j2a, d_j1a, d_j2a)

    cov = A @ p.cov @ A.T + B @ discrete_noise_covariance(p.noise, delta) @ B.T
    cov = 0.5 * (cov + cov.T)
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    if min_eig < PSD_TOLERANCE:
        raise IntegrationError(f"Covariance lost positive semi-definiteness (min eigenvalue {min_eig:.3e})")

    # Bias Jacobians: exact derivative of the discrete mean recursion
    jr_step = so3_right_jacobian(delta * omega)
    jac_dR_dbg = dR_step.T @ p.jac_dR_dbg - delta * jr_step
    jac_dv_dbg = p.jac_dv_dbg - R_old @ so3_hat(j1a) @ p.jac_dR_dbg - R_old @ d_j1a
    jac_dv_dba = p.jac_dv_dba - R_old @ j1
    jac_dp_dbg = p.jac_dp_dbg + delta * p.jac_dv_dbg - R_old @ so3_hat(j2a) @ p.jac_dR_dbg - R_old @ d_j2a
    jac_dp_dba = p.jac_dp_dba + delta * p.jac_dv_dba - R_old @ j2

    return replace(
        p,
        delta_R=Rotation3(R_old @ dR_step),
        delta_p=p.delta_p + delta * p.delta_v + R_old @ j2a,
        delta_v=p.delta_v + R_old @ j1a,
        delta_t=p.delta_t + delta,
        cov=cov,
        jac_dR_dbg=jac_dR_dbg,
        jac_dp_dbg=jac_dp_dbg,
        jac_dp_dba=jac_dp_dba,
        jac_dv_dbg=jac_dv_dbg,
        jac_dv_dba=jac_dv_dba,
    )


def preintegrate(measurements: Sequence[CompensatedImuMeasurement], bias_lin: ImuBias, noise: ImuNoise,
                 mode: IntegrationMode = IntegrationMode.EXACT, b_inflation: float = 1.0) -> PreintegratedImu:
    p = new_preintegration(bias_lin, noise, mode, b_inflation)
    for m in measurements:
        p = integrate(p, m)
    return p


def preintegrate_window(measurements: Sequence[CompensatedImuMeasurement], t_start: float, t_end: float,
                        bias_lin: ImuBias, noise: ImuNoise,
                        mode: IntegrationMode = IntegrationMode.EXACT,
                        min_dt: float = 1e-9) -> PreintegratedImu:
    """
    Integrate the zero-order-hold stream over [t_start, t_end]; intervals are
    clipped to the window so the last one ends at the keyframe time.
    """
    if not t_end > t_start:
        raise IntegrationError(f"Empty pre-integration window [{t_start}, {t_end}]")
    p = new_preintegration(bias_lin, noise, mode)
    for m in measurements:
        lo = max(m.t, t_start)
        hi = min(m.t + m.dt_to_next, t_end)
        if hi - lo > min_dt:
            p = integrate(p, m, dt=hi - lo)
    if abs(p.delta_t - (t_end - t_start)) > 1e-6:
        logger.warning(f"Window [{t_start:.6f}, {t_end:.6f}] only covered for {p.delta_t:.6f} s")
    return p


def bias_corrected_deltas(p: PreintegratedImu, new_bias: ImuBias) -> Tuple[Rotation3, np.ndarray, np.ndarray]:
    db = new_bias - p.bias_lin
    if np.linalg.norm(db.as_vector()) > BIAS_CORRECTION_RADIUS:
        logger.warning(f"Bias correction of norm {np.linalg.norm(db.as_vector()):.4f} exceeds first-order radius")
    delta_R = Rotation3(p.delta_R.matrix @ so3_exp(p.jac_dR_dbg @ db.gyro).matrix)
    delta_p = p.delta_p + p.jac_dp_dbg @ db.gyro + p.jac_dp_dba @ db.accel
    delta_v = p.delta_v + p.jac_dv_dbg @ db.gyro + p.jac_dv_dba @ db.accel
    return delta_R, delta_p, delta_v


def predict(p: PreintegratedImu, x_i, g):
    """Propagate a NavState through the pre-integrated deltas (bias held constant)."""
    g = np.asarray(g, dtype=float)
    delta_R, delta_p, delta_v = bias_corrected_deltas(p, x_i.bias)
    R_i = x_i.rotation.matrix
    T = p.delta_t
    return replace(
        x_i,
        rotation=Rotation3(R_i @ delta_R.matrix),
        position=x_i.position + T * x_i.velocity + 0.5 * T * T * g + R_i @ delta_p,
        velocity=x_i.velocity + T * g + R_i @ delta_v,
    )


def information_sqrt(p: PreintegratedImu) -> Tuple[np.ndarray, float]:
    """
    Upper-triangular W with W^T W = (cov + lambda I)^-1, lambda = 1e-12 trace(cov) / 15.
    Returns (W, lambda).
    """
    cov = 0.5 * (p.cov + p.cov.T)
    lam = REGULARIZATION_SCALE * float(np.trace(cov)) / 15.0
    regularized = cov + lam * np.eye(15)
    cond = np.linalg.cond(regularized)
    if not cond < MAX_CONDITION:
        raise CovarianceConditionError(f"Pre-integration covariance condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")

    factor = scipy.linalg.cho_factor(regularized)
    information = scipy.linalg.cho_solve(factor, np.eye(15))
    information = 0.5 * (information + information.T)
    W = scipy.linalg.cholesky(information, lower=False)
    logger.debug(f"information_sqrt regularization lambda={lam:.3e}")
    return W, lam
