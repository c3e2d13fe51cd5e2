# services/estimator.py
"""
Fixed-lag visual-inertial estimator.

A Window holds up to `window_size` keyframe states, the landmarks they observe,
one IMU factor per consecutive keyframe pair and the reprojection observations.
solve_window minimizes

    sum ||W e_imu||^2 + ||prior||^2 + sum huber(||r_vis||)

with Levenberg-Marquardt, eliminating landmarks through the Schur complement.
The oldest keyframe is the anchor: its pose (or position and yaw) is held
fixed, and an optional prior ties its velocity and biases to the values it had
when it became the anchor.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from infra.errors import RankDeficientError
from utils.imu_model import CompensatedImuMeasurement, ImuBias
from utils.preintegration import BIAS_CORRECTION_RADIUS, PreintegratedImu, information_sqrt, preintegrate
from utils.residuals import (
    CameraRig,
    NavState,
    Observation,
    huber_cost,
    imu_residual,
    imu_residual_jacobians,
    project,
    reprojection_residuals_batch,
)

logger = logging.getLogger(__name__)

STATE_DOF = 15
LANDMARK_DOF = 3
STATE_PARAM_NAMES = ("rx", "ry", "rz", "px", "py", "pz", "vx", "vy", "vz",
                     "bgx", "bgy", "bgz", "bax", "bay", "baz")


class GaugePolicy(Enum):
    POSE = "pose"  # anchor rotation and position fixed
    POSITION_YAW = "position_yaw"  # anchor position and world yaw fixed


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 15
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_max: float = 1e10
    rel_cost_tol: float = 1e-8
    update_tol: float = 1e-9
    abs_cost_tol: float = 1e-20
    huber_delta: float = 1.345
    window_size: int = 10
    gauge: GaugePolicy = GaugePolicy.POSE
    anchor_prior: bool = True
    anchor_sigma_v: float = 1.0
    anchor_sigma_bg: float = 0.01
    anchor_sigma_ba: float = 0.1
    rank_tol: float = 1e-12
    damping_floor: float = 1e-9
    min_baseline: float = 1e-3
    max_reprojection_sigmas: float = 4.0
    max_relinearizations: int = 2

    def __post_init__(self):
        positive = ("lambda_init", "lambda_max", "rel_cost_tol", "update_tol", "abs_cost_tol", "huber_delta",
                    "anchor_sigma_v", "anchor_sigma_bg", "anchor_sigma_ba", "rank_tol", "damping_floor",
                    "min_baseline", "max_reprojection_sigmas")
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"SolverConfig.{name} must be positive")
        if self.max_iterations < 1 or self.window_size < 2 or self.max_relinearizations < 0:
            raise ValueError("SolverConfig needs max_iterations >= 1, window_size >= 2 and max_relinearizations >= 0")
        if not (self.lambda_up > 1.0 and 0.0 < self.lambda_down < 1.0):
            raise ValueError("SolverConfig damping factors must satisfy up > 1 > down > 0")


@dataclass(frozen=True)
class ImuFactor:
    from_frame: int
    to_frame: int
    preintegration: PreintegratedImu
    sqrt_information: np.ndarray
    measurements: Tuple[CompensatedImuMeasurement, ...] = ()  # kept for re-integration at a new bias

    @classmethod
    def create(cls, from_frame: int, to_frame: int, preintegration: PreintegratedImu,
               measurements: Sequence[CompensatedImuMeasurement] = ()) -> "ImuFactor":
        W, _ = information_sqrt(preintegration)
        return cls(from_frame, to_frame, preintegration, W, tuple(measurements))

    def bias_offset(self, bias: ImuBias) -> float:
        return float(np.linalg.norm((bias - self.preintegration.bias_lin).as_vector()))

    def relinearized(self, bias: ImuBias) -> "ImuFactor":
        """Same factor re-integrated from its measurements with `bias` as the linearization point."""
        if not self.measurements:
            raise ValueError(f"IMU factor kf{self.from_frame}->kf{self.to_frame} has no measurements to re-integrate")
        p = self.preintegration
        return ImuFactor.create(self.from_frame, self.to_frame,
                                preintegrate(self.measurements, bias, p.noise, p.mode, p.b_inflation),
                                self.measurements)


@dataclass(frozen=True)
class AnchorPrior:
    frame_id: int
    velocity: np.ndarray
    bias: ImuBias
    sigma_v: float
    sigma_bg: float
    sigma_ba: float

    @classmethod
    def from_state(cls, frame_id: int, state: NavState, config: SolverConfig) -> "AnchorPrior":
        return cls(frame_id, np.array(state.velocity), state.bias,
                   config.anchor_sigma_v, config.anchor_sigma_bg, config.anchor_sigma_ba)

    def residual(self, state: NavState) -> np.ndarray:
        return np.concatenate([
            (state.velocity - self.velocity) / self.sigma_v,
            (state.bias.gyro - self.bias.gyro) / self.sigma_bg,
            (state.bias.accel - self.bias.accel) / self.sigma_ba,
        ])

    def jacobian_diagonal(self) -> np.ndarray:
        return np.repeat([1.0 / self.sigma_v, 1.0 / self.sigma_bg, 1.0 / self.sigma_ba], 3)


@dataclass(frozen=True)
class Window:
    states: Dict[int, NavState]  # oldest first; the first entry is the anchor
    landmarks: Dict[int, np.ndarray]
    imu_factors: Tuple[ImuFactor, ...]
    observations: Tuple[Observation, ...]
    rig: CameraRig
    gravity: np.ndarray
    anchor_prior: Optional[AnchorPrior] = None

    @property
    def frame_ids(self) -> List[int]:
        return list(self.states)

    @property
    def anchor_id(self) -> int:
        return next(iter(self.states))

    def active_observations(self) -> List[Observation]:
        return [o for o in self.observations if o.landmark_id in self.landmarks and o.frame_id in self.states]

    def transformed(self, world_rotation, translation) -> "Window":
        """Whole window expressed in another world frame (for gauge checks)."""
        q = world_rotation.matrix
        t = np.asarray(translation, dtype=float)
        prior = self.anchor_prior
        if prior is not None:
            prior = replace(prior, velocity=q @ prior.velocity)
        return replace(
            self,
            states={f: s.transformed(world_rotation, t) for f, s in self.states.items()},
            landmarks={i: q @ p + t for i, p in self.landmarks.items()},
            anchor_prior=prior,
        )


@dataclass(frozen=True)
class NewKeyframe:
    frame_id: int
    state: NavState
    preintegration: Optional[PreintegratedImu]  # from the previous keyframe; None for the first
    observations: Tuple[Observation, ...] = ()
    measurements: Tuple[CompensatedImuMeasurement, ...] = ()  # the samples behind `preintegration`


@dataclass
class WindowLayout:
    frame_ids: List[int]
    landmark_ids: List[int]
    state_offset: Dict[int, int]
    landmark_offset: Dict[int, int]
    size: int
    free: np.ndarray

    @classmethod
    def of(cls, window: Window, gauge: GaugePolicy) -> "WindowLayout":
        frame_ids = window.frame_ids
        landmark_ids = sorted(window.landmarks)
        state_offset = {f: STATE_DOF * i for i, f in enumerate(frame_ids)}
        base = STATE_DOF * len(frame_ids)
        landmark_offset = {l: base + LANDMARK_DOF * j for j, l in enumerate(landmark_ids)}
        size = base + LANDMARK_DOF * len(landmark_ids)
        free = np.ones(size, dtype=bool)
        anchor = state_offset[frame_ids[0]]
        fixed_rotation = slice(anchor, anchor + 3) if gauge is GaugePolicy.POSE else slice(anchor + 2, anchor + 3)
        free[fixed_rotation] = False
        free[anchor + 3:anchor + 6] = False
        return cls(frame_ids, landmark_ids, state_offset, landmark_offset, size, free)

    @property
    def state_size(self) -> int:
        return STATE_DOF * len(self.frame_ids)

    def describe(self, index: int) -> str:
        if index < self.state_size:
            return f"kf{self.frame_ids[index // STATE_DOF]}.{STATE_PARAM_NAMES[index % STATE_DOF]}"
        j, axis = divmod(index - self.state_size, LANDMARK_DOF)
        return f"lm{self.landmark_ids[j]}.{'xyz'[axis]}"


@dataclass
class NormalEquations:
    """H = J^T J and b = J^T r (half the cost gradient) over the full parameter vector."""

    H: scipy.sparse.csr_matrix
    b: np.ndarray
    cost: float
    layout: WindowLayout
    n_invisible: int


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    lambda_trace: List[float] = field(default_factory=list)
    cost_trace: List[float] = field(default_factory=list)
    converged: bool = False
    n_invisible: int = 0
    dropped_landmarks: List[int] = field(default_factory=list)
    relinearized_factors: int = 0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "lambda_trace": list(self.lambda_trace),
            "converged": self.converged,
            "n_invisible": self.n_invisible,
            "dropped_landmarks": list(self.dropped_landmarks),
            "relinearized_factors": self.relinearized_factors,
        }


def _evaluate(window: Window, config: SolverConfig, with_jacobian: bool):
    """Stacked IRLS-weighted residuals (and sparse Jacobian), robust cost, invisible count."""
    layout = WindowLayout.of(window, config.gauge)
    residual_blocks: List[np.ndarray] = []
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    cost = 0.0
    row0 = 0

    def add_block(row_start: int, col_start: int, block: np.ndarray):
        r, c = np.nonzero(block)
        rows.append(r + row_start)
        cols.append(c + col_start)
        vals.append(block[r, c])

    for factor in window.imu_factors:
        x_i, x_j = window.states[factor.from_frame], window.states[factor.to_frame]
        W = factor.sqrt_information
        r = W @ imu_residual(x_i, x_j, factor.preintegration, window.gravity)
        residual_blocks.append(r)
        cost += float(r @ r)
        if with_jacobian:
            J_i, J_j = imu_residual_jacobians(x_i, x_j, factor.preintegration, window.gravity)
            add_block(row0, layout.state_offset[factor.from_frame], W @ J_i)
            add_block(row0, layout.state_offset[factor.to_frame], W @ J_j)
        row0 += STATE_DOF

    prior = window.anchor_prior
    if prior is not None and prior.frame_id in window.states:
        r = prior.residual(window.states[prior.frame_id])
        residual_blocks.append(r)
        cost += float(r @ r)
        if with_jacobian:
            add_block(row0, layout.state_offset[prior.frame_id] + 6, np.diag(prior.jacobian_diagonal()))
        row0 += 9

    observations = window.active_observations()
    n_invisible = 0
    if observations:
        frames = [o.frame_id for o in observations]
        states = [window.states[f] for f in frames]
        residuals, jac_pose, jac_point, visible = reprojection_residuals_batch(
            window.rig,
            np.array([o.camera_index for o in observations]),
            np.array([o.pixel for o in observations]),
            np.array([o.sigma_px for o in observations]),
            np.array([s.rotation.matrix for s in states]),
            np.array([s.position for s in states]),
            np.array([window.landmarks[o.landmark_id] for o in observations]),
        )
        n_invisible = int(np.count_nonzero(~visible))
        norms = np.linalg.norm(residuals, axis=1)
        cost += float(np.sum(huber_cost(norms[visible], config.huber_delta)))
        safe = np.where(norms > 0.0, norms, 1.0)
        sqrt_w = np.sqrt(np.where(norms <= config.huber_delta, 1.0, config.huber_delta / safe))
        residuals = residuals * sqrt_w[:, None]
        residual_blocks.append(residuals.ravel())
        if with_jacobian:
            n = len(observations)
            obs_rows = row0 + 2 * np.arange(n)
            pose_cols = np.array([layout.state_offset[f] for f in frames])
            point_cols = np.array([layout.landmark_offset[o.landmark_id] for o in observations])
            jac_pose = jac_pose * sqrt_w[:, None, None]
            jac_point = jac_point * sqrt_w[:, None, None]
            r_idx, c_idx = np.meshgrid(np.arange(2), np.arange(6), indexing="ij")
            rows.append((obs_rows[:, None, None] + r_idx).ravel())
            cols.append((pose_cols[:, None, None] + c_idx).ravel())
            vals.append(jac_pose.ravel())
            r_idx, c_idx = np.meshgrid(np.arange(2), np.arange(3), indexing="ij")
            rows.append((obs_rows[:, None, None] + r_idx).ravel())
            cols.append((point_cols[:, None, None] + c_idx).ravel())
            vals.append(jac_point.ravel())
        row0 += 2 * len(observations)

    residual = np.concatenate(residual_blocks) if residual_blocks else np.zeros(0)
    jacobian = None
    if with_jacobian:
        jacobian = scipy.sparse.coo_matrix(
            (np.concatenate(vals) if vals else np.zeros(0),
             (np.concatenate(rows) if rows else np.zeros(0, int), np.concatenate(cols) if cols else np.zeros(0, int))),
            shape=(row0, layout.size),
        ).tocsr()
    return residual, jacobian, cost, n_invisible, layout


def evaluate_cost(window: Window, config: SolverConfig) -> float:
    return _evaluate(window, config, with_jacobian=False)[2]


def build_normal_equations(window: Window, config: SolverConfig = SolverConfig()) -> NormalEquations:
    residual, jacobian, cost, n_invisible, layout = _evaluate(window, config, with_jacobian=True)
    H = (jacobian.T @ jacobian).tocsr()
    b = jacobian.T @ residual
    if n_invisible:
        logger.debug(f"{n_invisible} visual factors not visible at the current linearization point")
    return NormalEquations(H, np.asarray(b).ravel(), cost, layout, n_invisible)


def _landmark_blocks(H_ll: scipy.sparse.csr_matrix, count: int) -> np.ndarray:
    base = LANDMARK_DOF * np.arange(count)
    r = (base[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
    c = (base[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    return np.asarray(H_ll[r.ravel(), c.ravel()]).reshape(count, 3, 3)


def _partition(ne: NormalEquations):
    layout = ne.layout
    free_states = np.flatnonzero(layout.free[:layout.state_size])
    landmarks = np.arange(layout.state_size, layout.size)
    H = ne.H
    H_ss = H[free_states][:, free_states].toarray()
    H_sl = H[free_states][:, landmarks].tocsr()
    H_ll = H[landmarks][:, landmarks].tocsr()
    return free_states, landmarks, H_ss, H_sl, H_ll


def solve_increment(ne: NormalEquations, lam: float, config: SolverConfig = SolverConfig(), method: str = "schur") -> np.ndarray:
    """
    Solve (H_ff + lam * diag(max(diag(H_ff), floor))) delta_f = -b_f over the free
    parameters. `method` is "schur" (landmarks eliminated) or "dense".
    """
    layout = ne.layout
    delta = np.zeros(layout.size)
    if method == "dense":
        free = np.flatnonzero(layout.free)
        H_ff = ne.H[free][:, free].toarray()
        H_ff += lam * np.diag(np.maximum(np.diag(H_ff), config.damping_floor))
        delta[free] = scipy.linalg.solve(H_ff, -ne.b[free], assume_a="sym")
        return delta

    free_states, landmarks, H_ss, H_sl, H_ll = _partition(ne)
    n_lm = len(landmarks) // LANDMARK_DOF
    H_ss = H_ss + lam * np.diag(np.maximum(np.diag(H_ss), config.damping_floor))
    b_s = ne.b[free_states]

    if n_lm == 0:
        delta[free_states] = scipy.linalg.solve(H_ss, -b_s, assume_a="sym")
        return delta

    blocks = _landmark_blocks(H_ll, n_lm)
    diag = np.maximum(np.diagonal(blocks, axis1=1, axis2=2), config.damping_floor)
    blocks = blocks + lam * diag[:, :, None] * np.eye(3)[None]
    H_ll_inv = scipy.sparse.block_diag(list(np.linalg.inv(blocks)), format="csr")
    b_l = ne.b[landmarks]

    schur = H_ss - (H_sl @ H_ll_inv @ H_sl.T).toarray()
    rhs = -b_s + H_sl @ (H_ll_inv @ b_l)
    delta_s = scipy.linalg.solve(0.5 * (schur + schur.T), rhs, assume_a="sym")
    delta[free_states] = delta_s
    delta[landmarks] = H_ll_inv @ (-b_l - H_sl.T @ delta_s)
    return delta


def _weak_landmarks(blocks: np.ndarray, config: SolverConfig) -> np.ndarray:
    eig = np.linalg.eigvalsh(blocks)
    return eig[:, 0] <= config.rank_tol * np.maximum(eig[:, -1], config.damping_floor)


def prune_unconstrained_landmarks(window: Window, ne: NormalEquations,
                                  config: SolverConfig = SolverConfig()) -> Tuple[Window, NormalEquations, List[int]]:
    """
    Drop landmarks whose 3x3 information block is singular at the current
    linearization point: fewer than two visible rays, or parallel rays.
    Returns the window, its rebuilt normal equations and the dropped ids.
    """
    layout = ne.layout
    if not layout.landmark_ids:
        return window, ne, []
    landmarks = np.arange(layout.state_size, layout.size)
    blocks = _landmark_blocks(ne.H[landmarks][:, landmarks].tocsr(), len(layout.landmark_ids))
    weak = _weak_landmarks(blocks, config)
    if not weak.any():
        return window, ne, []

    dropped = [layout.landmark_ids[j] for j in np.flatnonzero(weak)]
    logger.warning(f"Window ending at kf{window.frame_ids[-1]}: dropped {len(dropped)} landmark(s) "
                   f"without two usable rays ({', '.join(f'lm{l}' for l in dropped[:5])})")
    gone = set(dropped)
    window = replace(window, landmarks={l: p for l, p in window.landmarks.items() if l not in gone})
    return window, build_normal_equations(window, config), dropped


def check_rank(ne: NormalEquations, config: SolverConfig = SolverConfig()):
    """Raise RankDeficientError naming every direction the fixed gauge leaves unconstrained."""
    layout = ne.layout
    free_states, landmarks, H_ss, H_sl, H_ll = _partition(ne)
    n_lm = len(landmarks) // LANDMARK_DOF
    null: List[str] = []

    reduced = H_ss
    if n_lm:
        blocks = _landmark_blocks(H_ll, n_lm)
        weak = _weak_landmarks(blocks, config)
        null.extend(f"lm{layout.landmark_ids[j]}" for j in np.flatnonzero(weak))
        if not null:
            H_ll_inv = scipy.sparse.block_diag(list(np.linalg.inv(blocks)), format="csr")
            reduced = H_ss - (H_sl @ H_ll_inv @ H_sl.T).toarray()

    if reduced.size:
        eigvals, eigvecs = np.linalg.eigh(0.5 * (reduced + reduced.T))
        scale = max(float(eigvals[-1]), config.damping_floor)
        for k in np.flatnonzero(eigvals <= config.rank_tol * scale):
            null.append(layout.describe(int(free_states[np.argmax(np.abs(eigvecs[:, k]))])))

    if null:
        raise RankDeficientError(null)


def _retract(window: Window, delta: np.ndarray, layout: WindowLayout) -> Window:
    states = {f: s.retract(delta[layout.state_offset[f]:layout.state_offset[f] + STATE_DOF])
              for f, s in window.states.items()}
    landmarks = {l: p + delta[layout.landmark_offset[l]:layout.landmark_offset[l] + LANDMARK_DOF]
                 for l, p in window.landmarks.items()}
    return replace(window, states=states, landmarks=landmarks)


def solve_window(window: Window, config: SolverConfig = SolverConfig()) -> Tuple[Window, SolveReport]:
    """
    Levenberg-Marquardt over the window. Landmarks left without two usable
    rays are dropped before each linear solve; only state directions the
    gauge leaves free raise RankDeficientError.
    """
    ne = build_normal_equations(window, config)
    window, ne, dropped = prune_unconstrained_landmarks(window, ne, config)
    check_rank(ne, config)
    cost = ne.cost
    report = SolveReport(0, cost, cost, cost_trace=[cost], n_invisible=ne.n_invisible, dropped_landmarks=dropped)
    lam = config.lambda_init

    if cost <= config.abs_cost_tol:
        report.converged = True
        return window, report

    while report.iterations < config.max_iterations:
        report.iterations += 1
        report.lambda_trace.append(lam)
        delta = solve_increment(ne, lam, config)
        if np.linalg.norm(delta) < config.update_tol:
            report.converged = True
            break

        candidate = _retract(window, delta, ne.layout)
        new_cost = evaluate_cost(candidate, config)
        if np.isfinite(new_cost) and new_cost <= cost:
            relative_decrease = (cost - new_cost) / cost
            window, cost = candidate, new_cost
            report.cost_trace.append(cost)
            lam = max(lam * config.lambda_down, 1e-12)
            if relative_decrease < config.rel_cost_tol or cost <= config.abs_cost_tol:
                report.converged = True
                break
            ne = build_normal_equations(window, config)
            window, ne, dropped = prune_unconstrained_landmarks(window, ne, config)
            if dropped:
                report.dropped_landmarks.extend(dropped)
                cost = ne.cost
                report.cost_trace.append(cost)
            report.n_invisible = ne.n_invisible
        else:
            lam *= config.lambda_up
            if lam > config.lambda_max:
                break

    assert all(b <= a for a, b in zip(report.cost_trace, report.cost_trace[1:])), "accepted step increased cost"
    report.final_cost = cost
    if not report.converged:
        logger.warning(f"Window ending at kf{window.frame_ids[-1]} not converged after {report.iterations} iterations "
                       f"(cost {report.initial_cost:.4e} -> {cost:.4e})")
    return window, report


def relinearize_imu_factors(window: Window, radius: float = BIAS_CORRECTION_RADIUS) -> Tuple[Window, int]:
    """
    Re-integrate every IMU factor whose start-state bias estimate moved more
    than `radius` from the factor's linearization point. Returns the window
    and the number of factors re-integrated.
    """
    factors = []
    count = 0
    for factor in window.imu_factors:
        bias = window.states[factor.from_frame].bias
        if factor.measurements and factor.bias_offset(bias) > radius:
            factor = factor.relinearized(bias)
            count += 1
        factors.append(factor)
    if not count:
        return window, 0
    return replace(window, imu_factors=tuple(factors)), count


def solve_and_relinearize(window: Window, config: SolverConfig = SolverConfig()) -> Tuple[Window, SolveReport]:
    """
    solve_window, then up to `max_relinearizations` rounds of re-integrating
    factors whose bias left the first-order radius and solving again.
    """
    window, report = solve_window(window, config)
    for _ in range(config.max_relinearizations):
        window, count = relinearize_imu_factors(window)
        if not count:
            break
        logger.info(f"Window ending at kf{window.frame_ids[-1]}: re-integrated {count} IMU factor(s) at the new bias")
        window, again = solve_window(window, config)
        report = replace(
            again,
            iterations=report.iterations + again.iterations,
            initial_cost=report.initial_cost,
            lambda_trace=report.lambda_trace + again.lambda_trace,
            dropped_landmarks=report.dropped_landmarks + again.dropped_landmarks,
            relinearized_factors=report.relinearized_factors + count,
        )
    return window, report


def triangulate(observations: Sequence[Observation], poses: Dict[int, NavState], rig: CameraRig,
                min_baseline: float = 1e-3, max_reprojection_sigmas: float = 4.0) -> Optional[np.ndarray]:
    """
    Midpoint least squares over all rays; None when the baseline is too short,
    the rays are parallel, or any observation reprojects beyond the gate.
    """
    usable = [o for o in observations if o.frame_id in poses]
    if len(usable) < 2:
        return None
    origins = np.array([rig.camera_center(o.camera_index, poses[o.frame_id]) for o in usable])
    if np.max(np.linalg.norm(origins - origins[0], axis=1)) <= min_baseline:
        return None

    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    for o, origin in zip(usable, origins):
        bearing = rig.camera_rotation(o.camera_index, poses[o.frame_id]) @ rig.cameras[o.camera_index].back_project(o.pixel)
        projector = np.eye(3) - np.outer(bearing, bearing)
        A += projector
        rhs += projector @ origin
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 1e-12 * eig[-1]:
        return None
    point = np.linalg.solve(A, rhs)

    for o in usable:
        pixel = project(rig, o.camera_index, poses[o.frame_id], point)
        if pixel is None or np.linalg.norm(pixel - o.pixel) > max_reprojection_sigmas * o.sigma_px:
            return None
    return point


def _refresh_landmarks(window: Window, config: SolverConfig) -> Window:
    by_landmark: Dict[int, List[Observation]] = {}
    for o in window.observations:
        by_landmark.setdefault(o.landmark_id, []).append(o)

    landmarks = {l: p for l, p in window.landmarks.items() if len(by_landmark.get(l, ())) >= 2}
    added = 0
    for landmark_id in sorted(by_landmark):
        obs = by_landmark[landmark_id]
        if landmark_id in landmarks or len(obs) < 2:
            continue
        point = triangulate(obs, window.states, window.rig, config.min_baseline, config.max_reprojection_sigmas)
        if point is not None:
            landmarks[landmark_id] = point
            added += 1
    dropped = len(window.landmarks) - (len(landmarks) - added)
    logger.debug(f"Landmarks: {added} triangulated, {dropped} dropped, {len(landmarks)} active")
    return replace(window, landmarks=landmarks)


def start_window(keyframe: NewKeyframe, rig: CameraRig, gravity, config: SolverConfig = SolverConfig()) -> Window:
    prior = AnchorPrior.from_state(keyframe.frame_id, keyframe.state, config) if config.anchor_prior else None
    window = Window(
        states={keyframe.frame_id: keyframe.state},
        landmarks={},
        imu_factors=(),
        observations=tuple(keyframe.observations),
        rig=rig,
        gravity=np.asarray(gravity, dtype=float),
        anchor_prior=prior,
    )
    return _refresh_landmarks(window, config)


def slide_window(window: Window, keyframe: NewKeyframe, config: SolverConfig = SolverConfig()) -> Window:
    """
    Append a keyframe with its IMU factor; past capacity drop the oldest state,
    its factors and observations, and anchor the next one.
    """
    if keyframe.preintegration is None:
        raise ValueError("A keyframe appended to a window needs its pre-integration")
    previous = window.frame_ids[-1]
    states = dict(window.states)
    states[keyframe.frame_id] = keyframe.state
    imu_factors = window.imu_factors + (ImuFactor.create(previous, keyframe.frame_id, keyframe.preintegration,
                                                         keyframe.measurements),)
    observations = window.observations + tuple(keyframe.observations)
    prior = window.anchor_prior

    if len(states) > config.window_size:
        oldest = next(iter(states))
        del states[oldest]
        imu_factors = tuple(f for f in imu_factors if f.from_frame != oldest)
        observations = tuple(o for o in observations if o.frame_id != oldest)
        anchor = next(iter(states))
        prior = AnchorPrior.from_state(anchor, states[anchor], config) if config.anchor_prior else None
        logger.debug(f"Window slid: kf{oldest} removed, kf{anchor} anchored")

    window = replace(window, states=states, imu_factors=imu_factors, observations=observations, anchor_prior=prior)
    return _refresh_landmarks(window, config)
