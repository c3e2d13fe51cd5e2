# tests/test_lie_core.py
import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from utils.lie_core import (
    ExtendedPose,
    InputPhaseStep,
    Rotation3,
    compose_input_phases,
    exact_state_step,
    gravity_phase,
    input_phase,
    input_phase_power,
    jacobian_coefficients,
    right_jacobians,
    se23_compose,
    se23_inverse,
    so3_exp,
    so3_hat,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inverse,
    so3_vee,
)

G = np.array([0.0, 0.0, -9.81])


def random_pose(rng):
    return ExtendedPose(so3_exp(rng.normal(size=3)), rng.normal(size=3), rng.normal(size=3))


def test_hat_example_and_cross_product(rng):
    np.testing.assert_array_equal(so3_hat([1.0, 2.0, 3.0]),
                                  [[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]])
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(so3_hat(a) @ b, np.cross(a, b), atol=1e-15)
    np.testing.assert_array_equal(so3_vee(so3_hat(a)), a)


def test_exp_examples():
    np.testing.assert_array_equal(so3_exp(np.zeros(3)).matrix, np.eye(3))
    quarter = so3_exp([0.0, 0.0, np.pi / 2]).matrix
    np.testing.assert_allclose(quarter, [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], atol=1e-14)


def test_exp_is_orthonormal_and_matches_expm(rng):
    for _ in range(20):
        phi = rng.normal(scale=1.5, size=3)
        r = so3_exp(phi)
        assert r.orthonormality_error() < 1e-14
        np.testing.assert_allclose(r.matrix, expm(so3_hat(phi)), atol=1e-13)


def test_log_round_trip(rng):
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        phi = rng.uniform(0.0, 3.1) * axis
        np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-12)


def test_log_small_angle():
    phi = np.array([1e-9, -2e-9, 5e-10])
    np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, rtol=1e-9, atol=1e-22)


def test_log_at_and_near_pi():
    np.testing.assert_allclose(so3_log(np.diag([-1.0, -1.0, 1.0])), [0.0, 0.0, np.pi], atol=1e-12)

    axis = np.array([1.0, 2.0, -2.0]) / 3.0
    phi = (np.pi - 1e-8) * axis
    out = so3_log(so3_exp(phi))
    np.testing.assert_allclose(out, phi, atol=1e-6)
    assert np.linalg.norm(out) <= np.pi


def test_right_jacobian_finite_difference(rng):
    phi = rng.normal(size=3)
    base = so3_exp(phi).matrix
    h = 1e-6
    fd = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        plus = so3_log(base.T @ so3_exp(phi + e).matrix)
        minus = so3_log(base.T @ so3_exp(phi - e).matrix)
        fd[:, k] = (plus - minus) / (2 * h)
    np.testing.assert_allclose(so3_right_jacobian(phi), fd, atol=1e-8)


@pytest.mark.parametrize("scale", [0.0, 1e-6, 0.3, 2.0])
def test_right_jacobian_inverse(scale):
    phi = scale * np.array([0.6, -0.8, 0.0])
    np.testing.assert_allclose(so3_right_jacobian(phi) @ so3_right_jacobian_inverse(phi), np.eye(3), atol=1e-12)


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation3.from_matrix(np.diag([1.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        Rotation3.from_matrix(np.diag([1.0, 1.0, -1.0]))
    noisy = Rotation3(so3_exp([0.1, 0.2, 0.3]).matrix + 1e-7)
    assert noisy.normalized().orthonormality_error() < 1e-14


def test_se23_compose_and_inverse_match_matrices(rng):
    a, b = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose(se23_compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)
    np.testing.assert_allclose(se23_compose(a, se23_inverse(a)).as_matrix(), np.eye(5), atol=1e-12)
    np.testing.assert_allclose(ExtendedPose.from_matrix(a.as_matrix()).as_matrix(), a.as_matrix(), atol=0.0)


def test_se23_group_axioms(rng):
    identity = ExtendedPose.identity()
    for _ in range(10_000):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        left = se23_compose(se23_compose(a, b), c).as_matrix()
        right = se23_compose(a, se23_compose(b, c)).as_matrix()
        np.testing.assert_allclose(left, right, atol=1e-10)
        np.testing.assert_allclose(se23_compose(a, identity).as_matrix(), a.as_matrix(), atol=1e-10)
        np.testing.assert_allclose(se23_compose(identity, a).as_matrix(), a.as_matrix(), atol=1e-10)
        np.testing.assert_allclose(se23_compose(se23_inverse(a), a).as_matrix(), np.eye(5), atol=1e-10)


def test_gravity_phase_blocks():
    np.testing.assert_array_equal(gravity_phase(0.0, G), np.eye(5))

    gamma = gravity_phase(1.0, G)
    np.testing.assert_allclose(gamma[:3, 3], [0.0, 0.0, 4.905], atol=1e-15)
    np.testing.assert_allclose(gamma[:3, 4], [0.0, 0.0, 9.81], atol=1e-15)
    assert gamma[4, 3] == 1.0
    np.testing.assert_array_equal(gamma[:3, :3], np.eye(3))

    with pytest.raises(ValueError):
        gravity_phase(-0.1, G)


def test_gravity_phase_matches_expm():
    generator = np.zeros((5, 5))
    generator[:3, 4] = -G
    generator[4, 3] = 1.0
    for T in (0.01, 0.7, 3.0):
        np.testing.assert_allclose(gravity_phase(T, G), expm(T * generator), atol=1e-12)


@pytest.mark.parametrize("t1, t2", [(0.0, 0.3), (0.01, 0.02), (0.7, 1.9), (2.5, 4.0)])
def test_gravity_phase_is_a_one_parameter_subgroup(t1, t2):
    np.testing.assert_allclose(gravity_phase(t1 + t2, G), gravity_phase(t1, G) @ gravity_phase(t2, G), atol=1e-12)


def test_right_jacobians_zero_rate():
    j1, j2 = right_jacobians(0.01, np.zeros(3))
    np.testing.assert_array_equal(j1, 0.01 * np.eye(3))
    np.testing.assert_allclose(j2, 0.5e-4 * np.eye(3), rtol=1e-15)
    with pytest.raises(ValueError):
        right_jacobians(0.0, np.ones(3))


@pytest.mark.parametrize("x", np.geomspace(1e-8, 3.0, 12))
def test_right_jacobians_match_quadrature(x):
    dt = 0.3
    axis = np.array([0.4, -1.1, 2.3]) / np.linalg.norm([0.4, -1.1, 2.3])
    omega = x / dt * axis
    k = so3_hat(omega)
    j1_ref, _ = quad_vec(lambda s: expm(s * k), 0.0, dt, epsabs=1e-16, epsrel=1e-13)
    j2_ref, _ = quad_vec(lambda u: (dt - u) * expm(u * k), 0.0, dt, epsabs=1e-17, epsrel=1e-13)
    j1, j2 = right_jacobians(dt, omega)
    assert np.linalg.norm(j1 - j1_ref) <= 1e-9 * np.linalg.norm(j1_ref)
    assert np.linalg.norm(j2 - j2_ref) <= 1e-9 * np.linalg.norm(j2_ref)


@pytest.mark.parametrize("x", [1e-5, 1e-3])
def test_series_and_closed_form_agree(x):
    dt = 1.0
    omega = x * np.array([0.0, 0.6, 0.8])
    k = so3_hat(omega)

    def assemble(coefficients):
        c1, c2, c3 = coefficients
        return dt * np.eye(3) + c1 * k + c2 * k @ k, 0.5 * dt * dt * np.eye(3) + c2 * k + c3 * k @ k

    series = assemble(jacobian_coefficients(dt, x, series=True))
    closed = assemble(jacobian_coefficients(dt, x, series=False))
    for a, b in zip(series, closed):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_input_phase_axis_aligned_example():
    step = input_phase(0.5, [0.0, 0.0, 2.0], [0.0, 0.0, 2.0])
    np.testing.assert_allclose(step.rotation_step.matrix, so3_exp([0.0, 0.0, 1.0]).matrix, atol=1e-15)
    np.testing.assert_allclose(step.v_column, [0.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(step.p_column, [0.0, 0.0, 0.25], atol=1e-15)
    assert step.dt == 0.5


def test_input_phase_zero_accel():
    step = input_phase(0.1, [1.0, 2.0, 3.0], np.zeros(3))
    np.testing.assert_array_equal(step.p_column, np.zeros(3))
    np.testing.assert_array_equal(step.v_column, np.zeros(3))


def test_input_phase_matches_expm(rng):
    for _ in range(10_000):
        omega, accel, dt = rng.normal(scale=2.0, size=3), rng.normal(scale=5.0, size=3), rng.uniform(1e-3, 0.5)
        generator = np.zeros((5, 5))
        generator[:3, :3] = so3_hat(omega)
        generator[:3, 4] = accel
        generator[4, 3] = 1.0
        np.testing.assert_allclose(input_phase(dt, omega, accel).as_matrix(), expm(dt * generator), atol=1e-10)


def test_compose_and_power_match_matrix_products(rng):
    a = input_phase(0.02, rng.normal(size=3), rng.normal(size=3))
    b = input_phase(0.03, rng.normal(size=3), rng.normal(size=3))
    np.testing.assert_allclose(compose_input_phases(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-14)

    identity = InputPhaseStep.identity()
    np.testing.assert_allclose(compose_input_phases(identity, a).as_matrix(), a.as_matrix(), atol=0.0)

    for n in (1, 2, 5, 13):
        np.testing.assert_allclose(input_phase_power(a, n).as_matrix(),
                                   np.linalg.matrix_power(a.as_matrix(), n), atol=1e-12)
    with pytest.raises(ValueError):
        input_phase_power(a, 0)


def test_composing_equal_phases_merges_the_interval(rng):
    for _ in range(500):
        omega, accel = rng.normal(scale=3.0, size=3), rng.normal(scale=5.0, size=3)
        dt = rng.uniform(1e-3, 0.25)
        step = input_phase(dt, omega, accel)
        merged = input_phase(2.0 * dt, omega, accel)
        np.testing.assert_allclose(compose_input_phases(step, step).as_matrix(), merged.as_matrix(), atol=1e-12)
        np.testing.assert_allclose(input_phase_power(step, 4).as_matrix(),
                                   input_phase(4.0 * dt, omega, accel).as_matrix(), atol=1e-11)


def test_exact_state_step_factorization(rng):
    xi = random_pose(rng)
    phi = input_phase(0.4, rng.normal(size=3), rng.normal(scale=3.0, size=3))
    nxt = exact_state_step(xi, phi, G)
    np.testing.assert_allclose(gravity_phase(phi.dt, G) @ nxt.as_matrix(), xi.as_matrix() @ phi.as_matrix(), atol=1e-12)
