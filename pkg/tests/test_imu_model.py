# tests/test_imu_model.py
import numpy as np
import pytest

from infra.errors import IntegrationError, IntrinsicsError
from utils.imu_model import (
    ImuBias,
    ImuIntrinsics,
    ImuNoise,
    RawImuMeasurement,
    apply_intrinsics,
    compensate,
    compensate_stream,
    compensated_bias,
    discrete_noise_covariance,
)
from utils.lie_core import Rotation3, so3_exp


def random_intrinsics(rng) -> ImuIntrinsics:
    def unitriangular():
        m = np.eye(3)
        m[np.tril_indices(3, -1)] = rng.normal(scale=0.01, size=3)
        return m

    return ImuIntrinsics(
        S_alpha=np.diag(1.0 + rng.normal(scale=0.01, size=3)),
        M_alpha=unitriangular(),
        S_omega=np.diag(1.0 + rng.normal(scale=0.01, size=3)),
        M_omega=unitriangular(),
        A_omega=rng.normal(scale=1e-3, size=(3, 3)),
        C_omega=so3_exp(rng.normal(scale=0.01, size=3)),
    )


def test_identity_intrinsics_pass_through():
    raw = RawImuMeasurement(0.0, [0.1, -0.2, 0.3], [0.5, 0.0, 9.81])
    m = compensate(raw, ImuIntrinsics.identity(), 0.005)
    np.testing.assert_array_equal(m.gyro, raw.gyro)
    np.testing.assert_array_equal(m.accel, raw.accel)
    assert m.dt_to_next == 0.005


def test_accel_scale_example():
    eye = np.eye(3)
    intrinsics = ImuIntrinsics(np.diag([1.01, 1.0, 1.0]), eye, eye, eye, np.zeros((3, 3)), Rotation3.identity())
    raw = apply_intrinsics(np.zeros(3), [1.0, 0.0, 0.0], intrinsics, ImuBias.zero())
    np.testing.assert_allclose(raw.accel, [1.01, 0.0, 0.0], atol=1e-15)


def test_compensation_inverts_forward_model(rng):
    for _ in range(10_000):
        intrinsics = random_intrinsics(rng)
        w, a = rng.normal(size=3), rng.normal(scale=5.0, size=3)
        bias = ImuBias(rng.normal(scale=1e-3, size=3), rng.normal(scale=0.05, size=3))
        raw = apply_intrinsics(w, a, intrinsics, bias)
        b = compensated_bias(bias, intrinsics)
        m = compensate(raw, intrinsics, 0.005)
        np.testing.assert_allclose(m.gyro - b.gyro, w, atol=1e-10)
        np.testing.assert_allclose(m.accel - b.accel, a, atol=1e-10)


def test_g_sensitivity_is_removed():
    eye = np.eye(3)
    intrinsics = ImuIntrinsics(eye, eye, eye, eye, 0.01 * np.ones((3, 3)), Rotation3.identity())
    raw = apply_intrinsics(np.zeros(3), [0.0, 0.0, 9.81], intrinsics, ImuBias.zero())
    assert np.all(raw.gyro > 0.0)
    np.testing.assert_allclose(compensate(raw, intrinsics, 0.005).gyro, np.zeros(3), atol=1e-15)


def test_compensated_bias_is_linear(rng):
    intrinsics = random_intrinsics(rng)
    b1 = ImuBias(rng.normal(size=3), rng.normal(size=3))
    b2 = ImuBias(rng.normal(size=3), rng.normal(size=3))
    lhs = compensated_bias(b1 + b2, intrinsics).as_vector()
    rhs = compensated_bias(b1, intrinsics).as_vector() + compensated_bias(b2, intrinsics).as_vector()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_compensated_bias_matches_compensating_a_bias_only_sample(rng):
    intrinsics = random_intrinsics(rng)
    bias = ImuBias(rng.normal(scale=0.01, size=3), rng.normal(scale=0.1, size=3))
    raw = apply_intrinsics(np.zeros(3), np.zeros(3), intrinsics, bias)
    m = compensate(raw, intrinsics, 0.005)
    expected = compensated_bias(bias, intrinsics)
    np.testing.assert_allclose(m.gyro, expected.gyro, atol=1e-14)
    np.testing.assert_allclose(m.accel, expected.accel, atol=1e-14)


@pytest.mark.parametrize("override", [
    {"S_alpha": np.diag([1.0, -1.0, 1.0])},
    {"S_omega": np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])},
    {"M_alpha": np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])},
    {"M_omega": np.diag([2.0, 1.0, 1.0])},
    {"S_alpha": np.diag([1.0, 1.0, 1e-4])},
])
def test_invalid_intrinsics_are_rejected(override):
    eye = np.eye(3)
    fields = dict(S_alpha=eye, M_alpha=eye, S_omega=eye, M_omega=eye, A_omega=np.zeros((3, 3)), C_omega=Rotation3.identity())
    fields.update(override)
    with pytest.raises(IntrinsicsError):
        ImuIntrinsics(**fields)


def test_noise_must_be_positive():
    with pytest.raises(IntrinsicsError):
        ImuNoise(0.0, 1.0, 1.0, 1.0, 200.0)
    with pytest.raises(IntrinsicsError):
        ImuNoise(1.0, 1.0, 1.0, 1.0, -5.0)


def test_discrete_noise_covariance():
    noise = ImuNoise(sigma_g=0.01, sigma_a=0.02, sigma_bg=0.001, sigma_ba=0.002, rate=100.0)
    cov = discrete_noise_covariance(noise, 0.01)
    assert cov.shape == (12, 12)
    assert cov[3, 3] == pytest.approx(0.02 ** 2 / 0.01)
    np.testing.assert_allclose(np.diag(cov)[::3], [1e-2, 4e-2, 1e-4, 4e-4])
    np.testing.assert_array_equal(cov, np.diag(np.diag(cov)))

    # Doubling the rate doubles the per-sample variance
    np.testing.assert_allclose(discrete_noise_covariance(noise, 0.005), 2.0 * cov, rtol=1e-15)

    with pytest.raises(ValueError):
        discrete_noise_covariance(noise, 0.0)


def test_compensate_stream_uses_stamp_differences():
    raws = [RawImuMeasurement(t, np.zeros(3), [0.0, 0.0, 9.81]) for t in (0.0, 0.005, 0.011)]
    ms = compensate_stream(raws, ImuIntrinsics.identity(), 200.0)
    assert [m.dt_to_next for m in ms] == pytest.approx([0.005, 0.006, 0.005])


def test_compensate_stream_rejects_non_increasing_stamps():
    raws = [RawImuMeasurement(t, np.zeros(3), np.zeros(3)) for t in (0.0, 0.005, 0.005)]
    with pytest.raises(IntegrationError):
        compensate_stream(raws, ImuIntrinsics.identity(), 200.0)


def test_bias_arithmetic():
    b = ImuBias.from_vector(np.arange(6.0))
    np.testing.assert_array_equal(b.gyro, [0.0, 1.0, 2.0])
    np.testing.assert_array_equal((b - b).as_vector(), np.zeros(6))
    with pytest.raises(ValueError):
        ImuBias([np.nan, 0.0, 0.0], np.zeros(3))
