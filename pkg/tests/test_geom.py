import numpy as np
import pytest

from nocturne.errors import DegenerateViewError
from nocturne.geom import (
    Se3Pose,
    axis_angle_quat,
    build_covariance,
    build_covariance_backward,
    cosine_lobe_factors,
    eval_asg,
    eval_sh_basis,
    ndf_as_sg,
    normalize,
    normalize_backward,
    quat_multiply,
    quat_to_rotmat,
    quat_to_rotmat_backward,
    rotmat_to_quat,
    se3_apply,
    se3_compose,
    sh_basis_jacobian,
)
from oracles import central_difference, real_sh_reference, rel_err, uniform_sphere


# ----------------------------------------------------------------------- SH


def test_sh_band0_constant():
    assert eval_sh_basis(np.array([0.0, 0.0, 1.0]))[0] == pytest.approx(0.2820948, abs=1e-7)
    assert eval_sh_basis(np.array([0.0, 0.0, 1.0]))[0] == eval_sh_basis(np.array([1.0, 0.0, 0.0]))[0]


def test_sh_parity():
    d = uniform_sphere(np.random.default_rng(0), 50)
    y, ym = eval_sh_basis(d), eval_sh_basis(-d)
    np.testing.assert_array_equal(ym[:, 1:4], -y[:, 1:4])
    np.testing.assert_array_equal(ym[:, 4:9], y[:, 4:9])


def test_sh_matches_scipy_reference():
    d = uniform_sphere(np.random.default_rng(1), 200)
    np.testing.assert_allclose(eval_sh_basis(d), real_sh_reference(d), atol=1e-12)


def test_sh_orthonormal_monte_carlo():
    d = uniform_sphere(np.random.default_rng(2), 1_000_000)
    Y = eval_sh_basis(d)
    gram = 4 * np.pi * (Y.T @ Y) / len(d)
    np.testing.assert_allclose(gram, np.eye(9), atol=2e-2)


def test_sh_jacobian_finite_difference():
    rng = np.random.default_rng(3)
    d = uniform_sphere(rng, 5)
    J = sh_basis_jacobian(d)
    for i in range(5):
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1e-6
            num = (eval_sh_basis(d[i] + e) - eval_sh_basis(d[i] - e)) / 2e-6
            np.testing.assert_allclose(J[i, :, j], num, atol=1e-8)


def test_cosine_lobe_factors():
    np.testing.assert_allclose(cosine_lobe_factors(), [np.pi, 2 * np.pi / 3, np.pi / 4], rtol=0, atol=1e-15)


# ---------------------------------------------------------------------- ASG


def test_asg_on_axis_returns_amplitude():
    frame = quat_to_rotmat(normalize(np.array([0.9, 0.1, -0.3, 0.2])))
    amp = np.array([0.3, 0.5, 0.7])
    np.testing.assert_allclose(eval_asg(frame[:, 2], frame, 4.0, 9.0, amp), amp, atol=1e-15)


def test_asg_zero_on_equator():
    frame = np.eye(3)
    assert np.all(eval_asg(np.array([1.0, 0.0, 0.0]), frame, 2.0, 2.0, [1, 1, 1]) == 0)
    assert np.all(eval_asg(np.array([0.0, 0.6, -0.8]), frame, 2.0, 2.0, [1, 1, 1]) == 0)


def test_asg_45_degrees():
    v = np.array([np.sqrt(0.5), 0.0, np.sqrt(0.5)])
    out = eval_asg(v, np.eye(3), 2.0, 5.0, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(out, 0.26013004, atol=1e-7)  # 0.7071 * e^-1


def test_asg_non_negative():
    rng = np.random.default_rng(4)
    v = uniform_sphere(rng, 1000)
    frame = quat_to_rotmat(normalize(rng.normal(size=4)))
    out = eval_asg(v, frame, 3.0, 7.0, [1.0, 2.0, 3.0])
    assert np.all(out >= 0)
    assert np.all(out[v @ frame[:, 2] <= 0] == 0)


# ---------------------------------------------------------------------- NDF


def test_ndf_roughness_one():
    sg = ndf_as_sg(1.0, np.array([0.0, 0.0, 1.0]), 0.5)
    assert sg.nu == pytest.approx(1.0, abs=1e-15)
    assert sg.a_ndf == pytest.approx(1 / np.pi, abs=1e-15)


def test_ndf_roughness_floor_finite():
    sg = ndf_as_sg(0.0, np.array([0.0, 0.0, 1.0]), 1.0)
    assert np.isfinite(sg.nu) and sg.nu == pytest.approx(2 / 0.04 ** 4 / 4)
    assert sg.nu >= 1e-4 and sg.a_ndf > 0


@pytest.mark.parametrize("ndv", [0.0, -0.3])
def test_ndf_degenerate(ndv):
    with pytest.raises(DegenerateViewError):
        ndf_as_sg(0.5, np.array([0.0, 0.0, 1.0]), ndv)


# --------------------------------------------------------------- covariance


def test_covariance_examples():
    q = np.array([1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(build_covariance(q, np.ones(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(build_covariance(q, np.array([2.0, 1.0, 1.0])), np.diag([4.0, 1.0, 1.0]), atol=1e-15)


def test_covariance_eigenvalues_and_psd():
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = normalize(rng.normal(size=4))
        s = rng.uniform(0.05, 3.0, 3)
        cov = build_covariance(q, s)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s ** 2), atol=1e-6)
        np.linalg.cholesky(cov)


def test_covariance_backward_finite_difference():
    rng = np.random.default_rng(6)
    q, s = rng.normal(size=4), rng.uniform(0.3, 2.0, 3)
    W = rng.normal(size=(3, 3))
    dq, ds = build_covariance_backward(q, s, W)
    f = lambda: float(np.sum(build_covariance(q, s) * W))
    for i in range(4):
        assert rel_err(dq[i], central_difference(f, q, i, 1e-6), 1e-6) < 1e-6
    for i in range(3):
        assert rel_err(ds[i], central_difference(f, s, i, 1e-6), 1e-6) < 1e-6


# -------------------------------------------------------------- quaternions


def test_quaternion_rotation_matches_axis_angle():
    q = axis_angle_quat([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat_to_rotmat(q) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_quat_multiply_composes_rotations():
    rng = np.random.default_rng(7)
    a, b = normalize(rng.normal(size=4)), normalize(rng.normal(size=4))
    np.testing.assert_allclose(quat_to_rotmat(quat_multiply(a, b)), quat_to_rotmat(a) @ quat_to_rotmat(b), atol=1e-14)


def test_rotmat_quat_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(20):
        R = quat_to_rotmat(normalize(rng.normal(size=4)))
        np.testing.assert_allclose(quat_to_rotmat(rotmat_to_quat(R)), R, atol=1e-12)


def test_rotmat_backward_unnormalised_quaternion():
    rng = np.random.default_rng(9)
    q = rng.normal(size=4) * 1.7
    W = rng.normal(size=(3, 3))
    g = quat_to_rotmat_backward(q, W)
    f = lambda: float(np.sum(quat_to_rotmat(q) * W))
    for i in range(4):
        assert rel_err(g[i], central_difference(f, q, i, 1e-6), 1e-6) < 1e-6


def test_normalize_unit_and_backward():
    rng = np.random.default_rng(10)
    v = rng.normal(size=(100, 3)) * rng.uniform(0.01, 100, (100, 1))
    np.testing.assert_allclose(np.linalg.norm(normalize(v), axis=-1), 1.0, atol=1e-6)
    x = rng.normal(size=3)
    w = rng.normal(size=3)
    g = normalize_backward(x, w)
    f = lambda: float(normalize(x) @ w)
    for i in range(3):
        assert rel_err(g[i], central_difference(f, x, i, 1e-6), 1e-6) < 1e-6


# ---------------------------------------------------------------------- SE3


def test_se3_examples():
    p = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(se3_apply(Se3Pose.identity(), p), p)
    np.testing.assert_array_equal(se3_apply(Se3Pose(translation=[0, 0, 5]), np.zeros(3)), [0, 0, 5])


def _random_pose(rng):
    return Se3Pose(normalize(rng.normal(size=4)), rng.normal(size=3) * 3)


def test_se3_group_laws():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b, c = (_random_pose(rng) for _ in range(3))
        p = rng.normal(size=(5, 3))
        np.testing.assert_allclose(se3_apply(se3_compose(a, a.inverse()), p), p, atol=1e-6)
        np.testing.assert_allclose(se3_apply(se3_compose(a, b), p), se3_apply(a, se3_apply(b, p)), atol=1e-6)
        left = se3_compose(se3_compose(a, b), c)
        right = se3_compose(a, se3_compose(b, c))
        np.testing.assert_allclose(se3_apply(left, p), se3_apply(right, p), atol=1e-6)
        assert np.linalg.norm(se3_compose(a, b).rotation) == pytest.approx(1.0, abs=1e-6)
