"""Sphere and rigid-body math shared by the renderer.

Everything here is vectorised over leading axes and works on float64 arrays.
Quaternions are stored as (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateViewError

# real SH normalisation constants, no Condon-Shortley phase
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)

# (l, m) order of the 9 coefficients
SH_LM = ((0, 0), (1, -1), (1, 0), (1, 1), (2, -2), (2, -1), (2, 0), (2, 1), (2, 2))
SH_BAND = np.array([l for l, _ in SH_LM])

ROUGHNESS_FLOOR = 0.04


def cosine_lobe_factors() -> np.ndarray:
    """Clamped-cosine convolution factors (A_0, A_1, A_2)."""
    return np.array([np.pi, 2.0 * np.pi / 3.0, np.pi / 4.0])


COSINE_PER_COEFF = cosine_lobe_factors()[SH_BAND]


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def normalize_backward(v: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of ``v / |v|``."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norm
    return (grad - u * np.sum(u * grad, axis=-1, keepdims=True)) / norm


def eval_sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Degree-2 real SH basis, shape ``dirs.shape[:-1] + (9,)``."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (9,))
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = SH_C1 * x
    out[..., 4] = SH_C2[0] * x * y
    out[..., 5] = SH_C2[0] * y * z
    out[..., 6] = SH_C2[1] * (3.0 * z * z - 1.0)
    out[..., 7] = SH_C2[0] * x * z
    out[..., 8] = SH_C2[2] * (x * x - y * y)
    return out


def sh_basis_jacobian(dirs: np.ndarray) -> np.ndarray:
    """d Y_k / d dir, shape ``(..., 9, 3)``. Treats ``dirs`` as free (no renormalisation)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    jac = np.zeros(dirs.shape[:-1] + (9, 3))
    jac[..., 1, 1] = SH_C1
    jac[..., 2, 2] = SH_C1
    jac[..., 3, 0] = SH_C1
    jac[..., 4, 0] = SH_C2[0] * y
    jac[..., 4, 1] = SH_C2[0] * x
    jac[..., 5, 1] = SH_C2[0] * z
    jac[..., 5, 2] = SH_C2[0] * y
    jac[..., 6, 2] = SH_C2[1] * 6.0 * z
    jac[..., 7, 0] = SH_C2[0] * z
    jac[..., 7, 2] = SH_C2[0] * x
    jac[..., 8, 0] = SH_C2[2] * 2.0 * x
    jac[..., 8, 1] = -SH_C2[2] * 2.0 * y
    return jac


# ---------------------------------------------------------------- quaternions


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_left_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``quat_multiply(q, p) == L @ p``."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _unit_quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of an (unnormalised) quaternion."""
    return _unit_quat_to_rotmat(normalize(q))


def quat_to_rotmat_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the raw quaternion given ``dL/dR``."""
    u = normalize(q)
    w, x, y, z = np.moveaxis(u, -1, 0)
    g = dR
    dw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0]
              - 2 * x * g[..., 1, 1] - w * g[..., 1, 2] + z * g[..., 2, 0]
              + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    dy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2] - w * g[..., 2, 0]
              + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    dz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
              + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    du = np.stack([dw, dx, dy, dz], axis=-1)
    return normalize_backward(q, du)


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Single 3x3 rotation to a unit quaternion with w >= 0."""
    m = np.asarray(R, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = normalize(np.asarray(axis, dtype=float))
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def build_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``R diag(s)^2 R^T`` for (raw) quaternions ``q`` and positive scales ``s``."""
    R = quat_to_rotmat(q)
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def build_covariance_backward(q: np.ndarray, s: np.ndarray, dcov: np.ndarray):
    """Returns ``(dq, ds)`` given ``dL/dSigma``."""
    R = quat_to_rotmat(q)
    M = R * s[..., None, :]
    G = dcov + np.swapaxes(dcov, -1, -2)
    dM = G @ M
    ds = np.sum(dM * R, axis=-2)
    dR = dM * s[..., None, :]
    return quat_to_rotmat_backward(q, dR), ds


# ---------------------------------------------------------- spherical gaussians


def eval_asg(v: np.ndarray, frame: np.ndarray, sharp_x, sharp_y, amplitude) -> np.ndarray:
    """Anisotropic spherical Gaussian.

    ``frame`` holds the lobe axes as columns (x, y, z). Returns ``amplitude``
    scaled by ``max(v.z, 0) * exp(-sharp_x (v.x)^2 - sharp_y (v.y)^2)``.
    """
    vx = np.sum(v * frame[..., :, 0], axis=-1)
    vy = np.sum(v * frame[..., :, 1], axis=-1)
    vz = np.sum(v * frame[..., :, 2], axis=-1)
    lobe = np.maximum(vz, 0.0) * np.exp(-sharp_x * vx * vx - sharp_y * vy * vy)
    return np.asarray(amplitude) * lobe[..., None]


@dataclass(frozen=True)
class SgNdf:
    nu: float
    a_ndf: float
    axis: np.ndarray


def sg_sharpness(roughness, n_dot_wo):
    """(nu, a_ndf) of the reflection-warped SG standing in for the GGX NDF."""
    r = np.clip(roughness, ROUGHNESS_FLOOR, 1.0)
    alpha2 = (r * r) ** 2
    nu = 2.0 / alpha2 / (4.0 * n_dot_wo)
    return nu, 1.0 / (np.pi * alpha2)


def ndf_as_sg(roughness: float, w_r, n_dot_wo: float) -> SgNdf:
    if n_dot_wo <= 0:
        raise DegenerateViewError(f"n.w_o = {n_dot_wo} <= 0")
    nu, a_ndf = sg_sharpness(roughness, n_dot_wo)
    return SgNdf(float(nu), float(a_ndf), np.asarray(w_r, dtype=float))


def eval_sg(v: np.ndarray, axis: np.ndarray, sharpness, amplitude=1.0):
    return amplitude * np.exp(sharpness * (np.sum(v * axis, axis=-1) - 1.0))


# ------------------------------------------------------------------------ SE(3)


@dataclass(frozen=True)
class Se3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def inverse(self) -> "Se3Pose":
        qi = quat_conjugate(normalize(self.rotation))
        return Se3Pose(qi, -quat_to_rotmat(qi) @ self.translation)


def se3_apply(pose: Se3Pose, points: np.ndarray) -> np.ndarray:
    return np.asarray(points) @ pose.matrix.T + pose.translation


def se3_compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    return Se3Pose(normalize(quat_multiply(a.rotation, b.rotation)), a.matrix @ b.translation + a.translation)
