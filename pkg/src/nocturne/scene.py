"""Composite scene graph: background splats, rigid actors, sky cubemap, cameras."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MissingPoseError
from .geom import (
    Se3Pose,
    build_covariance,
    normalize,
    quat_left_matrix,
    quat_to_rotmat,
)

N_LOBES = 4
FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")

# trailing shape of every per-Gaussian parameter array
PARAM_SHAPES = {
    "mu": (3,),
    "rot": (4,),
    "log_scale": (3,),
    "opacity_logit": (),
    "albedo_logit": (3,),
    "roughness_logit": (),
    "metallic_logit": (),
    "normal_raw": (3,),
    "asg_rot": (N_LOBES, 4),
    "asg_log_sharp": (N_LOBES, 2),
    "asg_log_amp": (N_LOBES, 3),
    "spec_sh": (9, 3),
}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianParams:
    """Struct-of-arrays storage for N splats, all unconstrained."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    albedo_logit: np.ndarray
    roughness_logit: np.ndarray
    metallic_logit: np.ndarray
    normal_raw: np.ndarray
    asg_rot: np.ndarray
    asg_log_sharp: np.ndarray
    asg_log_amp: np.ndarray
    spec_sh: np.ndarray

    def __post_init__(self):
        n = len(self.mu)
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,) + shape:
                raise ValueError(f"{name}: expected shape {(n,) + shape}, got {arr.shape}")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.mu)

    @classmethod
    def empty(cls) -> "GaussianParams":
        return cls(**{k: np.zeros((0,) + s) for k, s in PARAM_SHAPES.items()})

    @classmethod
    def create(cls, mu, **overrides) -> "GaussianParams":
        """Splats at ``mu`` with neutral defaults for anything not given."""
        mu = np.asarray(mu, dtype=float).reshape(-1, 3)
        n = len(mu)
        asg_rot = np.zeros((n, N_LOBES, 4))
        asg_rot[..., 0] = 1.0
        normal = np.zeros((n, 3))
        normal[:, 2] = 1.0
        rot = np.zeros((n, 4))
        rot[:, 0] = 1.0
        values = dict(
            mu=mu,
            rot=rot,
            log_scale=np.full((n, 3), np.log(0.05)),
            opacity_logit=np.full(n, logit(0.5)),
            albedo_logit=np.zeros((n, 3)),
            roughness_logit=np.zeros(n),
            metallic_logit=np.full(n, logit(0.1)),
            normal_raw=normal,
            asg_rot=asg_rot,
            asg_log_sharp=np.full((n, N_LOBES, 2), np.log(10.0)),
            asg_log_amp=np.full((n, N_LOBES, 3), -6.0),
            spec_sh=np.zeros((n, 9, 3)),
        )
        for k, v in overrides.items():
            if k not in PARAM_SHAPES:
                raise KeyError(k)
            values[k] = np.broadcast_to(np.asarray(v, dtype=float), (n,) + PARAM_SHAPES[k]).copy()
        return cls(**values)

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_SHAPES}

    def copy(self) -> "GaussianParams":
        return GaussianParams(**{k: v.copy() for k, v in self.arrays().items()})

    def subset(self, idx) -> "GaussianParams":
        return GaussianParams(**{k: v[idx] for k, v in self.arrays().items()})

    @staticmethod
    def concat(parts) -> "GaussianParams":
        parts = list(parts)
        if not parts:
            return GaussianParams.empty()
        return GaussianParams(**{k: np.concatenate([p.arrays()[k] for p in parts]) for k in PARAM_SHAPES})

    # activations
    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def albedo(self):
        return sigmoid(self.albedo_logit)

    @property
    def roughness(self):
        return sigmoid(self.roughness_logit)

    @property
    def metallic(self):
        return sigmoid(self.metallic_logit)

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def normal(self):
        return normalize(self.normal_raw)

    @property
    def covariance(self):
        return build_covariance(self.rot, self.scale)

    @property
    def asg_frames(self):
        return quat_to_rotmat(self.asg_rot)

    @property
    def asg_sharpness(self):
        return np.exp(self.asg_log_sharp)

    @property
    def asg_amplitude(self):
        return np.exp(self.asg_log_amp)


@dataclass
class RigidActor:
    id: str
    gaussians: GaussianParams
    trajectory: dict  # timestep -> Se3Pose
    bbox_min: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    bbox_max: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))

    def pose_at(self, t: float) -> Se3Pose:
        for key, pose in self.trajectory.items():
            if np.isclose(key, t, rtol=0.0, atol=1e-9):
                return pose
        raise MissingPoseError(f"actor {self.id!r} has no pose at t={t}")


LOG_TEXEL_FLOOR = -30.0


@dataclass
class CubeMap:
    """Sky cubemap; HDR texels are stored as logs so they stay non-negative under Adam."""

    log_texels: np.ndarray  # (6, R, R, 3), faces +X -X +Y -Y +Z -Z

    @classmethod
    def from_texels(cls, texels) -> "CubeMap":
        tex = np.asarray(texels, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(np.maximum(np.log(tex), LOG_TEXEL_FLOOR))

    @classmethod
    def constant(cls, value, resolution: int = 64) -> "CubeMap":
        tex = np.empty((6, resolution, resolution, 3))
        tex[:] = np.asarray(value, dtype=float)
        return cls.from_texels(tex)

    @property
    def texels(self) -> np.ndarray:
        return np.exp(self.log_texels)

    @property
    def face_resolution(self) -> int:
        return self.log_texels.shape[1]


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward); pose is camera-to-world."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Se3Pose = field(default_factory=Se3Pose.identity)
    camera_id: int = 0
    timestep: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def world_to_camera(self):
        """(R, t) mapping world points into camera space."""
        R = self.pose.matrix.T
        return R, -R @ self.pose.translation

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def pixel_rays(self) -> np.ndarray:
        """World-space unit ray directions through pixel centres, (H, W, 3)."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        d = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        return normalize(d @ self.pose.matrix.T)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Se3Pose:
    """Camera-to-world pose looking from ``eye`` at ``target`` (OpenCV axes)."""
    from .geom import rotmat_to_quat

    eye = np.asarray(eye, dtype=float)
    fwd = normalize(np.asarray(target, dtype=float) - eye)
    right = normalize(np.cross(fwd, np.asarray(up, dtype=float)))
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    return Se3Pose(rotmat_to_quat(R), eye)


@dataclass
class SceneGraph:
    background: GaussianParams
    actors: list
    sky: CubeMap
    timeline: np.ndarray
    cameras: list
    illum: object = None  # GlobalIllumNet

    def __post_init__(self):
        self.timeline = np.asarray(self.timeline, dtype=float)

    @property
    def n_gaussians(self) -> int:
        return len(self.background) + sum(len(a.gaussians) for a in self.actors)

    def normalized_time(self, t: float) -> float:
        lo, hi = float(self.timeline.min()), float(self.timeline.max())
        if hi == lo:
            return 0.0
        return (t - lo) / (hi - lo)

    def copy(self) -> "SceneGraph":
        return replace(
            self,
            background=self.background.copy(),
            actors=[replace(a, gaussians=a.gaussians.copy(), trajectory=dict(a.trajectory)) for a in self.actors],
            sky=CubeMap(self.sky.log_texels.copy()),
            timeline=self.timeline.copy(),
            cameras=list(self.cameras),
            illum=self.illum.copy() if self.illum is not None else None,
        )


@dataclass
class ResolvedGaussians:
    """World-frame splats for one timestep plus the bookkeeping to route gradients back."""

    params: GaussianParams
    # per-splat rotation taking world directions into the owning node's frame
    local_rot: np.ndarray
    # (node, start, stop, pose) where node is None for the background
    segments: list


def transform_params(g: GaussianParams, pose: Se3Pose) -> GaussianParams:
    R = pose.matrix
    L = quat_left_matrix(normalize(pose.rotation))
    out = g.copy()
    out.mu = g.mu @ R.T + pose.translation
    out.rot = g.rot @ L.T
    out.normal_raw = g.normal_raw @ R.T
    out.asg_rot = g.asg_rot @ L.T
    return out


def transform_grads_to_local(grads: dict, pose: Se3Pose) -> dict:
    """Pull world-frame parameter gradients back through a rigid pose."""
    R = pose.matrix
    L = quat_left_matrix(normalize(pose.rotation))
    out = dict(grads)
    out["mu"] = grads["mu"] @ R
    out["rot"] = grads["rot"] @ L
    out["normal_raw"] = grads["normal_raw"] @ R
    out["asg_rot"] = grads["asg_rot"] @ L
    return out


def resolve_scene(scene: SceneGraph, t: float) -> ResolvedGaussians:
    parts = [scene.background]
    rots = [np.broadcast_to(np.eye(3), (len(scene.background), 3, 3))]
    segments = [(None, 0, len(scene.background), None)]
    start = len(scene.background)
    for actor in sorted(scene.actors, key=lambda a: a.id):
        pose = actor.pose_at(t)
        parts.append(transform_params(actor.gaussians, pose))
        n = len(actor.gaussians)
        rots.append(np.broadcast_to(pose.matrix.T, (n, 3, 3)))
        segments.append((actor, start, start + n, pose))
        start += n
    return ResolvedGaussians(GaussianParams.concat(parts), np.concatenate(rots), segments)


def covariance_eigenvalues(g: GaussianParams) -> np.ndarray:
    return np.linalg.eigvalsh(build_covariance(g.rot, g.scale))


# ------------------------------------------------------------------ cubemap


def _cube_face_uv(dirs: np.ndarray):
    """Face index and (u, v) in [0, 1] for each direction (OpenGL face layout)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    face = np.where(
        (ax >= ay) & (ax >= az),
        np.where(x > 0, 0, 1),
        np.where(ay >= az, np.where(y > 0, 2, 3), np.where(z > 0, 4, 5)),
    )
    sc = np.select([face == 0, face == 1, face == 2, face == 3, face == 4], [-z, z, x, x, x], -x)
    tc = np.select([face == 2, face == 3], [z, -z], -y)
    ma = np.select([face < 2, face < 4], [ax, ay], az)
    u = 0.5 * (sc / ma + 1.0)
    v = 0.5 * (tc / ma + 1.0)
    return face, u, v


def cubemap_weights(res: int, dirs: np.ndarray):
    """Flat texel indices (..., 4) and bilinear weights (..., 4) for ``dirs``."""
    face, u, v = _cube_face_uv(dirs)
    fx = np.clip(u * res - 0.5, 0.0, res - 1.0)
    fy = np.clip(v * res - 0.5, 0.0, res - 1.0)
    x0 = np.minimum(np.floor(fx).astype(int), res - 2) if res > 1 else np.zeros_like(fx, dtype=int)
    y0 = np.minimum(np.floor(fy).astype(int), res - 2) if res > 1 else np.zeros_like(fy, dtype=int)
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    tx = fx - x0
    ty = fy - y0
    base = face * res * res
    idx = np.stack([base + y0 * res + x0, base + y0 * res + x1, base + y1 * res + x0, base + y1 * res + x1], axis=-1)
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=-1)
    return idx, w


def sample_cubemap(sky: CubeMap, dirs) -> np.ndarray:
    dirs = np.asarray(dirs, dtype=float)
    idx, w = cubemap_weights(sky.face_resolution, dirs)
    flat = sky.texels.reshape(-1, 3)
    return np.sum(flat[idx] * w[..., None], axis=-2)


def sample_cubemap_backward(sky: CubeMap, dirs, grad) -> np.ndarray:
    idx, w = cubemap_weights(sky.face_resolution, np.asarray(dirs, dtype=float))
    out = np.zeros((sky.log_texels.size // 3, 3))
    np.add.at(out, idx.reshape(-1), (w[..., None] * grad[..., None, :]).reshape(-1, 3))
    return out.reshape(sky.log_texels.shape)
