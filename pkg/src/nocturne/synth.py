"""Procedural night scenes with self-rendered ground truth, for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geom import SH_C0, Se3Pose, axis_angle_quat, normalize, quat_multiply, rotmat_to_quat
from .illumination import GlobalIllumNet
from .optim import Frame
from .rasterizer import ALPHA_MASK
from .render import RenderSettings, render
from .scene import N_LOBES, Camera, CubeMap, GaussianParams, RigidActor, SceneGraph, logit, look_at
from .shading import ShadingConfig

REFERENCE_T_MIN = 0.0  # ground truth is composited without early termination


@dataclass(frozen=True)
class SynthConfig:
    n_gaussians: int = 200
    n_actors: int = 1
    n_cameras: int = 8
    n_timesteps: int = 12
    width: int = 64
    height: int = 48
    focal: float = 52.0
    ring_radius: float = 5.0
    ring_height: float = 2.2
    sky_resolution: int = 8
    light: str = "ambient"  # "ambient" or "headlight"

    def __post_init__(self):
        if self.light not in ("ambient", "headlight"):
            raise ValueError(f"unknown light setup {self.light!r}")


def _f32(g: GaussianParams) -> GaussianParams:
    return GaussianParams(**{k: v.astype(np.float32).astype(np.float64) for k, v in g.arrays().items()})


def _rot_from_normal(n):
    """Quaternion whose local z axis is ``n``."""
    z = normalize(np.asarray(n, dtype=float))
    a = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = normalize(np.cross(a, z))
    y = np.cross(z, x)
    return rotmat_to_quat(np.stack([x, y, z], axis=1))


def _surface(rng, centers, normals, size, albedo_base, albedo_jitter=0.1):
    n = len(centers)
    rot = np.stack([_rot_from_normal(nn) for nn in normals])
    scale = np.empty((n, 3))
    scale[:, 0:2] = size * rng.uniform(0.9, 1.2, (n, 2))
    scale[:, 2] = 0.02
    albedo = np.clip(np.asarray(albedo_base) + rng.uniform(-albedo_jitter, albedo_jitter, (n, 3)), 0.05, 0.95)
    lobes = quat_multiply(rot[:, None, :], _random_quats(rng, (n, N_LOBES), spread=0.6))
    return GaussianParams.create(
        centers,
        rot=rot,
        log_scale=np.log(scale),
        opacity_logit=logit(rng.uniform(0.85, 0.97, n)),
        albedo_logit=logit(albedo),
        roughness_logit=logit(rng.uniform(0.35, 0.8, n)),
        metallic_logit=logit(rng.uniform(0.02, 0.3, n)),
        normal_raw=normals,
        asg_rot=lobes,
        asg_log_sharp=np.log(rng.uniform(4.0, 30.0, (n, N_LOBES, 2))),
        asg_log_amp=np.log(rng.uniform(0.05, 0.4, (n, N_LOBES, 3))),
    )


def _random_quats(rng, shape, spread):
    axis = normalize(rng.normal(size=shape + (3,)))
    ang = rng.uniform(0.0, spread, shape)
    return np.concatenate([np.cos(ang / 2)[..., None], np.sin(ang / 2)[..., None] * axis], axis=-1)


def _ground(rng, count, half=3.2):
    k = int(np.ceil(np.sqrt(count)))
    xs = np.linspace(-half, half, k)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(k * k)], axis=-1)[:count]
    pts[:, :2] += rng.uniform(-0.05, 0.05, (count, 2))
    normals = np.tile([0.0, 0.0, 1.0], (count, 1))
    return _surface(rng, pts, normals, 0.75 * (2 * half / max(k - 1, 1)), [0.35, 0.35, 0.38])


def _box(rng, count, center, half_extent, albedo):
    """Splats scattered over the faces of an axis-aligned box (the bottom face is skipped)."""
    he = np.asarray(half_extent, dtype=float)
    faces = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1)]
    areas = np.array([he[(a + 1) % 3] * he[(a + 2) % 3] for a, _ in faces])
    per = np.maximum(1, np.round(count * areas / areas.sum()).astype(int))
    while per.sum() > count:
        per[np.argmax(per)] -= 1
    while per.sum() < count:
        per[np.argmin(per)] += 1
    pts, normals = [], []
    for (axis, sign), m in zip(faces, per):
        u = rng.uniform(-1, 1, (m, 3)) * he
        u[:, axis] = sign * he[axis]
        nrm = np.zeros((m, 3))
        nrm[:, axis] = sign
        pts.append(u)
        normals.append(nrm)
    pts = np.concatenate(pts) + np.asarray(center, dtype=float)
    normals = np.concatenate(normals)
    size = 0.9 * np.sqrt(4 * np.sum(areas) / count)
    return _surface(rng, pts, normals, size, albedo, albedo_jitter=0.15)


def _illum_net(rng, camera_ids, seed):
    net = GlobalIllumNet(camera_ids, seed=seed)
    for l, k in enumerate((1, 3, 5)):
        net.params[f"head{l}_W"] = rng.normal(0.0, 0.1 / (l + 1), net.params[f"head{l}_W"].shape)
    net.params["head0_b"][:] = [2.2, 2.0, 2.4]
    net.params["head1_b"][:] = np.array([0.0, 0.0, 0.0, 0.9, 0.8, 0.9, 0.2, 0.2, 0.25])
    return net


def _night_sky(res, rng):
    tex = np.empty((6, res, res, 3))
    tex[:] = [0.02, 0.025, 0.05]
    tex[2:4] = [0.05, 0.05, 0.08]  # +-Y horizon glow
    tex[4] = [0.08, 0.09, 0.16]  # +Z zenith
    tex += rng.uniform(0.0, 0.01, tex.shape)
    return CubeMap.from_texels(tex)


def _headlight(rng, count, position, aim):
    """A tight cluster of bright, specular-dominant splats."""
    pts = np.asarray(position) + rng.normal(0.0, 0.05, (count, 3))
    normals = np.tile(normalize(np.asarray(aim, dtype=float)), (count, 1))
    g = _surface(rng, pts, normals, 0.06, [0.9, 0.85, 0.7], albedo_jitter=0.02)
    g.log_scale[:, 2] = np.log(0.04)
    g.roughness_logit[:] = logit(0.9)
    g.albedo_logit[:] = logit(np.array([0.3, 0.3, 0.25]))
    # broad lobes centred on the normal so the reflection direction hits them from any view
    g.asg_rot[:] = np.tile(_rot_from_normal(normals[0]), (count, N_LOBES, 1))
    g.asg_log_sharp[:] = np.log(1.0)
    g.asg_log_amp[:] = np.log(np.array([6.0, 5.0, 3.5]))
    return g


def _aim_lobes_at(g: GaussianParams, light_pos, rng, strength, sharpness):
    """Point one lobe of each splat at the light, so its mirror reflection shows up as a highlight."""
    d = normalize(np.asarray(light_pos) - g.mu)
    dist2 = np.sum((np.asarray(light_pos) - g.mu) ** 2, axis=-1)
    for i in range(len(g)):
        g.asg_rot[i, 0] = _rot_from_normal(d[i])
    g.asg_log_sharp[:, 0, :] = np.log(sharpness * rng.uniform(0.8, 1.25, (len(g), 2)))
    amp = strength / (1.0 + dist2)
    g.asg_log_amp[:, 0, :] = np.log(amp[:, None] * np.array([1.0, 0.9, 0.7]))
    g.roughness_logit[:] = logit(rng.uniform(0.3, 0.5, len(g)))
    g.metallic_logit[:] = logit(rng.uniform(0.3, 0.6, len(g)))


def make_cameras(cfg: SynthConfig, timeline):
    """Cameras ordered camera-major: frame index = camera * n_timesteps + timestep index."""
    cams = []
    for c in range(cfg.n_cameras):
        ang = 2 * np.pi * c / cfg.n_cameras + 0.3
        eye = [cfg.ring_radius * np.cos(ang), cfg.ring_radius * np.sin(ang), cfg.ring_height]
        pose = look_at(eye, [0.0, 0.0, 0.2])
        for t in timeline:
            cams.append(Camera(cfg.focal, cfg.focal, cfg.width / 2, cfg.height / 2, cfg.width, cfg.height,
                               pose, camera_id=c, timestep=float(t)))
    return cams


def synth_scene(cfg: SynthConfig = SynthConfig(), seed: int = 0) -> SceneGraph:
    """Deterministic ground-truth scene (parameters rounded to float32)."""
    rng = np.random.default_rng(seed)
    timeline = np.linspace(0.0, 1.0, cfg.n_timesteps)
    n_actor_total = min(40 * cfg.n_actors, cfg.n_gaussians // 4)
    n_light = 12 if cfg.light == "headlight" else 0
    n_rest = cfg.n_gaussians - n_actor_total - n_light
    n_ground = n_rest // 2
    n_objects = n_rest - n_ground

    parts = [_ground(rng, n_ground)]
    if n_objects:
        n_a = n_objects // 2
        parts.append(_box(rng, n_a, [-1.6, 1.4, 0.45], [0.5, 0.6, 0.45], [0.6, 0.3, 0.2]))
        parts.append(_box(rng, n_objects - n_a, [1.5, -1.5, 0.35], [0.4, 0.4, 0.35], [0.25, 0.45, 0.6]))
    if cfg.light == "headlight":
        light_pos = np.array([-0.3, -1.9, 0.45])
        _aim_lobes_at(parts[0], light_pos, rng, strength=80.0, sharpness=15.0)
        parts.append(_headlight(rng, n_light, light_pos, aim=[0.3, 1.0, -0.05]))
    background = _f32(GaussianParams.concat(parts))

    actors = []
    per_actor = n_actor_total // max(cfg.n_actors, 1)
    for a in range(cfg.n_actors):
        half = np.array([0.55, 0.3, 0.22])
        g = _f32(_box(rng, per_actor, [0.0, 0.0, 0.0], half, rng.uniform(0.3, 0.8, 3)))
        traj = {}
        y0 = -0.4 + 0.8 * a
        for t in timeline:
            yaw = 0.25 * (t - 0.5)
            traj[float(t)] = Se3Pose(axis_angle_quat([0, 0, 1], yaw), [-1.2 + 2.4 * t, y0, 0.24])
        actors.append(RigidActor(f"actor{a}", g, traj, -half, half))

    cameras = make_cameras(cfg, timeline)
    net = _illum_net(rng, list(range(cfg.n_cameras)), seed=seed + 1)
    for k, v in net.params.items():
        net.params[k] = v.astype(np.float32).astype(np.float64)
    sky = _night_sky(cfg.sky_resolution, rng)
    sky.log_texels = sky.log_texels.astype(np.float32).astype(np.float64)
    return SceneGraph(background, actors, sky, timeline, cameras, net)


def reference_settings(shading: ShadingConfig = ShadingConfig(), aux: bool = False) -> RenderSettings:
    return RenderSettings(shading=shading, t_min=REFERENCE_T_MIN, aux=aux)


def render_targets(scene: SceneGraph) -> list:
    """Ground-truth frames: reference renders plus normal priors from the rendered normals."""
    frames = []
    for cam in scene.cameras:
        out = render(scene, cam, reference_settings())
        prior = normalize(np.where(out.alpha_map[..., None] > ALPHA_MASK, out.normal_map, [0.0, 0.0, 1.0]))
        prior = np.where(out.alpha_map[..., None] > ALPHA_MASK, prior, 0.0)
        frames.append(Frame(cam, out.rgb, prior))
    return frames


def perturbed_init(gt: SceneGraph, seed: int = 0, pos_noise: float = 0.02, scale_noise: float = 0.1,
                   rot_noise: float = 0.1, normal_noise: float = 0.15) -> SceneGraph:
    """Training start point: jittered geometry, neutral materials and lighting.

    Positions, scales, rotations and normals are perturbed copies of the ground
    truth (the role LiDAR plays on real data); albedo, roughness, metallic,
    opacity, specular lobes, sky and the lighting network are reset.
    """
    rng = np.random.default_rng(seed + 7919)

    def reset(g: GaussianParams) -> GaussianParams:
        n = len(g)
        out = GaussianParams.create(g.mu + rng.normal(0.0, pos_noise, (n, 3)))
        out.rot = quat_multiply(_random_quats(rng, (n,), rot_noise), g.rot)
        out.log_scale = g.log_scale + rng.normal(0.0, scale_noise, (n, 3))
        out.normal_raw = normalize(g.normal_raw) + rng.normal(0.0, normal_noise, (n, 3))
        out.opacity_logit[:] = logit(0.7)
        out.albedo_logit[:] = 0.0
        out.roughness_logit[:] = 0.0
        out.asg_rot = _random_quats(rng, (n, N_LOBES), np.pi)
        out.asg_log_sharp[:] = np.log(10.0)
        out.asg_log_amp[:] = np.log(0.1)
        # constant SH lobe of the same strength; all-zero would sit on the max(., 0) kink with no gradient
        out.spec_sh[:, 0, :] = 0.1 / SH_C0
        return out

    scene = gt.copy()
    scene.background = reset(gt.background)
    scene.actors = [replace(a, gaussians=reset(a.gaussians)) for a in scene.actors]
    scene.sky = CubeMap.constant([0.05, 0.05, 0.08], gt.sky.face_resolution)
    scene.illum = GlobalIllumNet(gt.illum.camera_ids, seed=seed + 1)
    return scene
