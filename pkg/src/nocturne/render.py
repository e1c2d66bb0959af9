"""Full frame pipeline: resolve -> shade -> project -> composite, and its reverse pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import normalize, normalize_backward, quat_to_rotmat_backward
from .rasterizer import (
    T_MIN,
    CompositeResult,
    Projection,
    RenderOutput,
    Splats,
    composite,
    composite_backward,
    conic_backward,
    normalize_by_weight,
    project_backward,
    project_gaussians,
)
from .scene import (
    Camera,
    PARAM_SHAPES,
    ResolvedGaussians,
    SceneGraph,
    resolve_scene,
    sample_cubemap,
    sample_cubemap_backward,
    transform_grads_to_local,
)
from .shading import ShadeResult, ShadingConfig, ShadingInputs, shade, shade_backward, tone_map, tone_map_grad

N_BASE_FEATURES = 7  # rgb, camera-frame normal, depth
N_AUX_FEATURES = 9  # albedo, diffuse HDR, specular HDR


@dataclass(frozen=True)
class RenderSettings:
    shading: ShadingConfig = ShadingConfig()
    t_min: float = T_MIN
    aux: bool = False


@dataclass
class FrameCache:
    cam: Camera
    t_norm: float
    resolved: ResolvedGaussians
    proj: Projection
    vis: np.ndarray
    inputs: ShadingInputs
    shaded: ShadeResult
    comp: CompositeResult
    sky_hdr: np.ndarray
    sky_ldr: np.ndarray
    settings: RenderSettings
    extra: dict = field(default_factory=dict)


def shading_inputs(g, vis, cam: Camera, env, local_rot) -> ShadingInputs:
    mu = g.mu[vis]
    return ShadingInputs(
        albedo=g.albedo[vis],
        roughness=g.roughness[vis],
        metallic=g.metallic[vis],
        normal=g.normal[vis],
        w_o=normalize(cam.center - mu),
        frames=g.asg_frames[vis],
        sharpness=g.asg_sharpness[vis],
        amplitude=g.asg_amplitude[vis],
        env=env,
        spec_sh=g.spec_sh[vis],
        local_rot=local_rot[vis],
    )


def render_frame(scene: SceneGraph, cam: Camera, settings: RenderSettings = RenderSettings()):
    """Render one camera; returns ``(RenderOutput, FrameCache)``."""
    t_norm = scene.normalized_time(cam.timestep)
    resolved = resolve_scene(scene, cam.timestep)
    g = resolved.params
    if scene.illum is not None and settings.shading.diffuse:
        env = scene.illum.forward(t_norm, cam.camera_id)
    else:
        env = np.zeros((9, 3))

    proj = project_gaussians(g.mu, g.rot, g.scale, cam)
    vis = np.nonzero(proj.visible)[0]
    inputs = shading_inputs(g, vis, cam, env, resolved.local_rot)
    shaded = shade(inputs, settings.shading)
    W = proj.W
    cols = [shaded.ldr, inputs.normal @ W.T, proj.depth[vis, None]]
    if settings.aux:
        cols += [inputs.albedo, shaded.diffuse, shaded.specular]
    splats = Splats(
        mean2d=proj.mean2d[vis],
        cov2d=proj.cov2d[vis],
        depth=proj.depth[vis],
        opacity=g.opacity[vis],
        features=np.concatenate(cols, axis=1),
        source_index=vis,
    )
    comp = composite(splats, cam.width, cam.height, settings.t_min)
    sky_hdr = sample_cubemap(scene.sky, cam.pixel_rays())
    sky_ldr = tone_map(sky_hdr)
    acc, T = comp.accum, comp.transmittance
    alpha = 1.0 - T
    out = RenderOutput(
        rgb=acc[..., 0:3] + T[..., None] * sky_ldr,
        normal_map=normalize_by_weight(acc[..., 3:6], alpha),
        depth_map=normalize_by_weight(acc[..., 6], alpha),
        alpha_map=alpha,
    )
    if settings.aux:
        out.albedo, out.diffuse, out.specular = acc[..., 7:10], acc[..., 10:13], acc[..., 13:16]
    cache = FrameCache(cam, t_norm, resolved, proj, vis, inputs, shaded, comp, sky_hdr, sky_ldr, settings)
    return out, cache


def render(scene: SceneGraph, cam: Camera, settings: RenderSettings = RenderSettings()) -> RenderOutput:
    return render_frame(scene, cam, settings)[0]


@dataclass
class SceneGrads:
    background: dict
    actors: dict  # actor id -> dict
    sky: np.ndarray
    illum: dict | None


def zero_grads(scene: SceneGraph) -> SceneGrads:
    def zeros_like(g):
        return {k: np.zeros_like(v) for k, v in g.arrays().items()}

    illum = {k: np.zeros_like(v) for k, v in scene.illum.params.items()} if scene.illum is not None else None
    return SceneGrads(
        zeros_like(scene.background),
        {a.id: zeros_like(a.gaussians) for a in scene.actors},
        np.zeros_like(scene.sky.log_texels),
        illum,
    )


def render_backward(scene: SceneGraph, cache: FrameCache, d_rgb=None, d_normal_map=None, d_depth_map=None,
                    d_alpha=None) -> SceneGrads:
    """Gradients of a scalar loss w.r.t. every scene parameter, given map gradients."""
    cam = cache.cam
    comp = cache.comp
    H, W = comp.transmittance.shape
    acc, T = comp.accum, comp.transmittance
    alpha = 1.0 - T
    K = acc.shape[-1]
    d_acc = np.zeros((H, W, K))
    d_T = np.zeros((H, W))
    grads = zero_grads(scene)

    if d_rgb is not None:
        d_acc[..., 0:3] += d_rgb
        d_T += np.sum(d_rgb * cache.sky_ldr, axis=-1)
        d_sky_hdr = d_rgb * T[..., None] * tone_map_grad(cache.sky_hdr)
        grads.sky += sample_cubemap_backward(scene.sky, cam.pixel_rays(), d_sky_hdr) * scene.sky.texels
    covered = alpha > 0
    safe = np.where(covered, alpha, 1.0)
    d_A = np.zeros((H, W)) if d_alpha is None else np.array(d_alpha, dtype=float)
    if d_normal_map is not None:
        g = np.where(covered[..., None], d_normal_map, 0.0)
        d_acc[..., 3:6] += g / safe[..., None]
        d_A -= np.sum(g * acc[..., 3:6], axis=-1) / safe ** 2
    if d_depth_map is not None:
        g = np.where(covered, d_depth_map, 0.0)
        d_acc[..., 6] += g / safe
        d_A -= g * acc[..., 6] / safe ** 2
    d_T -= d_A

    d_feat, d_opac, d_mean, d_conic = composite_backward(comp, d_acc, d_T)

    vis = cache.vis
    res = cache.resolved
    g = res.params
    inp = cache.inputs
    proj = cache.proj
    N = len(g)

    sgr = shade_backward(cache.shaded, inp, d_feat[:, 0:3])
    d_normal = sgr["normal"] + d_feat[:, 3:6] @ proj.W
    d_depth = d_feat[:, 6]

    mu_v = g.mu[vis]
    d_mu_v = -normalize_backward(cam.center - mu_v, sgr["w_o"])

    d_cov2d = conic_backward(proj.cov2d[vis], d_conic)
    sub = Projection(proj.visible[vis], proj.mean2d[vis], proj.cov2d[vis], proj.depth[vis], proj.t_cam[vis],
                     proj.J[vis], proj.W, proj.sigma[vis])
    scale_v = g.scale[vis]
    dmu_p, drot_p, dscale_p = project_backward(sub, g.rot[vis], scale_v, cam, d_mean, d_cov2d, d_depth)
    d_mu_v += dmu_p

    world = {k: np.zeros((N,) + s) for k, s in PARAM_SHAPES.items()}
    world["mu"][vis] = d_mu_v
    world["rot"][vis] = drot_p
    world["log_scale"][vis] = dscale_p * scale_v
    o = g.opacity[vis]
    world["opacity_logit"][vis] = d_opac * o * (1 - o)
    b = inp.albedo
    world["albedo_logit"][vis] = sgr["albedo"] * b * (1 - b)
    r = inp.roughness
    world["roughness_logit"][vis] = sgr["roughness"] * r * (1 - r)
    m = inp.metallic
    world["metallic_logit"][vis] = sgr["metallic"] * m * (1 - m)
    world["normal_raw"][vis] = normalize_backward(g.normal_raw[vis], d_normal)
    world["asg_rot"][vis] = quat_to_rotmat_backward(g.asg_rot[vis], sgr["frames"])
    world["asg_log_sharp"][vis] = sgr["sharpness"] * inp.sharpness
    world["asg_log_amp"][vis] = sgr["amplitude"] * inp.amplitude
    if sgr["spec_sh"] is not None:
        world["spec_sh"][vis] = sgr["spec_sh"]

    for node, start, stop, pose in res.segments:
        part = {k: v[start:stop] for k, v in world.items()}
        if node is None:
            for k in part:
                grads.background[k] += part[k]
        else:
            local = transform_grads_to_local(part, pose)
            for k in local:
                grads.actors[node.id][k] += local[k]

    if scene.illum is not None and cache.settings.shading.diffuse:
        grads.illum = scene.illum.backward(cache.t_norm, cam.camera_id, sgr["env"])
    return grads


@dataclass
class Decomposition:
    """Per-pixel component maps of one view.

    ``diffuse`` and ``specular`` are HDR and satisfy
    ``tone_map(diffuse + specular) == rgb``: the HDR radiance behind each rendered
    pixel, ``rgb / (1 - rgb)``, is split between the two components in proportion
    to their alpha-composited contributions (``composited_diffuse`` and
    ``composited_specular``). Sky seen through the splats counts as diffuse.
    """

    rgb: np.ndarray
    albedo: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    composited_diffuse: np.ndarray
    composited_specular: np.ndarray


def inverse_tone_map(ldr):
    ldr = np.asarray(ldr, dtype=float)
    return ldr / (1.0 - ldr)


def decompose(scene: SceneGraph, cam: Camera, settings: RenderSettings = RenderSettings()) -> Decomposition:
    settings = RenderSettings(shading=settings.shading, t_min=settings.t_min, aux=True)
    out, cache = render_frame(scene, cam, settings)
    alpha = out.alpha_map
    hdr = inverse_tone_map(out.rgb)
    d = out.diffuse + cache.comp.transmittance[..., None] * cache.sky_hdr
    s = out.specular
    total = d + s
    share = np.divide(s, total, out=np.zeros_like(s), where=total > 0)
    specular = share * hdr
    return Decomposition(
        rgb=out.rgb,
        albedo=normalize_by_weight(out.albedo, alpha),
        diffuse=hdr - specular,
        specular=specular,
        normal=out.normal_map,
        alpha=alpha,
        composited_diffuse=out.diffuse,
        composited_specular=out.specular,
    )
