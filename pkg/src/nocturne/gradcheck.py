"""Finite-difference check of the full analytic backward pass.

A small scene (background splats, one rigid actor, sky, lighting network) is
rendered, scored with the training loss, and every parameter group is probed
with central differences. Loss gates (pixel masks, confidence weights) are
frozen at the base point, as they are during training.

Coordinates whose neighbourhood contains a kink (a splat crossing its 3-sigma
footprint, the opacity clamp, early termination, an L1 sign flip, the
``max(., 0)`` clamps) give step-size-dependent differences; those coordinates are
detected by comparing two step sizes and skipped, and the skip count is
reported alongside the errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Se3Pose, axis_angle_quat
from .illumination import GlobalIllumNet
from .losses import LossWeights
from .optim import Frame, flatten_grads, frame_losses, loss_gates, scene_parameters
from .render import RenderSettings, render_backward, render_frame
from .scene import Camera, CubeMap, GaussianParams, RigidActor, SceneGraph, look_at
from .shading import ShadingConfig

STEP = 1e-6
KINK_TOL = 1e-4  # relative disagreement between step sizes that flags a non-smooth point
ERROR_FLOOR = 1e-6  # absolute gradient scale below which errors are measured absolutely


@dataclass
class GradCheckReport:
    errors: dict  # parameter name -> max relative error over the probed coordinates
    probed: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def gradcheck_scene(seed: int = 0, n_gaussians: int = 10, size: int = 32, n_actor: int = 3) -> SceneGraph:
    """Random test scene: ``n_gaussians`` splats in front of one camera, some riding on an actor."""
    rng = np.random.default_rng(seed)
    N = n_gaussians
    mu = rng.uniform(-1, 1, (N, 3)) * [1.0, 1.0, 0.3]
    g = GaussianParams.create(
        mu,
        rot=rng.normal(size=(N, 4)),
        log_scale=np.log(rng.uniform(0.15, 0.4, (N, 3))),
        opacity_logit=rng.normal(size=N),
        albedo_logit=rng.normal(size=(N, 3)),
        roughness_logit=rng.normal(size=N),
        metallic_logit=rng.normal(size=N),
        normal_raw=rng.normal(size=(N, 3)) + [0.0, 0.0, -2.0],
        asg_rot=rng.normal(size=(N, 4, 4)),
        asg_log_sharp=np.log(rng.uniform(2, 10, (N, 4, 2))),
        asg_log_amp=rng.normal(size=(N, 4, 3)),
        spec_sh=rng.normal(0.0, 0.3, (N, 9, 3)) + np.r_[1.0, np.zeros(8)][:, None],
    )
    actor = RigidActor(
        "car",
        g.subset(slice(0, n_actor)),
        {0.0: Se3Pose(axis_angle_quat([0, 0, 1], 0.4), [0.1, 0.2, 0.0]), 1.0: Se3Pose()},
    )
    f = 1.25 * size
    cam = Camera(f, f, size / 2, size / 2, size, size, look_at([0.3, 0.2, -4], [0, 0, 0], up=[0, 1, 0]), 0, 0.0)
    net = GlobalIllumNet([0], seed=seed + 1)
    for k in net.params:
        if k.startswith("head"):
            net.params[k] += rng.normal(size=net.params[k].shape) * 0.1
    sky = CubeMap.from_texels(rng.uniform(0.05, 1.0, (6, 4, 4, 3)))
    return SceneGraph(g.subset(slice(n_actor, N)), [actor], sky, [0.0, 1.0], [cam], net)


def gradcheck_frame(scene: SceneGraph, seed: int = 0, settings: RenderSettings = RenderSettings()) -> Frame:
    """Random target image with a normal prior wherever the render has coverage."""
    rng = np.random.default_rng(seed + 101)
    cam = scene.cameras[0]
    out, _ = render_frame(scene, cam, settings)
    image = rng.uniform(0.0, 1.0, (cam.height, cam.width, 3))
    prior = out.normal_map + rng.normal(0.0, 0.3, out.normal_map.shape)
    prior /= np.linalg.norm(prior, axis=-1, keepdims=True)
    prior[out.alpha_map <= 0.05] = 0.0
    return Frame(cam, image, prior)


def run_gradcheck(seed: int = 0, shading: ShadingConfig = ShadingConfig(), per_param: int = 6,
                  n_gaussians: int = 10, size: int = 32, weights: LossWeights = LossWeights()) -> GradCheckReport:
    scene = gradcheck_scene(seed, n_gaussians, size)
    settings = RenderSettings(shading=shading)
    frame = gradcheck_frame(scene, seed, settings)
    out, cache = render_frame(scene, frame.camera, settings)
    gates = loss_gates(out, frame, weights)
    _, (d_rgb, d_normal, d_depth) = frame_losses(out, cache, frame, weights, gates=gates)
    analytic = flatten_grads(render_backward(scene, cache, d_rgb, d_normal, d_depth))
    params = scene_parameters(scene)

    def loss() -> float:
        o, c = render_frame(scene, frame.camera, settings)
        return frame_losses(o, c, frame, weights, with_grads=False, gates=gates)[0]["total"]

    def central(arr, idx, h):
        old = arr[idx]
        arr[idx] = old + h
        fp = loss()
        arr[idx] = old - h
        fm = loss()
        arr[idx] = old
        return (fp - fm) / (2 * h)

    rng = np.random.default_rng(seed + 202)
    report = GradCheckReport({})
    for name, arr in params.items():
        if name == "spec_sh" or name.endswith(".spec_sh"):
            if shading.specular_model != "sh" or not shading.specular:
                continue
        if name.startswith("illum.") and not shading.diffuse:
            continue
        grad = analytic[name]
        flat = list(np.ndindex(arr.shape))
        order = rng.permutation(len(flat))
        errs, skipped = [], 0
        for j in order:
            if len(errs) >= per_param:
                break
            idx = flat[j]
            n1 = central(arr, idx, STEP)
            n2 = central(arr, idx, STEP / 4)
            if abs(n1 - n2) > KINK_TOL * max(abs(n1), abs(n2), ERROR_FLOOR):
                skipped += 1
                continue
            a = grad[idx]
            errs.append(abs(a - n1) / max(abs(a), abs(n1), ERROR_FLOOR))
        if errs:
            report.errors[name] = float(max(errs))
            report.probed[name] = len(errs)
            report.skipped[name] = skipped
    return report
