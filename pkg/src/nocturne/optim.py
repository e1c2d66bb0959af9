"""Adam with per-group learning rates, training config, and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import MissingPriorError, NonFiniteLossError, ShapeMismatchError
from .imageio import psnr
from .losses import LossWeights, confidence_weight, loss_depth_normal, loss_dssim, loss_normal, loss_rgb, total_loss
from .rasterizer import ALPHA_MASK, depth_to_normals, depth_to_normals_backward
from .render import RenderSettings, SceneGrads, render, render_backward, render_frame
from .scene import Camera, SceneGraph
from .shading import ShadingConfig

log = logging.getLogger(__name__)

# per-group learning rates; the parameter name suffix selects the group
DEFAULT_LR = {
    "mu": 1.6e-4,
    "rot": 1e-3,
    "log_scale": 5e-3,
    "opacity_logit": 5e-2,
    "albedo_logit": 2.5e-3,
    "roughness_logit": 1e-3,
    "metallic_logit": 1e-3,
    "normal_raw": 1e-3,
    "asg_rot": 1e-5,
    "asg_log_sharp": 1e-5,
    "asg_log_amp": 1e-5,
    "spec_sh": 1e-5,
    "sky": 5e-2,
    "illum": 5e-4,
}
MU_LR_FINAL_FACTOR = 0.01


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lrs: dict) -> None:
        """In-place update of every array in ``params``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ShapeMismatchError(f"{k}: grad {g.shape} vs param {p.shape}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lrs[k] / bc1 * m / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params: dict, grads: dict, lr) -> dict:
    lrs = lr if isinstance(lr, dict) else {k: lr for k in params}
    state.step(params, grads, lrs)
    return params


def scene_parameters(scene: SceneGraph) -> dict:
    """Flat name -> array view of every learnable tensor (mutating them mutates the scene)."""
    out = {f"bg.{k}": v for k, v in scene.background.arrays().items()}
    for a in scene.actors:
        out.update({f"actor.{a.id}.{k}": v for k, v in a.gaussians.arrays().items()})
    out["sky"] = scene.sky.log_texels
    if scene.illum is not None:
        out.update({f"illum.{k}": v for k, v in scene.illum.params.items()})
    return out


def flatten_grads(g: SceneGrads) -> dict:
    out = {f"bg.{k}": v for k, v in g.background.items()}
    for aid, d in g.actors.items():
        out.update({f"actor.{aid}.{k}": v for k, v in d.items()})
    out["sky"] = g.sky
    if g.illum is not None:
        out.update({f"illum.{k}": v for k, v in g.illum.items()})
    return out


def lr_group(name: str) -> str:
    if name == "sky":
        return "sky"
    if name.startswith("illum."):
        return "illum"
    return name.rsplit(".", 1)[-1]


@dataclass
class TrainConfig:
    iterations: int = 2000
    seed: int = 0
    w_rgb: float = 0.8
    w_dssim: float = 0.2
    w_dn: float = 0.05
    gamma: float = 0.1
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    mu_lr_final_factor: float = MU_LR_FINAL_FACTOR
    no_specular: bool = False
    no_diffuse: bool = False
    sh_specular: bool = False
    no_brdf: bool = False
    holdout_every: int = 8
    log_every: int = 100
    # LPIPS (weight 0.025 in the reference setup) needs a pretrained network and is omitted.

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "lr" in d:
            lr = dict(DEFAULT_LR)
            bad = set(d["lr"]) - set(DEFAULT_LR)
            if bad:
                raise ValueError(f"unknown learning-rate groups: {sorted(bad)}")
            lr.update(d["lr"])
            d["lr"] = lr
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_rgb, self.w_dssim, self.w_dn, self.gamma)

    @property
    def shading(self) -> ShadingConfig:
        return ShadingConfig(
            diffuse=not self.no_diffuse,
            specular=not self.no_specular,
            specular_model="sh" if self.sh_specular else "asg",
            brdf=not self.no_brdf,
        )


@dataclass
class Frame:
    camera: Camera
    image: np.ndarray  # (H, W, 3) LDR
    prior: np.ndarray | None = None  # (H, W, 3) camera-frame normals, zero = no prior


def split_frames(n: int, holdout_every: int = 8):
    """(train, held-out) indices; every ``holdout_every``-th frame from 0 is held out."""
    held = [i for i in range(n) if holdout_every and i % holdout_every == 0]
    train = [i for i in range(n) if i not in set(held)]
    return train, held


@dataclass
class LossGates:
    """Non-differentiable parts of the frame loss: pixel masks and the confidence weight."""

    normal_mask: np.ndarray
    dn_mask: np.ndarray
    confidence: np.ndarray


def loss_gates(out, frame: Frame, weights: LossWeights) -> LossGates:
    if frame.prior is None:
        raise MissingPriorError("frame has no normal prior")
    prior_ok = np.linalg.norm(frame.prior, axis=-1) > 0.5
    nd, nd_cache = depth_to_normals(out.depth_map, out.alpha_map, frame.camera, return_cache=True)
    return LossGates(
        normal_mask=(out.alpha_map > ALPHA_MASK) & prior_ok,
        dn_mask=nd_cache.valid & prior_ok,
        confidence=confidence_weight(nd, frame.prior, weights.gamma),
    )


def frame_losses(out, cache, frame: Frame, weights: LossWeights, with_grads: bool = True,
                 gates: LossGates | None = None):
    """Loss components for one rendered frame and the map gradients of the total.

    ``gates`` freezes masks and confidence weights; by default they come from ``out``.
    """
    if gates is None:
        gates = loss_gates(out, frame, weights)
    l_rgb, g_rgb = loss_rgb(out.rgb, frame.image)
    l_ssim, g_ssim = loss_dssim(out.rgb, frame.image)
    l_n, g_n = loss_normal(out.normal_map, frame.prior, gates.normal_mask)
    nd, nd_cache = depth_to_normals(out.depth_map, out.alpha_map, frame.camera, return_cache=True)
    l_dn, g_dn = loss_depth_normal(nd, frame.prior, gates.dn_mask, weights.gamma, weight=gates.confidence)
    comps = {"rgb": l_rgb, "dssim": l_ssim, "normal": l_n, "dn": l_dn}
    comps["total"] = total_loss(comps, weights)
    if not with_grads:
        return comps, None
    d_rgb = weights.w_rgb * g_rgb + weights.w_dssim * g_ssim
    d_normal = weights.w_dn * g_n
    d_depth = depth_to_normals_backward(nd_cache, weights.w_dn * g_dn)
    return comps, (d_rgb, d_normal, d_depth)


def _check_finite(comps, it):
    bad = {k: v for k, v in comps.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteLossError(f"non-finite loss at iteration {it}: {bad}")


def train(scene: SceneGraph, frames: list, config: TrainConfig, log_path=None, callback=None):
    """Optimise ``scene`` in place; returns ``(scene, records)``."""
    for i, f in enumerate(frames):
        if f.prior is None:
            raise MissingPriorError(f"frame {i} has no normal prior")
    settings = RenderSettings(shading=config.shading)
    weights = config.weights
    train_idx, held_idx = split_frames(len(frames), config.holdout_every)
    if not train_idx:
        train_idx = list(range(len(frames)))
    rng = np.random.default_rng(config.seed)
    adam = Adam()
    params = scene_parameters(scene)
    base_lr = {k: config.lr[lr_group(k)] for k in params}
    records = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    order: list = []
    try:
        for it in range(config.iterations):
            if not order:
                order = list(rng.permutation(train_idx))
            frame = frames[order.pop()]
            out, cache = render_frame(scene, frame.camera, settings)
            comps, (d_rgb, d_normal, d_depth) = frame_losses(out, cache, frame, weights)
            _check_finite(comps, it)
            grads = flatten_grads(render_backward(scene, cache, d_rgb, d_normal, d_depth))
            lrs = dict(base_lr)
            frac = it / max(config.iterations - 1, 1)
            mu_scale = config.mu_lr_final_factor ** frac
            for k in lrs:
                if lr_group(k) == "mu":
                    lrs[k] = base_lr[k] * mu_scale
            adam.step(params, grads, lrs)

            if (it + 1) % config.log_every == 0 or it + 1 == config.iterations:
                rec = {"iteration": it + 1, **{k: float(v) for k, v in comps.items()}}
                if held_idx:
                    rec["heldout_psnr"] = float(np.mean(
                        [psnr(render(scene, frames[i].camera, settings).rgb, frames[i].image) for i in held_idx]))
                records.append(rec)
                if log_file:
                    log_file.write(json.dumps(rec) + "\n")
                log.info("iter %d total %.5f", it + 1, comps["total"])
                if callback:
                    callback(rec)
    finally:
        if log_file:
            log_file.close()
    return scene, records


def evaluate(scene: SceneGraph, frames: list, indices, settings: RenderSettings = RenderSettings()) -> dict:
    from .imageio import ssim

    ps, ss = [], []
    for i in indices:
        pred = render(scene, frames[i].camera, settings).rgb
        ps.append(psnr(pred, frames[i].image))
        ss.append(ssim(pred, frames[i].image))
    return {"psnr": float(np.mean(ps)) if ps else float("nan"), "ssim": float(np.mean(ss)) if ss else float("nan"),
            "count": len(ps)}
