"""Per-Gaussian shading: SH diffuse plus BRDF-weighted ASG specular, Reinhard tone map.

The vectorised :func:`shade` / :func:`shade_backward` pair is what the trainer
uses. The scalar helpers (:func:`fresnel_schlick`, :func:`smith_geometry`,
:func:`specular_shade`, :func:`shade_gaussian`) wrap it for single splats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateViewError, StaleCacheError
from .geom import (
    ROUGHNESS_FLOOR,
    eval_sh_basis,
    normalize,
    sh_basis_jacobian,
)
from .illumination import diffuse_backward, diffuse_shade

F0_DIELECTRIC = 0.04


@dataclass(frozen=True)
class ShadingConfig:
    diffuse: bool = True
    specular: bool = True
    specular_model: str = "asg"  # "asg" or "sh"
    brdf: bool = True

    def __post_init__(self):
        if self.specular_model not in ("asg", "sh"):
            raise ValueError(f"unknown specular model {self.specular_model!r}")


@dataclass
class ShadingContext:
    w_o: np.ndarray
    n: np.ndarray
    w_r: np.ndarray
    n_dot_wo: float

    @property
    def degenerate(self) -> bool:
        return self.n_dot_wo <= 0


def make_context(n, w_o) -> ShadingContext:
    n = normalize(np.asarray(n, dtype=float))
    w_o = normalize(np.asarray(w_o, dtype=float))
    ndv = float(n @ w_o)
    return ShadingContext(w_o, n, 2.0 * ndv * n - w_o, ndv)


def tone_map(hdr):
    return hdr / (1.0 + hdr)


def tone_map_grad(hdr):
    return 1.0 / (1.0 + hdr) ** 2


def fresnel_schlick(h_dot_wo, albedo, metallic):
    albedo = np.asarray(albedo, dtype=float)
    f0 = F0_DIELECTRIC * (1.0 - metallic) + albedo * metallic
    return f0 + (1.0 - f0) * (1.0 - h_dot_wo) ** 5


def smith_geometry(n_dot_wi, n_dot_wo, roughness):
    """Height-correlated Smith-GGX masking-shadowing ``1 / (1 + Lambda_i + Lambda_o)``."""
    if np.any(np.asarray(n_dot_wi) <= 0) or np.any(np.asarray(n_dot_wo) <= 0):
        raise DegenerateViewError("geometry term needs both dot products > 0")
    r = np.clip(roughness, ROUGHNESS_FLOOR, 1.0)
    a2 = (r * r) ** 2
    ci, co = n_dot_wi, n_dot_wo
    return 2 * ci * co / (co * np.sqrt(ci * ci * (1 - a2) + a2) + ci * np.sqrt(co * co * (1 - a2) + a2))


@dataclass
class ShadingInputs:
    """Activated per-splat attributes in world frame; N splats, 4 lobes."""

    albedo: np.ndarray  # (N, 3)
    roughness: np.ndarray  # (N,)
    metallic: np.ndarray  # (N,)
    normal: np.ndarray  # (N, 3) unit
    w_o: np.ndarray  # (N, 3) unit, surface to camera
    frames: np.ndarray  # (N, L, 3, 3) lobe axes as columns
    sharpness: np.ndarray  # (N, L, 2)
    amplitude: np.ndarray  # (N, L, 3)
    env: np.ndarray  # (9, 3)
    spec_sh: np.ndarray | None = None  # (N, 9, 3)
    local_rot: np.ndarray | None = None  # (N, 3, 3) world -> node frame, for SH specular

    def same_as(self, other: "ShadingInputs") -> bool:
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if a is b:
                continue
            if a is None or b is None or not np.array_equal(a, b):
                return False
        return True


@dataclass
class ShadeResult:
    ldr: np.ndarray
    hdr: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    inputs: ShadingInputs
    config: ShadingConfig
    cache: dict = field(default_factory=dict, repr=False)


def _asg_terms(w_r, frames, lam, mu):
    px = np.einsum("nj,nljk->nlk", w_r, frames)  # projections on x, y, z
    e = np.exp(-lam * px[..., 0] ** 2 - mu * px[..., 1] ** 2)
    sat = np.maximum(px[..., 2], 0.0)
    return px, e, sat


def shade(inp: ShadingInputs, config: ShadingConfig = ShadingConfig()) -> ShadeResult:
    n, w_o = inp.normal, inp.w_o
    N = len(n)
    cache: dict = {}

    ld = diffuse_shade(inp.albedo, n, inp.env) if config.diffuse else np.zeros((N, 3))

    ls = np.zeros((N, 3))
    if config.specular:
        ndv = np.sum(n * w_o, axis=-1)
        valid = ndv > 0
        c = np.where(valid, ndv, 1.0)
        w_r = 2.0 * c[:, None] * n - w_o
        r = np.clip(inp.roughness, ROUGHNESS_FLOOR, 1.0)
        a2 = r ** 4
        nu = 1.0 / (2.0 * a2 * c)
        andf = 1.0 / (np.pi * a2)
        f0 = F0_DIELECTRIC * (1.0 - inp.metallic[:, None]) + inp.albedo * inp.metallic[:, None]
        fw = (1.0 - np.clip(c, 0.0, 1.0)) ** 5
        F = f0 + (1.0 - f0) * fw[:, None]
        q = c * c * (1.0 - a2) + a2
        G = c / np.sqrt(q)
        cache.update(ndv=ndv, valid=valid, c=c, w_r=w_r, r=r, a2=a2, nu=nu, andf=andf, f0=f0, fw=fw, F=F, q=q, G=G)

        if config.specular_model == "asg":
            lam0, mu0 = inp.sharpness[..., 0], inp.sharpness[..., 1]
            if config.brdf:
                nl = nu[:, None]
                lam = nl * lam0 / (nl + lam0)
                mu = nl * mu0 / (nl + mu0)
                k = np.pi / np.sqrt((nl + lam0) * (nl + mu0))
                scale = andf[:, None] * k
            else:
                lam, mu = lam0, mu0
                k = None
                scale = np.ones_like(lam0)
            px, e, sat = _asg_terms(w_r, inp.frames, lam, mu)
            lobe = scale * sat * e  # (N, L)
            S = np.einsum("nl,nlc->nc", lobe, inp.amplitude)
            cache.update(lam=lam, mu=mu, k=k, scale=scale, px=px, e=e, sat=sat, lobe=lobe)
        else:
            d_local = np.einsum("nij,nj->ni", inp.local_rot, w_r) if inp.local_rot is not None else w_r
            Y = eval_sh_basis(d_local)
            raw = np.einsum("nk,nkc->nc", Y, inp.spec_sh)
            S = np.maximum(raw, 0.0)
            cache.update(d_local=d_local, Y=Y, raw=raw)
        cache["S"] = S
        ls = G[:, None] * F * S if config.brdf else S
        ls = np.where(valid[:, None], np.maximum(ls, 0.0), 0.0)

    hdr = ld + ls
    return ShadeResult(tone_map(hdr), hdr, ld, ls, inp, config, cache)


def shade_backward(res: ShadeResult, inp: ShadingInputs, d_ldr: np.ndarray, d_diffuse=None, d_specular=None) -> dict:
    """Reverse pass of :func:`shade`.

    ``d_diffuse`` / ``d_specular`` are optional extra upstream gradients on the
    HDR decomposition outputs. Returns gradients keyed like ShadingInputs.
    """
    if inp is not res.inputs and not inp.same_as(res.inputs):
        raise StaleCacheError("shading inputs changed since the forward pass")
    cfg, C = res.config, res.cache
    N = len(inp.normal)
    n, w_o = inp.normal, inp.w_o
    d_hdr = d_ldr * tone_map_grad(res.hdr)

    grads = {
        "albedo": np.zeros((N, 3)),
        "roughness": np.zeros(N),
        "metallic": np.zeros(N),
        "normal": np.zeros((N, 3)),
        "w_o": np.zeros((N, 3)),
        "frames": np.zeros_like(inp.frames),
        "sharpness": np.zeros_like(inp.sharpness),
        "amplitude": np.zeros_like(inp.amplitude),
        "env": np.zeros((9, 3)),
        "spec_sh": None if inp.spec_sh is None else np.zeros_like(inp.spec_sh),
    }

    if cfg.diffuse:
        g_d = d_hdr if d_diffuse is None else d_hdr + d_diffuse
        da, dn, de = diffuse_backward(inp.albedo, n, inp.env, g_d)
        grads["albedo"] += da
        grads["normal"] += dn
        grads["env"] += de

    if not cfg.specular:
        return grads

    valid = C["valid"]
    g_s = d_hdr if d_specular is None else d_hdr + d_specular
    # Ls = max(G F S, 0) on valid splats; G F S >= 0 already so only validity masks
    g_s = np.where(valid[:, None], g_s, 0.0)
    S, F, G = C["S"], C["F"], C["G"]
    c, a2, nu, andf = C["c"], C["a2"], C["nu"], C["andf"]
    w_r = C["w_r"]

    d_c = np.zeros(N)
    d_a2 = np.zeros(N)
    d_nu = np.zeros(N)
    d_andf = np.zeros(N)
    d_wr = np.zeros((N, 3))

    if cfg.brdf:
        dG = np.sum(g_s * F * S, axis=-1)
        dF = g_s * G[:, None] * S
        dS = g_s * G[:, None] * F
        # Fresnel
        f0, fw = C["f0"], C["fw"]
        df0 = dF * (1.0 - fw[:, None])
        dfw = np.sum(dF * (1.0 - f0), axis=-1)
        d_c += dfw * (-5.0 * (1.0 - np.clip(c, 0.0, 1.0)) ** 4)
        grads["albedo"] += df0 * inp.metallic[:, None]
        grads["metallic"] += np.sum(df0 * (inp.albedo - F0_DIELECTRIC), axis=-1)
        # geometry
        q = C["q"]
        d_c += dG * a2 * q ** -1.5
        d_a2 += dG * (-0.5 * c * q ** -1.5 * (1.0 - c * c))
    else:
        dS = g_s

    if cfg.specular_model == "asg":
        lobe, px, e, sat = C["lobe"], C["px"], C["e"], C["sat"]
        lam, mu, scale = C["lam"], C["mu"], C["scale"]
        grads["amplitude"] += lobe[..., None] * dS[:, None, :]
        s = np.einsum("nc,nlc->nl", dS, inp.amplitude)  # upstream on each scalar lobe
        d_scale = s * sat * e
        d_sat = s * scale * e
        d_e = s * scale * sat
        d_expo = d_e * e
        d_lam = -px[..., 0] ** 2 * d_expo
        d_mu = -px[..., 1] ** 2 * d_expo
        d_px = np.stack(
            [-2.0 * lam * px[..., 0] * d_expo, -2.0 * mu * px[..., 1] * d_expo, d_sat * (px[..., 2] > 0)],
            axis=-1,
        )
        d_wr += np.einsum("nlk,nljk->nj", d_px, inp.frames)
        grads["frames"] += w_r[:, None, :, None] * d_px[:, :, None, :]
        lam0, mu0 = inp.sharpness[..., 0], inp.sharpness[..., 1]
        if cfg.brdf:
            nl = nu[:, None]
            k = C["k"]
            # scale = andf * k
            d_andf += np.sum(d_scale * k, axis=-1)
            d_k = d_scale * andf[:, None]
            d_nu += np.sum(d_lam * lam0 ** 2 / (nl + lam0) ** 2 + d_mu * mu0 ** 2 / (nl + mu0) ** 2, axis=-1)
            d_nu += np.sum(d_k * (-0.5 * k) * (1.0 / (nl + lam0) + 1.0 / (nl + mu0)), axis=-1)
            grads["sharpness"][..., 0] += d_lam * nl ** 2 / (nl + lam0) ** 2 - 0.5 * d_k * k / (nl + lam0)
            grads["sharpness"][..., 1] += d_mu * nl ** 2 / (nl + mu0) ** 2 - 0.5 * d_k * k / (nl + mu0)
        else:
            grads["sharpness"][..., 0] += d_lam
            grads["sharpness"][..., 1] += d_mu
    else:
        Y, raw = C["Y"], C["raw"]
        dS = dS * (raw > 0)
        grads["spec_sh"] += Y[:, :, None] * dS[:, None, :]
        dY = np.einsum("nkc,nc->nk", inp.spec_sh, dS)
        d_local = np.einsum("nk,nkj->nj", dY, sh_basis_jacobian(C["d_local"]))
        d_wr += np.einsum("nij,ni->nj", inp.local_rot, d_local) if inp.local_rot is not None else d_local

    if cfg.brdf:
        # nu = 1 / (2 a2 c), andf = 1 / (pi a2)
        d_a2 += d_nu * (-nu / a2) + d_andf * (-andf / a2)
        d_c += d_nu * (-nu / c)
        r = C["r"]
        inside = (inp.roughness > ROUGHNESS_FLOOR) & (inp.roughness < 1.0)
        grads["roughness"] += np.where(inside, d_a2 * 4.0 * r ** 3, 0.0)

    # w_r = 2 c n - w_o with c = n . w_o
    d_c += 2.0 * np.sum(d_wr * n, axis=-1)
    d_c = np.where(valid, d_c, 0.0)
    d_wr = np.where(valid[:, None], d_wr, 0.0)
    grads["normal"] += 2.0 * c[:, None] * d_wr + d_c[:, None] * w_o
    grads["w_o"] += -d_wr + d_c[:, None] * n
    return grads


# ------------------------------------------------------------ single splat API


def _single_inputs(albedo, roughness, metallic, ctx: ShadingContext, frames, sharpness, amplitude, env=None):
    return ShadingInputs(
        albedo=np.asarray(albedo, dtype=float).reshape(1, 3),
        roughness=np.atleast_1d(np.asarray(roughness, dtype=float)),
        metallic=np.atleast_1d(np.asarray(metallic, dtype=float)),
        normal=ctx.n.reshape(1, 3),
        w_o=ctx.w_o.reshape(1, 3),
        frames=np.asarray(frames, dtype=float).reshape(1, -1, 3, 3),
        sharpness=np.asarray(sharpness, dtype=float).reshape(1, -1, 2),
        amplitude=np.asarray(amplitude, dtype=float).reshape(1, -1, 3),
        env=np.zeros((9, 3)) if env is None else np.asarray(env, dtype=float),
    )


def specular_shade(albedo, roughness, metallic, ctx: ShadingContext, frames, sharpness, amplitude,
                   brdf: bool = True) -> np.ndarray:
    """HDR specular radiance of one splat; zero for a degenerate view."""
    if ctx.degenerate:
        return np.zeros(3)
    inp = _single_inputs(albedo, roughness, metallic, ctx, frames, sharpness, amplitude)
    return shade(inp, ShadingConfig(diffuse=False, brdf=brdf)).specular[0]


def shade_gaussian(albedo, roughness, metallic, ctx: ShadingContext, frames, sharpness, amplitude, env,
                   config: ShadingConfig = ShadingConfig()) -> np.ndarray:
    """LDR colour of one splat (tone-mapped diffuse + specular)."""
    inp = _single_inputs(albedo, roughness, metallic, ctx, frames, sharpness, amplitude, env)
    return shade(inp, config).ldr[0]
