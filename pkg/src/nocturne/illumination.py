"""Global diffuse lighting: an MLP predicting degree-2 SH radiance per (time, camera)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StaleCacheError, UnknownCameraError
from .geom import COSINE_PER_COEFF, eval_sh_basis, sh_basis_jacobian

EMBED_DIM = 16
HIDDEN = 64
N_LAYERS = 8
BAND_SIZES = (1, 3, 5)
BAND0_BIAS = 0.5


@dataclass
class IllumCache:
    t_norm: float
    camera_id: int
    inputs: list  # input of each trunk layer
    pre: list  # pre-activation of each trunk layer
    latent: np.ndarray


class GlobalIllumNet:
    """8 ReLU layers of width 64 and one linear head per SH band.

    Parameters live in ``self.params`` (a flat dict of arrays) so the optimiser
    can treat them like any other group.
    """

    def __init__(self, camera_ids, seed: int = 0, embed_dim: int = EMBED_DIM, hidden: int = HIDDEN,
                 n_layers: int = N_LAYERS):
        rng = np.random.default_rng(seed)
        self.camera_ids = [int(c) for c in camera_ids]
        self.n_layers = n_layers
        p = {"embeddings": rng.normal(0.0, 0.1, (len(self.camera_ids), embed_dim))}
        fan_in = embed_dim + 1
        for i in range(n_layers):
            bound = np.sqrt(6.0 / fan_in)
            p[f"W{i}"] = rng.uniform(-bound, bound, (hidden, fan_in))
            p[f"b{i}"] = np.zeros(hidden)
            fan_in = hidden
        for l, k in enumerate(BAND_SIZES):
            p[f"head{l}_W"] = np.zeros((k * 3, hidden))
            p[f"head{l}_b"] = np.full(k * 3, BAND0_BIAS if l == 0 else 0.0)
        self.params = p
        self._cache: IllumCache | None = None

    def copy(self) -> "GlobalIllumNet":
        other = object.__new__(GlobalIllumNet)
        other.camera_ids = list(self.camera_ids)
        other.n_layers = self.n_layers
        other.params = {k: v.copy() for k, v in self.params.items()}
        other._cache = None
        return other

    def _row(self, camera_id: int) -> int:
        try:
            return self.camera_ids.index(int(camera_id))
        except ValueError:
            raise UnknownCameraError(f"no embedding for camera {camera_id}") from None

    def forward(self, t_norm: float, camera_id: int) -> np.ndarray:
        p = self.params
        h = np.concatenate([[t_norm], p["embeddings"][self._row(camera_id)]])
        inputs, pre = [], []
        for i in range(self.n_layers):
            inputs.append(h)
            z = p[f"W{i}"] @ h + p[f"b{i}"]
            pre.append(z)
            h = np.maximum(z, 0.0)
        out = [(p[f"head{l}_W"] @ h + p[f"head{l}_b"]).reshape(k, 3) for l, k in enumerate(BAND_SIZES)]
        self._cache = IllumCache(float(t_norm), int(camera_id), inputs, pre, h)
        return np.concatenate(out, axis=0)

    def backward(self, t_norm: float, camera_id: int, d_coeffs: np.ndarray) -> dict:
        """Reverse pass for the most recent ``forward``; returns a gradient dict."""
        c = self._cache
        if c is None or c.t_norm != float(t_norm) or c.camera_id != int(camera_id):
            raise StaleCacheError("backward inputs do not match the cached forward pass")
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        d_coeffs = np.asarray(d_coeffs, dtype=float).reshape(9, 3)
        dh = np.zeros_like(c.latent)
        start = 0
        for l, k in enumerate(BAND_SIZES):
            g = d_coeffs[start:start + k].reshape(-1)
            grads[f"head{l}_W"] = np.outer(g, c.latent)
            grads[f"head{l}_b"] = g
            dh += p[f"head{l}_W"].T @ g
            start += k
        for i in reversed(range(self.n_layers)):
            dz = dh * (c.pre[i] > 0)
            grads[f"W{i}"] = np.outer(dz, c.inputs[i])
            grads[f"b{i}"] = dz
            dh = p[f"W{i}"].T @ dz
        grads["embeddings"][self._row(camera_id)] = dh[1:]
        return grads


def predict_sh(net: GlobalIllumNet, t_norm: float, camera_id: int) -> np.ndarray:
    """SH radiance coefficients, shape (9, 3)."""
    return net.forward(t_norm, camera_id)


def diffuse_shade(albedo: np.ndarray, normal: np.ndarray, env: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Lambertian radiance ``(b / pi) sum_l A_l sum_m c_lm Y_lm(n)``."""
    irradiance = eval_sh_basis(normal) @ (COSINE_PER_COEFF[:, None] * env)
    out = albedo / np.pi * irradiance
    return np.maximum(out, 0.0) if clamp else out


def diffuse_backward(albedo, normal, env, grad_out):
    """Gradients (d_albedo, d_normal, d_env) of the clamped diffuse term."""
    Y = eval_sh_basis(normal)
    Aenv = COSINE_PER_COEFF[:, None] * env
    irradiance = Y @ Aenv
    g = grad_out * (albedo * irradiance > 0)
    d_albedo = g * irradiance / np.pi
    d_irr = g * albedo / np.pi
    d_Y = d_irr @ Aenv.T
    d_normal = np.einsum("nk,nkj->nj", d_Y, sh_basis_jacobian(normal))
    d_env = COSINE_PER_COEFF[:, None] * (Y.T @ d_irr)
    return d_albedo, d_normal, d_env
