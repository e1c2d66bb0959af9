"""Training losses; every function returns ``(value, gradient)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    w_rgb: float = 0.8
    w_dssim: float = 0.2
    w_dn: float = 0.05
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.w_rgb, self.w_dssim, self.w_dn, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


def _check(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def loss_rgb(pred, gt):
    _check(pred, gt)
    diff = pred - gt
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    w = np.exp(-(x * x) / (2 * sigma * sigma))
    return w / w.sum()


def _blur(img):
    # separable, zero padded; symmetric kernel so the operator is self-adjoint
    w = gaussian_window()
    out = correlate1d(img, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def ssim_map(x, y):
    """Per-pixel SSIM of (H, W[, C]) images in [0, 1]."""
    _check(x, y)
    mx, my = _blur(x), _blur(y)
    sxx = _blur(x * x) - mx * mx
    syy = _blur(y * y) - my * my
    sxy = _blur(x * y) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return num / den


def loss_dssim(pred, gt):
    """``(1 - mean SSIM) / 2`` with gradient w.r.t. ``pred``."""
    _check(pred, gt)
    x, y = pred, gt
    mx, my = _blur(x), _blur(y)
    sxx = _blur(x * x) - mx * mx
    syy = _blur(y * y) - my * my
    sxy = _blur(x * y) - mx * my
    A1 = 2 * mx * my + C1
    A2 = 2 * sxy + C2
    B1 = mx * mx + my * my + C1
    B2 = sxx + syy + C2
    s = (A1 * A2) / (B1 * B2)
    value = (1.0 - s.mean()) / 2.0

    ds = np.full_like(s, -0.5 / s.size)
    d_A1 = ds * A2 / (B1 * B2)
    d_A2 = ds * A1 / (B1 * B2)
    d_B1 = -ds * s / B1
    d_B2 = -ds * s / B2
    d_mx = 2 * my * d_A1 + 2 * mx * d_B1
    d_sxx = d_B2
    d_sxy = 2 * d_A2
    # sxx = blur(x^2) - mx^2, sxy = blur(xy) - mx my
    d_mx += -2 * mx * d_sxx - my * d_sxy
    grad = _blur(d_mx) + 2 * x * _blur(d_sxx) + y * _blur(d_sxy)
    return float(value), grad


def _normal_terms(pred, prior, mask):
    _check(pred, prior)
    m = np.asarray(mask, dtype=bool)
    count = max(int(m.sum()), 1)
    diff = pred - prior
    per_pixel = np.sum(np.abs(diff), axis=-1) + (1.0 - np.sum(pred * prior, axis=-1))
    d_pixel = np.sign(diff) - prior
    return m, count, per_pixel, d_pixel


def loss_normal(pred, prior, mask):
    """Mean over masked pixels of ``|N_hat - N|_1 + (1 - N_hat . N)``."""
    m, count, per_pixel, d_pixel = _normal_terms(pred, prior, mask)
    value = float(np.sum(per_pixel[m]) / count)
    grad = np.where(m[..., None], d_pixel / count, 0.0)
    return value, grad


def confidence_weight(pred, prior, gamma):
    return np.exp((np.sum(pred * prior, axis=-1) - 1.0) / gamma)


def loss_depth_normal(pred, prior, mask, gamma, weight=None):
    """Confidence-weighted depth-normal consistency; the weight is held constant.

    ``weight`` overrides the per-pixel confidence (e.g. one frozen at a base point).
    """
    m, count, per_pixel, d_pixel = _normal_terms(pred, prior, mask)
    w = confidence_weight(pred, prior, gamma) if weight is None else weight
    value = float(np.sum((w * per_pixel)[m]) / count)
    grad = np.where(m[..., None], w[..., None] * d_pixel / count, 0.0)
    return value, grad


def total_loss(components: dict, weights: LossWeights = LossWeights()) -> float:
    return (
        weights.w_rgb * components.get("rgb", 0.0)
        + weights.w_dssim * components.get("dssim", 0.0)
        + weights.w_dn * (components.get("dn", 0.0) + components.get("normal", 0.0))
    )
