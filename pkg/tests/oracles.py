"""Independent reference implementations used as test oracles.

Nothing here calls the engine's shading, compositing or loss code; each oracle
recomputes its quantity from first principles (brute force, quadrature, Monte
Carlo, or a second library) so that agreement is evidence of correctness.
"""

from __future__ import annotations

import numpy as np
from scipy.special import sph_harm_y

# ------------------------------------------------------------------ SH basis


def real_sh_reference(dirs: np.ndarray) -> np.ndarray:
    """Real SH (l <= 2) built from scipy's complex harmonics, Condon-Shortley phase removed.

    Ordering (0,0), (1,-1), (1,0), (1,1), (2,-2), ..., (2,2).
    """
    d = np.asarray(dirs, dtype=float)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))  # polar
    phi = np.arctan2(d[..., 1], d[..., 0])  # azimuth
    out = []
    for l in range(3):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            cs = (-1) ** abs(m)  # scipy includes the Condon-Shortley phase
            if m > 0:
                val = np.sqrt(2.0) * cs * y.real
            elif m < 0:
                val = np.sqrt(2.0) * cs * y.imag
            else:
                val = y.real
            out.append(val)
    return np.stack(out, axis=-1)


def uniform_sphere(rng, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --------------------------------------------------------------- diffuse MC


def diffuse_monte_carlo(albedo, normal, env, dirs) -> np.ndarray:
    """(b/pi) * integral of E_sh(w) max(w.n, 0) dw from uniform sphere samples ``dirs``.

    Uses a fixed sample set shared across channels; the estimator is
    4*pi * mean(E(w) * max(w.n, 0)).
    """
    Y = real_sh_reference(dirs)  # (S, 9)
    radiance = Y @ np.asarray(env, dtype=float)  # (S, 3)
    cos = np.maximum(dirs @ np.asarray(normal, dtype=float), 0.0)
    integral = 4.0 * np.pi * np.mean(radiance * cos[:, None], axis=0)
    return np.asarray(albedo, dtype=float) / np.pi * integral


SH_PARITY = np.array([(-1.0) ** l for l in (0, 1, 1, 1, 2, 2, 2, 2, 2)])


class HemisphereSampler:
    """Uniform hemisphere samples about any normal from one set of sphere samples.

    Each sphere sample d is used as d or -d, whichever lies in the hemisphere of
    n; the result is uniform on that hemisphere. The basis is evaluated once
    (scipy) and flipped with the parity Y(-d) = (-1)^l Y(d).
    """

    def __init__(self, rng, n: int):
        self.dirs = uniform_sphere(rng, n)
        self.Y = real_sh_reference(self.dirs)

    def diffuse(self, albedo, normal, env) -> np.ndarray:
        """(b/pi) * 2pi * mean over the hemisphere of E_sh(w) (w.n)."""
        dn = self.dirs @ np.asarray(normal, dtype=float)
        flip = dn < 0
        cos = np.abs(dn)
        radiance = self.Y @ np.asarray(env, dtype=float)  # radiance at d
        radiance_flipped = (self.Y * SH_PARITY) @ np.asarray(env, dtype=float)  # radiance at -d
        radiance = np.where(flip[:, None], radiance_flipped, radiance)
        integral = 2.0 * np.pi * np.mean(radiance * cos[:, None], axis=0)
        return np.asarray(albedo, dtype=float) / np.pi * integral


# ------------------------------------------------------- specular quadrature


def _frame_about(axis):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    h = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(h, a)
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(a, x), a], axis=1)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    ph = np.pi * (1.0 + 5 ** 0.5) * i
    return np.stack([r * np.cos(ph), r * np.sin(ph), z], axis=-1)


def sphere_quadrature(f, center, n_theta: int = 400, n_phi: int = 256) -> float:
    """Integral of ``f`` over the unit sphere in polar coordinates about ``center``.

    theta = pi * t^2 with Gauss-Legendre nodes in t (dense near the pole) and the
    periodic trapezoid rule in phi.
    """
    t, w = np.polynomial.legendre.leggauss(n_theta)
    t = (t + 1.0) / 2.0
    w = w / 2.0
    th = np.pi * t * t
    dth = 2.0 * np.pi * t * w
    ph = np.arange(n_phi) * 2.0 * np.pi / n_phi
    F = _frame_about(center)
    st, ct = np.sin(th), np.cos(th)
    d = (st[:, None, None] * (np.cos(ph)[None, :, None] * F[:, 0] + np.sin(ph)[None, :, None] * F[:, 1])
         + ct[:, None, None] * F[:, 2])
    val = f(d.reshape(-1, 3)).reshape(n_theta, n_phi)
    return float(np.sum(val * (st * dth)[:, None]) * (2.0 * np.pi / n_phi))


def asg_reference(v, frame, lam, mu):
    """max(v.z, 0) * exp(-lam (v.x)^2 - mu (v.y)^2), frame columns (x, y, z)."""
    vx, vy, vz = v @ frame[:, 0], v @ frame[:, 1], v @ frame[:, 2]
    return np.maximum(vz, 0.0) * np.exp(-lam * vx * vx - mu * vy * vy)


def sg_asg_product_integral(nu, w_r, frame, lam, mu) -> float:
    """Numeric integral of SG(v; w_r, nu) * ASG(v) over the sphere.

    SG(v; p, nu) = exp(2 nu (v.p - 1)), the convention under which the closed-form
    SG/ASG convolution is derived. The polar grid is centred on the product's peak,
    located on a dense Fibonacci sphere.
    """
    w_r = np.asarray(w_r, dtype=float)

    def f(v):
        return np.exp(2.0 * nu * (v @ w_r - 1.0)) * asg_reference(v, frame, lam, mu)

    pts = fibonacci_sphere(20000)
    peak = pts[np.argmax(f(pts))]
    return sphere_quadrature(f, peak)


# ------------------------------------------------------------ illumination MLP


def mlp_reference(params: dict, n_layers: int, t_norm: float, row: int) -> np.ndarray:
    """Second implementation of the lighting network forward pass, layer by layer."""
    h = np.concatenate([[t_norm], params["embeddings"][row]])
    for i in range(n_layers):
        W, b = params[f"W{i}"], params[f"b{i}"]
        h = np.array([max(0.0, float(np.dot(W[j], h) + b[j])) for j in range(W.shape[0])])
    bands = []
    for l, k in enumerate((1, 3, 5)):
        W, b = params[f"head{l}_W"], params[f"head{l}_b"]
        bands.append((W @ h + b).reshape(k, 3))
    return np.concatenate(bands, axis=0)


# ------------------------------------------------------------- rasterization


def naive_composite(mean2d, conic, opacity, features, depth, source_index, width, height,
                    alpha_max=0.99, min_power=-4.5, t_min=1e-4):
    """Per-pixel brute force: every splat is tested at every pixel, full depth sort per pixel.

    Returns (accum (H, W, K), transmittance (H, W), weight_sum (H, W)).
    Splats whose 3-sigma screen ellipse misses a pixel contribute nothing there,
    matching the engine's footprint cut-off; no tiles are involved.
    """
    n = len(opacity)
    K = features.shape[1]
    accum = np.zeros((height, width, K))
    trans = np.ones((height, width))
    wsum = np.zeros((height, width))
    order = sorted(range(n), key=lambda i: (depth[i], source_index[i]))
    for py in range(height):
        for px in range(width):
            x, y = px + 0.5, py + 0.5
            T = 1.0
            for i in order:
                dx, dy = x - mean2d[i, 0], y - mean2d[i, 1]
                a, b, c = conic[i]
                power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
                if power < min_power:
                    continue
                alpha = min(alpha_max, opacity[i] * np.exp(power))
                w = alpha * T
                accum[py, px] += w * features[i]
                wsum[py, px] += w
                T *= 1.0 - alpha
                if T < t_min:
                    break
            trans[py, px] = T
    return accum, trans, wsum


def ewa_cov2d(mu_cam, cov3d_cam, fx, fy, low_pass=0.3):
    """J Sigma J^T + low_pass I for a camera-frame mean and covariance."""
    x, y, z = mu_cam
    J = np.array([[fx / z, 0.0, -fx * x / z ** 2], [0.0, fy / z, -fy * y / z ** 2]])
    return J @ cov3d_cam @ J.T + low_pass * np.eye(2)


# --------------------------------------------------------------------- losses


def l1_bruteforce(pred, gt) -> float:
    total = 0.0
    for a, b in zip(np.ravel(pred), np.ravel(gt)):
        total += abs(float(a) - float(b))
    return total / np.size(pred)


def normal_loss_bruteforce(pred, prior, mask, weight=None) -> float:
    total, count = 0.0, 0
    H, W = mask.shape
    for i in range(H):
        for j in range(W):
            if not mask[i, j]:
                continue
            l1 = sum(abs(float(pred[i, j, c]) - float(prior[i, j, c])) for c in range(3))
            dot = sum(float(pred[i, j, c]) * float(prior[i, j, c]) for c in range(3))
            w = 1.0 if weight is None else float(weight[i, j])
            total += w * (l1 + 1.0 - dot)
            count += 1
    return total / max(count, 1)


def ssim_skimage(x, y) -> float:
    """SSIM with the engine's window (Gaussian, sigma 1.5, 11 taps) via scikit-image."""
    from skimage.metrics import structural_similarity

    return float(structural_similarity(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, data_range=1.0, channel_axis=-1 if np.ndim(x) == 3 else None,
    ))


# ------------------------------------------------------------ finite differences


def central_difference(f, x: np.ndarray, idx, h: float) -> float:
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2.0 * h)


def rel_err(a, b, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(
        np.maximum(np.abs(a), np.abs(b)), floor)))
