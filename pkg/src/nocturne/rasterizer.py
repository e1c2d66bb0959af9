"""Tile-based splatting: projection, front-to-back compositing, and their reverse passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import StaleCacheError
from .geom import build_covariance, build_covariance_backward, normalize_backward
from .scene import Camera

TILE = 16
NEAR = 0.01
ALPHA_MAX = 0.99
T_MIN = 1e-4
LOW_PASS = 0.3
CUTOFF_SIGMA = 3.0
MIN_POWER = -0.5 * CUTOFF_SIGMA ** 2
ALPHA_MASK = 0.05


@dataclass
class Splats:
    """Screen-space splats for one camera (struct of arrays, P entries)."""

    mean2d: np.ndarray  # (P, 2) pixels
    cov2d: np.ndarray  # (P, 2, 2) pixels^2, low-pass included
    depth: np.ndarray  # (P,)
    opacity: np.ndarray  # (P,)
    features: np.ndarray  # (P, K) composited channels
    source_index: np.ndarray  # (P,)
    radius: np.ndarray = None  # (P,) conservative screen radius

    def __post_init__(self):
        if self.radius is None:
            lam_max = _max_eig_2x2(self.cov2d)
            self.radius = CUTOFF_SIGMA * np.sqrt(lam_max)

    @property
    def conic(self) -> np.ndarray:
        a, b, c = self.cov2d[:, 0, 0], self.cov2d[:, 0, 1], self.cov2d[:, 1, 1]
        det = a * c - b * b
        return np.stack([c / det, -b / det, a / det], axis=-1)

    def __len__(self):
        return len(self.depth)


def _max_eig_2x2(cov):
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    mid = 0.5 * (a + c)
    return mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))


@dataclass
class Projection:
    """Projected splats plus the intermediates the reverse pass needs."""

    visible: np.ndarray  # (N,) bool
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: np.ndarray
    t_cam: np.ndarray
    J: np.ndarray
    W: np.ndarray
    sigma: np.ndarray


def project_gaussians(mu, rot, scale, cam: Camera) -> Projection:
    """Pinhole projection of 3D Gaussians with the first-order (EWA) covariance."""
    W, tw = cam.world_to_camera
    t = mu @ W.T + tw
    tz = t[:, 2]
    safe_z = np.where(tz > NEAR, tz, 1.0)
    mean2d = np.stack([cam.fx * t[:, 0] / safe_z + cam.cx, cam.fy * t[:, 1] / safe_z + cam.cy], axis=-1)
    J = np.zeros((len(mu), 2, 3))
    J[:, 0, 0] = cam.fx / safe_z
    J[:, 0, 2] = -cam.fx * t[:, 0] / safe_z ** 2
    J[:, 1, 1] = cam.fy / safe_z
    J[:, 1, 2] = -cam.fy * t[:, 1] / safe_z ** 2
    sigma = build_covariance(rot, scale)
    T = J @ W
    cov2d = T @ sigma @ np.swapaxes(T, -1, -2) + LOW_PASS * np.eye(2)
    radius = CUTOFF_SIGMA * np.sqrt(_max_eig_2x2(cov2d))
    visible = (
        (tz > NEAR)
        & (mean2d[:, 0] + radius > 0)
        & (mean2d[:, 0] - radius < cam.width)
        & (mean2d[:, 1] + radius > 0)
        & (mean2d[:, 1] - radius < cam.height)
    )
    return Projection(visible, mean2d, cov2d, tz, t, J, W, sigma)


def project_gaussian(mu, rot, scale, cam: Camera):
    """Single-splat convenience: ``(mean2d, cov2d, depth)`` or ``None`` if culled."""
    p = project_gaussians(np.reshape(mu, (1, 3)), np.reshape(rot, (1, 4)), np.reshape(scale, (1, 3)), cam)
    if not p.visible[0]:
        return None
    return p.mean2d[0], p.cov2d[0], p.depth[0]


def project_backward(proj: Projection, rot, scale, cam: Camera, d_mean2d, d_cov2d, d_depth):
    """Pull screen-space gradients back to (d_mu, d_rot, d_scale)."""
    t, J, W = proj.t_cam, proj.J, proj.W
    tz = np.where(proj.depth > NEAR, proj.depth, 1.0)
    dt = np.zeros_like(t)
    dt[:, 0] += d_mean2d[:, 0] * cam.fx / tz
    dt[:, 1] += d_mean2d[:, 1] * cam.fy / tz
    dt[:, 2] += -d_mean2d[:, 0] * cam.fx * t[:, 0] / tz ** 2 - d_mean2d[:, 1] * cam.fy * t[:, 1] / tz ** 2
    dt[:, 2] += d_depth

    T = J @ W
    Gc = d_cov2d
    Gs = Gc + np.swapaxes(Gc, -1, -2)
    d_sigma = np.swapaxes(T, -1, -2) @ Gc @ T
    dT = Gs @ T @ proj.sigma
    dJ = dT @ W.T
    dt[:, 0] += dJ[:, 0, 2] * (-cam.fx / tz ** 2)
    dt[:, 1] += dJ[:, 1, 2] * (-cam.fy / tz ** 2)
    dt[:, 2] += (
        dJ[:, 0, 0] * (-cam.fx / tz ** 2)
        + dJ[:, 0, 2] * (2 * cam.fx * t[:, 0] / tz ** 3)
        + dJ[:, 1, 1] * (-cam.fy / tz ** 2)
        + dJ[:, 1, 2] * (2 * cam.fy * t[:, 1] / tz ** 3)
    )
    d_rot, d_scale = build_covariance_backward(rot, scale, d_sigma)
    return dt @ W, d_rot, d_scale


def conic_backward(cov2d, d_conic):
    """d_conic holds gradients of (a, b, c) in ``power = -0.5(a dx^2 + 2 b dx dy + c dy^2)``."""
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    Q = np.empty_like(cov2d)
    Q[:, 0, 0] = c / det
    Q[:, 0, 1] = Q[:, 1, 0] = -b / det
    Q[:, 1, 1] = a / det
    dQ = np.empty_like(cov2d)
    dQ[:, 0, 0] = d_conic[:, 0]
    dQ[:, 0, 1] = dQ[:, 1, 0] = 0.5 * d_conic[:, 1]
    dQ[:, 1, 1] = d_conic[:, 2]
    return -Q @ dQ @ Q


# ---------------------------------------------------------------- tile binning


@dataclass
class TileBins:
    order: np.ndarray  # splat index per list entry, grouped by tile, depth-sorted within a tile
    ranges: np.ndarray  # (n_tiles, 2) start/stop into ``order``
    tiles_x: int
    tiles_y: int


def bin_splats(splats: Splats, width: int, height: int, tile: int = TILE) -> TileBins:
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    m, r = splats.mean2d, splats.radius
    x0 = np.clip(np.floor((m[:, 0] - r) / tile), 0, tiles_x).astype(np.int64)
    x1 = np.clip(np.floor((m[:, 0] + r) / tile) + 1, 0, tiles_x).astype(np.int64)
    y0 = np.clip(np.floor((m[:, 1] - r) / tile), 0, tiles_y).astype(np.int64)
    y1 = np.clip(np.floor((m[:, 1] + r) / tile) + 1, 0, tiles_y).astype(np.int64)
    nx = np.maximum(x1 - x0, 0)
    ny = np.maximum(y1 - y0, 0)
    counts = nx * ny
    total = int(counts.sum())
    splat_of = np.repeat(np.arange(len(splats)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_rep = np.repeat(nx, counts)
    nx_rep = np.where(nx_rep > 0, nx_rep, 1)
    tx = np.repeat(x0, counts) + local % nx_rep
    ty = np.repeat(y0, counts) + local // nx_rep
    tile_id = ty * tiles_x + tx
    key = np.lexsort((splats.source_index[splat_of], splats.depth[splat_of], tile_id))
    order = splat_of[key]
    tile_sorted = tile_id[key]
    starts = np.searchsorted(tile_sorted, np.arange(n_tiles), side="left")
    stops = np.searchsorted(tile_sorted, np.arange(n_tiles), side="right")
    return TileBins(order.astype(np.int64), np.stack([starts, stops], axis=-1).astype(np.int64), tiles_x, tiles_y)


# --------------------------------------------------------------------- kernels


@numba.njit(cache=True, parallel=True, fastmath=False)
def _composite_kernel(order, ranges, tiles_x, width, height, tile, mean2d, conic, opacity, feats, t_min):
    K = feats.shape[1]
    accum = np.zeros((height, width, K))
    t_final = np.ones((height, width))
    last = np.zeros((height, width), dtype=np.int64)
    n_tiles = ranges.shape[0]
    for tid in numba.prange(n_tiles):
        start, stop = ranges[tid, 0], ranges[tid, 1]
        ty0 = (tid // tiles_x) * tile
        tx0 = (tid % tiles_x) * tile
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                end = start
                for e in range(start, stop):
                    s = order[e]
                    dx = fx - mean2d[s, 0]
                    dy = fy - mean2d[s, 1]
                    power = -0.5 * (conic[s, 0] * dx * dx + conic[s, 2] * dy * dy) - conic[s, 1] * dx * dy
                    if power < -4.5:
                        continue
                    alpha = min(0.99, opacity[s] * np.exp(power))
                    w = alpha * T
                    for k in range(K):
                        accum[py, px, k] += w * feats[s, k]
                    T *= 1.0 - alpha
                    end = e + 1
                    if T < t_min:
                        break
                t_final[py, px] = T
                last[py, px] = end
    return accum, t_final, last


@numba.njit(cache=True, parallel=True, fastmath=False)
def _composite_backward_kernel(order, ranges, tiles_x, width, height, tile, mean2d, conic, opacity, feats,
                               t_final, last, d_accum, d_t):
    K = feats.shape[1]
    L = order.shape[0]
    d_feat = np.zeros((L, K))
    d_opac = np.zeros(L)
    d_mean = np.zeros((L, 2))
    d_conic = np.zeros((L, 3))
    n_tiles = ranges.shape[0]
    for tid in numba.prange(n_tiles):
        start = ranges[tid, 0]
        ty0 = (tid // tiles_x) * tile
        tx0 = (tid % tiles_x) * tile
        R = np.zeros(K)
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                fy = py + 0.5
                Tf = t_final[py, px]
                T = Tf
                gT = d_t[py, px]
                for k in range(K):
                    R[k] = 0.0
                for e in range(last[py, px] - 1, start - 1, -1):
                    s = order[e]
                    dx = fx - mean2d[s, 0]
                    dy = fy - mean2d[s, 1]
                    power = -0.5 * (conic[s, 0] * dx * dx + conic[s, 2] * dy * dy) - conic[s, 1] * dx * dy
                    if power < -4.5:
                        continue
                    G = np.exp(power)
                    raw = opacity[s] * G
                    alpha = min(0.99, raw)
                    T = T / (1.0 - alpha)
                    w = alpha * T
                    acc = 0.0
                    for k in range(K):
                        g = d_accum[py, px, k]
                        d_feat[e, k] += w * g
                        acc += g * (feats[s, k] - R[k])
                        R[k] = alpha * feats[s, k] + (1.0 - alpha) * R[k]
                    d_alpha = T * acc - gT * Tf / (1.0 - alpha)
                    if raw < 0.99:
                        d_opac[e] += d_alpha * G
                        dp = d_alpha * alpha
                        d_mean[e, 0] += dp * (conic[s, 0] * dx + conic[s, 1] * dy)
                        d_mean[e, 1] += dp * (conic[s, 1] * dx + conic[s, 2] * dy)
                        d_conic[e, 0] += -0.5 * dp * dx * dx
                        d_conic[e, 1] += -dp * dx * dy
                        d_conic[e, 2] += -0.5 * dp * dy * dy
    return d_feat, d_opac, d_mean, d_conic


# ------------------------------------------------------------------- composite


@dataclass
class CompositeResult:
    accum: np.ndarray  # (H, W, K) weighted feature sums
    transmittance: np.ndarray  # (H, W) residual transmittance
    splats: Splats
    bins: TileBins
    last: np.ndarray
    conic: np.ndarray
    t_min: float
    _token: object = field(default_factory=object, repr=False)

    @property
    def alpha(self):
        return 1.0 - self.transmittance


def composite(splats: Splats, width: int, height: int, t_min: float = T_MIN) -> CompositeResult:
    """Depth-sorted alpha compositing of ``splats.features``; no background."""
    bins = bin_splats(splats, width, height)
    conic = np.ascontiguousarray(splats.conic)
    feats = np.ascontiguousarray(splats.features, dtype=np.float64)
    accum, tf, last = _composite_kernel(
        bins.order, bins.ranges, bins.tiles_x, width, height, TILE,
        np.ascontiguousarray(splats.mean2d), conic, np.ascontiguousarray(splats.opacity), feats, t_min,
    )
    return CompositeResult(accum, tf, splats, bins, last, conic, t_min)


def composite_backward(res: CompositeResult, d_accum, d_transmittance, splats: Splats | None = None):
    """Per-splat gradients ``(d_features, d_opacity, d_mean2d, d_conic)``."""
    if splats is not None and splats is not res.splats:
        raise StaleCacheError("splats differ from the cached forward pass")
    s = res.splats
    H, W = res.transmittance.shape
    d_feat_e, d_opac_e, d_mean_e, d_conic_e = _composite_backward_kernel(
        res.bins.order, res.bins.ranges, res.bins.tiles_x, W, H, TILE,
        np.ascontiguousarray(s.mean2d), res.conic, np.ascontiguousarray(s.opacity),
        np.ascontiguousarray(s.features, dtype=np.float64), res.transmittance, res.last,
        np.ascontiguousarray(d_accum, dtype=np.float64), np.ascontiguousarray(d_transmittance, dtype=np.float64),
    )
    P, K = s.features.shape
    d_feat = np.zeros((P, K))
    d_opac = np.zeros(P)
    d_mean = np.zeros((P, 2))
    d_conic = np.zeros((P, 3))
    o = res.bins.order
    np.add.at(d_feat, o, d_feat_e)
    np.add.at(d_opac, o, d_opac_e)
    np.add.at(d_mean, o, d_mean_e)
    np.add.at(d_conic, o, d_conic_e)
    return d_feat, d_opac, d_mean, d_conic


# -------------------------------------------------------------- render output


@dataclass
class RenderOutput:
    rgb: np.ndarray
    normal_map: np.ndarray
    depth_map: np.ndarray
    alpha_map: np.ndarray
    albedo: np.ndarray | None = None
    diffuse: np.ndarray | None = None
    specular: np.ndarray | None = None


def normalize_by_weight(accum, alpha):
    """Weighted sum -> weighted mean; zero where nothing was accumulated."""
    safe = np.where(alpha > 0, alpha, 1.0)
    out = accum / safe[..., None] if accum.ndim == 3 else accum / safe
    return np.where((alpha > 0)[..., None] if accum.ndim == 3 else alpha > 0, out, 0.0)


def rasterize(splats: Splats, sky_rgb_fn, cam: Camera, t_min: float = T_MIN) -> RenderOutput:
    """Composite splats whose feature layout is rgb(3), normal(3), depth(1)[, albedo, diffuse, specular]."""
    res = composite(splats, cam.width, cam.height, t_min)
    acc, T = res.accum, res.transmittance
    alpha = 1.0 - T
    sky = sky_rgb_fn(cam.pixel_rays()) if sky_rgb_fn is not None else np.zeros((cam.height, cam.width, 3))
    out = RenderOutput(
        rgb=acc[..., 0:3] + T[..., None] * sky,
        normal_map=normalize_by_weight(acc[..., 3:6], alpha),
        depth_map=normalize_by_weight(acc[..., 6], alpha),
        alpha_map=alpha,
    )
    if acc.shape[-1] >= 16:
        out.albedo, out.diffuse, out.specular = acc[..., 7:10], acc[..., 10:13], acc[..., 13:16]
    return out


# ------------------------------------------------------------ depth -> normals


def _backproject(depth, cam: Camera):
    H, W = depth.shape
    xs = (np.arange(W) + 0.5 - cam.cx) / cam.fx
    ys = (np.arange(H) + 0.5 - cam.cy) / cam.fy
    gx, gy = np.meshgrid(xs, ys)
    rays = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    return depth[..., None] * rays, rays


@dataclass
class DepthNormalCache:
    points: np.ndarray
    rays: np.ndarray
    cross: np.ndarray
    sign: np.ndarray
    valid: np.ndarray


def depth_to_normals(depth_map, alpha_map, cam: Camera, return_cache: bool = False):
    """Camera-frame normals from central differences of back-projected depth.

    Border pixels and pixels whose 4-neighbourhood has alpha <= 0.05 are zero.
    """
    P, rays = _backproject(depth_map, cam)
    H, W = depth_map.shape
    dx = np.zeros_like(P)
    dy = np.zeros_like(P)
    dx[:, 1:-1] = P[:, 2:] - P[:, :-2]
    dy[1:-1, :] = P[2:, :] - P[:-2, :]
    cr = np.cross(dx, dy)
    ok = alpha_map > ALPHA_MASK
    valid = np.zeros((H, W), dtype=bool)
    valid[1:-1, 1:-1] = (
        ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
    )
    norm = np.linalg.norm(cr, axis=-1)
    valid &= norm > 1e-12
    # orient towards the camera (camera sits at the origin)
    sign = np.where(np.sum(cr * P, axis=-1) > 0, -1.0, 1.0)
    safe = np.where(valid, norm, 1.0)
    n = np.where(valid[..., None], sign[..., None] * cr / safe[..., None], 0.0)
    if return_cache:
        return n, DepthNormalCache(P, rays, cr, sign, valid)
    return n


def depth_to_normals_backward(cache: DepthNormalCache, d_normals):
    """Gradient of :func:`depth_to_normals` w.r.t. the depth map."""
    g = np.where(cache.valid[..., None], d_normals * cache.sign[..., None], 0.0)
    cr = np.where(cache.valid[..., None], cache.cross, np.array([0.0, 0.0, 1.0]))
    d_cr = normalize_backward(cr, g)
    P = cache.points
    H, W, _ = P.shape
    dx = np.zeros_like(P)
    dy = np.zeros_like(P)
    dx[:, 1:-1] = P[:, 2:] - P[:, :-2]
    dy[1:-1, :] = P[2:, :] - P[:-2, :]
    # cross(dx, dy): d/d dx = dy x g, d/d dy = g x dx
    d_dx = np.cross(dy, d_cr)
    d_dy = np.cross(d_cr, dx)
    dP = np.zeros_like(P)
    dP[:, 2:] += d_dx[:, 1:-1]
    dP[:, :-2] -= d_dx[:, 1:-1]
    dP[2:, :] += d_dy[1:-1, :]
    dP[:-2, :] -= d_dy[1:-1, :]
    return np.sum(dP * cache.rays, axis=-1)
