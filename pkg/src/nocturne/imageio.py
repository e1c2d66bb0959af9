"""PNG / PFM file I/O and image-quality metrics.

Images are numpy arrays shaped (H, W) or (H, W, 3), row 0 at the top.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageFormatError, ShapeMismatchError
from .losses import ssim_map

PSNR_INF = float("inf")


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc
    return (arr.astype(np.float32) / 255.0).astype(np.float32)


def to_bytes(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img) -> None:
    arr = to_bytes(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG", optimize=False, compress_level=6)


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", re.S)


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data)
    if m is None:
        raise ImageFormatError(f"{path}: malformed PFM header")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if scale >= 0:
        raise ImageFormatError(f"{path}: big-endian PFM (positive scale) is not supported")
    channels = 3 if tag == b"PF" else 1
    count = w * h * channels
    body = data[m.end():]
    if len(body) < 4 * count:
        raise ImageFormatError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(body, dtype="<f4", count=count).reshape(h, w, channels) if channels == 3 else \
        np.frombuffer(body, dtype="<f4", count=count).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pfm(path, img) -> None:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ImageFormatError(f"PFM needs 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(arr)).tobytes())


def psnr(pred, gt) -> float:
    if np.shape(pred) != np.shape(gt):
        raise ShapeMismatchError(f"shape mismatch: {np.shape(pred)} vs {np.shape(gt)}")
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * np.log10(1.0 / mse)


def ssim(pred, gt) -> float:
    return float(np.mean(ssim_map(np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64))))
