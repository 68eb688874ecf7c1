"""Raster helpers shared by detection, synthesis and the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# ITU-R BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(image) -> np.ndarray:
    """Gray levels in [0, 255] as float64."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] >= 3:
        return img[..., :3] @ LUMA
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    raise ValueError(f"unsupported image shape {img.shape}")


def as_rgb(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[..., :3]
    return img


def bilinear_sample(image, x, y) -> np.ndarray:
    """Sample ``image`` (H, W[, C]) at float coordinates, clamping to the border.

    Integer coordinates are pixel centres.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=float), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read PNG/JPEG as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_png(path, image, mask=None) -> Path:
    """Write an RGB PNG; with ``mask`` the mask becomes the alpha channel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rgb = to_uint8(as_rgb(image))
    if mask is not None:
        alpha = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
        Image.fromarray(np.dstack([rgb, alpha]), mode="RGBA").save(path, format="PNG")
    else:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    return path


def resize(image, size: tuple[int, int], resample=Image.BILINEAR) -> np.ndarray:
    """Resize to ``(width, height)``."""
    img = np.asarray(image)
    return np.asarray(Image.fromarray(img).resize(size, resample=resample))


def psnr(a, b, mask=None, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
