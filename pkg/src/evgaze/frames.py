"""Candidate point extraction from grayscale frames.

Points are returned as float arrays of shape (n, 2) holding ``(x, y)`` =
``(col, row)`` pixel coordinates, in row-major scan order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import Frame

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass
class FramePipelineConfig:
    theta: float = 60.0
    sigma: int = 2
    t1: float = 40.0
    t2: float = 120.0
    t3: float = 220.0
    rho_prime: float = 80.0
    rho_double_prime: float = 40.0
    harris_k: float = 0.04
    harris_rel_thresh: float = 0.1

    def __post_init__(self):
        for name in ("theta", "t1", "t2", "t3"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"{name} must lie in [0, 255], got {v}")
        if not self.t1 < self.t2:
            raise ValueError(f"t1 must be below t2, got {self.t1} >= {self.t2}")
        if self.sigma <= 0 or self.rho_prime <= 0 or self.rho_double_prime <= 0:
            raise ValueError("radii must be positive")


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    i, j = np.mgrid[-r:r + 1, -r:r + 1]
    return i * i + j * j <= radius * radius


def _pixels(frame) -> np.ndarray:
    return frame.pixels if isinstance(frame, Frame) else np.asarray(frame)


def _points(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    return np.column_stack([cols, rows]).astype(float)


def open_mask(mask: np.ndarray, sigma: int) -> np.ndarray:
    return ndimage.binary_opening(mask, structure=disk(sigma))


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask (image border counts as outside)."""
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def pupil_candidates(frame, config: FramePipelineConfig | None = None) -> np.ndarray:
    cfg = config or FramePipelineConfig()
    dark = _pixels(frame) < cfg.theta
    return _points(mask_boundary(open_mask(dark, cfg.sigma)))


def harris_response(image: np.ndarray, k: float = 0.04) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    ix = ndimage.sobel(img, axis=1)
    iy = ndimage.sobel(img, axis=0)
    sxx = ndimage.uniform_filter(ix * ix, size=5)
    syy = ndimage.uniform_filter(iy * iy, size=5)
    sxy = ndimage.uniform_filter(ix * iy, size=5)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(image: np.ndarray, k: float = 0.04, rel_thresh: float = 0.1) -> np.ndarray:
    """Corner locations (x, y) after 3x3 non-maximum suppression."""
    R = harris_response(image, k)
    top = R.max()
    if not top > 0:
        return np.empty((0, 2))
    peaks = (R == ndimage.maximum_filter(R, size=3)) & (R > rel_thresh * top)
    return _points(peaks)


def _near(points: np.ndarray, center, radius: float) -> np.ndarray:
    if len(points) == 0:
        return points
    d2 = (points[:, 0] - center[0]) ** 2 + (points[:, 1] - center[1]) ** 2
    return points[d2 < radius * radius]


def eyelid_candidates(frame, pupil_center, config: FramePipelineConfig | None = None) -> np.ndarray:
    if pupil_center is None:
        return np.empty((0, 2))
    cfg = config or FramePipelineConfig()
    px = _pixels(frame)
    clipped = np.clip(px.astype(float), cfg.t1, cfg.t2)
    corners = harris_corners(clipped, cfg.harris_k, cfg.harris_rel_thresh)
    corners = corners[corners[:, 1] < px.shape[0] / 2] if len(corners) else corners
    return _near(corners, pupil_center, cfg.rho_prime)


def glint_candidates(frame, pupil_center, config: FramePipelineConfig | None = None) -> np.ndarray:
    if pupil_center is None:
        return np.empty((0, 2))
    cfg = config or FramePipelineConfig()
    return _near(_points(_pixels(frame) > cfg.t3), pupil_center, cfg.rho_double_prime)
