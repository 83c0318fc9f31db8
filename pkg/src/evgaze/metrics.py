"""Evaluation metrics: accuracy, precision, smoothness, IOU, center error, frame-only ablation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EllipseParams, ellipse_center

TRIM_FRACTION = 0.025
SMOOTHNESS_CAP = 1e6


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class GazeSample:
    t: float
    estimate: tuple[float, float]
    truth: tuple[float, float]
    blink: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite([*self.estimate, *self.truth])):
            raise ValueError("gaze angles must be finite")


@dataclass(frozen=True)
class PupilMask:
    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"mask shape {bits.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, bits) -> "PupilMask":
        bits = np.asarray(bits, dtype=bool)
        return cls(bits.shape[1], bits.shape[0], bits)


def _arrays(samples):
    kept = [s for s in samples if not s.blink]
    est = np.array([s.estimate for s in kept], float).reshape(-1, 2)
    tru = np.array([s.truth for s in kept], float).reshape(-1, 2)
    return est, tru


def trim_mask(values, fraction: float = TRIM_FRACTION) -> np.ndarray:
    """Drop floor(fraction * n) of the smallest and of the largest values (ties broken by order)."""
    values = np.asarray(values, float)
    n = len(values)
    cut = int(np.floor(fraction * n))
    keep = np.ones(n, dtype=bool)
    if cut:
        order = np.argsort(values, kind="stable")
        keep[order[:cut]] = False
        keep[order[n - cut:]] = False
    return keep


def accuracy(samples, trim: float = TRIM_FRACTION) -> float:
    """Mean angular error (deg) over non-blink samples after symmetric trimming."""
    est, tru = _arrays(samples)
    if len(est) == 0:
        raise InsufficientSamplesError("no non-blink samples")
    err = np.linalg.norm(est - tru, axis=1)
    return float(err[trim_mask(err, trim)].mean())


def precision(samples, trim: float = TRIM_FRACTION) -> float:
    """Sample standard deviation (n - 1) of the estimates about their mean, as a 2-D spread."""
    est, _ = _arrays(samples)
    if len(est) < 2:
        raise InsufficientSamplesError("precision needs at least two non-blink samples")
    dev = np.linalg.norm(est - est.mean(axis=0), axis=1)
    keep = trim_mask(dev, trim)
    est = est[keep]
    if len(est) < 2:
        raise InsufficientSamplesError("too few samples left after trimming")
    d = est - est.mean(axis=0)
    return float(np.sqrt(np.sum(d * d) / (len(est) - 1)))


def smoothness(track, cap: float = SMOOTHNESS_CAP) -> float:
    """Mean reciprocal step length of a time-ordered (T, 2) track; zero steps count as ``cap``."""
    p = np.asarray(track, float).reshape(-1, 2)
    if len(p) < 2:
        raise InsufficientSamplesError("smoothness needs at least two points")
    step = np.linalg.norm(np.diff(p, axis=0), axis=1)
    with np.errstate(divide="ignore"):
        inv = np.where(step > 0, 1.0 / step, cap)
    return float(np.mean(np.minimum(inv, cap)))


def inverse_step_norm(track) -> float:
    """Reciprocal of the Euclidean norm of all concatenated forward differences of a (T, 2) track."""
    p = np.asarray(track, float).reshape(-1, 2)
    if len(p) < 2:
        raise InsufficientSamplesError("smoothness needs at least two points")
    norm = float(np.linalg.norm(np.diff(p, axis=0)))
    return 1.0 / norm if norm > 0 else SMOOTHNESS_CAP


def _bits(m):
    return m.bits if isinstance(m, PupilMask) else np.asarray(m, dtype=bool)


def iou(a, b) -> float:
    a, b = _bits(a), _bits(b)
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def center_error(estimate: EllipseParams, truth: EllipseParams) -> float:
    (x1, y1), (x2, y2) = ellipse_center(estimate), ellipse_center(truth)
    return float(np.hypot(x1 - x2, y1 - y2))


def frame_only_ablation(pre_frame_centers, prev_frame_centers, truth_centers) -> np.ndarray:
    """Per-frame ``d_frame - d_event``.

    ``d_frame`` is the error of the previous frame's estimate held constant,
    ``d_event`` the error of the event-updated estimate just before the frame.
    All inputs are (n, 2) arrays aligned per frame.
    """
    pre = np.asarray(pre_frame_centers, float).reshape(-1, 2)
    prev = np.asarray(prev_frame_centers, float).reshape(-1, 2)
    truth = np.asarray(truth_centers, float).reshape(-1, 2)
    d_event = np.linalg.norm(pre - truth, axis=1)
    d_frame = np.linalg.norm(prev - truth, axis=1)
    return d_frame - d_event


def histogram(values, bins: int = 20, range_=None) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    return np.histogram(v, bins=bins, range=range_)
