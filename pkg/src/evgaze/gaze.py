"""Polynomial gaze mapping from pupil center to screen coordinates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np


class RankDeficiencyError(np.linalg.LinAlgError):
    """Too few or degenerate calibration pairs for the requested degree."""


@dataclass(frozen=True)
class CalibrationPair:
    pupil_center: tuple[float, float]
    screen_target: tuple[float, float]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.pupil_center, *self.screen_target)):
            raise ValueError("calibration pair must be finite")


@dataclass(frozen=True)
class ScreenGeometry:
    cx: float = 960.0
    cy: float = 540.0
    D: float = 864.0
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"screen distance must be positive, got {self.D}")

    def angles_to_screen(self, theta_deg, phi_deg):
        """Signed horizontal/vertical angles to a screen point."""
        return (self.cx + self.D * np.tan(np.radians(theta_deg)),
                self.cy + self.D * np.tan(np.radians(phi_deg)))


def screen_to_angles(geom: ScreenGeometry, x_s, y_s):
    """Unsigned visual angles (deg) of a screen point relative to the screen center."""
    theta = np.degrees(np.arctan(np.abs(np.asarray(x_s, float) - geom.cx) / geom.D))
    phi = np.degrees(np.arctan(np.abs(np.asarray(y_s, float) - geom.cy) / geom.D))
    if np.ndim(theta) == 0:
        return float(theta), float(phi)
    return theta, phi


def screen_to_signed_angles(geom: ScreenGeometry, x_s, y_s):
    """Signed visual angles (deg); inverse of :meth:`ScreenGeometry.angles_to_screen`."""
    theta = np.degrees(np.arctan((np.asarray(x_s, float) - geom.cx) / geom.D))
    phi = np.degrees(np.arctan((np.asarray(y_s, float) - geom.cy) / geom.D))
    if np.ndim(theta) == 0:
        return float(theta), float(phi)
    return theta, phi


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """Graded-lexicographic exponents: 1, x, y, x^2, xy, y^2, ..."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def n_coefficients(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def _design(u, v, degree):
    return np.column_stack([u ** i * v ** j for i, j in monomial_exponents(degree)])


@dataclass(frozen=True)
class GazeMap:
    """Per-axis polynomial in the scaled inputs ``u = (x - offset) / scale``."""

    degree: int
    coeffs_x: np.ndarray
    coeffs_y: np.ndarray
    offset: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        n = n_coefficients(self.degree)
        if len(self.coeffs_x) != n or len(self.coeffs_y) != n:
            raise ValueError(f"degree {self.degree} needs {n} coefficients per axis")

    @classmethod
    def zero(cls, degree: int = 2) -> "GazeMap":
        n = n_coefficients(degree)
        return cls(degree, np.zeros(n), np.zeros(n))

    @classmethod
    def identity(cls, degree: int = 2) -> "GazeMap":
        n = n_coefficients(degree)
        cx, cy = np.zeros(n), np.zeros(n)
        cx[1] = cy[2] = 1.0
        return cls(degree, cx, cy)

    def raw_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients over monomials of the unscaled pupil coordinates."""
        exps = monomial_exponents(self.degree)
        index = {e: k for k, e in enumerate(exps)}
        (ox, oy), (sx, sy) = self.offset, self.scale
        out = []
        for coeffs in (self.coeffs_x, self.coeffs_y):
            raw = np.zeros(len(exps))
            for c, (i, j) in zip(coeffs, exps):
                # ((x - ox)/sx)^i ((y - oy)/sy)^j expanded binomially
                for p in range(i + 1):
                    cp = comb(i, p) * (-ox) ** (i - p) / sx ** i
                    for q in range(j + 1):
                        cq = comb(j, q) * (-oy) ** (j - q) / sy ** j
                        raw[index[(p, q)]] += c * cp * cq
            out.append(raw)
        return out[0], out[1]

    def to_dict(self) -> dict:
        return {"degree": self.degree, "coeffs_x": [float(c) for c in self.coeffs_x],
                "coeffs_y": [float(c) for c in self.coeffs_y],
                "offset": list(self.offset), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "GazeMap":
        return cls(int(d["degree"]), np.asarray(d["coeffs_x"], float), np.asarray(d["coeffs_y"], float),
                   tuple(d["offset"]), tuple(d["scale"]))


def _pairs_arrays(pairs):
    pc = np.array([p.pupil_center for p in pairs], dtype=float).reshape(-1, 2)
    st = np.array([p.screen_target for p in pairs], dtype=float).reshape(-1, 2)
    return pc, st


def calibrate(pairs, degree: int = 2) -> GazeMap:
    """Independent per-axis least squares over the bivariate monomial basis.

    Inputs are mapped to [-1, 1] per axis before solving with an SVD-based
    solver; the affine transform is stored on the returned map.
    """
    pc, st = _pairs_arrays(pairs)
    n = n_coefficients(degree)
    if len(pc) < n:
        raise RankDeficiencyError(f"degree {degree} needs at least {n} pairs, got {len(pc)}")
    lo, hi = pc.min(axis=0), pc.max(axis=0)
    offset = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo)
    if np.any(scale <= 0):
        raise RankDeficiencyError("calibration pupil centers do not span both axes")
    u = (pc - offset) / scale
    X = _design(u[:, 0], u[:, 1], degree)
    coef, _, rank, sv = np.linalg.lstsq(X, st, rcond=None)
    if rank < n or sv[-1] < 1e-10 * sv[0]:
        raise RankDeficiencyError(f"design matrix rank {rank} < {n}")
    return GazeMap(degree, coef[:, 0].copy(), coef[:, 1].copy(),
                   (float(offset[0]), float(offset[1])), (float(scale[0]), float(scale[1])))


def map_gaze(gmap: GazeMap, pupil_center):
    """Evaluate both polynomials; accepts one point or an (n, 2) array."""
    pc = np.asarray(pupil_center, dtype=float)
    u = (pc[..., 0] - gmap.offset[0]) / gmap.scale[0]
    v = (pc[..., 1] - gmap.offset[1]) / gmap.scale[1]
    xs = np.zeros_like(u)
    ys = np.zeros_like(u)
    for cx, cy, (i, j) in zip(gmap.coeffs_x, gmap.coeffs_y, monomial_exponents(gmap.degree)):
        m = u ** i * v ** j
        xs = xs + cx * m
        ys = ys + cy * m
    if pc.ndim == 1:
        return float(xs), float(ys)
    return np.column_stack([xs, ys])


def calibration_residual(gmap: GazeMap, pairs) -> float:
    pc, st = _pairs_arrays(pairs)
    return float(np.sum((map_gaze(gmap, pc) - st) ** 2))


def even_odd_split(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return idx[idx % 2 == 0], idx[idx % 2 == 1]


def cross_validate_even_odd(pairs, evaluate, degree: int = 2) -> float:
    """Calibrate on even-indexed targets, score the odd ones, swap, and average.

    ``evaluate(gmap, held_out_indices)`` returns a scalar score.
    """
    even, odd = even_odd_split(len(pairs))
    scores = []
    for train, test in ((even, odd), (odd, even)):
        gmap = calibrate([pairs[i] for i in train], degree)
        scores.append(evaluate(gmap, test))
    return float(np.mean(scores))
