"""Eye model types and closed-form conic geometry.

All conics use the implicit form ``a x^2 + h xy + b y^2 + g x + f y + d``
with ``d`` fixed to -1, so an ellipse is carried by five numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# |h^2 - 4ab| relative to the quadratic part's magnitude
DISCRIMINANT_TOL = 1e-12
RADIUS_TOL = 1e-9


class DegenerateConicError(ValueError):
    """Raised when a conic has no usable center, radius or ray intersection."""


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.polarity}")


@dataclass(frozen=True)
class Frame:
    """Grayscale frame; ``pixels`` is a (height, width) uint8 array, row-major."""

    t: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValueError(f"frame pixels must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"frame pixels must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EllipseParams:
    a: float
    h: float
    b: float
    g: float
    f: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.h, self.b, self.g, self.f])

    @classmethod
    def from_array(cls, v) -> "EllipseParams":
        return cls(*(float(x) for x in v))


@dataclass(frozen=True)
class ParabolaParams:
    """Eyelid curve ``u = a v^2 + g v + d`` for a point ``(u, v)``.

    The tracker feeds points as ``(row, col)`` so the eyelid is a row
    expressed as a function of the column, which keeps an upright upper
    lid single-valued.
    """

    a: float
    g: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.g, self.d])


@dataclass(frozen=True)
class CircleParams:
    cx: float
    cy: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.r])


_ZERO_ELLIPSE = EllipseParams(0.0, 0.0, 0.0, 0.0, 0.0)
_ZERO_PARABOLA = ParabolaParams(0.0, 0.0, 0.0)
_ZERO_CIRCLE = CircleParams(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EyeModel:
    """Immutable snapshot of the tracked eye (pupil ellipse, eyelid, glint)."""

    ellipse: EllipseParams = _ZERO_ELLIPSE
    eyelid: ParabolaParams = _ZERO_PARABOLA
    glint: CircleParams = _ZERO_CIRCLE
    last_update_t: int = 0
    ellipse_valid: bool = False
    eyelid_valid: bool = False
    glint_valid: bool = False

    @property
    def pupil_center(self):
        if not self.ellipse_valid:
            return None
        return ellipse_center(self.ellipse)


def ellipse_residual(e: EllipseParams, p) -> float:
    x, y = p
    return e.a * x * x + e.h * x * y + e.b * y * y + e.g * x + e.f * y - 1.0


def _discriminant(e: EllipseParams) -> float:
    return e.h * e.h - 4.0 * e.a * e.b


def _check_discriminant(e: EllipseParams) -> float:
    disc = _discriminant(e)
    quad = e.a * e.a + 0.5 * e.h * e.h + e.b * e.b
    if not math.isfinite(disc) or quad == 0.0 or abs(disc) <= DISCRIMINANT_TOL * quad:
        raise DegenerateConicError(f"conic has no unique center (h^2-4ab={disc!r})")
    return disc


def ellipse_center(e: EllipseParams) -> tuple[float, float]:
    disc = _check_discriminant(e)
    xe = (2.0 * e.b * e.g - e.h * e.f) / disc
    ye = (2.0 * e.a * e.f - e.h * e.g) / disc
    return xe, ye


def _centered_constant(e: EllipseParams, center) -> float:
    # (p - c)^T M (p - c) = K on the curve
    xc, yc = center
    return 1.0 - 0.5 * (e.g * xc + e.f * yc)


def is_real_ellipse(e: EllipseParams) -> bool:
    try:
        disc = _check_discriminant(e)
    except DegenerateConicError:
        return False
    if disc >= 0:
        return False
    k = _centered_constant(e, ellipse_center(e))
    return math.isfinite(k) and k * e.a > 0


def ellipse_radii(e: EllipseParams) -> tuple[float, float]:
    """Return (major, minor) semi-axis lengths."""
    center = ellipse_center(e)
    k = _centered_constant(e, center)
    # closed-form eigenvalues of [[a, h/2], [h/2, b]]
    mean = 0.5 * (e.a + e.b)
    spread = math.hypot(0.5 * (e.a - e.b), 0.5 * e.h)
    lam1, lam2 = mean - spread, mean + spread
    if lam1 * lam2 <= 0 or k * lam1 <= 0:
        raise DegenerateConicError("conic is not a real ellipse")
    r1, r2 = math.sqrt(k / lam1), math.sqrt(k / lam2)
    major, minor = max(r1, r2), min(r1, r2)
    if not math.isfinite(major) or minor < RADIUS_TOL:
        raise DegenerateConicError(f"minor radius {minor!r} below tolerance")
    return major, minor


def eccentricity(e: EllipseParams) -> float:
    """Major-to-minor radius ratio (>= 1)."""
    major, minor = ellipse_radii(e)
    return major / minor


def ellipse_orientation(e: EllipseParams) -> float:
    """Angle of the major axis in radians, in (-pi/2, pi/2]."""
    # major axis follows the smaller-magnitude eigenvalue; the d = -1 scaling may flip signs
    sgn = 1.0 if e.a + e.b >= 0 else -1.0
    return 0.5 * math.atan2(-e.h * sgn, (e.b - e.a) * sgn)


def project_onto_ellipse(e: EllipseParams, p) -> tuple[float, float]:
    """Radial projection: where the ray from the center through ``p`` meets the curve."""
    xc, yc = ellipse_center(e)
    ux, uy = p[0] - xc, p[1] - yc
    if ux == 0.0 and uy == 0.0:
        raise DegenerateConicError("point coincides with the ellipse center")
    q = e.a * ux * ux + e.h * ux * uy + e.b * uy * uy
    k = _centered_constant(e, (xc, yc))
    if q == 0.0 or k / q <= 0.0:
        raise DegenerateConicError("ray does not meet the conic")
    s = math.sqrt(k / q)
    return xc + s * ux, yc + s * uy


def projection_distance(e: EllipseParams, p) -> float:
    px, py = project_onto_ellipse(e, p)
    return math.hypot(px - p[0], py - p[1])


def parabola_residual(p: ParabolaParams, q) -> float:
    u, v = q
    return p.a * v * v + p.g * v + p.d - u


def circle_residual(c: CircleParams, q) -> float:
    x, y = q
    return x * x + y * y - 2.0 * x * c.cx - 2.0 * y * c.cy + (c.cx * c.cx + c.cy * c.cy - c.r * c.r)


def ellipse_from_geometry(cx, cy, r_major, r_minor, angle=0.0) -> EllipseParams:
    """Implicit coefficients (d = -1) of the ellipse with the given center, radii and major-axis angle."""
    c, s = math.cos(angle), math.sin(angle)
    ia, ib = 1.0 / (r_major * r_major), 1.0 / (r_minor * r_minor)
    A = c * c * ia + s * s * ib
    B = 2.0 * c * s * (ia - ib)
    C = s * s * ia + c * c * ib
    D = -2.0 * A * cx - B * cy
    E = -B * cx - 2.0 * C * cy
    F = A * cx * cx + B * cx * cy + C * cy * cy - 1.0
    if F == 0.0:
        raise DegenerateConicError("curve passes through the origin; d cannot be normalized to -1")
    k = -1.0 / F
    return EllipseParams(A * k, B * k, C * k, D * k, E * k)


def ellipse_mask(e: EllipseParams, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) raster of pixel centers inside the ellipse."""
    xc, yc = ellipse_center(e)
    k = _centered_constant(e, (xc, yc))
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    dx, dy = xs - xc, ys - yc
    q = e.a * dx * dx + e.h * dx * dy + e.b * dy * dy
    # inside: q has the same sign as k and smaller magnitude
    return q * np.sign(k) <= abs(k)
