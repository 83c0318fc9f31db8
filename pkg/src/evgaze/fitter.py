"""Online least squares over quadric feature vectors.

One :class:`FitState` per sub-model keeps the blended normal equations
``A_bar``/``b_bar`` and, on the per-event path, a cached inverse that is
maintained with rank-1 Sherman-Morrison updates.

Feature/target conventions (``A = sum v v^T``, ``b = sum target * v``):

* ellipse: ``v = (x^2, xy, y^2, x, y)``, target 1 (``d = -1``)
* parabola: points are ``(u, v) = (row, col)``, features ``(v^2, v, 1)``, target ``u``
* circle: ``v = (x, y, 1)``, target ``-(x^2 + y^2)``; solution ``(g, f, d)`` of
  ``x^2 + y^2 + g x + f y + d = 0``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (
    CircleParams,
    DegenerateConicError,
    EllipseParams,
    Event,
    EyeModel,
    ParabolaParams,
    circle_residual,
    ellipse_center,
    ellipse_radii,
    is_real_ellipse,
    parabola_residual,
    projection_distance,
)

ELLIPSE, PARABOLA, CIRCLE = "ellipse", "parabola", "circle"
FEATURE_DIM = {ELLIPSE: 5, PARABOLA: 3, CIRCLE: 3}
MIN_OBSERVATIONS = {ELLIPSE: 5, PARABOLA: 3, CIRCLE: 3}
SMW_TOL = 1e-12
COND_LIMIT = 1e14


class SingularMatrixError(np.linalg.LinAlgError):
    """The accumulated system cannot be solved; keep the previous model."""


class NumericalBreakdownError(ArithmeticError):
    """The Sherman-Morrison denominator vanished."""


class Membership(str, Enum):
    PUPIL = "pupil"
    EYELID = "eyelid"
    GLINT = "glint"
    REJECTED = "rejected"


@dataclass
class FitConfig:
    gamma: float = 0.1
    gamma_prime: float = 0.9
    delta: float = 2.0
    events_per_fit: int = 20
    refresh_period: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gamma_prime <= 1.0:
            raise ValueError(f"gamma_prime must lie in [0, 1], got {self.gamma_prime}")
        if self.events_per_fit < 1:
            raise ValueError(f"events_per_fit must be >= 1, got {self.events_per_fit}")
        if self.refresh_period < 1:
            raise ValueError(f"refresh_period must be >= 1, got {self.refresh_period}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


@dataclass
class FitState:
    A_bar: np.ndarray
    b_bar: np.ndarray
    A_inv: np.ndarray
    inv_fresh: bool = True
    observation_count: int = 0
    smw_since_refresh: int = 0

    @property
    def k(self) -> int:
        return self.b_bar.shape[0]

    @classmethod
    def initial(cls, k: int) -> "FitState":
        return cls(np.eye(k), np.zeros(k), np.eye(k))

    def copy(self) -> "FitState":
        return FitState(self.A_bar.copy(), self.b_bar.copy(), self.A_inv.copy(),
                        self.inv_fresh, self.observation_count, self.smw_since_refresh)


def feature_vector_ellipse(p) -> np.ndarray:
    x, y = float(p[0]), float(p[1])
    return np.array([x * x, x * y, y * y, x, y])


def features(points, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows ``V`` (n, k) and targets (n,) for a point set."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if kind == ELLIPSE:
        V = np.column_stack([x * x, x * y, y * y, x, y])
        return V, np.ones(len(pts))
    if kind == PARABOLA:
        # x is the dependent coordinate
        V = np.column_stack([y * y, y, np.ones_like(y)])
        return V, x
    if kind == CIRCLE:
        V = np.column_stack([x, y, np.ones_like(x)])
        return V, -(x * x + y * y)
    raise ValueError(f"unknown quadric kind {kind!r}")


def batch_accumulate(points, kind: str) -> tuple[np.ndarray, np.ndarray]:
    V, target = features(points, kind)
    if len(V) == 0:
        raise ValueError("cannot accumulate an empty point set")
    return V.T @ V, V.T @ target


def blend_batch(state: FitState, A, b, gamma: float, n_points: int = 0) -> FitState:
    """``A_bar <- gamma A_bar + (1 - gamma) A`` (same for ``b``); the cached inverse goes stale."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape != state.A_bar.shape or b.shape != state.b_bar.shape:
        raise ValueError(f"shape mismatch: state k={state.k}, got A{A.shape}, b{b.shape}")
    if gamma == 1.0:
        return state.copy()
    return FitState(
        gamma * state.A_bar + (1.0 - gamma) * A,
        gamma * state.b_bar + (1.0 - gamma) * b,
        state.A_inv.copy(),
        inv_fresh=False,
        observation_count=state.observation_count + n_points,
        smw_since_refresh=state.smw_since_refresh,
    )


def refresh_inverse(state: FitState) -> FitState:
    out = state.copy()
    try:
        out.A_inv = np.linalg.inv(state.A_bar)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    out.inv_fresh = True
    out.smw_since_refresh = 0
    return out


def smw_update(state: FitState, v, gamma_prime: float, target: float = 1.0) -> FitState:
    """Rank-1 blend of one observation, updating the cached inverse in O(k^2).

    The new inverse is exactly ``inv(gamma' A_bar + (1 - gamma') v v^T)``.
    """
    if not state.inv_fresh:
        raise ValueError("smw_update needs a fresh cached inverse; call refresh_inverse first")
    if not 0.0 < gamma_prime <= 1.0:
        raise ValueError(f"gamma_prime must lie in (0, 1], got {gamma_prime}")
    v = np.asarray(v, dtype=float)
    if gamma_prime == 1.0:
        out = state.copy()
        out.observation_count += 1
        return out
    w = 1.0 - gamma_prime
    Av = state.A_inv @ v
    denom = gamma_prime + w * float(v @ Av)
    if not abs(denom) > SMW_TOL:
        raise NumericalBreakdownError(f"SMW denominator {denom!r} below tolerance")
    A_inv = state.A_inv / gamma_prime - (w / gamma_prime) * np.outer(Av, Av) / denom
    # the antisymmetric part of the rounding error grows by 1/gamma' per update
    A_inv = 0.5 * (A_inv + A_inv.T)
    return FitState(
        gamma_prime * state.A_bar + w * np.outer(v, v),
        gamma_prime * state.b_bar + w * target * v,
        A_inv,
        inv_fresh=True,
        observation_count=state.observation_count + 1,
        smw_since_refresh=state.smw_since_refresh + 1,
    )


def solve(state: FitState) -> np.ndarray:
    if state.observation_count < state.k:
        raise SingularMatrixError(
            f"{state.observation_count} observations cannot determine {state.k} parameters")
    if state.inv_fresh:
        sol = state.A_inv @ state.b_bar
    else:
        if np.linalg.cond(state.A_bar) > COND_LIMIT:
            raise SingularMatrixError("accumulated matrix is numerically singular")
        try:
            sol = np.linalg.solve(state.A_bar, state.b_bar)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularMatrixError("non-finite solution")
    return sol


# --- coordinate normalization -------------------------------------------------

def ellipse_to_pixels(vec, scale: float) -> EllipseParams:
    a, h, b, g, f = vec
    s2 = scale * scale
    return EllipseParams(a / s2, h / s2, b / s2, g / scale, f / scale)


def ellipse_to_normalized(e: EllipseParams, scale: float) -> np.ndarray:
    s2 = scale * scale
    return np.array([e.a * s2, e.h * s2, e.b * s2, e.g * scale, e.f * scale])


def parabola_to_pixels(vec, scale: float) -> ParabolaParams:
    a, g, d = vec
    return ParabolaParams(a / scale, g, d * scale)


def circle_to_pixels(vec, scale: float) -> CircleParams:
    g, f, d = vec
    cx, cy = -0.5 * g * scale, -0.5 * f * scale
    r2 = cx * cx + cy * cy - d * scale * scale
    if not r2 > 0:
        raise DegenerateConicError(f"circle fit has non-positive squared radius {r2!r}")
    return CircleParams(cx, cy, math.sqrt(r2))


def usable_ellipse(e: EllipseParams, width: int, height: int) -> bool:
    """A real ellipse whose center and radii are plausible for the sensor."""
    if not is_real_ellipse(e):
        return False
    try:
        xc, yc = ellipse_center(e)
        major, minor = ellipse_radii(e)
    except DegenerateConicError:
        return False
    size = max(width, height)
    return (-width <= xc <= 2 * width and -height <= yc <= 2 * height
            and minor >= 0.5 and major <= 2 * size)


def fit_points(points, kind: str, scale: float = 1.0):
    """One-shot least-squares fit of a point set, returned in pixel units."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < MIN_OBSERVATIONS[kind]:
        raise SingularMatrixError(f"{len(pts)} points cannot determine a {kind}")
    A, b = batch_accumulate(pts / scale, kind)
    state = FitState(A, b, np.eye(len(b)), inv_fresh=False, observation_count=len(pts))
    vec = solve(state)
    if kind == ELLIPSE:
        return ellipse_to_pixels(vec, scale)
    if kind == PARABOLA:
        return parabola_to_pixels(vec, scale)
    return circle_to_pixels(vec, scale)


def fit_ellipse(points, scale: float = 1.0) -> EllipseParams:
    return fit_points(points, ELLIPSE, scale)


# --- gating -------------------------------------------------------------------

def gate_event(model: EyeModel, ev: Event, delta: float) -> Membership:
    """Assign an event to the first sub-model it is delta-close to (pupil > glint > eyelid)."""
    p = (float(ev.x), float(ev.y))
    if model.ellipse_valid:
        try:
            if projection_distance(model.ellipse, p) < delta:
                return Membership.PUPIL
        except DegenerateConicError:
            pass
    if model.glint_valid and circle_residual(model.glint, p) ** 2 < delta * delta:
        return Membership.GLINT
    if model.eyelid_valid and abs(parabola_residual(model.eyelid, (p[1], p[0]))) < delta:
        return Membership.EYELID
    return Membership.REJECTED
