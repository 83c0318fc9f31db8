"""Stream orchestration: merges frames and events and maintains the eye model.

Frames are processed in Python (candidate extraction is array code); events
run through a compiled loop by default. ``engine="python"`` routes events
through the public fitter functions one at a time, which is slow but handy
as an oracle for the compiled path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .blink import BlinkDetectorState, observe
from .fitter import (
    CIRCLE,
    ELLIPSE,
    PARABOLA,
    FitConfig,
    FitState,
    Membership,
    NumericalBreakdownError,
    SingularMatrixError,
    batch_accumulate,
    blend_batch,
    circle_to_pixels,
    ellipse_to_pixels,
    features,
    fit_ellipse,
    gate_event,
    parabola_to_pixels,
    refresh_inverse,
    smw_update,
    solve,
    usable_ellipse,
)
from .frames import FramePipelineConfig, eyelid_candidates, glint_candidates, pupil_candidates
from .model import (
    CircleParams,
    DegenerateConicError,
    EllipseParams,
    Event,
    EyeModel,
    Frame,
    ParabolaParams,
    eccentricity,
)

KINDS = (ELLIPSE, PARABOLA, CIRCLE)
SOURCE_FRAME, SOURCE_EVENTS = 0, 1
_EVENT_CHUNK = 1 << 16
_MEMBER_INDEX = {Membership.PUPIL: K.PUPIL, Membership.EYELID: K.EYELID, Membership.GLINT: K.GLINT}


class OutOfOrderError(ValueError):
    """Input timestamps went backwards."""

    def __init__(self, message: str, offset: int = -1):
        super().__init__(message if offset < 0 else f"{message} (at offset {offset})")
        self.offset = offset


@dataclass
class BlinkConfig:
    n: int = 30
    lam: float = 3.0
    k: int = 3
    sigma_floor: float = 0.05


@dataclass
class TrackerConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    frames: FramePipelineConfig = field(default_factory=FramePipelineConfig)
    blink: BlinkConfig = field(default_factory=BlinkConfig)
    use_events: bool = True
    engine: str = "numba"

    def __post_init__(self):
        if self.engine not in ("numba", "python"):
            raise ValueError(f"unknown engine {self.engine!r}")


def ellipse_centers(params) -> np.ndarray:
    """Vectorized centers of (n, 5) pixel ellipse coefficient rows; NaN where undefined."""
    p = np.asarray(params, float).reshape(-1, 5)
    a, h, b, g, f = p.T
    disc = h * h - 4 * a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = np.where(disc != 0, (2 * b * g - h * f) / disc, np.nan)
        yc = np.where(disc != 0, (2 * a * f - h * g) / disc, np.nan)
    return np.column_stack([xc, yc])


def model_from_arrays(params, valid, t: int = 0) -> EyeModel:
    p = np.asarray(params, float)
    return EyeModel(EllipseParams(*map(float, p[0])), ParabolaParams(*map(float, p[1, :3])),
                    CircleParams(*map(float, p[2, :3])), int(t),
                    bool(valid[0]), bool(valid[1]), bool(valid[2]))


@dataclass
class TrackResult:
    """Emissions (one per model update) and per-frame bookkeeping."""

    t: np.ndarray
    source: np.ndarray
    mask: np.ndarray
    params: np.ndarray
    valid: np.ndarray
    frame_t: np.ndarray
    pre_params: np.ndarray
    pre_valid: np.ndarray
    post_params: np.ndarray
    post_valid: np.ndarray
    frame_ecc: np.ndarray
    blink: np.ndarray
    gated: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def models(self):
        """Yield ``(t, EyeModel)`` per emission."""
        for i in range(len(self.t)):
            yield int(self.t[i]), model_from_arrays(self.params[i], self.valid[i], self.t[i])

    def pupil_centers(self) -> np.ndarray:
        return ellipse_centers(self.params[:, 0])

    def pre_frame_centers(self) -> np.ndarray:
        return ellipse_centers(self.pre_params)

    def post_frame_centers(self) -> np.ndarray:
        return ellipse_centers(self.post_params)


class Tracker:
    """Single-writer eye model tracker for a sensor of the given size."""

    def __init__(self, width: int, height: int, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.width, self.height = int(width), int(height)
        self.scale = float(max(width, height))
        n = self.config.fit.events_per_fit
        self.A = np.zeros((3, 5, 5))
        for m, k in enumerate(K.KDIM):
            self.A[m, :k, :k] = np.eye(k)
        self.Ainv = self.A.copy()
        self.b = np.zeros((3, 5))
        self.fresh = np.ones(3, dtype=np.bool_)
        self.count = np.zeros(3, dtype=np.int64)
        self.smw = np.zeros(3, dtype=np.int64)
        self.seeded = np.zeros(3, dtype=bool)
        self.params = np.zeros((3, 5))
        self.valid = np.zeros(3, dtype=np.bool_)
        self.cache = np.zeros(3)
        self.pend = np.zeros((3, n, 2))
        self.pend_n = np.zeros(3, dtype=np.int64)
        self.gated = np.zeros(3, dtype=np.int64)
        b = self.config.blink
        self.blink_state = BlinkDetectorState(n=b.n, lam=b.lam, k=b.k, sigma_floor=b.sigma_floor)
        self.last_t = -1
        self._em = {"t": [], "source": [], "mask": [], "params": [], "valid": []}
        self._fr = {k: [] for k in ("t", "pre_params", "pre_valid", "post_params", "post_valid", "ecc", "blink")}
        self._snapshot = EyeModel()

    # --- snapshots ---

    @property
    def snapshot(self) -> EyeModel:
        """Latest published model; an immutable object swapped in by reference."""
        return self._snapshot

    def _publish(self, t):
        self._snapshot = model_from_arrays(self.params, self.valid, t)

    def _emit(self, t, source, mask):
        e = self._em
        e["t"].append(np.array([t], np.int64))
        e["source"].append(np.array([source], np.int8))
        e["mask"].append(np.array([mask], np.int8))
        e["params"].append(self.params[None].copy())
        e["valid"].append(self.valid[None].copy())

    # --- state views ---

    def fit_state(self, m: int) -> FitState:
        k = K.KDIM[m]
        return FitState(self.A[m, :k, :k].copy(), self.b[m, :k].copy(), self.Ainv[m, :k, :k].copy(),
                        bool(self.fresh[m]), int(self.count[m]), int(self.smw[m]))

    def _store_state(self, m: int, st: FitState):
        k = K.KDIM[m]
        self.A[m, :k, :k] = st.A_bar
        self.b[m, :k] = st.b_bar
        self.Ainv[m, :k, :k] = st.A_inv
        self.fresh[m] = st.inv_fresh
        self.count[m] = st.observation_count
        self.smw[m] = st.smw_since_refresh

    def _solve_store(self, m: int, st: FitState) -> bool:
        """Solve and adopt the result if usable; otherwise keep the previous parameters."""
        try:
            vec = solve(st)
            if m == K.PUPIL:
                e = ellipse_to_pixels(vec, self.scale)
                if not usable_ellipse(e, self.width, self.height):
                    return False
                cand = e.as_array()
            elif m == K.EYELID:
                cand = np.r_[parabola_to_pixels(vec, self.scale).as_array(), 0.0, 0.0]
            else:
                cand = np.r_[circle_to_pixels(vec, self.scale).as_array(), 0.0, 0.0]
        except (SingularMatrixError, DegenerateConicError):
            return False
        if not np.all(np.isfinite(cand)):
            return False
        self.params[m] = cand
        self.valid[m] = True
        if m == K.PUPIL:
            K.ellipse_cache(self.params[0], self.cache)
        return True

    # --- frames ---

    def _batch_update(self, m: int, points: np.ndarray) -> bool:
        if len(points) == 0:
            return False
        gamma = self.config.fit.gamma if self.seeded[m] else 0.0
        A, b = batch_accumulate(points / self.scale, KINDS[m])
        st = blend_batch(self.fit_state(m), A, b, gamma, len(points))
        self.seeded[m] = True
        try:
            st = refresh_inverse(st)
        except SingularMatrixError:
            self._store_state(m, st)
            return False
        self._store_state(m, st)
        return self._solve_store(m, st)

    def _take_pending(self, m: int) -> np.ndarray:
        pts = self.pend[m, :self.pend_n[m]].copy()
        self.pend_n[m] = 0
        return pts

    def push_frame(self, frame: Frame):
        if frame.t < self.last_t:
            raise OutOfOrderError(f"frame at t={frame.t} precedes t={self.last_t}")
        if (frame.width, frame.height) != (self.width, self.height):
            raise ValueError(f"frame size {frame.width}x{frame.height} != sensor {self.width}x{self.height}")
        self.last_t = frame.t
        cfg = self.config.frames
        fr = self._fr
        fr["t"].append(frame.t)
        fr["pre_params"].append(self.params[0].copy())
        fr["pre_valid"].append(bool(self.valid[0]))

        pupil_pts = pupil_candidates(frame, cfg)
        mask = 0
        if self._batch_update(K.PUPIL, np.vstack([pupil_pts, self._take_pending(K.PUPIL)])):
            mask |= 1
        center = self.snapshot_center()
        lid_pts = np.vstack([eyelid_candidates(frame, center, cfg), self._take_pending(K.EYELID)])
        # the parabola fit takes (row, col)
        if self._batch_update(K.EYELID, lid_pts[:, ::-1]):
            mask |= 2
        if self._batch_update(K.GLINT, np.vstack([glint_candidates(frame, center, cfg),
                                                  self._take_pending(K.GLINT)])):
            mask |= 4

        try:
            ecc = eccentricity(fit_ellipse(pupil_pts, self.scale))
        except (SingularMatrixError, DegenerateConicError):
            ecc = math.inf
        _, flag = observe(self.blink_state, ecc)
        fr["post_params"].append(self.params[0].copy())
        fr["post_valid"].append(bool(self.valid[0]))
        fr["ecc"].append(ecc)
        fr["blink"].append(flag)
        self._emit(frame.t, SOURCE_FRAME, mask)
        self._publish(frame.t)

    def snapshot_center(self):
        if not self.valid[0]:
            return None
        c = ellipse_centers(self.params[0])[0]
        return (float(c[0]), float(c[1])) if np.all(np.isfinite(c)) else None

    # --- events ---

    def push_events(self, events: np.ndarray):
        """Consume a structured event array (fields t, x, y, p) in order."""
        if len(events) == 0:
            return
        t = np.asarray(events["t"]).astype(np.int64)
        bad = np.flatnonzero(np.diff(t) < 0)
        if len(bad):
            raise OutOfOrderError("event timestamps decrease", int(bad[0] + 1))
        if t[0] < self.last_t:
            raise OutOfOrderError(f"event at t={t[0]} precedes t={self.last_t}", 0)
        self.last_t = int(t[-1])
        if not self.config.use_events:
            return
        x = np.asarray(events["x"]).astype(np.int64)
        y = np.asarray(events["y"]).astype(np.int64)
        if self.config.engine == "python":
            self._python_events(t, x, y)
        else:
            self._kernel_events(t, x, y)
        self._publish(int(t[-1]))

    def _kernel_events(self, t, x, y):
        fc = self.config.fit
        for s in range(0, len(t), _EVENT_CHUNK):
            e = min(len(t), s + _EVENT_CHUNK)
            cap = e - s
            out_t = np.empty(cap, np.int64)
            out_mask = np.empty(cap, np.int8)
            out_params = np.empty((cap, 3, 5))
            out_valid = np.empty((cap, 3), np.bool_)
            n = K.process_events(t, x, y, s, e, self.A, self.b, self.Ainv, self.fresh, self.count,
                                 self.smw, self.params, self.valid, self.cache, self.pend, self.pend_n,
                                 fc.events_per_fit, fc.gamma_prime, fc.delta, fc.refresh_period,
                                 self.scale, float(self.width), float(self.height),
                                 out_t, out_mask, out_params, out_valid, self.gated)
            if n:
                self._em["t"].append(out_t[:n])
                self._em["source"].append(np.full(n, SOURCE_EVENTS, np.int8))
                self._em["mask"].append(out_mask[:n])
                self._em["params"].append(out_params[:n])
                self._em["valid"].append(out_valid[:n])

    def _python_events(self, t, x, y):
        fc = self.config.fit
        for i in range(len(t)):
            model = model_from_arrays(self.params, self.valid)
            member = gate_event(model, Event(int(t[i]), int(x[i]), int(y[i]), 1), fc.delta)
            if member is Membership.REJECTED:
                continue
            m = _MEMBER_INDEX[member]
            self.gated[m] += 1
            self.pend[m, self.pend_n[m]] = (x[i], y[i])
            self.pend_n[m] += 1
            if self.pend_n[m] < fc.events_per_fit:
                continue
            pts = self._take_pending(m) / self.scale
            if m == K.EYELID:
                pts = pts[:, ::-1]
            st = self.fit_state(m)
            try:
                if len(pts) == 1:
                    if not st.inv_fresh or st.smw_since_refresh >= fc.refresh_period:
                        st = refresh_inverse(st)
                    V, target = features(pts, KINDS[m])
                    st = smw_update(st, V[0], fc.gamma_prime, float(target[0]))
                else:
                    A, b = batch_accumulate(pts, KINDS[m])
                    st = blend_batch(st, A, b, fc.gamma_prime, len(pts))
                    st = refresh_inverse(st)
            except (SingularMatrixError, NumericalBreakdownError):
                st.inv_fresh = False
                self._store_state(m, st)
                continue
            self._store_state(m, st)
            if self._solve_store(m, st):
                self._emit(int(t[i]), SOURCE_EVENTS, 1 << m)

    # --- results ---

    def result(self) -> TrackResult:
        e, f = self._em, self._fr

        def cat(key, shape, dtype):
            return np.concatenate(e[key]) if e[key] else np.empty(shape, dtype)

        return TrackResult(
            cat("t", (0,), np.int64), cat("source", (0,), np.int8), cat("mask", (0,), np.int8),
            cat("params", (0, 3, 5), float), cat("valid", (0, 3), bool),
            np.array(f["t"], np.int64), np.array(f["pre_params"]).reshape(-1, 5),
            np.array(f["pre_valid"], bool), np.array(f["post_params"]).reshape(-1, 5),
            np.array(f["post_valid"], bool), np.array(f["ecc"], float), np.array(f["blink"], bool),
            self.gated.copy(),
        )


def merge_order(frame_times, event_times) -> list[tuple[str, int, int]]:
    """Processing plan as ``(kind, start, stop)`` steps; events at a frame's timestamp go first."""
    ft = np.asarray(frame_times, np.int64)
    et = np.asarray(event_times, np.int64)
    cuts = np.searchsorted(et, ft, side="right")
    plan, prev = [], 0
    for i, c in enumerate(cuts):
        if c > prev:
            plan.append(("events", prev, int(c)))
            prev = int(c)
        plan.append(("frame", i, i + 1))
    if prev < len(et):
        plan.append(("events", prev, len(et)))
    return plan


def process_stream(frames, events, width: int, height: int, config: TrackerConfig | None = None) -> TrackResult:
    """Run the tracker over time-ordered frames and a structured event array.

    ``frames`` may be any iterable; it is consumed lazily, one frame at a time.
    """
    et = np.asarray(events["t"]).astype(np.int64) if len(events) else np.empty(0, np.int64)
    bad = np.flatnonzero(np.diff(et) < 0)
    if len(bad):
        raise OutOfOrderError("event timestamps decrease", int(bad[0] + 1))
    tr = Tracker(width, height, config)
    done, last = 0, None
    for i, frame in enumerate(frames):
        if last is not None and frame.t < last:
            raise OutOfOrderError("frame timestamps decrease", i)
        last = frame.t
        cut = int(np.searchsorted(et, frame.t, side="right"))
        if cut > done:
            tr.push_events(events[done:cut])
            done = cut
        tr.push_frame(frame)
    if done < len(et):
        tr.push_events(events[done:])
    return tr.result()
