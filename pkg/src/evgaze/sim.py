"""Synthetic near-eye renderer and DVS event generator with analytic ground truth.

Gaze is parameterized by signed screen angles ``(theta, phi)`` in degrees,
with ``x_s = cx + D tan(theta)`` and ``y_s = cy + D tan(phi)``. The pupil
sits on a sphere of radius ``eye_radius`` pixels around ``eye_center`` and is
foreshortened along the radial direction, so off-axis gaze yields rotated
ellipses.

Edges are anti-aliased with a one-pixel linear ramp, which makes every
pixel's intensity continuous in time; events are threshold crossings of the
per-pixel log intensity sampled at ``sample_rate``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np
from scipy import ndimage

from .gaze import ScreenGeometry, screen_to_angles
from .model import EllipseParams, Frame, ellipse_from_geometry, ellipse_mask

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

FIXATION, SACCADE, PURSUIT = "fixation", "saccade", "smooth_pursuit_squarewave"
_KINDS = (FIXATION, SACCADE, PURSUIT)

# calibrated so the pupil-edge event rate averages ~200 events/ms over the
# saccades of saccade_experiment() (see calibrate_contrast_threshold)
DEFAULT_CONTRAST_THRESHOLD = 0.273


class OutOfBoundsError(ValueError):
    """Eye state or query time outside the sensor / trajectory."""


@dataclass(frozen=True)
class SceneConfig:
    width: int = 346
    height: int = 260
    eye_center: tuple[float, float] = (173.0, 140.0)
    eye_radius: float = 100.0
    pupil_radius_range: tuple[float, float] = (20.0, 20.0)
    iris_radius: float = 45.0
    pupil_intensity: float = 20.0
    iris_intensity: float = 100.0
    sclera_intensity: float = 180.0
    glint_intensity: float = 250.0
    skin_intensity: float = 110.0
    lash_intensity: float = 65.0
    lash_band: float = 6.0
    lash_period: float = 5.0
    # upper lid in (row, col) form: row = a col^2 + g col + d
    eyelid: tuple[float, float, float] = (0.004, -1.384, 199.716)
    glint_offset: tuple[float, float] = (28.0, -12.0)
    glint_radius: float = 3.0
    blink_depth: float = 130.0
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD
    frame_rate: float = 25.0
    sample_rate: float = 100_000.0
    time_jitter_us: float = 0.0
    noise_rate_hz: float = 0.0
    screen: ScreenGeometry = field(default_factory=ScreenGeometry)

    def __post_init__(self):
        if not (self.pupil_intensity < self.iris_intensity < self.sclera_intensity < self.glint_intensity):
            raise ValueError("intensities must satisfy pupil < iris < sclera < glint")
        if not self.contrast_threshold > 0:
            raise ValueError("contrast_threshold must be positive")
        if self.sample_rate < 100_000:
            raise ValueError("sample_rate must be at least 100 kHz")
        lo, hi = self.pupil_radius_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad pupil radius range {self.pupil_radius_range}")

    @property
    def pupil_radius(self) -> float:
        return self.pupil_radius_range[0]

    def resolve(self, seed: int) -> "SceneConfig":
        """Draw the recording's pupil radius from the configured range."""
        lo, hi = self.pupil_radius_range
        r = lo if lo == hi else float(np.random.default_rng(seed).uniform(lo, hi))
        return replace(self, pupil_radius_range=(r, r))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["screen"] = asdict(self.screen)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        d["screen"] = ScreenGeometry(**d["screen"])
        for key in ("eye_center", "pupil_radius_range", "eyelid", "glint_offset"):
            d[key] = tuple(d[key])
        return cls(**d)


# --- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    kind: str
    t0: float
    duration: float
    start: tuple[float, float]
    end: tuple[float, float]
    waypoints: tuple = ()
    target: int = -1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("segment durations must be positive")

    @property
    def t1(self) -> float:
        return self.t0 + self.duration


def minimum_jerk(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def minimum_jerk_velocity(tau):
    """d/dtau of :func:`minimum_jerk`."""
    tau = np.clip(tau, 0.0, 1.0)
    return 30.0 * tau ** 2 * (1.0 - tau) ** 2


def main_sequence_duration_us(amplitude_deg: float) -> float:
    return (2.2 * amplitude_deg + 21.0) * 1000.0


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[Segment, ...]
    blinks: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        for prev, nxt in zip(self.segments, self.segments[1:]):
            if abs(prev.t1 - nxt.t0) > 1e-6:
                raise ValueError("segments must be contiguous")

    @property
    def t_start(self) -> float:
        return self.segments[0].t0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1

    @classmethod
    def chain(cls, parts, t0: float = 0.0, blinks=()) -> "Trajectory":
        """Build from ``(kind, duration_us, start, end[, waypoints[, target]])`` tuples."""
        segs, t = [], float(t0)
        for part in parts:
            kind, duration, start, end, *rest = part
            waypoints = tuple(tuple(w) for w in rest[0]) if rest else ()
            target = rest[1] if len(rest) > 1 else -1
            segs.append(Segment(kind, t, float(duration), tuple(start), tuple(end), waypoints, target))
            t += float(duration)
        return cls(tuple(segs), tuple(tuple(b) for b in blinks))

    def _index(self, t):
        starts = np.array([s.t0 for s in self.segments])
        return np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.segments) - 1)

    def segment_at(self, t: float) -> Segment:
        self._check(t)
        return self.segments[int(self._index(t))]

    def _check(self, t):
        tt = np.asarray(t, float)
        if np.any(tt < self.t_start - 1e-9) or np.any(tt > self.t_end + 1e-9):
            raise OutOfBoundsError(f"time outside trajectory span [{self.t_start}, {self.t_end}]")

    def gaze(self, t):
        """Signed gaze angles (deg), shape (..., 2)."""
        tt = np.asarray(t, dtype=float)
        self._check(tt)
        flat = np.atleast_1d(tt).ravel()
        out = np.empty((flat.size, 2))
        idx = self._index(flat)
        for k in np.unique(idx):
            seg = self.segments[k]
            sel = idx == k
            tau = (flat[sel] - seg.t0) / seg.duration
            out[sel] = _segment_gaze(seg, tau)
        return out.reshape(tt.shape + (2,))

    def lid_offset(self, t, depth: float):
        tt = np.asarray(t, dtype=float)
        off = np.zeros_like(tt)
        for b0, dur in self.blinks:
            tau = (tt - b0) / dur
            down = minimum_jerk(tau / 0.4)
            up = minimum_jerk((tau - 0.6) / 0.4)
            inside = (tau > 0) & (tau < 1)
            off = np.where(inside, depth * (down - up), off)
        return off

    def windows(self, kind: str) -> list[tuple[float, float]]:
        return [(s.t0, s.t1) for s in self.segments if s.kind == kind]

    def in_blink(self, t) -> np.ndarray:
        tt = np.asarray(t, float)
        out = np.zeros(tt.shape, dtype=bool)
        for b0, dur in self.blinks:
            out |= (tt >= b0) & (tt <= b0 + dur)
        return out

    def to_dict(self) -> dict:
        return {"segments": [asdict(s) for s in self.segments],
                "blinks": [list(b) for b in self.blinks]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        segs = []
        for s in d["segments"]:
            s = dict(s)
            s["start"], s["end"] = tuple(s["start"]), tuple(s["end"])
            s["waypoints"] = tuple(tuple(w) for w in s["waypoints"])
            segs.append(Segment(**s))
        return cls(tuple(segs), tuple(tuple(b) for b in d["blinks"]))


def _segment_gaze(seg: Segment, tau) -> np.ndarray:
    start, end = np.asarray(seg.start), np.asarray(seg.end)
    if seg.kind == FIXATION:
        return np.broadcast_to(start, (len(tau), 2))
    if seg.kind == SACCADE:
        return start + np.outer(minimum_jerk(tau), end - start)
    pts = np.vstack([start, *(np.asarray(w) for w in seg.waypoints), end])
    lengths = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.clip(tau, 0, 1) * cum[-1]
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def squarewave_waypoints(theta_range, phi_start, phi_step, rows):
    """Corners of a boustrophedon path: horizontal sweeps joined by vertical steps."""
    lo, hi = theta_range
    pts, phi = [], phi_start
    for r in range(rows):
        a, b = (lo, hi) if r % 2 == 0 else (hi, lo)
        pts += [(a, phi), (b, phi)]
        phi += phi_step
    return pts


# --- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    t: float
    ellipse: EllipseParams
    center: tuple[float, float]
    radii: tuple[float, float]
    angle: float
    gaze_angles: tuple[float, float]
    screen: tuple[float, float]
    mask: np.ndarray = field(repr=False)
    blink: bool = False


def gaze_direction(theta_deg, phi_deg):
    tx, ty = np.tan(np.radians(theta_deg)), np.tan(np.radians(phi_deg))
    n = np.sqrt(tx * tx + ty * ty + 1.0)
    return tx / n, ty / n, 1.0 / n


def pupil_geometry(scene: SceneConfig, gaze):
    """Center, radii (major, minor) and major-axis angle of the pupil for gaze angles (..., 2)."""
    gaze = np.asarray(gaze, float)
    gx, gy, gz = gaze_direction(gaze[..., 0], gaze[..., 1])
    cx = scene.eye_center[0] + scene.eye_radius * gx
    cy = scene.eye_center[1] + scene.eye_radius * gy
    radial = np.arctan2(gy, gx)
    angle = np.where((gx == 0) & (gy == 0), 0.0, radial + 0.5 * np.pi)
    r = scene.pupil_radius
    return cx, cy, np.full_like(cx, r), r * gz, angle


def eye_states(scene: SceneConfig, traj: Trajectory, t) -> np.ndarray:
    """Render-state rows for the numba kernels (one per time)."""
    t = np.atleast_1d(np.asarray(t, float))
    gaze = traj.gaze(t)
    cx, cy, ra, rb, ang = pupil_geometry(scene, gaze)
    ratio = rb / ra
    st = np.empty((len(t), 14))
    st[:, 0], st[:, 1], st[:, 2], st[:, 3] = cx, cy, ra, rb
    st[:, 4], st[:, 5] = np.cos(ang), np.sin(ang)
    st[:, 6], st[:, 7] = scene.iris_radius, scene.iris_radius * ratio
    st[:, 8] = cx + scene.glint_offset[0]
    st[:, 9] = cy + scene.glint_offset[1]
    st[:, 10] = scene.glint_radius
    st[:, 11], st[:, 12] = scene.eyelid[0], scene.eyelid[1]
    st[:, 13] = scene.eyelid[2] + traj.lid_offset(t, scene.blink_depth)
    return st


def _luminance(scene: SceneConfig) -> np.ndarray:
    return np.array([scene.pupil_intensity, scene.iris_intensity, scene.sclera_intensity,
                     scene.glint_intensity, scene.skin_intensity, scene.lash_intensity,
                     scene.lash_band, scene.lash_period])


@numba.njit(cache=True)
def _cover(sd):
    c = 0.5 - sd
    if c < 0.0:
        return 0.0
    if c > 1.0:
        return 1.0
    return c


@numba.njit(cache=True)
def _ellipse_sd(x, y, cx, cy, ra, rb, c, s):
    """First-order signed distance to an ellipse (negative inside).

    |grad| <= q / rb bounds |sd| below by |q - 1| rb, so points that far out
    return a saturated stand-in without the gradient.
    """
    dx, dy = x - cx, y - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    q = math.sqrt((u / ra) ** 2 + (v / rb) ** 2)
    if (q - 1.0) * rb >= 0.5:
        return 0.5
    if (1.0 - q) * rb >= 0.5:
        return -0.5
    gu, gv = u / (ra * ra), v / (rb * rb)
    return (q - 1.0) * q / math.sqrt(gu * gu + gv * gv)


@numba.njit(cache=True)
def _intensity(x, y, st, lum):
    val = lum[2]
    val += (lum[1] - val) * _cover(_ellipse_sd(x, y, st[0], st[1], st[6], st[7], st[4], st[5]))
    val += (lum[0] - val) * _cover(_ellipse_sd(x, y, st[0], st[1], st[2], st[3], st[4], st[5]))
    gd = math.hypot(x - st[8], y - st[9]) - st[10]
    val += (lum[3] - val) * _cover(gd)
    edge = st[11] * x * x + st[12] * x + st[13]
    slope = 2.0 * st[11] * x + st[12]
    sd_lid = (y - edge) / math.sqrt(1.0 + slope * slope)
    cov = _cover(sd_lid)
    if cov > 0.0:
        lid = lum[4]
        if -sd_lid < lum[6] and math.floor(x / lum[7]) % 2 == 0:
            lid = lum[5]
        val += (lid - val) * cov
    return val


@numba.njit(cache=True)
def _render(width, height, st, lum, x0, y0, out):
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[r, c] = _intensity(float(x0 + c), float(y0 + r), st, lum)


@numba.njit(cache=True)
def _dvs(xs, ys, times, states, lum, ref, C, out_t, out_x, out_y, out_p):
    """Run per-pixel DVS comparators across the sampled states; returns event count (-1 on overflow)."""
    n = 0
    cap = out_t.shape[0]
    for j in range(xs.shape[0]):
        x, y = xs[j], ys[j]
        r = ref[y, x]
        I_prev = _intensity(float(x), float(y), states[0], lum)
        L_prev = math.log(I_prev)
        for s in range(1, states.shape[0]):
            I = _intensity(float(x), float(y), states[s], lum)
            if I == I_prev:
                continue
            I_prev = I
            L = math.log(I)
            while L - r >= C or r - L >= C:
                level = r + C if L > r else r - C
                frac = (level - L_prev) / (L - L_prev) if L != L_prev else 1.0
                if n >= cap:
                    return -1
                out_t[n] = times[s - 1] + frac * (times[s] - times[s - 1])
                out_x[n] = x
                out_y[n] = y
                out_p[n] = 1 if level > r else -1
                n += 1
                r = level
            L_prev = L
        ref[y, x] = r
    return n


def render_image(scene: SceneConfig, state: np.ndarray) -> np.ndarray:
    """Continuous (float) intensity image for one render state."""
    out = np.empty((scene.height, scene.width))
    _render(scene.width, scene.height, state, _luminance(scene), 0, 0, out)
    return out


def _check_state(scene: SceneConfig, state):
    cx, cy, ra = state[0], state[1], state[2]
    if not (ra <= cx <= scene.width - 1 - ra and ra <= cy <= scene.height - 1 - ra):
        raise OutOfBoundsError(f"pupil at ({cx:.1f}, {cy:.1f}) leaves the sensor")


def render_frame(scene: SceneConfig, traj: Trajectory, t: float) -> Frame:
    state = eye_states(scene, traj, t)[0]
    _check_state(scene, state)
    img = render_image(scene, state)
    return Frame(int(round(t)), np.clip(np.rint(img), 0, 255).astype(np.uint8))


def frame_times(scene: SceneConfig, t0: float, t1: float) -> np.ndarray:
    period = 1e6 / scene.frame_rate
    k0 = math.ceil(t0 / period - 1e-9)
    k1 = math.floor(t1 / period + 1e-9)
    return np.arange(k0, k1 + 1) * period


def render_frames(scene: SceneConfig, traj: Trajectory, t0=None, t1=None) -> list[Frame]:
    t0 = traj.t_start if t0 is None else t0
    t1 = traj.t_end if t1 is None else t1
    return [render_frame(scene, traj, t) for t in frame_times(scene, t0, t1)]


# --- events -------------------------------------------------------------------

def _moving_box(scene: SceneConfig, states: np.ndarray):
    """Bounding box (x0, y0, x1, y1) of everything that can change across the given states."""
    W, H = scene.width, scene.height
    boxes = []
    pad = 3.0
    if np.ptp(states[:, :11], axis=0).max() > 0:
        reach = max(scene.iris_radius, np.hypot(*scene.glint_offset) + scene.glint_radius) + pad
        boxes.append((states[:, 0].min() - reach, states[:, 1].min() - reach,
                      states[:, 0].max() + reach, states[:, 1].max() + reach))
    if np.ptp(states[:, 13]) > 0:
        a, g = scene.eyelid[0], scene.eyelid[1]
        cols = np.array([0.0, W - 1.0])
        vertex_col = np.clip(-g / (2 * a), 0, W - 1) if a != 0 else 0.0
        rows_lo = a * vertex_col ** 2 + g * vertex_col + states[:, 13].min()
        rows_hi = (a * cols ** 2 + g * cols).max() + states[:, 13].max()
        boxes.append((0, rows_lo - scene.lash_band - pad, W - 1, rows_hi + pad))
    if not boxes:
        return None
    b = np.array(boxes)
    x0 = int(max(0, math.floor(b[:, 0].min())))
    y0 = int(max(0, math.floor(b[:, 1].min())))
    x1 = int(min(W - 1, math.ceil(b[:, 2].max())))
    y1 = int(min(H - 1, math.ceil(b[:, 3].max())))
    if x1 < x0 or y1 < y0:
        return None
    return x0, y0, x1, y1


def generate_events(scene: SceneConfig, traj: Trajectory, t0: float, t1: float,
                    seed: int = 0, chunk_steps: int = 100, n_probes: int = 5,
                    dilate: bool = False) -> np.ndarray:
    """DVS events for ``[t0, t1)`` as a structured array with fields t, x, y, p.

    Time is split into chunks of ``chunk_steps`` samples; only pixels whose
    intensity differs among ``n_probes`` evenly spaced samples of a chunk are
    simulated (``dilate`` widens that set by one pixel as a cross-check).
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    lum = _luminance(scene)
    C = scene.contrast_threshold
    dt = 1e6 / scene.sample_rate
    ref = np.log(render_image(scene, eye_states(scene, traj, t0)[0]))
    n_steps = int(math.ceil((t1 - t0) / dt))
    parts_t, parts_x, parts_y, parts_p = [], [], [], []
    buf = 1 << 16
    out_t, out_x = np.empty(buf), np.empty(buf, np.int64)
    out_y, out_p = np.empty(buf, np.int64), np.empty(buf, np.int8)
    s0 = 0
    while s0 < n_steps:
        s1 = min(n_steps, s0 + chunk_steps)
        times = t0 + np.arange(s0, s1 + 1) * dt
        times[-1] = min(times[-1], t1)
        states = eye_states(scene, traj, times)
        s0 = s1
        box = _moving_box(scene, states)
        if box is None:
            continue
        x0, y0, x1, y1 = box
        # edges move < 0.5 px between probes, so no pixel can change and revert unseen
        probe = states[np.unique(np.linspace(0, len(states) - 1, n_probes).astype(int))]
        imgs = []
        for st in probe:
            img = np.empty((y1 - y0 + 1, x1 - x0 + 1))
            _render(scene.width, scene.height, st, lum, x0, y0, img)
            imgs.append(img)
        changed = np.zeros(imgs[0].shape, dtype=bool)
        for img in imgs[1:]:
            changed |= np.abs(img - imgs[0]) > 1e-12
        if dilate:
            changed = ndimage.binary_dilation(changed, structure=np.ones((3, 3), bool))
        if not changed.any():
            continue
        rows, cols = np.nonzero(changed)
        xs, ys = cols + x0, rows + y0
        saved = ref[ys, xs].copy()
        while True:
            n = _dvs(xs, ys, times, states, lum, ref, C, out_t, out_x, out_y, out_p)
            if n >= 0:
                break
            ref[ys, xs] = saved
            buf *= 2
            out_t, out_x = np.empty(buf), np.empty(buf, np.int64)
            out_y, out_p = np.empty(buf, np.int64), np.empty(buf, np.int8)
        order = np.argsort(out_t[:n], kind="stable")
        parts_t.append(out_t[:n][order].copy())
        parts_x.append(out_x[:n][order].copy())
        parts_y.append(out_y[:n][order].copy())
        parts_p.append(out_p[:n][order].copy())
    rng = np.random.default_rng(seed)
    t = np.concatenate(parts_t) if parts_t else np.empty(0)
    x = np.concatenate(parts_x) if parts_x else np.empty(0, np.int64)
    y = np.concatenate(parts_y) if parts_y else np.empty(0, np.int64)
    p = np.concatenate(parts_p) if parts_p else np.empty(0, np.int8)
    if scene.noise_rate_hz > 0:
        n_noise = rng.poisson(scene.noise_rate_hz * scene.width * scene.height * (t1 - t0) * 1e-6)
        t = np.concatenate([t, rng.uniform(t0, t1, n_noise)])
        x = np.concatenate([x, rng.integers(0, scene.width, n_noise)])
        y = np.concatenate([y, rng.integers(0, scene.height, n_noise)])
        p = np.concatenate([p, rng.choice(np.array([-1, 1], np.int8), n_noise)])
    if scene.time_jitter_us > 0:
        t = t + rng.uniform(-scene.time_jitter_us, scene.time_jitter_us, len(t))
    t = np.clip(np.rint(t), max(t0, 0), None)
    order = np.argsort(t, kind="stable")
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t[order], x[order], y[order], p[order]
    return ev


def pupil_edge_distance(scene: SceneConfig, traj: Trajectory, events: np.ndarray) -> np.ndarray:
    """Radial-projection distance of each event to the true pupil ellipse at its timestamp."""
    t = events["t"].astype(float)
    t = np.clip(t, traj.t_start, traj.t_end)
    cx, cy, ra, rb, ang = pupil_geometry(scene, traj.gaze(t))
    dx, dy = events["x"] - cx, events["y"] - cy
    c, s = np.cos(ang), np.sin(ang)
    u, v = dx * c + dy * s, -dx * s + dy * c
    q = np.sqrt((u / ra) ** 2 + (v / rb) ** 2)
    with np.errstate(divide="ignore"):
        return np.where(q > 0, np.abs(1.0 - 1.0 / q) * np.hypot(dx, dy), np.minimum(ra, rb))


def saccade_event_rate(scene: SceneConfig, traj: Trajectory, events: np.ndarray, delta: float = 2.0) -> float:
    """Mean rate (events/ms) of pupil-edge events inside saccade windows."""
    windows = traj.windows(SACCADE)
    if not windows:
        return 0.0
    near = pupil_edge_distance(scene, traj, events) < delta
    t = events["t"].astype(float)
    count = sum(int(np.count_nonzero(near & (t >= a) & (t < b))) for a, b in windows)
    total_ms = sum(b - a for a, b in windows) / 1000.0
    return count / total_ms


def calibrate_contrast_threshold(scene: SceneConfig, traj: Trajectory, target_rate: float = 200.0,
                                 delta: float = 2.0, iterations: int = 4,
                                 tolerance: float = 0.02) -> tuple[float, float]:
    """Tune the contrast threshold so the pupil-edge saccade event rate hits ``target_rate``.

    Returns ``(threshold, achieved_rate)`` for the last threshold tried. Rate
    scales roughly as 1/threshold, so a few fixed-point steps suffice.
    """
    C = scene.contrast_threshold
    rate = 0.0
    for _ in range(iterations):
        sc = replace(scene, contrast_threshold=C)
        ev = generate_events(sc, traj, traj.t_start, traj.t_end)
        rate = saccade_event_rate(sc, traj, ev, delta)
        if rate <= 0:
            raise ValueError("trajectory produces no saccade events")
        if abs(rate - target_rate) <= tolerance * target_rate:
            break
        C = C * rate / target_rate
    return C, rate


# --- ground truth -------------------------------------------------------------

def ground_truth(scene: SceneConfig, traj: Trajectory, t: float, with_mask: bool = True) -> GroundTruth:
    traj._check(t)
    gaze = traj.gaze(t)
    cx, cy, ra, rb, ang = (float(v) for v in pupil_geometry(scene, gaze))
    e = ellipse_from_geometry(cx, cy, ra, rb, ang)
    xs, ys = scene.screen.angles_to_screen(gaze[0], gaze[1])
    angles = screen_to_angles(scene.screen, xs, ys)
    mask = ellipse_mask(e, scene.width, scene.height) if with_mask else np.zeros((0, 0), bool)
    return GroundTruth(float(t), e, (cx, cy), (ra, rb), ang, angles, (float(xs), float(ys)), mask,
                       bool(traj.in_blink(t)))


def truth_centers(scene: SceneConfig, traj: Trajectory, t) -> np.ndarray:
    cx, cy, *_ = pupil_geometry(scene, traj.gaze(np.asarray(t, float)))
    return np.column_stack([np.atleast_1d(cx), np.atleast_1d(cy)])


# --- canned scenarios -----------------------------------------------------------

def grid_targets(fov_deg=(20.0, 40.0), n=11, screen: ScreenGeometry | None = None) -> np.ndarray:
    """Signed angles of an n x n grid equally spaced on the screen over a (vertical, horizontal) FoV.

    Targets are listed row-major, so index parity alternates like a checkerboard.
    """
    screen = screen or ScreenGeometry()
    v, hz = fov_deg
    xs = np.linspace(-screen.D * math.tan(math.radians(hz / 2)), screen.D * math.tan(math.radians(hz / 2)), n)
    ys = np.linspace(-screen.D * math.tan(math.radians(v / 2)), screen.D * math.tan(math.radians(v / 2)), n)
    th = np.degrees(np.arctan(xs / screen.D))
    ph = np.degrees(np.arctan(ys / screen.D))
    return np.array([(a, b) for b in ph for a in th])


def saccade_experiment(n_targets: int = 24, fixation_us: float = 300_000.0, fov_deg=(20.0, 40.0),
                       grid: int = 11, seed: int = 0, blinks: int = 0,
                       blink_duration_us: float = 120_000.0) -> Trajectory:
    """Fixations on random grid targets joined by main-sequence saccades.

    Blinks, if requested, start shortly into randomly chosen fixations.
    """
    rng = np.random.default_rng(seed)
    targets = grid_targets(fov_deg, grid)
    order = rng.choice(len(targets), size=n_targets, replace=n_targets > len(targets))
    parts = []
    prev = targets[order[0]]
    parts.append((FIXATION, fixation_us, prev, prev, (), int(order[0])))
    for k in order[1:]:
        nxt = targets[k]
        amp = float(np.hypot(*(nxt - prev)))
        if amp > 0:
            parts.append((SACCADE, main_sequence_duration_us(amp), prev, nxt))
        parts.append((FIXATION, fixation_us, nxt, nxt, (), int(k)))
        prev = nxt
    traj = Trajectory.chain(parts)
    if blinks:
        fix = [s for s in traj.segments if s.kind == FIXATION][1:]
        chosen = rng.choice(len(fix), size=min(blinks, len(fix)), replace=False)
        bl = sorted((fix[i].t0 + 0.25 * (fix[i].duration - blink_duration_us), blink_duration_us)
                    for i in chosen)
        traj = Trajectory(traj.segments, tuple(bl))
    return traj


def calibration_fixations(fov_deg=(20.0, 40.0), grid: int = 11, fixation_us: float = 80_000.0) -> Trajectory:
    """Back-to-back fixations on every grid target in index order (frames only; no saccades)."""
    targets = grid_targets(fov_deg, grid)
    return Trajectory.chain([(FIXATION, fixation_us, t, t, (), i) for i, t in enumerate(targets)])


def pursuit_experiment(theta_range=(-20.0, 20.0), phi_start=-10.0, phi_step=5.0, rows=5,
                       speed_deg_s: float = 20.0) -> Trajectory:
    pts = squarewave_waypoints(theta_range, phi_start, phi_step, rows)
    length = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:]))
    duration = length / speed_deg_s * 1e6
    return Trajectory.chain([(FIXATION, 200_000.0, pts[0], pts[0]),
                             (PURSUIT, duration, pts[0], pts[-1], pts[1:-1])])
