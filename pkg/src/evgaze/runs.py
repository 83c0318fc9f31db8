"""Reproducible runs behind the command line: simulate, track, sweep, evaluate, ablate, bench."""
from __future__ import annotations

import csv
import io as _io
import time
from dataclasses import dataclass, replace

import numpy as np

from . import sim
from .gaze import (
    CalibrationPair,
    GazeMap,
    calibrate,
    map_gaze,
    screen_to_signed_angles,
)
from .io import Recording, tracker_config
from .metrics import (
    GazeSample,
    accuracy,
    frame_only_ablation,
    histogram,
    inverse_step_norm,
    iou,
    precision,
    smoothness,
)
from .model import DegenerateConicError, EllipseParams, eccentricity, ellipse_mask
from .tracker import SOURCE_EVENTS, SOURCE_FRAME, Tracker, TrackResult, merge_order, process_stream

SWEEP_N = (1, 5, 10, 20, 50, 100, 500)
MOVING_PX = 1.0


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.9g}"


def to_csv(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# --- simulation --------------------------------------------------------------------

def build_scene(cfg: dict, seed: int) -> sim.SceneConfig:
    kw = dict(frame_rate=cfg["frame_rate"], time_jitter_us=cfg["time_jitter_us"],
              noise_rate_hz=cfg["noise_rate_hz"],
              pupil_radius_range=(cfg["pupil_radius_min"], cfg["pupil_radius_max"]))
    if cfg["contrast_threshold"] is not None:
        kw["contrast_threshold"] = cfg["contrast_threshold"]
    return sim.SceneConfig(**kw).resolve(seed)


def build_trajectory(cfg: dict, seed: int) -> sim.Trajectory:
    scenario = cfg["scenario"]
    if scenario == "saccade":
        return sim.saccade_experiment(cfg["n_targets"], cfg["fixation_ms"] * 1000.0, seed=seed,
                                      blinks=cfg["blinks"])
    if scenario == "pursuit":
        return sim.pursuit_experiment()
    if scenario == "calibration":
        return sim.calibration_fixations(fixation_us=cfg["fixation_ms"] * 1000.0)
    raise ValueError(f"unknown scenario {scenario!r}")


def simulate(scene: sim.SceneConfig, traj: sim.Trajectory, seed: int, events: bool = True) -> Recording:
    ev = (sim.generate_events(scene, traj, traj.t_start, traj.t_end, seed=seed) if events
          else np.empty(0, sim.EVENT_DTYPE))
    frames = sim.render_frames(scene, traj)
    truth = {"seed": int(seed), "scene": scene.to_dict(), "trajectory": traj.to_dict()}
    return Recording(scene.width, scene.height, ev, frames, truth)


def run_simulate(cfg: dict, seed: int) -> Recording:
    scene = build_scene(cfg, seed)
    traj = build_trajectory(cfg, seed)
    return simulate(scene, traj, seed, events=cfg["scenario"] != "calibration")


def truth_objects(rec: Recording) -> tuple[sim.SceneConfig, sim.Trajectory]:
    if rec.truth is None:
        raise ValueError("recording has no ground-truth sidecar")
    return sim.SceneConfig.from_dict(rec.truth["scene"]), sim.Trajectory.from_dict(rec.truth["trajectory"])


# --- tracking ----------------------------------------------------------------------

def track(rec: Recording, cfg: dict, **overrides) -> TrackResult:
    tc = tracker_config(cfg)
    if overrides:
        tc = replace(tc, fit=replace(tc.fit, **{k: v for k, v in overrides.items() if k != "use_events"}),
                     use_events=overrides.get("use_events", tc.use_events))
    return process_stream(rec.frames, rec.events, rec.width, rec.height, tc)


def emission_blink_flags(res: TrackResult) -> np.ndarray:
    """Blink flag of the latest frame at or before each emission."""
    idx = np.searchsorted(res.frame_t, res.t, side="right") - 1
    flags = np.zeros(len(res.t), bool)
    ok = idx >= 0
    flags[ok] = res.blink[idx[ok]]
    return flags


def track_csv(res: TrackResult, gmap: GazeMap | None = None) -> str:
    centers = res.pupil_centers()
    blink = emission_blink_flags(res)
    gaze = map_gaze(gmap, centers) if gmap is not None else None
    rows = []
    for i in range(len(res.t)):
        e = EllipseParams(*res.params[i, 0])
        try:
            ecc = eccentricity(e) if res.valid[i, 0] else float("nan")
        except DegenerateConicError:
            ecc = float("nan")
        gx, gy = (gaze[i] if gaze is not None else (float("nan"), float("nan")))
        rows.append([int(res.t[i]), centers[i, 0], centers[i, 1], *res.params[i, 0], ecc, bool(blink[i]),
                     gx, gy, "frame" if res.source[i] == SOURCE_FRAME else "events"])
    return to_csv(["t", "cx", "cy", "a", "h", "b", "g", "f", "eccentricity", "blink", "gaze_x", "gaze_y",
                   "source"], rows)


# --- fidelity against truth ------------------------------------------------------------

@dataclass
class FrameFidelity:
    frame_t: np.ndarray
    iou: np.ndarray
    center_error: np.ndarray
    blink: np.ndarray


def frame_fidelity(rec: Recording, res: TrackResult, skip_first: bool = True) -> FrameFidelity:
    """IOU and center error of the event-updated estimate just before each frame."""
    scene, traj = truth_objects(rec)
    start = 1 if skip_first else 0
    ious, errs = [], []
    pre_c = res.pre_frame_centers()
    for i in range(start, len(res.frame_t)):
        gt = sim.ground_truth(scene, traj, float(res.frame_t[i]))
        if res.pre_valid[i]:
            try:
                m = ellipse_mask(EllipseParams(*res.pre_params[i]), rec.width, rec.height)
            except DegenerateConicError:
                m = np.zeros_like(gt.mask)
            err = float(np.hypot(pre_c[i, 0] - gt.center[0], pre_c[i, 1] - gt.center[1]))
        else:
            m, err = np.zeros_like(gt.mask), float("inf")
        ious.append(iou(m, gt.mask))
        errs.append(err)
    return FrameFidelity(res.frame_t[start:], np.array(ious), np.array(errs), res.blink[start:])


def frame_motion(rec: Recording, res: TrackResult) -> np.ndarray:
    """True pupil-center displacement since the previous frame (NaN for the first frame)."""
    scene, traj = truth_objects(rec)
    c = sim.truth_centers(scene, traj, res.frame_t.astype(float))
    d = np.full(len(c), np.nan)
    d[1:] = np.hypot(*np.diff(c, axis=0).T)
    return d


def ablation(rec: Recording, res: TrackResult) -> tuple[np.ndarray, np.ndarray]:
    """``d_frame - d_event`` for frames after motion (> 1 px) and for frames after none."""
    scene, traj = truth_objects(rec)
    truth = sim.truth_centers(scene, traj, res.frame_t.astype(float))
    diff = np.full(len(truth), np.nan)
    ok = np.zeros(len(truth), bool)
    ok[1:] = res.pre_valid[1:] & res.post_valid[:-1] & ~res.blink[1:] & ~res.blink[:-1]
    post, pre = res.post_frame_centers(), res.pre_frame_centers()
    diff[1:] = frame_only_ablation(pre[1:], post[:-1], truth[1:])
    motion = frame_motion(rec, res)
    moving = ok & (motion > MOVING_PX)
    still = ok & (motion == 0)
    return diff[moving], diff[still]


# --- sweep ----------------------------------------------------------------------------

def saccade_tracks(res: TrackResult, windows):
    """Event-driven pupil-center tracks, one per window."""
    sel = (res.source == SOURCE_EVENTS) & ((res.mask & 1) > 0)
    c = res.pupil_centers()
    return [c[sel & (res.t >= a) & (res.t < b)] for a, b in windows]


def sweep_windows(rec: Recording):
    if rec.truth is None:
        t = rec.events["t"]
        return [(float(t[0]), float(t[-1]) + 1)] if len(t) else []
    return truth_objects(rec)[1].windows(sim.SACCADE)


def smoothness_tracks(res: TrackResult, windows):
    """Pupil-center tracks from every source, anchored on the frames bracketing each window.

    Each track runs from the last frame at or before the window start to the first frame
    at or after its end, so the correction applied by the closing frame counts as a step.
    """
    sel = (res.mask & 1) > 0
    c = res.pupil_centers()
    out = []
    for a, b in windows:
        before, after = res.frame_t[res.frame_t <= a], res.frame_t[res.frame_t >= b]
        lo = before.max() if len(before) else a
        hi = after.min() if len(after) else b
        out.append(c[sel & (res.t >= lo) & (res.t <= hi)])
    return out


def sweep(rec: Recording, cfg: dict, ns=SWEEP_N) -> list[dict]:
    """Per-N smoothness (both reductions), emission rate and gated count over saccade windows."""
    windows = sweep_windows(rec)
    span_ms = sum(b - a for a, b in windows) / 1000.0
    rows = []
    for n in ns:
        res = track(rec, cfg, events_per_fit=int(n))
        tracks = [t for t in smoothness_tracks(res, windows) if len(t) >= 2]
        rows.append({
            "events_per_fit": int(n),
            "smoothness": float(np.mean([smoothness(t) for t in tracks])) if tracks else float("nan"),
            "inverse_step_norm": float(np.mean([inverse_step_norm(t) for t in tracks])) if tracks else float("nan"),
            "emissions_per_ms": sum(len(t) for t in saccade_tracks(res, windows)) / span_ms if span_ms else 0.0,
            "gated_pupil": int(res.gated[0]),
        })
    return rows


def sweep_csv(rows) -> str:
    keys = ["events_per_fit", "smoothness", "inverse_step_norm", "emissions_per_ms", "gated_pupil"]
    return to_csv(keys, [[r[k] for k in keys] for r in rows])


# --- gaze evaluation ------------------------------------------------------------------

@dataclass
class GazeEvaluation:
    accuracy: float
    precision: float
    folds: list


def fixation_samples(rec: Recording, res: TrackResult, settle: float = 0.5):
    """Per fixated target: estimated pupil centers from frames in the last part of the fixation.

    Returns ``{target_index: (centers (n, 2), target_signed_angles, blink flags)}``.
    """
    scene, traj = truth_objects(rec)
    centers = res.post_frame_centers()
    out = {}
    for seg in traj.segments:
        if seg.kind != sim.FIXATION or seg.target < 0:
            continue
        t_lo = seg.t0 + settle * seg.duration
        sel = (res.frame_t >= t_lo) & (res.frame_t < seg.t1) & res.post_valid
        if not sel.any():
            continue
        prev = out.get(seg.target)
        c, b = centers[sel], res.blink[sel]
        if prev is not None:
            c, b = np.vstack([prev[0], c]), np.concatenate([prev[2], b])
        out[seg.target] = (c, tuple(seg.start), b)
    return out


def evaluate_gaze(rec: Recording, res: TrackResult, degree: int = 2) -> GazeEvaluation:
    """Even/odd grid cross-validation of the gaze map with role swap; scores are averaged."""
    scene, _ = truth_objects(rec)
    screen = scene.screen
    samples = fixation_samples(rec, res)
    targets = sorted(samples)
    pairs = {}
    for k in targets:
        c, ang, blink = samples[k]
        keep = c[~blink] if (~blink).any() else c
        pairs[k] = CalibrationPair(tuple(keep.mean(axis=0)), tuple(map(float, screen.angles_to_screen(*ang))))
    even = [k for k in targets if k % 2 == 0]
    odd = [k for k in targets if k % 2 == 1]
    folds = []
    for train, test in ((even, odd), (odd, even)):
        gmap = calibrate([pairs[k] for k in train], degree)
        all_samples, precs = [], []
        for k in test:
            c, ang, blink = samples[k]
            xs, ys = map_gaze(gmap, c).T
            est = np.column_stack(screen_to_signed_angles(screen, xs, ys))
            ss = [GazeSample(0.0, tuple(e), ang, bool(b)) for e, b in zip(est, blink)]
            all_samples += ss
            if sum(not s.blink for s in ss) >= 2:
                precs.append(precision(ss))
        folds.append((accuracy(all_samples), float(np.mean(precs)) if precs else float("nan")))
    return GazeEvaluation(float(np.mean([f[0] for f in folds])), float(np.nanmean([f[1] for f in folds])), folds)


def calibration_pairs(rec: Recording, res: TrackResult):
    scene, _ = truth_objects(rec)
    samples = fixation_samples(rec, res)
    return [CalibrationPair(tuple(samples[k][0].mean(axis=0)),
                            tuple(map(float, scene.screen.angles_to_screen(*samples[k][1]))))
            for k in sorted(samples)]


def evaluate(rec: Recording, cfg: dict) -> dict:
    """Full report: fidelity histograms, ablation histogram, gaze accuracy/precision."""
    res = track(rec, cfg)
    fid = frame_fidelity(rec, res)
    moving, still = ablation(rec, res)
    report = {
        "frames": int(len(fid.iou)),
        "blink_frames": int(fid.blink.sum()),
        "iou_ge_0.8": float(np.mean(fid.iou[~fid.blink] >= 0.8)) if len(fid.iou) else float("nan"),
        "center_le_3px": float(np.mean(fid.center_error[~fid.blink] <= 3.0)) if len(fid.iou) else float("nan"),
        "ablation_positive": float(np.mean(moving > 0)) if len(moving) else float("nan"),
        "ablation_frames": int(len(moving)),
        "fixation_zero": bool(np.all(still == 0)) if len(still) else True,
    }
    try:
        g = evaluate_gaze(rec, res, cfg["gaze_degree"])
        report["accuracy_deg"], report["precision_deg"] = g.accuracy, g.precision
    except (ValueError, np.linalg.LinAlgError) as exc:
        report["accuracy_deg"] = report["precision_deg"] = float("nan")
        report["gaze_error"] = str(exc)
    tables = {
        "iou_hist": histogram_csv(fid.iou[~fid.blink], 20, (0.0, 1.0)),
        "center_error_hist": histogram_csv(fid.center_error[~fid.blink], 20, (0.0, 5.0)),
        "ablation_hist": histogram_csv(moving, 20),
        "per_frame": to_csv(["t", "iou", "center_error", "blink"],
                            zip(fid.frame_t, fid.iou, fid.center_error, fid.blink)),
    }
    return {"summary": report, "tables": tables}


def histogram_csv(values, bins, range_=None) -> str:
    counts, edges = histogram(values, bins, range_)
    return to_csv(["lo", "hi", "count"], zip(edges[:-1], edges[1:], counts))


def summary_text(report: dict) -> str:
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in report.items())


# --- bench ------------------------------------------------------------------------------

def bench(rec: Recording, cfg: dict, duration: float = 30.0, max_passes: int = 1000) -> dict:
    """Event-path throughput, replaying the recording for about ``duration`` wall-clock seconds.

    Frames are processed between event slices as usual but only event
    ingestion is timed. A first untimed pass warms up the compiled loop; at
    least one timed pass always runs.
    """
    tc = tracker_config(cfg)
    ft = np.array([f.t for f in rec.frames], np.int64)
    plan = merge_order(ft, rec.events["t"].astype(np.int64))

    def one_pass():
        tr = Tracker(rec.width, rec.height, tc)
        spent = 0.0
        for kind, s, e in plan:
            if kind == "frame":
                tr.push_frame(rec.frames[s])
            else:
                chunk = rec.events[s:e]
                t0 = time.perf_counter()
                tr.push_events(chunk)
                spent += time.perf_counter() - t0
        return spent, int(tr.gated.sum())

    start = time.perf_counter()
    one_pass()
    spent = 0.0
    gated = events = passes = 0
    while passes == 0 or (time.perf_counter() - start < duration and passes < max_passes):
        dt, g = one_pass()
        spent += dt
        gated += g
        events += len(rec.events)
        passes += 1
    return {"passes": passes, "events": events, "gated_events": gated, "seconds": spent,
            "events_per_s": events / spent if spent > 0 else float("inf"),
            "gated_per_s": gated / spent if spent > 0 else float("inf")}
