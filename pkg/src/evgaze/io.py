"""Recording container, CSV formats, flat config files and ordered prefetching.

Container layout (all integers little-endian)::

    b"EVGZREC1" | u32 manifest length | manifest (UTF-8 JSON) | payload

The payload holds the event block (16-byte records: t u64, x u16, y u16,
p i8, two pad fields) followed by the frame block (concatenated binary PGM
images). The manifest records sensor size, block offsets relative to the
payload start, counts, SHA-256 digests and a frame index of
``[t, offset, length]`` triples. JSON is written with sorted keys and fixed
separators so an unmodified recording re-serializes byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import queue
import struct
import threading
from dataclasses import dataclass, field
from collections.abc import Iterator
from pathlib import Path

import numpy as np

from .fitter import FitConfig
from .frames import FramePipelineConfig
from .model import Frame
from .sim import EVENT_DTYPE
from .tracker import BlinkConfig, OutOfOrderError, TrackerConfig

MAGIC = b"EVGZREC1"
VERSION = 1
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"),
                         ("pad0", "u1"), ("pad1", "<u2")])
assert RECORD_DTYPE.itemsize == 16
_HEADER = len(MAGIC) + 4


class RecordingError(ValueError):
    def __init__(self, message: str, offset: int = -1):
        super().__init__(message if offset < 0 else f"{message} (at byte {offset})")
        self.offset = offset


class MalformedHeaderError(RecordingError):
    pass


class ChecksumMismatchError(RecordingError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Recording:
    width: int
    height: int
    events: np.ndarray = field(default_factory=lambda: np.empty(0, EVENT_DTYPE))
    frames: list = field(default_factory=list)
    truth: dict | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        self.events = np.asarray(self.events).astype(EVENT_DTYPE, copy=False)


# --- container -----------------------------------------------------------------

def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, np.uint8).tobytes()


def decode_pgm(buf: bytes, offset: int = 0) -> np.ndarray:
    """Parse one binary PGM (maxval 255); ``offset`` is used only for error reports."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("truncated PGM header", offset + pos)
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise MalformedHeaderError("frame is not an 8-bit binary PGM", offset)
    w, h = int(tokens[1]), int(tokens[2])
    if len(buf) - pos != w * h:
        raise MalformedHeaderError(f"PGM payload is {len(buf) - pos} bytes, expected {w * h}", offset + pos)
    return np.frombuffer(buf, np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def _check_order(t: np.ndarray, base: int, stride: int, what: str):
    bad = np.flatnonzero(np.diff(np.asarray(t, np.int64)) < 0)
    if len(bad):
        raise OutOfOrderError(f"{what} timestamps decrease", base + int(bad[0] + 1) * stride)


def serialize(rec: Recording) -> bytes:
    ev = np.zeros(len(rec.events), RECORD_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec.events[name]
    _check_order(ev["t"], 0, RECORD_DTYPE.itemsize, "event")
    _check_order([f.t for f in rec.frames], 0, 1, "frame")
    ev_bytes = ev.tobytes()
    index, chunks, off = [], [], len(ev_bytes)
    for f in rec.frames:
        if (f.width, f.height) != (rec.width, rec.height):
            raise ValueError("frame size does not match the recording")
        b = encode_pgm(f.pixels)
        index.append([int(f.t), off, len(b)])
        chunks.append(b)
        off += len(b)
    fr_bytes = b"".join(chunks)
    manifest = {
        "version": VERSION,
        "width": int(rec.width),
        "height": int(rec.height),
        "events": {"offset": 0, "count": len(ev), "record_size": RECORD_DTYPE.itemsize,
                   "sha256": hashlib.sha256(ev_bytes).hexdigest()},
        "frames": {"offset": len(ev_bytes), "count": len(index), "index": index,
                   "sha256": hashlib.sha256(fr_bytes).hexdigest()},
    }
    m = _dumps(manifest)
    return MAGIC + struct.pack("<I", len(m)) + m + ev_bytes + fr_bytes


def _parse_manifest(buf: bytes) -> tuple[dict, int]:
    if len(buf) < _HEADER:
        raise MalformedHeaderError("file shorter than the fixed header", len(buf))
    if buf[:len(MAGIC)] != MAGIC:
        raise MalformedHeaderError("bad magic", 0)
    (mlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    if _HEADER + mlen > len(buf):
        raise MalformedHeaderError(f"manifest of {mlen} bytes runs past end of file", len(buf))
    try:
        manifest = json.loads(buf[_HEADER:_HEADER + mlen].decode("utf-8"))
        manifest["width"], manifest["height"]
        manifest["events"]["count"], manifest["frames"]["index"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedHeaderError(f"unreadable manifest: {exc}", _HEADER) from exc
    if manifest.get("version") != VERSION:
        raise MalformedHeaderError(f"unsupported version {manifest.get('version')!r}", _HEADER)
    return manifest, _HEADER + mlen


def _open(buf: bytes):
    """Validate header, checksums and event order; returns manifest, base, events, frame index."""
    manifest, base = _parse_manifest(buf)
    evm, frm = manifest["events"], manifest["frames"]
    ev_start = base + evm["offset"]
    ev_len = evm["count"] * RECORD_DTYPE.itemsize
    if evm.get("record_size") != RECORD_DTYPE.itemsize:
        raise MalformedHeaderError("unexpected event record size", _HEADER)
    if ev_start + ev_len > len(buf):
        raise MalformedHeaderError("event block truncated", len(buf))
    ev_bytes = buf[ev_start:ev_start + ev_len]
    if hashlib.sha256(ev_bytes).hexdigest() != evm["sha256"]:
        raise ChecksumMismatchError("event block checksum mismatch", ev_start)
    fr_start = base + frm["offset"]
    fr_len = sum(length for _, _, length in frm["index"])
    if fr_start + fr_len > len(buf):
        raise MalformedHeaderError("frame block truncated", len(buf))
    if hashlib.sha256(buf[fr_start:fr_start + fr_len]).hexdigest() != frm["sha256"]:
        raise ChecksumMismatchError("frame block checksum mismatch", fr_start)
    raw = np.frombuffer(ev_bytes, RECORD_DTYPE)
    _check_order(raw["t"], ev_start, RECORD_DTYPE.itemsize, "event")
    events = np.empty(len(raw), EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        events[name] = raw[name]
    return manifest, base, events


def _frames(buf: bytes, manifest: dict, base: int):
    last = None
    for t, off, length in manifest["frames"]["index"]:
        start = base + off
        if last is not None and t < last:
            raise OutOfOrderError("frame timestamps decrease", start)
        last = t
        yield Frame(int(t), decode_pgm(buf[start:start + length], start))


def deserialize(buf: bytes) -> Recording:
    manifest, base, events = _open(buf)
    return Recording(manifest["width"], manifest["height"], events, list(_frames(buf, manifest, base)))


def truth_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".truth.json")


def write_recording(path, rec: Recording):
    Path(path).write_bytes(serialize(rec))
    if rec.truth is not None:
        truth_path(path).write_bytes(_dumps(rec.truth))


def read_recording(path, with_truth: bool = True) -> Recording:
    rec = deserialize(Path(path).read_bytes())
    tp = truth_path(path)
    if with_truth and tp.exists():
        rec.truth = json.loads(tp.read_text())
    return rec


def iter_frames(path):
    """Lazily decode frames of a container in index order."""
    buf = Path(path).read_bytes()
    manifest, base = _parse_manifest(buf)
    return _frames(buf, manifest, base)


@dataclass
class RecordingStream:
    """A validated recording whose frames are decoded on demand."""

    width: int
    height: int
    events: np.ndarray
    frames: Iterator[Frame]
    truth: dict | None


def open_recording(path, with_truth: bool = True) -> RecordingStream:
    buf = Path(path).read_bytes()
    manifest, base, events = _open(buf)
    tp = truth_path(path)
    truth = json.loads(tp.read_text()) if with_truth and tp.exists() else None
    return RecordingStream(manifest["width"], manifest["height"], events, _frames(buf, manifest, base), truth)


# --- CSV -------------------------------------------------------------------------

def write_events_csv(path, events: np.ndarray):
    with open(path, "w", newline="") as fh:
        fh.write("t,x,y,p\n")
        for t, x, y, p in zip(events["t"], events["x"], events["y"], events["p"]):
            fh.write(f"{int(t)},{int(x)},{int(y)},{int(p)}\n")


def read_events_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "x", "y", "p"]:
            raise MalformedHeaderError(f"expected header t,x,y,p, got {header}", 0)
        rows = [tuple(int(v) for v in row) for row in reader if row]
    ev = np.empty(len(rows), EVENT_DTYPE)
    if rows:
        arr = np.array(rows, np.int64)
        ev["t"], ev["x"], ev["y"], ev["p"] = arr.T
        if not np.all(np.isin(arr[:, 3], (-1, 1))):
            raise ValueError("polarity must be +1 or -1")
        # offset is the 1-based line number of the first offending row
        _check_order(arr[:, 0], 2, 1, "event")
    return ev


def write_calibration_csv(path, pairs):
    with open(path, "w", newline="") as fh:
        fh.write("pupil_x,pupil_y,screen_x,screen_y\n")
        for p in pairs:
            fh.write("{!r},{!r},{!r},{!r}\n".format(*map(float, (*p.pupil_center, *p.screen_target))))


def read_calibration_csv(path):
    from .gaze import CalibrationPair

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [CalibrationPair((float(r["pupil_x"]), float(r["pupil_y"])),
                                (float(r["screen_x"]), float(r["screen_y"]))) for r in reader]


# --- config ------------------------------------------------------------------------

def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key: (type, default, description)
CONFIG_KEYS: dict[str, tuple] = {
    "gamma": (float, 0.1, "frame blend factor; weight kept by the old state"),
    "gamma_prime": (float, 0.9, "event blend factor; weight kept by the old state"),
    "delta": (float, 2.0, "event gating distance in pixels"),
    "events_per_fit": (int, 20, "gated events accumulated before each event-driven solve"),
    "refresh_period": (int, 1000, "rank-1 updates between full re-inversions"),
    "use_events": (_bool, True, "feed events to the fitter (false gives a frame-only tracker)"),
    "engine": (str, "numba", "event path implementation: numba or python"),
    "theta": (float, 60.0, "pupil threshold on frame intensity"),
    "sigma": (int, 2, "radius of the disk used for morphological opening"),
    "t1": (float, 40.0, "lower clip for eyelid corner detection"),
    "t2": (float, 120.0, "upper clip for eyelid corner detection"),
    "t3": (float, 220.0, "glint threshold on frame intensity"),
    "rho_prime": (float, 80.0, "eyelid candidate radius around the pupil center"),
    "rho_double_prime": (float, 40.0, "glint candidate radius around the pupil center"),
    "harris_k": (float, 0.04, "Harris detector constant"),
    "harris_rel_thresh": (float, 0.1, "Harris response threshold relative to the maximum"),
    "blink_n": (int, 30, "blink detector window length (frames)"),
    "blink_lambda": (float, 3.0, "blink threshold in standard deviations"),
    "blink_k": (int, 3, "frames flagged after a detected blink"),
    "blink_sigma_floor": (float, 0.05, "lower bound on the baseline standard deviation"),
    "gaze_degree": (int, 2, "polynomial degree of the gaze map"),
    "scenario": (str, "saccade", "simulate: saccade, pursuit or calibration"),
    "n_targets": (int, 24, "simulate: fixation targets in the saccade scenario"),
    "fixation_ms": (float, 300.0, "simulate: fixation duration"),
    "blinks": (int, 0, "simulate: number of blinks"),
    "contrast_threshold": (float, None, "simulate: DVS log contrast threshold (default: calibrated value)"),
    "frame_rate": (float, 25.0, "simulate: frame rate in Hz"),
    "time_jitter_us": (float, 0.0, "simulate: uniform timestamp jitter half-width"),
    "noise_rate_hz": (float, 0.0, "simulate: background events per pixel per second"),
    "pupil_radius_min": (float, 20.0, "simulate: smallest pupil radius (pixels)"),
    "pupil_radius_max": (float, 20.0, "simulate: largest pupil radius (pixels)"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(*layers: dict) -> dict:
    """Merge layers (later wins) over the defaults, converting and validating every key."""
    cfg = {k: v[1] for k, v in CONFIG_KEYS.items()}
    for layer in layers:
        for key, value in layer.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            conv, default, _ = CONFIG_KEYS[key]
            if isinstance(value, str) and value.lower() == "none" and default is None:
                value = None
            try:
                cfg[key] = conv(value) if value is not None else None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    layers = []
    if path is not None:
        layers.append(parse_config_text(Path(path).read_text(), str(path)))
    if overrides:
        layers.append(overrides)
    return resolve_config(*layers)


def tracker_config(cfg: dict) -> TrackerConfig:
    try:
        return TrackerConfig(
            fit=FitConfig(cfg["gamma"], cfg["gamma_prime"], cfg["delta"], cfg["events_per_fit"],
                          cfg["refresh_period"]),
            frames=FramePipelineConfig(cfg["theta"], cfg["sigma"], cfg["t1"], cfg["t2"], cfg["t3"],
                                       cfg["rho_prime"], cfg["rho_double_prime"], cfg["harris_k"],
                                       cfg["harris_rel_thresh"]),
            blink=BlinkConfig(cfg["blink_n"], cfg["blink_lambda"], cfg["blink_k"], cfg["blink_sigma_floor"]),
            use_events=cfg["use_events"],
            engine=cfg["engine"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_config(cfg: dict) -> str:
    lines = []
    for key, (_, default, doc) in CONFIG_KEYS.items():
        lines.append(f"# {doc}")
        lines.append(f"{key} = {cfg.get(key, default)}")
    return "\n".join(lines) + "\n"


# --- prefetch ------------------------------------------------------------------------

_DONE = object()


def prefetch(iterable, maxsize: int = 8):
    """Iterate ``iterable`` on a background thread through a bounded FIFO queue.

    Items arrive in their original order; an exception raised by the producer
    is re-raised in the consumer.
    """
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def produce():
        try:
            for item in iterable:
                while not stop.is_set():
                    try:
                        q.put((True, item), timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put((True, _DONE))
        except BaseException as exc:  # forwarded to the consumer
            q.put((False, exc))

    th = threading.Thread(target=produce, daemon=True)
    th.start()
    try:
        while True:
            ok, item = q.get()
            if not ok:
                raise item
            if item is _DONE:
                return
            yield item
    finally:
        stop.set()
