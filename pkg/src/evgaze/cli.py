"""Command-line entry point: ``evgaze <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import runs
from .gaze import GazeMap, calibrate
from .io import (
    ConfigError,
    Recording,
    RecordingError,
    format_config,
    load_config,
    open_recording,
    prefetch,
    read_calibration_csv,
    read_recording,
    tracker_config,
    write_calibration_csv,
    write_events_csv,
    write_recording,
)
from .tracker import OutOfOrderError, process_stream


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> dict:
    return load_config(args.config, _overrides(args.set))


def _write(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_simulate(args, cfg):
    rec = runs.run_simulate(cfg, args.seed)
    write_recording(args.out, rec)
    if args.events_csv:
        write_events_csv(args.events_csv, rec.events)
    print(f"wrote {args.out}: {len(rec.events)} events, {len(rec.frames)} frames", file=sys.stderr)


def cmd_track(args, cfg):
    stream = open_recording(args.recording, with_truth=False)
    res = process_stream(prefetch(stream.frames), stream.events, stream.width, stream.height,
                         tracker_config(cfg))
    gmap = GazeMap.from_dict(json.loads(Path(args.gaze_map).read_text())) if args.gaze_map else None
    _write(args.out, runs.track_csv(res, gmap))


def cmd_calibrate(args, cfg):
    if args.pairs:
        pairs = read_calibration_csv(args.pairs)
    else:
        if args.recording is None:
            raise ConfigError("calibrate needs a recording or --pairs")
        rec = read_recording(args.recording)
        pairs = runs.calibration_pairs(rec, runs.track(rec, cfg))
        if args.pairs_out:
            write_calibration_csv(args.pairs_out, pairs)
    gmap = calibrate(pairs, cfg["gaze_degree"])
    _write(args.out, json.dumps(gmap.to_dict(), sort_keys=True, indent=2) + "\n")


def cmd_sweep(args, cfg):
    ns = tuple(int(n) for n in args.n.split(",")) if args.n else runs.SWEEP_N
    _write(args.out, runs.sweep_csv(runs.sweep(read_recording(args.recording), cfg, ns)))


def cmd_evaluate(args, cfg):
    report = runs.evaluate(read_recording(args.recording), cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in report["tables"].items():
        (out / f"{name}.csv").write_text(text)
    (out / "summary.txt").write_text(runs.summary_text(report["summary"]))
    sys.stdout.write(runs.summary_text(report["summary"]))


def cmd_ablate(args, cfg):
    rec = read_recording(args.recording)
    moving, still = runs.ablation(rec, runs.track(rec, cfg))
    rows = [("saccade", v) for v in moving] + [("fixation", v) for v in still]
    _write(args.out, runs.to_csv(["segment", "d_frame_minus_d_event"], rows))


def cmd_bench(args, cfg):
    rec: Recording = read_recording(args.recording, with_truth=False)
    result = runs.bench(rec, cfg, duration=args.duration)
    print(json.dumps(result, sort_keys=True))


def cmd_config(args, cfg):
    _write(args.out, format_config(cfg))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="evgaze", description="Hybrid frame/event pupil tracking and gaze estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic recording with ground truth")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--events-csv", help="also write events as t,x,y,p CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", parents=[common], help="track a recording, one CSV row per model emission")
    s.add_argument("recording")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--gaze-map", help="gaze map JSON from 'calibrate'")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("calibrate", parents=[common], help="fit a polynomial gaze map")
    s.add_argument("recording", nargs="?", help="fixation recording with ground truth")
    s.add_argument("--pairs", help="calibration pair CSV to fit instead of a recording")
    s.add_argument("--pairs-out", help="write the pairs extracted from the recording")
    s.add_argument("--out", help="gaze map JSON path (default stdout)")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", parents=[common], help="smoothness and emission rate per events-per-fit")
    s.add_argument("recording")
    s.add_argument("--n", help="comma-separated events-per-fit values")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("evaluate", parents=[common], help="metrics report against ground truth")
    s.add_argument("recording")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="frame-only baseline differences per frame")
    s.add_argument("recording")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bench", parents=[common], help="event-path throughput")
    s.add_argument("recording")
    s.add_argument("--duration", type=float, default=30.0, help="wall-clock seconds")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("config", parents=[common], help="print the resolved configuration with docs")
    s.add_argument("--out", help="path (default stdout)")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RecordingError, OutOfOrderError) as exc:
        print(f"recording error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
