"""Command line entry point: ``tet track|synth|eval|bench``.

Exit codes: 0 success, 1 configuration error, 2 I/O or input error,
3 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from . import __version__
from .evaluation import EvalReport, inliers_vs_homography, inliers_vs_truth
from .geometry import DEFAULT_MIN_LENGTH
from .image import build_pyramid, load_gray
from .pipeline import (REDETECT_THRESHOLD, DetectionFormatError, DetectionSet, FrameSource,
                       detection_path, ingest_detections, initial_table, read_correspondences,
                       run_sequence, step)
from .synth import GroundTruth, SceneSpec, render_sequence, write_sequence
from .tracker import TrackerConfig

log = logging.getLogger("tet")


class ConfigError(Exception):
    pass


# flag name -> (config key, type, default)
TRACKER_OPTS = {
    "window": ("window_side", int, 7),
    "levels": ("n_levels", int, 3),
    "max_iters": ("max_iterations", int, 10),
    "min_error": ("min_window_error", float, 0.02),
    "min_update": ("min_update", float, 0.01),
}
PIPELINE_OPTS = {
    "min_length": (float, DEFAULT_MIN_LENGTH),
    "redetect_threshold": (int, REDETECT_THRESHOLD),
    "seed": (int, 0),
}


def read_config(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def resolve(args, names: dict, file_values: dict) -> dict:
    """Effective value for each option: flag, then config file, then default."""
    out = {}
    for name, (typ, default) in names.items():
        v = getattr(args, name, None)
        if v is None:
            v = file_values.get(name, default)
        try:
            out[name] = _parse_bool(v) if typ is bool else (None if v is None else typ(v))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}: {v!r}") from exc
    return out


def tracker_config(args, file_values: dict) -> tuple[TrackerConfig, dict]:
    names = {k: (t, d) for k, (_, t, d) in TRACKER_OPTS.items()}
    names["geometric_check"] = (bool, False)
    eff = resolve(args, names, file_values)
    kw = {TRACKER_OPTS[k][0]: v for k, v in eff.items() if k in TRACKER_OPTS}
    try:
        cfg = TrackerConfig(geometric_check=eff["geometric_check"], **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, eff


def write_run_log(out_dir: Path | None, command: str, effective: dict) -> None:
    lines = [f"# tet {__version__} {command}"]
    lines += [f"{k} = {v}" for k, v in sorted(effective.items()) if v is not None]
    text = "\n".join(lines) + "\n"
    for line in lines:
        log.info("%s", line)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run.log").write_text(text)


def _add_tracker_flags(p):
    g = p.add_argument_group("tracker")
    g.add_argument("--window", type=int, help="window side in px, odd (default 7)")
    g.add_argument("--levels", type=int, help="pyramid levels (default 3)")
    g.add_argument("--max-iters", type=int, help="iterations per level (default 10)")
    g.add_argument("--min-error", type=float, help="mean absolute window residual to stop (default 0.02)")
    g.add_argument("--min-update", type=float, help="update norm in px to stop (default 0.01)")
    g.add_argument("--geometric-check", action="store_const", const=True,
                   help="reject tracks whose length or orientation changed too much")
    g.add_argument("--min-length", type=float, help="discard detections shorter than this (default 30)")
    g.add_argument("--redetect-threshold", type=int, help="re-detect below this many inliers (default 30)")


def _add_synth_flags(p):
    g = p.add_argument_group("scene")
    g.add_argument("--size", help="WIDTHxHEIGHT (default 640x480)")
    g.add_argument("--lines", type=int, help="number of segments (default 40)")
    g.add_argument("--motion", help="per-frame 'tx,ty' or six affine coefficients (default 0,0)")
    g.add_argument("--frames", type=int, help="number of frames")
    g.add_argument("--noise", type=float, help="texture amplitude (default 0.15)")
    g.add_argument("--smoothing", type=float, help="texture smoothing sigma in px (default 2.5)")


SYNTH_OPTS = {
    "size": (str, "640x480"),
    "lines": (int, 40),
    "motion": (str, "0,0"),
    "frames": (int, 2),
    "noise": (float, 0.15),
    "smoothing": (float, 2.5),
    "seed": (int, 0),
}


def scene_spec(args, file_values: dict, frames_default: int = 2) -> tuple[SceneSpec, dict]:
    opts = dict(SYNTH_OPTS, frames=(int, frames_default))
    eff = resolve(args, opts, file_values)
    try:
        w, h = (int(v) for v in eff["size"].lower().split("x"))
        motion = [float(v) for v in eff["motion"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --size or --motion: {exc}") from exc
    if len(motion) == 6:
        motion = (tuple(motion[:3]), tuple(motion[3:]))
    elif len(motion) == 2:
        motion = tuple(motion)
    else:
        raise ConfigError("--motion takes 2 (translation) or 6 (affine) numbers")
    if eff["lines"] < 1:
        raise ConfigError("--lines must be >= 1: nothing to track")
    try:
        spec = SceneSpec(width=w, height=h, n_lines=eff["lines"], motion=motion,
                         n_frames=eff["frames"], seed=eff["seed"],
                         noise_amplitude=eff["noise"], smoothing=eff["smoothing"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, eff


def cmd_track(args) -> int:
    fv = read_config(args.config) if args.config else {}
    cfg, eff = tracker_config(args, fv)
    eff.update(resolve(args, PIPELINE_OPTS, fv))
    paths = resolve(args, {"manifest": (str, None), "detections": (str, None), "out": (str, None),
                           "overlay": (bool, False)}, fv)
    for key in ("manifest", "detections", "out"):
        if paths[key] is None:
            raise ConfigError(f"--{key} is required")
    eff.update(paths)
    out = Path(paths["out"])
    write_run_log(out, "track", eff)
    source = FrameSource.from_manifest(paths["manifest"])
    summary = run_sequence(source, paths["detections"], cfg, out,
                           redetect_threshold=eff["redetect_threshold"],
                           min_length=eff["min_length"], overlay=paths["overlay"])
    print(f"tracked {summary['tracked_frames']} frame pairs: "
          f"{summary['mean_ms']:.2f} ms/frame, {summary['mean_inliers']:.1f} inliers/frame, "
          f"{summary['detection_invocations']} detection reads")
    return 0


def cmd_synth(args) -> int:
    fv = read_config(args.config) if args.config else {}
    spec, eff = scene_spec(args, fv)
    out_s = args.out or fv.get("out")
    if out_s is None:
        raise ConfigError("--out is required")
    eff["out"] = out_s
    eff["first_only"] = bool(args.first_only) or _parse_bool(fv.get("first_only", False))
    out = Path(out_s)
    write_run_log(out, "synth", eff)
    write_sequence(spec, out, detections_every_frame=not eff["first_only"])
    print(f"wrote {spec.n_frames} frames, {spec.n_lines} lines to {out}")
    return 0


EVAL_OPTS = {
    "correspondences": (str, None),
    "truth": (str, None),
    "ransac": (bool, False),
    "summary": (str, None),
    "tol": (float, 1.0),
    "iterations": (int, 1000),
    "threshold": (float, 2.0),
    "seed": (int, 0),
}


def cmd_eval(args) -> int:
    fv = read_config(args.config) if args.config else {}
    eff = resolve(args, EVAL_OPTS, fv)
    if eff["correspondences"] is None:
        raise ConfigError("--correspondences is required")
    if not eff["ransac"] and not eff["truth"]:
        raise ConfigError("give --truth or --ransac")
    out = Path(args.out) if args.out else None
    write_run_log(out, "eval", eff)
    recs = read_correspondences(eff["correspondences"])
    timing, frames = {}, None
    if eff["summary"]:
        summary = json.loads(Path(eff["summary"]).read_text())
        timing = {r["frame"]: r["ms"] for r in summary["per_frame"]}
        frames = list(timing)
    if eff["ransac"]:
        rows = inliers_vs_homography(recs, eff["iterations"], eff["threshold"], eff["seed"],
                                     timing, frames)
    else:
        truth = GroundTruth.from_csv(eff["truth"])
        rows = inliers_vs_truth(recs, truth, eff["tol"], timing, frames)
    report = EvalReport(rows)
    if out is not None:
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.txt").write_text(report.table())
    sys.stdout.write(report.table())
    return 0


def _bench_inputs(args, fv):
    manifest = args.manifest or fv.get("manifest")
    min_length = resolve(args, {"min_length": (float, DEFAULT_MIN_LENGTH)}, fv)["min_length"]
    if manifest:
        det_dir = args.detections or fv.get("detections")
        if det_dir is None:
            raise ConfigError("--detections is required with --manifest")
        source = FrameSource.from_manifest(manifest)
        frames = [load_gray(f.path) for f in source]
        dets = []
        for f in source:
            p = detection_path(det_dir, f.path)
            dets.append(ingest_detections(p, min_length, f.index) if p.is_file() else None)
        return frames, dets, {"manifest": manifest, "detections": det_dir, "min_length": min_length}
    spec, eff = scene_spec(args, fv, frames_default=20)
    frames, _, segs = render_sequence(spec)
    dets = [DetectionSet(t, [s.with_id(i) for i, s in enumerate(d)]) for t, d in enumerate(segs)]
    return frames, dets, eff


def cmd_bench(args) -> int:
    fv = read_config(args.config) if args.config else {}
    cfg, eff = tracker_config(args, fv)
    frames, dets, src_eff = _bench_inputs(args, fv)
    eff.update(src_eff)
    eff.update(resolve(args, {"repeat": (int, 3), "warmup": (int, 1)}, fv))
    repeat, warmup = eff["repeat"], eff["warmup"]
    if repeat < 1 or warmup < 0:
        raise ConfigError("--repeat must be >= 1 and --warmup >= 0")
    threshold = resolve(args, {"redetect_threshold": (int, REDETECT_THRESHOLD)}, fv)["redetect_threshold"]
    eff["redetect_threshold"] = threshold
    if len(frames) < 2:
        raise ConfigError("bench needs at least two frames")
    if dets[0] is None or not dets[0].segments:
        raise ConfigError("no lines to track in the first frame")
    out = Path(args.out) if args.out else None
    write_run_log(out, "bench", eff)

    rows = []
    for rep in range(warmup + repeat):
        table = initial_table(dets[0])
        prev = build_pyramid(frames[0], cfg.n_levels)
        pyr_ms, solve_ms, counts = [], [], []
        for t in range(1, len(frames)):
            t0 = time.perf_counter()
            cur = build_pyramid(frames[t], cfg.n_levels)
            pyr_ms.append((time.perf_counter() - t0) * 1e3)
            counts.append(len(table.tracks))
            table = step(table, prev, cur, dets[t], cfg, threshold, frame=t)
            solve_ms.append(table.stats[-1].ms)
            prev = cur
        if rep >= warmup:
            n_lines = statistics.mean(counts)
            rows.append({
                "repeat": rep - warmup,
                "pyramid_ms": statistics.mean(pyr_ms),
                "solve_ms": statistics.mean(solve_ms),
                "frame_ms": statistics.mean(p + s for p, s in zip(pyr_ms, solve_ms)),
                "per_line_ms": statistics.mean(solve_ms) / n_lines if n_lines else 0.0,
                "lines": n_lines,
            })
    keys = ["repeat", "pyramid_ms", "solve_ms", "frame_ms", "per_line_ms", "lines"]
    print(" ".join(f"{k:>12}" for k in keys))
    for r in rows:
        print(" ".join(f"{r[k]:>12}" if k == "repeat" else f"{r[k]:>12.3f}" for k in keys))
    mean_frame = statistics.mean(r["frame_ms"] for r in rows)
    print(f"mean tracking time per frame: {mean_frame:.3f} ms")
    if out is not None:
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track detected segments through a frame sequence")
    p.add_argument("--manifest", help="text file listing frame paths in order")
    p.add_argument("--detections", help="directory of <stem>.lines.jsonl files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--overlay", action="store_const", const=True, help="write PPM overlays")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value config file")
    _add_tracker_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("synth", help="render a synthetic sequence with ground truth")
    _add_synth_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--first-only", action="store_true", help="write detections for frame 0 only")
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="inlier ratio report for a correspondence CSV")
    p.add_argument("--correspondences")
    p.add_argument("--truth", help="ground-truth CSV from 'tet synth'")
    p.add_argument("--ransac", action="store_const", const=True, help="score by homography RANSAC instead")
    p.add_argument("--summary", help="summary.json from 'tet track', for timing columns")
    p.add_argument("--tol", type=float, help="ground-truth tolerance in px (default 1)")
    p.add_argument("--iterations", type=int, help="RANSAC iterations (default 1000)")
    p.add_argument("--threshold", type=float, help="RANSAC transfer threshold in px (default 2)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time tracking on a manifest or a synthetic scene")
    p.add_argument("--manifest")
    p.add_argument("--detections")
    p.add_argument("--repeat", type=int, help="timed runs (default 3)")
    p.add_argument("--warmup", type=int, help="untimed runs first (default 1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    _add_tracker_flags(p)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"tet: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, DetectionFormatError) as exc:
        print(f"tet: I/O error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"tet: internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
