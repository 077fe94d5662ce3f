"""Sequence replay: detection ingestion, track bookkeeping, correspondence output."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

from .geometry import DEFAULT_MIN_LENGTH, Endpoint, LineSegment, length
from .image import GrayImage, ImagePyramid, build_pyramid, load_gray
from .tracker import Status, TrackerConfig, TrackResult, track_lines

log = logging.getLogger(__name__)

REDETECT_THRESHOLD = 30
OVERLAP_RADIUS = 5.0

CSV_HEADER = ["frame", "id", "x1", "y1", "x2", "y2", "px1", "py1", "px2", "py2",
              "iters1", "iters2", "err1", "err2", "inlier"]


class DetectionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FrameDescriptor:
    path: Path
    index: int
    timestamp: float


@dataclass(frozen=True)
class FrameSource:
    frames: tuple

    def __post_init__(self):
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @classmethod
    def from_manifest(cls, path) -> "FrameSource":
        """One frame path per line, relative paths resolved against the manifest.

        An optional second column holds the timestamp in seconds; otherwise
        the line number is used.
        """
        path = Path(path)
        frames = []
        for raw in path.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            p = Path(parts[0])
            if not p.is_absolute():
                p = path.parent / p
            ts = float(parts[1]) if len(parts) > 1 else float(len(frames))
            frames.append(FrameDescriptor(p, len(frames), ts))
        return cls(tuple(frames))


@dataclass
class DetectionSet:
    frame: int
    segments: list


def ingest_detections(path, min_length: float = DEFAULT_MIN_LENGTH, frame: int = 0) -> DetectionSet:
    """Read a ``.lines.jsonl`` file, dropping segments shorter than ``min_length``.

    Zero-length records are skipped with a warning; any other malformed
    record raises ``DetectionFormatError`` naming the file and line.
    """
    segments = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                x1, y1, x2, y2 = (float(rec[k]) for k in ("x1", "y1", "x2", "y2"))
            except (ValueError, KeyError, TypeError) as exc:
                raise DetectionFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
                raise DetectionFormatError(f"{path}:{lineno}: non-finite coordinate")
            if x1 == x2 and y1 == y2:
                log.warning("%s:%d: zero-length segment skipped", path, lineno)
                continue
            seg = LineSegment.from_coords(x1, y1, x2, y2)
            if length(seg) >= min_length:
                segments.append(seg)
    return DetectionSet(frame, [s.with_id(i) for i, s in enumerate(segments)])


@dataclass(frozen=True)
class Track:
    segment: LineSegment
    age: int = 1


@dataclass(frozen=True)
class FrameStats:
    frame: int
    tracked: int
    inliers: int
    ms: float
    seeded: int = 0
    redetected: bool = False
    starved: bool = False
    failures: dict = field(default_factory=dict)


@dataclass
class TrackTable:
    tracks: dict = field(default_factory=dict)       # id -> Track
    stats: list = field(default_factory=list)
    next_id: int = 0
    detection_invocations: int = 0
    last_results: list = field(default_factory=list)

    def segments(self) -> list:
        return [t.segment for _, t in sorted(self.tracks.items())]

    def seed(self, detections: DetectionSet, radius: float = OVERLAP_RADIUS) -> int:
        """Start tracks for detections that do not duplicate a current track."""
        existing = [t.segment for t in self.tracks.values()]
        n = 0
        for seg in detections.segments:
            if any(_overlaps(seg, other, radius) for other in existing):
                continue
            tid = self.next_id
            self.next_id += 1
            new = seg.with_id(tid)
            self.tracks[tid] = Track(new, 1)
            existing.append(new)
            n += 1
        return n


def _near(a: Endpoint, b: Endpoint, r: float) -> bool:
    return math.hypot(a.x - b.x, a.y - b.y) <= r


def _overlaps(a: LineSegment, b: LineSegment, r: float) -> bool:
    return ((_near(a.p1, b.p1, r) and _near(a.p2, b.p2, r))
            or (_near(a.p1, b.p2, r) and _near(a.p2, b.p1, r)))


Frame = Union[GrayImage, ImagePyramid]
Detections = Union[DetectionSet, Callable[[], Optional[DetectionSet]], None]


def _pyramid(frame: Frame, cfg: TrackerConfig) -> ImagePyramid:
    return frame if isinstance(frame, ImagePyramid) else build_pyramid(frame, cfg.n_levels)


def step(table: TrackTable, I1: Frame, I2: Frame, detections_for_I2: Detections,
         cfg: TrackerConfig | None = None, redetect_threshold: int = REDETECT_THRESHOLD,
         *, frame: int | None = None) -> TrackTable:
    """Advance every track from ``I1`` to ``I2`` and re-seed when inliers run low.

    ``detections_for_I2`` may be a callable; it is only invoked when
    re-detection is actually needed.  Either frame may be given as a
    prebuilt pyramid, in which case its construction is not timed.
    """
    cfg = cfg or TrackerConfig()
    frame = len(table.stats) + 1 if frame is None else frame
    ids = sorted(table.tracks)
    lines = [table.tracks[i].segment for i in ids]

    t0 = time.perf_counter()
    p1, p2 = _pyramid(I1, cfg), _pyramid(I2, cfg)
    if p1[0].shape != p2[0].shape:
        raise ValueError("frames must have the same dimensions")
    results = track_lines(p1, p2, lines, cfg)
    ms = (time.perf_counter() - t0) * 1e3

    out = TrackTable(next_id=table.next_id, stats=list(table.stats),
                     detection_invocations=table.detection_invocations, last_results=results)
    failures: dict = {}
    for tid, res in zip(ids, results):
        if res.is_inlier:
            out.tracks[tid] = Track(res.target, table.tracks[tid].age + 1)
        else:
            for e in (res.e1, res.e2):
                if e.status is not Status.CONVERGED:
                    failures[e.status.value] = failures.get(e.status.value, 0) + 1
    inliers = len(out.tracks)

    seeded, redetected, starved = 0, False, False
    if inliers < redetect_threshold:
        dets = detections_for_I2() if callable(detections_for_I2) else detections_for_I2
        if dets is None:
            starved = True
            log.info("frame %d: %d inliers but no detections available", frame, inliers)
        else:
            redetected = True
            out.detection_invocations += 1
            seeded = out.seed(dets)
    out.stats.append(FrameStats(frame, len(results), inliers, ms, seeded, redetected, starved,
                                failures))
    return out


def initial_table(detections: DetectionSet) -> TrackTable:
    table = TrackTable(detection_invocations=1)
    table.seed(detections)
    return table


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def correspondence_rows(frame: int, results) -> list:
    rows = []
    for r in results:
        tgt = r.target.coords() if r.target is not None else (None,) * 4
        rows.append([frame, r.source.id, *(_fmt(v) for v in tgt),
                     *(_fmt(v) for v in r.source.coords()),
                     r.e1.iterations_used, r.e2.iterations_used,
                     _fmt(r.e1.final_window_error), _fmt(r.e2.final_window_error),
                     int(r.is_inlier)])
    return rows


@dataclass(frozen=True)
class CorrespondenceRecord:
    frame: int
    id: int
    target: Optional[tuple]
    source: tuple
    iters: tuple
    errors: tuple
    inlier: bool


def read_correspondences(path) -> list:
    def num(s):
        return float(s) if s != "" else None

    recs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            tgt = tuple(num(row[k]) for k in ("x1", "y1", "x2", "y2"))
            recs.append(CorrespondenceRecord(
                frame=int(row["frame"]), id=int(row["id"]),
                target=None if any(v is None for v in tgt) else tgt,
                source=tuple(float(row[k]) for k in ("px1", "py1", "px2", "py2")),
                iters=(int(row["iters1"]), int(row["iters2"])),
                errors=(num(row["err1"]), num(row["err2"])),
                inlier=row["inlier"] == "1"))
    return recs


def records_from_results(frame: int, results) -> list:
    return [CorrespondenceRecord(frame, r.source.id,
                                 r.target.coords() if r.target is not None else None,
                                 r.source.coords(),
                                 (r.e1.iterations_used, r.e2.iterations_used),
                                 (r.e1.final_window_error, r.e2.final_window_error),
                                 r.is_inlier)
            for r in results]


def detection_path(detections_dir, frame_path) -> Path:
    return Path(detections_dir) / f"{Path(frame_path).stem}.lines.jsonl"


def run_sequence(source: FrameSource, detections_dir, cfg: TrackerConfig | None = None, out=None,
                 *, redetect_threshold: int = REDETECT_THRESHOLD,
                 min_length: float = DEFAULT_MIN_LENGTH, overlay: bool = False) -> dict:
    """Track through every frame of ``source``.

    Writes ``correspondences.csv`` and ``summary.json`` into ``out`` (when
    given) and returns the summary.  Detection files are read for the first
    frame and afterwards only when re-detection is triggered.
    """
    cfg = cfg or TrackerConfig()
    if len(source) < 2:
        raise ValueError("need at least two frames")
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if overlay:
            (out / "overlays").mkdir(exist_ok=True)

    first = source.frames[0]
    det0 = detection_path(detections_dir, first.path)
    table = initial_table(ingest_detections(det0, min_length, first.index))
    detection_frames = [first.index]

    prev = build_pyramid(load_gray(first.path), cfg.n_levels)
    rows = []
    for fd in source.frames[1:]:
        img = load_gray(fd.path)
        t0 = time.perf_counter()
        cur = build_pyramid(img, cfg.n_levels)
        build_ms = (time.perf_counter() - t0) * 1e3

        def lazy(fd=fd):
            p = detection_path(detections_dir, fd.path)
            if not p.is_file():
                return None
            return ingest_detections(p, min_length, fd.index)

        before = table.detection_invocations
        table = step(table, prev, cur, lazy, cfg, redetect_threshold, frame=fd.index)
        # the previous pyramid is reused, so only this frame's build counts
        st = table.stats[-1]
        table.stats[-1] = replace(st, ms=st.ms + build_ms)
        if table.detection_invocations > before:
            detection_frames.append(fd.index)
        rows.extend(correspondence_rows(fd.index, table.last_results))
        if overlay and out is not None:
            from .evaluation import overlay as draw
            from .image import save_ppm
            save_ppm(out / "overlays" / f"{Path(fd.path).stem}.ppm",
                     draw(img, records_from_results(fd.index, table.last_results)))
        prev = cur

    stats = table.stats
    summary = {
        "frames": len(source),
        "tracked_frames": len(stats),
        "mean_ms": sum(s.ms for s in stats) / len(stats),
        "mean_tracked": sum(s.tracked for s in stats) / len(stats),
        "mean_inliers": sum(s.inliers for s in stats) / len(stats),
        "detection_invocations": table.detection_invocations,
        "detection_frames": detection_frames,
        "starved_frames": [s.frame for s in stats if s.starved],
        "total_tracks": table.next_id,
        "per_frame": [{"frame": s.frame, "tracked": s.tracked, "inliers": s.inliers,
                       "ms": s.ms, "seeded": s.seeded, "redetected": s.redetected,
                       "starved": s.starved, "failures": s.failures} for s in stats],
    }
    if out is not None:
        with open(out / "correspondences.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            w.writerows(rows)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
