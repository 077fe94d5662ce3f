"""Synthetic textured sequences with line segments under known motion.

Every frame is the same base canvas (smoothed noise plus dark anti-aliased
strokes) resampled under a composed global motion, so the exact position of
every endpoint in every frame is known.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import LineSegment
from .image import GrayImage, bilinear, save_pgm


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 480
    n_lines: int = 40
    noise_amplitude: float = 0.15
    smoothing: float = 2.5
    # per-frame translation (tx, ty) or a 2x3 affine matrix
    motion: tuple = (0.0, 0.0)
    n_frames: int = 2
    seed: int = 0
    min_length: float = 30.0
    max_length: float = 120.0
    margin: float = 16.0
    stroke_width: float = 2.0
    stroke_darkness: float = 0.6
    # gaussian blur of the stroke layer; keeps bilinear warping error small
    stroke_blur: float = 1.5
    quantize: bool = True

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("frame too small")
        if self.n_lines < 1:
            raise ValueError("n_lines must be >= 1")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.min_length <= 0 or self.max_length < self.min_length:
            raise ValueError("bad line length range")
        if self.margin < 7:
            raise ValueError("margin must keep lines at least one window (7 px) from the border")
        if self.noise_amplitude < 0 or self.smoothing < 0:
            raise ValueError("texture parameters must be non-negative")
        motion_matrix(self.motion)

    def with_(self, **kw) -> "SceneSpec":
        return replace(self, **kw)


@dataclass
class GroundTruth:
    # frame -> id -> (x1, y1, x2, y2)
    frames: dict = field(default_factory=dict)

    def segment(self, frame: int, id: int) -> LineSegment:
        return LineSegment.from_coords(*self.frames[frame][id], id=id)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "id", "x1", "y1", "x2", "y2"])
            for f in sorted(self.frames):
                for i in sorted(self.frames[f]):
                    w.writerow([f, i, *(f"{v:.6f}" for v in self.frames[f][i])])

    @classmethod
    def from_csv(cls, path) -> "GroundTruth":
        gt = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                gt.frames.setdefault(int(row["frame"]), {})[int(row["id"])] = tuple(
                    float(row[k]) for k in ("x1", "y1", "x2", "y2"))
        return gt


def motion_matrix(motion) -> np.ndarray:
    """3x3 homogeneous matrix for one frame step."""
    a = np.asarray(motion, dtype=np.float64)
    if a.shape == (2,):
        return np.array([[1.0, 0.0, a[0]], [0.0, 1.0, a[1]], [0.0, 0.0, 1.0]])
    if a.shape == (2, 3):
        m = np.vstack([a, [0.0, 0.0, 1.0]])
        if abs(np.linalg.det(m)) < 1e-9:
            raise ValueError("affine motion is singular")
        return m
    raise ValueError("motion must be (tx, ty) or a 2x3 matrix")


def _apply(m: np.ndarray, xy: np.ndarray) -> np.ndarray:
    return xy @ m[:2, :2].T + m[:2, 2]


def _texture(rng: np.random.Generator, h: int, w: int, amplitude: float, smoothing: float):
    noise = rng.standard_normal((h, w))
    if smoothing > 0:
        noise = gaussian_filter(noise, smoothing, mode="reflect")
    std = noise.std()
    if std > 0:
        noise /= std
    return np.clip(0.5 + amplitude * noise, 0.0, 1.0)


def _segment_distance(xx, yy, a, b):
    d = b - a
    t = ((xx - a[0]) * d[0] + (yy - a[1]) * d[1]) / float(d @ d)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(xx - (a[0] + t * d[0]), yy - (a[1] + t * d[1]))


def _draw_strokes(canvas: np.ndarray, segs: np.ndarray, width: float, darkness: float,
                  blur: float = 0.0):
    h, w = canvas.shape
    ink = np.zeros_like(canvas)
    half = width / 2.0
    for x1, y1, x2, y2 in segs:
        a, b = np.array([x1, y1]), np.array([x2, y2])
        x0 = max(int(math.floor(min(x1, x2) - half - 2)), 0)
        x3 = min(int(math.ceil(max(x1, x2) + half + 2)), w - 1)
        y0 = max(int(math.floor(min(y1, y2) - half - 2)), 0)
        y3 = min(int(math.ceil(max(y1, y2) + half + 2)), h - 1)
        yy, xx = np.mgrid[y0:y3 + 1, x0:x3 + 1].astype(np.float64)
        # pixel coverage of a box-filtered stroke, linear in the distance
        cov = np.clip(half + 0.5 - _segment_distance(xx, yy, a, b), 0.0, 1.0)
        np.maximum(ink[y0:y3 + 1, x0:x3 + 1], cov, out=ink[y0:y3 + 1, x0:x3 + 1])
    if blur > 0:
        ink = gaussian_filter(ink, blur, mode="constant")
    canvas *= 1.0 - darkness * ink


def _place_lines(rng, spec: SceneSpec, steps: list) -> np.ndarray:
    """Draw segments whose endpoints stay ``margin`` px inside every frame."""
    lo = np.array([spec.margin, spec.margin])
    hi = np.array([spec.width - 1 - spec.margin, spec.height - 1 - spec.margin])

    def fits(p):
        for m in steps:
            q = _apply(m, p[None, :])[0]
            if np.any(q < lo) or np.any(q > hi):
                return False
        return True

    segs = []
    attempts = 0
    while len(segs) < spec.n_lines:
        attempts += 1
        if attempts > 10000 * spec.n_lines:
            raise ValueError("cannot place lines that stay inside the frame under this motion")
        p1 = rng.uniform(lo, hi)
        ang = rng.uniform(0, 2 * math.pi)
        ln = rng.uniform(spec.min_length, spec.max_length)
        p2 = p1 + ln * np.array([math.cos(ang), math.sin(ang)])
        if fits(p1) and fits(p2):
            segs.append([p1[0], p1[1], p2[0], p2[1]])
    return np.array(segs)


def render_sequence(spec: SceneSpec):
    """Render ``spec.n_frames`` frames.

    Returns ``(frames, truth, detections)`` where ``detections[t]`` is the
    list of ground-truth segments of frame ``t`` with ids left unassigned.
    """
    rng = np.random.default_rng(spec.seed)
    step = motion_matrix(spec.motion)
    steps = [np.eye(3)]
    for _ in range(spec.n_frames - 1):
        steps.append(step @ steps[-1])

    # canvas covering the pre-image of every frame
    corners = np.array([[0, 0], [spec.width - 1, 0], [0, spec.height - 1],
                        [spec.width - 1, spec.height - 1]], dtype=np.float64)
    pre = np.vstack([_apply(np.linalg.inv(m), corners) for m in steps])
    pad = 2
    ox = math.floor(pre[:, 0].min()) - pad
    oy = math.floor(pre[:, 1].min()) - pad
    cw = math.ceil(pre[:, 0].max()) + pad - ox + 1
    ch = math.ceil(pre[:, 1].max()) + pad - oy + 1

    segs = _place_lines(rng, spec, steps)
    canvas = _texture(rng, ch, cw, spec.noise_amplitude, spec.smoothing)
    shifted = segs - np.array([ox, oy, ox, oy])
    _draw_strokes(canvas, shifted, spec.stroke_width, spec.stroke_darkness, spec.stroke_blur)

    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    frames, detections = [], []
    truth = GroundTruth()
    for t, m in enumerate(steps):
        src = _apply(np.linalg.inv(m), grid)
        vals = bilinear(canvas, src[:, 0] - ox, src[:, 1] - oy).reshape(spec.height, spec.width)
        vals = np.clip(vals, 0.0, 1.0)
        if spec.quantize:
            vals = np.rint(vals * 255.0) / 255.0
        frames.append(GrayImage(vals))
        p1 = _apply(m, segs[:, 0:2])
        p2 = _apply(m, segs[:, 2:4])
        coords = np.hstack([p1, p2])
        truth.frames[t] = {i: tuple(float(v) for v in c) for i, c in enumerate(coords)}
        detections.append([LineSegment.from_coords(*c) for c in coords])
    return frames, truth, detections


def write_sequence(spec: SceneSpec, out_dir, *, detections_every_frame: bool = True):
    """Write frames as PGM, ``truth.csv``, per-frame ``.lines.jsonl`` and a manifest."""
    out = Path(out_dir)
    frames, truth, detections = render_sequence(spec)
    det_dir = out / "detections"
    frame_dir = out / "frames"
    det_dir.mkdir(parents=True, exist_ok=True)
    frame_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        stem = f"frame_{t:04d}"
        p = frame_dir / f"{stem}.pgm"
        save_pgm(p, frame)
        paths.append(p)
        if t == 0 or detections_every_frame:
            write_detections(det_dir / f"{stem}.lines.jsonl", detections[t])
    (out / "manifest.txt").write_text("".join(f"frames/{p.name}\n" for p in paths))
    truth.to_csv(out / "truth.csv")
    return frames, truth, detections


def write_detections(path, segments) -> None:
    with open(path, "w") as fh:
        for s in segments:
            x1, y1, x2, y2 = s.coords()
            fh.write(json.dumps({"x1": round(x1, 6), "y1": round(y1, 6),
                                 "x2": round(x2, 6), "y2": round(y2, 6)}) + "\n")
