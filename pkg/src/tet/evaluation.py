"""Inlier ratios, per-frame timing reports and overlay rendering."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .image import GrayImage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRow:
    frame: int
    tracked: int
    inliers: int
    ratio: Optional[float]
    ms: Optional[float] = None
    evaluable: bool = True


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    @property
    def mean_ms(self) -> Optional[float]:
        v = [r.ms for r in self.rows if r.ms is not None]
        return sum(v) / len(v) if v else None

    @property
    def mean_count(self) -> Optional[float]:
        return sum(r.tracked for r in self.rows) / len(self.rows) if self.rows else None

    @property
    def mean_ratio(self) -> Optional[float]:
        v = [r.ratio for r in self.rows if r.ratio is not None]
        return sum(v) / len(v) if v else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "tracked", "inliers", "ratio", "ms", "evaluable"])
        for r in self.rows:
            w.writerow([r.frame, r.tracked, r.inliers,
                        "" if r.ratio is None else f"{r.ratio:.6f}",
                        "" if r.ms is None else f"{r.ms:.3f}", int(r.evaluable)])
        return buf.getvalue()

    def table(self) -> str:
        """Aggregate in the Time / Number / Ratio layout."""

        def f(v, width):
            return f"{'-':>{width}}" if v is None else f"{v:>{width}.2f}"

        ratio = "-" if self.mean_ratio is None else f"{self.mean_ratio:.2%}"
        lines = [f"{'Time (ms)':>10} {'Number':>8} {'Ratio':>8}",
                 f"{f(self.mean_ms, 10)} {f(self.mean_count, 8)} {ratio:>8}"]
        skipped = [r.frame for r in self.rows if not r.evaluable]
        if skipped:
            lines.append(f"not evaluable: frames {', '.join(map(str, skipped))}")
        return "\n".join(lines) + "\n"


def _by_frame(correspondences):
    frames = defaultdict(list)
    for c in correspondences:
        frames[c.frame].append(c)
    return frames


def _matched(recs):
    return [c for c in recs if c.inlier and c.target is not None]


def inliers_vs_truth(correspondences, truth, tol: float = 1.0, timing: dict | None = None,
                     frames=None) -> list:
    """Ground-truth inlier ratio per frame over the tracker-accepted matches.

    ``frames`` lists frames to report even when they hold no matches.
    """
    timing = timing or {}
    grouped = _by_frame(correspondences)
    keys = sorted(set(grouped) | set(frames or ()))
    rows = []
    for f in keys:
        recs = _matched(grouped.get(f, []))
        gt = truth.frames.get(f, {})
        good = 0
        for c in recs:
            if c.id not in gt:
                log.warning("frame %d: track %d has no ground truth; counted as outlier", f, c.id)
                continue
            t = gt[c.id]
            d1 = math.hypot(c.target[0] - t[0], c.target[1] - t[1])
            d2 = math.hypot(c.target[2] - t[2], c.target[3] - t[3])
            if d1 <= tol and d2 <= tol:
                good += 1
        ratio = good / len(recs) if recs else None
        rows.append(EvalRow(f, len(recs), good, ratio, timing.get(f)))
    return rows


# -- homography RANSAC --------------------------------------------------------

def _normalize(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return T


def fit_homography(src: np.ndarray, dst: np.ndarray) -> Optional[np.ndarray]:
    """Normalized DLT from >= 4 point pairs; ``None`` for degenerate input."""
    src = np.asarray(src, np.float64)
    dst = np.asarray(dst, np.float64)
    Ts, Td = _normalize(src), _normalize(dst)
    hs = np.c_[src, np.ones(len(src))] @ Ts.T
    hd = np.c_[dst, np.ones(len(dst))] @ Td.T
    n = len(src)
    A = np.zeros((2 * n, 9))
    u, v = hd[:, 0], hd[:, 1]
    A[0::2, 0:3] = hs
    A[0::2, 6:9] = -u[:, None] * hs
    A[1::2, 3:6] = hs
    A[1::2, 6:9] = -v[:, None] * hs
    _, s, vt = np.linalg.svd(A)
    # rank 8 is required for a unique solution
    if s[7] < 1e-10 * s[0]:
        return None
    H = np.linalg.inv(Td) @ vt[-1].reshape(3, 3) @ Ts
    if abs(H[2, 2]) < 1e-15:
        return None
    return H / H[2, 2]


def transfer(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = np.c_[pts, np.ones(len(pts))] @ H.T
    w = p[:, 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        return p[:, :2] / w


def ransac_homography(src: np.ndarray, dst: np.ndarray, iterations: int = 1000,
                      threshold: float = 2.0, seed: int = 0):
    """Seeded RANSAC over endpoint pairs.

    ``src``/``dst`` have shape (N, 2, 2): N segments, two endpoints each.  A
    segment is an inlier when both endpoints transfer within ``threshold``.
    Returns ``(H, inlier_mask)``.
    """
    src = np.asarray(src, np.float64).reshape(-1, 2, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2, 2)
    n = len(src)
    ps, pd = src.reshape(-1, 2), dst.reshape(-1, 2)
    rng = np.random.default_rng(seed)

    def score(H):
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.linalg.norm(transfer(H, ps) - pd, axis=1).reshape(n, 2)
            return np.all(err <= threshold, axis=1)

    best_H, best = None, np.zeros(n, bool)
    for _ in range(iterations):
        pick = rng.choice(2 * n, 4, replace=False)
        H = fit_homography(ps[pick], pd[pick])
        if H is None:
            continue
        mask = score(H)
        if mask.sum() > best.sum():
            best_H, best = H, mask
    if best.sum() >= 2:
        idx = np.flatnonzero(best)
        H = fit_homography(src[idx].reshape(-1, 2), dst[idx].reshape(-1, 2))
        if H is not None:
            mask = score(H)
            if mask.sum() >= best.sum():
                best_H, best = H, mask
    return best_H, best


def inliers_vs_homography(correspondences, iterations: int = 1000, threshold: float = 2.0,
                          seed: int = 0, timing: dict | None = None, frames=None) -> list:
    timing = timing or {}
    grouped = _by_frame(correspondences)
    rows = []
    for f in sorted(set(grouped) | set(frames or ())):
        recs = _matched(grouped.get(f, []))
        if len(recs) < 4:
            rows.append(EvalRow(f, len(recs), 0, None, timing.get(f), evaluable=False))
            continue
        src = np.array([c.source for c in recs]).reshape(-1, 2, 2)
        dst = np.array([c.target for c in recs]).reshape(-1, 2, 2)
        _, mask = ransac_homography(src, dst, iterations, threshold, seed)
        good = int(mask.sum())
        rows.append(EvalRow(f, len(recs), good, good / len(recs), timing.get(f)))
    return rows


# -- overlays -----------------------------------------------------------------

INLIER_COLOR = (0, 255, 0)
OUTLIER_COLOR = (255, 0, 0)
LABEL_COLOR = (255, 255, 0)


def overlay(frame: GrayImage, correspondences, labels: bool = True) -> np.ndarray:
    """RGB uint8 image with tracked segments drawn over ``frame``.

    Accepted tracks are green, rejected ones red (drawn at their target when
    it exists, else at the source).  Ids are printed at segment midpoints.
    """
    from PIL import Image, ImageDraw, ImageFont

    g = frame.to_uint8()
    im = Image.fromarray(np.dstack([g, g, g]), "RGB")
    draw = ImageDraw.Draw(im)
    font = ImageFont.load_default() if labels else None
    for c in sorted(correspondences, key=lambda c: (c.frame, c.id)):
        seg = c.target if c.target is not None else c.source
        color = INLIER_COLOR if c.inlier else OUTLIER_COLOR
        draw.line([(seg[0], seg[1]), (seg[2], seg[3])], fill=color, width=1)
        if labels:
            draw.text(((seg[0] + seg[2]) / 2 + 2, (seg[1] + seg[3]) / 2 + 2), str(c.id),
                      fill=LABEL_COLOR, font=font)
    return np.asarray(im, dtype=np.uint8).copy()
