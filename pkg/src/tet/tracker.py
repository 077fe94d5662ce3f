"""Two-endpoint line tracking with pyramidal iterative Lucas-Kanade.

A segment is tracked by following each of its endpoints independently
through the image pyramids and reconnecting the two results.  All work is
done in batches: every endpoint of every segment of a frame pair moves
through the same vectorized Gauss-Newton loop, one row per endpoint.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Endpoint, LineSegment, MovementVector, length, orientation
from .image import BoundaryError, GrayImage, ImagePyramid, bilinear


class Status(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    OUT_OF_BOUNDS = "out_of_bounds"
    SINGULAR_GRADIENT = "singular_gradient"


_STATUSES = list(Status)
_CONV, _MAXIT, _OOB, _SING = range(4)

# det(G) <= SINGULAR_RATIO * (trace(G) / 2)**2 means the window is degenerate
SINGULAR_RATIO = 1e-12


@dataclass(frozen=True)
class TrackerConfig:
    window_side: int = 7
    max_iterations: int = 10
    min_window_error: float = 0.02
    n_levels: int = 3
    min_update: float = 0.01
    # optional rejection of reconnected segments that changed shape too much
    geometric_check: bool = False
    max_length_ratio: float = 2.0
    max_angle_change_deg: float = 30.0

    def __post_init__(self):
        if self.window_side < 3 or self.window_side % 2 == 0:
            raise ValueError("window_side must be odd and >= 3")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.min_window_error > 0:
            raise ValueError("min_window_error must be > 0")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.min_update < 0:
            raise ValueError("min_update must be >= 0")
        if self.max_length_ratio < 1:
            raise ValueError("max_length_ratio must be >= 1")


@dataclass(frozen=True)
class EndpointTrackState:
    movement: MovementVector
    iterations_used: int
    final_window_error: float
    status: Status
    # mean absolute window residual at the start guess and after each update
    residuals: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class TrackResult:
    source: LineSegment
    target: LineSegment | None
    e1: EndpointTrackState
    e2: EndpointTrackState
    is_inlier: bool


def _offsets(window_side: int):
    h = window_side // 2
    oy, ox = np.mgrid[-h:h + 1, -h:h + 1]
    return ox.ravel().astype(np.float64), oy.ravel().astype(np.float64)


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.intp)


def _window_gradients(data: np.ndarray, cx: np.ndarray, cy: np.ndarray, side: int):
    """Template values and central-difference gradients for windows at (cx, cy).

    Returns arrays of shape (N, side*side).  Callers guarantee a one pixel
    margin around every window.
    """
    h = side // 2
    r = np.arange(-h - 1, h + 2)
    rows = cy[:, None, None] + r[None, :, None]
    cols = cx[:, None, None] + r[None, None, :]
    patch = data[rows, cols]
    n = len(cx)
    tmpl = patch[:, 1:-1, 1:-1].reshape(n, -1)
    ix = ((patch[:, 1:-1, 2:] - patch[:, 1:-1, :-2]) / 2.0).reshape(n, -1)
    iy = ((patch[:, 2:, 1:-1] - patch[:, :-2, 1:-1]) / 2.0).reshape(n, -1)
    return tmpl, ix, iy


def _gradient_matrices(ix: np.ndarray, iy: np.ndarray):
    gxx = np.einsum("ij,ij->i", ix, ix)
    gxy = np.einsum("ij,ij->i", ix, iy)
    gyy = np.einsum("ij,ij->i", iy, iy)
    return gxx, gxy, gyy


def _is_singular(gxx, gxy, gyy):
    det = gxx * gyy - gxy * gxy
    half_trace = (gxx + gyy) / 2.0
    return det <= SINGULAR_RATIO * half_trace * half_trace


def spatial_gradient_matrix(img: GrayImage, center: Endpoint, window_side: int = 7) -> np.ndarray:
    """Sum of [Ix^2, IxIy; IxIy, Iy^2] over the window around ``center``.

    The window is anchored at the nearest integer pixel.  Raises
    ``BoundaryError`` when the window plus its one pixel gradient margin does
    not fit.
    """
    h = window_side // 2
    cx = int(math.floor(center.x + 0.5))
    cy = int(math.floor(center.y + 0.5))
    if cx - h - 1 < 0 or cy - h - 1 < 0 or cx + h + 1 > img.width - 1 or cy + h + 1 > img.height - 1:
        raise BoundaryError(f"window at ({center.x}, {center.y}) leaves the image")
    _, ix, iy = _window_gradients(img.data, np.array([cx]), np.array([cy]), window_side)
    gxx, gxy, gyy = _gradient_matrices(ix, iy)
    return np.array([[gxx[0], gxy[0]], [gxy[0], gyy[0]]])


@dataclass
class _LevelResult:
    movement: np.ndarray      # (N, 2)
    iterations: np.ndarray    # (N,)
    error: np.ndarray         # (N,)
    status: np.ndarray        # (N,) indices into _STATUSES
    history: np.ndarray       # (N, max_iterations + 1), NaN padded


def _track_level(I1: np.ndarray, I2: np.ndarray, pts: np.ndarray, guess: np.ndarray,
                 cfg: TrackerConfig, slide: bool = False) -> _LevelResult:
    """Iterate m <- m + G^-1 b for every row of ``pts`` at one pyramid level."""
    n = len(pts)
    side = cfg.window_side
    h = side // 2
    hgt, wid = I1.shape
    maxit = cfg.max_iterations

    m = np.array(guess, dtype=np.float64, copy=True).reshape(n, 2)
    iters = np.zeros(n, dtype=np.intp)
    err = np.full(n, np.nan)
    status = np.full(n, _MAXIT, dtype=np.intp)
    history = np.full((n, maxit + 1), np.nan)
    if n == 0:
        return _LevelResult(m, iters, err, status, history)

    cx = _round_half_up(pts[:, 0])
    cy = _round_half_up(pts[:, 1])
    if slide and wid >= side + 2 and hgt >= side + 2:
        # move the window inward rather than lose the level near the border
        cx = np.clip(cx, h + 1, wid - h - 2)
        cy = np.clip(cy, h + 1, hgt - h - 2)
    inside = (cx - h - 1 >= 0) & (cy - h - 1 >= 0) & (cx + h + 1 <= wid - 1) & (cy + h + 1 <= hgt - 1)
    status[~inside] = _OOB

    active = np.flatnonzero(inside)
    if active.size == 0:
        return _LevelResult(m, iters, err, status, history)

    tmpl, ix, iy = _window_gradients(I1, cx[active], cy[active], side)
    gxx, gxy, gyy = _gradient_matrices(ix, iy)
    sing = _is_singular(gxx, gxy, gyy)
    status[active[sing]] = _SING
    keep = ~sing
    active, tmpl, ix, iy = active[keep], tmpl[keep], ix[keep], iy[keep]
    gxx, gxy, gyy = gxx[keep], gxy[keep], gyy[keep]
    det = gxx * gyy - gxy * gxy

    ox, oy = _offsets(side)
    wx = cx[active, None] + ox[None, :]
    wy = cy[active, None] + oy[None, :]

    def residual(rows, mv):
        # rows: positions into the active arrays; mv: (len(rows), 2)
        xs = wx[rows] + mv[:, :1]
        ys = wy[rows] + mv[:, 1:]
        ok = ((xs[:, 0] >= 0) & (ys[:, 0] >= 0)
              & (xs[:, -1] <= wid - 1) & (ys[:, -1] <= hgt - 1))
        res = np.zeros_like(xs)
        if ok.any():
            res[ok] = tmpl[rows[ok]] - bilinear(I2, xs[ok], ys[ok])
        return res, ok

    live = np.arange(active.size)
    res, ok = residual(live, m[active])
    history[active[ok], 0] = np.abs(res[ok]).mean(axis=1)
    status[active[~ok]] = _OOB
    live, res = live[ok], res[ok]

    for k in range(1, maxit + 1):
        if live.size == 0:
            break
        rows = active[live]
        bx = np.einsum("ij,ij->i", res, ix[live])
        by = np.einsum("ij,ij->i", res, iy[live])
        d = det[live]
        ux = (gyy[live] * bx - gxy[live] * by) / d
        uy = (gxx[live] * by - gxy[live] * bx) / d
        step = np.hypot(ux, uy)
        # keep a single update within the window
        over = step > side
        if over.any():
            ux[over] *= side / step[over]
            uy[over] *= side / step[over]
            step[over] = side
        m[rows, 0] += ux
        m[rows, 1] += uy
        iters[rows] = k

        res, ok = residual(live, m[rows])
        eps = np.where(ok, np.abs(res).mean(axis=1), np.nan)
        history[rows, k] = eps
        err[rows] = eps
        status[rows[~ok]] = _OOB

        done = ok & ((eps < cfg.min_window_error) | (step < cfg.min_update))
        status[rows[done]] = _CONV
        cont = ok & ~done
        live, res = live[cont], res[cont]

    # rows still live ran out of iterations; status stays MAX_ITERATIONS
    # rows that never iterated keep the error of their starting guess
    start_only = (iters == 0) & ~np.isnan(history[:, 0])
    err[start_only] = history[start_only, 0]
    return _LevelResult(m, iters, err, status, history)


def _state(res: _LevelResult, i: int) -> EndpointTrackState:
    hist = res.history[i]
    hist = tuple(float(v) for v in hist[~np.isnan(hist)])
    return EndpointTrackState(
        movement=MovementVector(float(res.movement[i, 0]), float(res.movement[i, 1])),
        iterations_used=int(res.iterations[i]),
        final_window_error=float(res.error[i]),
        status=_STATUSES[res.status[i]],
        residuals=hist,
    )


def track_endpoint_at_level(I1: GrayImage, I2: GrayImage, p: Endpoint,
                            initial_guess: MovementVector | None = None,
                            cfg: TrackerConfig | None = None) -> EndpointTrackState:
    """Solve for the movement of a single endpoint between two same-size images."""
    cfg = cfg or TrackerConfig()
    if I1.shape != I2.shape:
        raise ValueError("images must have the same dimensions")
    g = initial_guess or MovementVector()
    res = _track_level(I1.data, I2.data, np.array([[p.x, p.y]]), np.array([[g.dx, g.dy]]), cfg)
    return _state(res, 0)


def track_points(pyr1: ImagePyramid, pyr2: ImagePyramid, pts, cfg: TrackerConfig | None = None,
                 ) -> _LevelResult:
    """Coarse-to-fine tracking of an (N, 2) array of full-resolution points.

    The movement starts at zero on the deepest level and is doubled on the
    way to each finer level.  On coarse levels a window that would cross the
    border is slid inward so the level still contributes, and whatever
    movement a level ends with (including one that left the image) is carried
    down.  Only the level-0 outcome, with the window centered on the point,
    decides the final status.
    """
    cfg = cfg or TrackerConfig()
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if pyr1[0].shape != pyr2[0].shape:
        raise ValueError("pyramids must be built from same-size frames")
    n_levels = min(cfg.n_levels, len(pyr1), len(pyr2))
    m = np.zeros_like(pts)
    for level in range(n_levels - 1, -1, -1):
        if level < n_levels - 1:
            m *= 2.0
        scale = 2.0 ** level
        res = _track_level(pyr1[level].data, pyr2[level].data, pts / scale, m, cfg, slide=level > 0)
        if level == 0:
            return res
        m = res.movement.copy()
    raise AssertionError("unreachable")


def _geometry_ok(src: LineSegment, dst: LineSegment, cfg: TrackerConfig) -> bool:
    ratio = length(dst) / length(src)
    if not (1.0 / cfg.max_length_ratio <= ratio <= cfg.max_length_ratio):
        return False
    d = abs(orientation(dst) - orientation(src))
    d = min(d, math.pi - d)
    return math.degrees(d) <= cfg.max_angle_change_deg


def _assemble(line: LineSegment, s1: EndpointTrackState, s2: EndpointTrackState,
              cfg: TrackerConfig) -> TrackResult:
    target = None
    inlier = False
    if s1.status is Status.CONVERGED and s2.status is Status.CONVERGED:
        q1 = line.p1 + s1.movement
        q2 = line.p2 + s2.movement
        if (q1.x, q1.y) != (q2.x, q2.y):
            target = LineSegment(q1, q2, line.id)
            inlier = (s1.final_window_error < cfg.min_window_error
                      and s2.final_window_error < cfg.min_window_error
                      and (not cfg.geometric_check or _geometry_ok(line, target, cfg)))
    return TrackResult(line, target, s1, s2, inlier)


def track_lines(pyr1: ImagePyramid, pyr2: ImagePyramid, lines, cfg: TrackerConfig | None = None,
                ) -> list[TrackResult]:
    cfg = cfg or TrackerConfig()
    lines = list(lines)
    if not lines:
        return []
    pts = np.array([[l.p1.x, l.p1.y, l.p2.x, l.p2.y] for l in lines]).reshape(-1, 2)
    res = track_points(pyr1, pyr2, pts, cfg)
    return [_assemble(line, _state(res, 2 * i), _state(res, 2 * i + 1), cfg)
            for i, line in enumerate(lines)]


def track_line(pyr1: ImagePyramid, pyr2: ImagePyramid, line: LineSegment,
               cfg: TrackerConfig | None = None) -> TrackResult:
    """Track both endpoints of ``line`` from ``pyr1`` into ``pyr2``."""
    return track_lines(pyr1, pyr2, [line], cfg)[0]
