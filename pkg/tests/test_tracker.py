import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tet.geometry import Endpoint, LineSegment, MovementVector
from tet.image import BoundaryError, GrayImage, bilinear, build_pyramid
from tet.tracker import (EndpointTrackState, Status, TrackerConfig, _assemble, _geometry_ok, spatial_gradient_matrix,
                         track_endpoint_at_level, track_line, track_lines)

from conftest import textured


def brute_force_G(data, cx, cy, side):
    h = side // 2
    gxx = gxy = gyy = 0.0
    for y in range(cy - h, cy + h + 1):
        for x in range(cx - h, cx + h + 1):
            ix = (float(data[y][x + 1]) - float(data[y][x - 1])) / 2
            iy = (float(data[y + 1][x]) - float(data[y - 1][x])) / 2
            gxx += ix * ix
            gxy += ix * iy
            gyy += iy * iy
    return np.array([[gxx, gxy], [gxy, gyy]])


def shifted_bilinear(src, dx, dy):
    """I2(x, y) = I1(x - dx, y - dy), sampled bilinearly on the valid interior."""
    h, w = src.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    xs = np.clip(xx - dx, 0, w - 1)
    ys = np.clip(yy - dy, 0, h - 1)
    return bilinear(src, xs, ys)


# -- config ----------------------------------------------------------------------

def test_config_defaults():
    cfg = TrackerConfig()
    assert (cfg.window_side, cfg.max_iterations, cfg.min_window_error, cfg.n_levels) == (7, 10, 0.02, 3)
    assert cfg.min_update == 0.01 and not cfg.geometric_check


@pytest.mark.parametrize("kw", [dict(window_side=8), dict(window_side=1), dict(max_iterations=0),
                                dict(min_window_error=0), dict(n_levels=0)])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        TrackerConfig(**kw)


# -- gradient matrix ---------------------------------------------------------------

def test_G_constant_is_zero():
    G = spatial_gradient_matrix(GrayImage(np.full((20, 20), 0.4)), Endpoint(10, 10))
    assert np.array_equal(G, np.zeros((2, 2)))


def test_G_ramp():
    W = 21
    img = GrayImage(np.tile(np.arange(W) / (W - 1), (20, 1)))
    G = spatial_gradient_matrix(img, Endpoint(10.3, 9.6))
    g = 1 / (W - 1)
    np.testing.assert_allclose(G, [[49 * g * g, 0], [0, 0]], rtol=1e-12, atol=0)


def test_G_matches_brute_force_and_is_positive_definite(texture):
    for cx, cy in [(10, 10), (31.4, 20.6), (52, 40)]:
        G = spatial_gradient_matrix(texture, Endpoint(cx, cy))
        ref = brute_force_G(texture.data.tolist(), int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5)), 7)
        assert np.abs(G - ref).max() <= 1e-10 * np.abs(ref).max()
        assert np.all(np.linalg.eigvalsh(G) > 0)


def test_G_out_of_bounds(texture):
    with pytest.raises(BoundaryError):
        spatial_gradient_matrix(texture, Endpoint(3, 30))
    with pytest.raises(BoundaryError):
        spatial_gradient_matrix(texture, Endpoint(30, 60))
    spatial_gradient_matrix(texture, Endpoint(4, 59))


# -- single level ----------------------------------------------------------------------

def test_identity_converges_in_one_iteration(texture):
    s = track_endpoint_at_level(texture, texture, Endpoint(30.2, 28.7))
    assert s.status is Status.CONVERGED
    assert s.iterations_used == 1
    assert s.final_window_error == 0.0
    assert s.movement == MovementVector(0.0, 0.0)


def pixel_copy_shift(data):
    dst = data.copy()
    dst[:, 1:] = data[:, :-1]
    return GrayImage(dst)


@pytest.mark.xfail(strict=True, reason=(
    "on [0, 1] intensities the 0.02 mean-residual stop fires after the first "
    "update, about 0.1 px short of the optimum on a 1 px single-level shift"))
def test_integer_shift_by_pixel_copy(texture):
    s = track_endpoint_at_level(texture, pixel_copy_shift(texture.data), Endpoint(30, 30))
    assert s.status is Status.CONVERGED
    assert abs(s.movement.dx - 1.0) < 0.05 and abs(s.movement.dy) < 0.05


def test_integer_shift_default_stop(texture):
    s = track_endpoint_at_level(texture, pixel_copy_shift(texture.data), Endpoint(30, 30))
    assert s.status is Status.CONVERGED
    assert s.final_window_error < 0.02
    assert math.hypot(s.movement.dx - 1.0, s.movement.dy) < 0.15


@pytest.mark.parametrize("seed", range(10))
def test_integer_shift_with_tight_residual_stop(seed):
    img = GrayImage(textured(64, 64, seed=seed))
    cfg = TrackerConfig(min_window_error=1e-6)
    for p in [(30, 30), (20, 40), (40, 20)]:
        s = track_endpoint_at_level(img, pixel_copy_shift(img.data), Endpoint(*p), cfg=cfg)
        assert s.status is Status.CONVERGED
        assert abs(s.movement.dx - 1.0) < 0.05 and abs(s.movement.dy) < 0.05


def test_subpixel_shift_by_bilinear_resampling(texture):
    I2 = GrayImage(shifted_bilinear(texture.data, 0.5, -0.25))
    s = track_endpoint_at_level(texture, I2, Endpoint(32, 32))
    assert s.status is Status.CONVERGED
    assert math.hypot(s.movement.dx - 0.5, s.movement.dy + 0.25) < 0.1


def test_initial_guess_is_used(texture):
    dst = np.roll(texture.data, (2, 5), axis=(0, 1))
    s = track_endpoint_at_level(texture, GrayImage(dst), Endpoint(30, 30), MovementVector(4.6, 2.3))
    assert s.status is Status.CONVERGED
    assert math.hypot(s.movement.dx - 5, s.movement.dy - 2) < 0.05


def test_constant_window_is_singular():
    flat = GrayImage(np.full((30, 30), 0.5))
    s = track_endpoint_at_level(flat, flat, Endpoint(15, 15))
    assert s.status is Status.SINGULAR_GRADIENT
    assert s.iterations_used == 0


def test_window_outside_first_image(texture):
    s = track_endpoint_at_level(texture, texture, Endpoint(2, 30))
    assert s.status is Status.OUT_OF_BOUNDS


def test_displaced_window_leaving_second_image(texture):
    s = track_endpoint_at_level(texture, texture, Endpoint(10, 30), MovementVector(-8, 0))
    assert s.status is Status.OUT_OF_BOUNDS


def test_mismatched_sizes(texture):
    with pytest.raises(ValueError):
        track_endpoint_at_level(texture, GrayImage(np.zeros((10, 10))), Endpoint(5, 5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_iterations_within_budget(seed, dx, dy):
    img = GrayImage(textured(48, 48, seed=seed))
    I2 = GrayImage(shifted_bilinear(img.data, dx, dy))
    cfg = TrackerConfig(max_iterations=4)
    s = track_endpoint_at_level(img, I2, Endpoint(24, 24), cfg=cfg)
    assert 0 < s.iterations_used <= 4
    assert len(s.residuals) == s.iterations_used + 1


def test_residual_mostly_non_increasing():
    rng = np.random.default_rng(42)
    runs = ok = 0
    for seed in range(60):
        img = GrayImage(textured(48, 48, seed=seed))
        dx, dy = rng.uniform(-2, 2, 2)
        I2 = GrayImage(shifted_bilinear(img.data, dx, dy))
        s = track_endpoint_at_level(img, I2, Endpoint(24, 24))
        if s.status in (Status.CONVERGED, Status.MAX_ITERATIONS):
            runs += 1
            r = s.residuals
            ok += all(b <= a for a, b in zip(r, r[1:]))
    assert runs >= 50
    assert ok / runs >= 0.9


# -- pyramid tracking ---------------------------------------------------------------------

def translated_pair(dx, dy, h=160, w=200, seed=3):
    a = textured(h, w, seed=seed)
    b = np.empty_like(a)
    b[:] = a.mean()
    b[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        a[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)]
    return GrayImage(a), GrayImage(b)


def test_identical_frames_fixed_point(texture):
    pyr = build_pyramid(texture, 3)
    line = LineSegment.from_coords(12.3, 20.1, 50.7, 44.9, id=1)
    r = track_line(pyr, pyr, line)
    assert r.is_inlier
    assert all(abs(p - q) < 1e-6 for p, q in zip(r.target.coords(), line.coords()))
    assert r.e1.iterations_used == r.e2.iterations_used == 1
    assert r.target.id == 1


def test_large_translation_needs_the_pyramid():
    a, b = translated_pair(6, 4)
    line = LineSegment.from_coords(60, 60, 120, 70)
    r = track_line(build_pyramid(a, 3), build_pyramid(b, 3), line)
    assert r.is_inlier
    x1, y1, x2, y2 = r.target.coords()
    assert math.hypot(x1 - 66, y1 - 64) < 0.5 and math.hypot(x2 - 126, y2 - 74) < 0.5
    single = track_line(build_pyramid(a, 1), build_pyramid(b, 1), line, TrackerConfig(n_levels=1))
    if single.target is not None:
        assert math.hypot(single.target.p1.x - 66, single.target.p1.y - 64) > 0.5


def test_endpoint_leaving_frame_is_outlier():
    a = GrayImage(textured(80, 100, seed=9))
    b = GrayImage(np.roll(a.data, -2, axis=1))
    r = track_line(build_pyramid(a), build_pyramid(b), LineSegment.from_coords(4.2, 30, 60, 40))
    assert r.e1.status is Status.OUT_OF_BOUNDS
    assert r.e2.status is Status.CONVERGED
    assert r.target is None and not r.is_inlier


def test_endpoint_independence():
    a, b = translated_pair(3, -2, seed=5)
    pa, pb = build_pyramid(a), build_pyramid(b)
    fwd = track_line(pa, pb, LineSegment.from_coords(40.2, 50.9, 150.1, 90.4))
    rev = track_line(pa, pb, LineSegment.from_coords(150.1, 90.4, 40.2, 50.9))
    assert fwd.e1 == rev.e2 and fwd.e2 == rev.e1
    assert fwd.e1.residuals == rev.e2.residuals
    # the other endpoint's position does not matter either
    other = track_line(pa, pb, LineSegment.from_coords(40.2, 50.9, 100, 30))
    assert other.e1 == fwd.e1


def test_batch_equals_one_by_one():
    a, b = translated_pair(2, 1, seed=8)
    pa, pb = build_pyramid(a), build_pyramid(b)
    lines = [LineSegment.from_coords(30 + 10 * i, 40, 60 + 10 * i, 120, id=i) for i in range(8)]
    batch = track_lines(pa, pb, lines)
    for line, res in zip(lines, batch):
        assert track_line(pa, pb, line) == res


def test_geometric_check():
    src = LineSegment.from_coords(0, 0, 100, 0)
    cfg = TrackerConfig(geometric_check=True)
    assert _geometry_ok(src, LineSegment.from_coords(0, 0, 80, 10), cfg)
    assert not _geometry_ok(src, LineSegment.from_coords(0, 0, 40, 0), cfg)
    assert not _geometry_ok(src, LineSegment.from_coords(0, 0, 0, 100), cfg)
    # reversed direction is the same undirected line
    assert _geometry_ok(src, LineSegment.from_coords(100, 0, 0, 1), cfg)


def test_geometric_check_wiring():
    line = LineSegment.from_coords(10, 10, 50, 10, id=2)
    conv = EndpointTrackState(MovementVector(0, 0), 1, 0.0, Status.CONVERGED)
    shrink = EndpointTrackState(MovementVector(-30, 0), 3, 0.0, Status.CONVERGED)
    off = _assemble(line, conv, shrink, TrackerConfig())
    on = _assemble(line, conv, shrink, TrackerConfig(geometric_check=True))
    assert off.is_inlier and off.target.coords() == (10, 10, 20, 10)
    assert not on.is_inlier and on.target == off.target
    lost = EndpointTrackState(MovementVector(0, 0), 2, math.nan, Status.OUT_OF_BOUNDS)
    assert _assemble(line, conv, lost, TrackerConfig()).target is None


def test_stationary_exit_above_error_is_outlier():
    # a min_update exit counts as converged but still violates the residual rule
    line = LineSegment.from_coords(10, 10, 50, 10)
    good = EndpointTrackState(MovementVector(1, 0), 2, 0.005, Status.CONVERGED)
    stuck = EndpointTrackState(MovementVector(1, 0), 4, 0.05, Status.CONVERGED)
    r = _assemble(line, good, stuck, TrackerConfig())
    assert r.target is not None and not r.is_inlier
    assert _assemble(line, good, good, TrackerConfig()).is_inlier


@pytest.mark.parametrize("t", [4.0, 5.0, 6.0, 7.0])
@pytest.mark.parametrize("seed", range(3))
def test_translated_off_frame(t, seed):
    # the whole scene moves left by t px; the left endpoint's true position is off-frame
    rng = np.random.default_rng(seed)
    big = textured(120, 180, seed=seed, sigma=2.5)
    yy, xx = np.mgrid[0:100, 0:140].astype(float)
    a = GrayImage(big[10:110, 20:160])
    b = GrayImage(bilinear(big, xx + 20 + t, yy + 10))
    lines = [LineSegment.from_coords(x, y, x + 50, y + 10)
             for x, y in zip(rng.uniform(3.5, t - 0.05, 6), rng.uniform(15, 75, 6))]
    for r in track_lines(build_pyramid(a), build_pyramid(b), lines):
        assert r.e1.status is Status.OUT_OF_BOUNDS and not r.is_inlier
        assert r.e2.status is Status.CONVERGED
        assert abs(r.e2.movement.dx + t) < 0.25 and abs(r.e2.movement.dy) < 0.25


def test_border_endpoint_tracks_large_motion():
    # coarse windows slide inward, so an endpoint near the border still gets pyramid help
    a, b = translated_pair(6, 4, seed=2)
    r = track_line(build_pyramid(a), build_pyramid(b), LineSegment.from_coords(5.0, 5.0, 60, 30))
    assert r.is_inlier
    assert math.hypot(r.target.p1.x - 11, r.target.p1.y - 9) < 0.5
