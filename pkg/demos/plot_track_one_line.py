"""
Tracking a single line segment
==============================

A segment is followed from one frame to the next by solving for the motion
of its two endpoints only.  Each endpoint gets a small window, a 2x2
gradient matrix from the first frame, and a few Gauss-Newton steps.
"""

import numpy as np

from tet import GrayImage, LineSegment, Status, TrackerConfig, build_pyramid, track_line
from tet.synth import SceneSpec, render_sequence

# a textured 320x240 scene that moves by (6, 4) px between frames
frames, truth, detections = render_sequence(
    SceneSpec(width=320, height=240, n_lines=5, motion=(6, 4), seed=3))
line = detections[0][0].with_id(0)
print("source segment:", np.round(line.coords(), 2))

###############################################################################
# The motion is almost as large as the 7 px window, so both frames are turned
# into 3-level pyramids and the solve runs coarse to fine.

pyr1, pyr2 = build_pyramid(frames[0]), build_pyramid(frames[1])
for level in pyr1.levels:
    print("level", level.shape)

res = track_line(pyr1, pyr2, line)
print("inlier:", res.is_inlier)
print("tracked segment:", np.round(res.target.coords(), 3))
print("truth:          ", np.round(truth.frames[1][0], 3))

###############################################################################
# Each endpoint carries its own diagnostics: the movement vector, how many
# iterations the finest level needed and the mean absolute residual over the
# window.

for name, e in (("p1", res.e1), ("p2", res.e2)):
    print(name, e.status.value, "m = (%.3f, %.3f)" % (e.movement.dx, e.movement.dy),
          "iterations", e.iterations_used, "eps %.4f" % e.final_window_error)
    print("   residual history", np.round(e.residuals, 4))

###############################################################################
# Without the pyramid the same displacement is usually out of reach.

single = track_line(build_pyramid(frames[0], 1), build_pyramid(frames[1], 1), line,
                    TrackerConfig(n_levels=1))
print("single level:", single.e1.status.value, single.e2.status.value, "inlier:", single.is_inlier)

###############################################################################
# A segment on a flat area has no usable gradient, and the endpoint is
# reported as such instead of being guessed.

flat = frames[0].data.copy()
flat[100:160, 100:200] = 0.5
pyr_flat = build_pyramid(GrayImage(flat))
bad = track_line(pyr_flat, pyr_flat, LineSegment.from_coords(120, 130, 180, 135))
print("flat endpoint:", bad.e1.status.value, "inlier:", bad.is_inlier)
assert bad.e1.status is Status.SINGULAR_GRADIENT
