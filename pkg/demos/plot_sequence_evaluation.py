"""
Tracking a sequence and scoring it
==================================

A synthetic sequence is written to disk in the same layout a real one would
use: frames as PGM, one ``.lines.jsonl`` detection file per frame and a
manifest.  The pipeline reads detections only when too few tracks survive.
"""

import tempfile
from pathlib import Path

from tet.evaluation import EvalReport, inliers_vs_homography, inliers_vs_truth
from tet.pipeline import FrameSource, read_correspondences, run_sequence
from tet.synth import SceneSpec, write_sequence

root = Path(tempfile.mkdtemp())
spec = SceneSpec(n_lines=40, motion=(6, 4), n_frames=20, seed=0)
_, truth, _ = write_sequence(spec, root / "seq")
print(sorted(p.name for p in (root / "seq").iterdir()))

###############################################################################
# Run the tracker.  ``summary`` holds the per-frame timing and counts.

source = FrameSource.from_manifest(root / "seq" / "manifest.txt")
summary = run_sequence(source, root / "seq" / "detections", out=root / "out", overlay=True)
print("mean ms/frame %.2f" % summary["mean_ms"])
print("mean inliers/frame %.1f" % summary["mean_inliers"])
print("detection files read on frames", summary["detection_frames"])

###############################################################################
# Score against the known truth, then with homography RANSAC as one would on
# real footage where no truth exists.

recs = read_correspondences(root / "out" / "correspondences.csv")
timing = {p["frame"]: p["ms"] for p in summary["per_frame"]}
print(EvalReport(inliers_vs_truth(recs, truth, tol=0.5, timing=timing)).table())
print(EvalReport(inliers_vs_homography(recs, timing=timing)).table())

###############################################################################
# Overlays (inliers green, outliers red) are written next to the CSV.

print(sorted(p.name for p in (root / "out" / "overlays").iterdir())[:3], "...")
