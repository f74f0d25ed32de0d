"""
From a lane mask to fitted lane curves
======================================

Renders a synthetic scene, clusters its label pixels into lane instances
with DBSCAN, fits a cubic to each and writes an overlay image.
"""

import sys
from pathlib import Path

import numpy as np

from laneforge.data import generate_sequence, random_scene, write_image
from laneforge.evaluation import cluster_lanes, render_curves, render_overlay

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

sample = generate_sequence(random_scene(4, "curve"))
frame = sample.frames[-1].transpose(1, 2, 0)
print(f"{len(random_scene(4, 'curve').lanes)} lanes drawn, {int(sample.label.sum())} lane pixels")

lanes = cluster_lanes(sample.label)
for i, lane in enumerate(lanes):
    c = lane.fit
    print(f"lane {i}: {len(lane.pixels)} px, degree {c.degree}, rms {c.rms:.2f} px, x(y) coeffs {np.round(c.coeffs, 4)}")

ids = render_curves(sample.label.shape, lanes)
panel = np.concatenate([render_overlay(frame, sample.label), render_overlay(frame, ids)], axis=1)
write_image(out / "lanes.ppm", panel)
print("wrote", out / "lanes.ppm")
