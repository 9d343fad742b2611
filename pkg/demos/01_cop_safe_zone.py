"""
Centre of pressure on the textured platform
===========================================

Render a foot press at a few CoP offsets, estimate the CoP from the
thresholded frame and classify it against the safe zone.
"""
from pathlib import Path

import numpy as np

from tacsole.cop import cop_from_frame, render_cop_overlay
from tacsole.pnm import write_pnm
from tacsole.synth import render_press

out = Path("demo_out/cop")
out.mkdir(parents=True, exist_ok=True)

# offsets are fractions of half the ROI height; positive is toward the toe
for offset in np.linspace(-0.5, 0.5, 5):
    frame, truth = render_press(offset, seed=0)
    est = cop_from_frame(frame)
    print(f"true {offset:+.2f}  measured {est.offset_fraction:+.3f}  "
          f"{truth.extra['n_contacts']:3d} dents  {est.status}")
    write_pnm(out / f"press_{offset:+.2f}.ppm", render_cop_overlay(frame, est))

# the boundary is inclusive: exactly 25% still counts as safe
from tacsole.cop import classify_safety
print([classify_safety(f) for f in (0.0, 0.25, 0.30)])
