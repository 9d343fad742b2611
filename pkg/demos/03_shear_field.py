"""
Marker tracking and shear
=========================

Detect the 9 x 14 marker grid at rest, shift it, hide some markers and
fill them back in by inverse-distance weighting.
"""
import numpy as np

from tacsole.shear import detect_markers, interpolate_missing, render_shear_overlay, track_displacements
from tacsole.pnm import write_pnm
from tacsole.synth import N_MARKERS, nominal_grid, render_marker_grid

rest = detect_markers(render_marker_grid(np.zeros((N_MARKERS, 2)))[0])
print(f"{rest.n_matched} markers at rest")

# a gentle linear stretch along x
nom = nominal_grid()
field = np.column_stack([0.03 * (nom[:, 0] - 56.5), np.zeros(N_MARKERS)])
frame, truth = render_marker_grid(field, dropout=0.1, seed=1)

f = track_displacements(rest, detect_markers(frame))
print(f"detected {f.detected.sum()} of {N_MARKERS}")
f = interpolate_missing(f)
err = np.hypot(*(f.vectors - field).T)
print(f"max error {err.max():.3f} px, interpolated at {np.flatnonzero(truth.occluded)}")

write_pnm("demo_shear.ppm", render_shear_overlay(frame, f))
f.to_csv("demo_shear.csv")
