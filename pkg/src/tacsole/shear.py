"""Marker-grid shear tracking: detect, match to the 9x14 grid, track, fill gaps, draw."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InterpolationError, TrackingError
from .frame_io import TactileFrame, to_gray
from .synth import MARKER_COLS, MARKER_ROWS, N_MARKERS, nominal_grid

DETECTED = "detected"
INTERPOLATED = "interpolated"
MISSING = "missing"

RED = (255, 0, 0)
PINK = (255, 105, 180)

_EIGHT = np.ones((3, 3), bool)


@dataclass
class MarkerSet:
    detections: np.ndarray  # (D, 2) centroids as (x, y) px
    confidence: np.ndarray  # (D,)
    node: np.ndarray  # (D,) matched grid node or -1
    nominal: np.ndarray  # (126, 2)

    @property
    def n_matched(self) -> int:
        return int((self.node >= 0).sum())

    def by_node(self) -> np.ndarray:
        """(126, 2) matched centroids, NaN where no detection was matched."""
        out = np.full((N_MARKERS, 2), np.nan)
        m = self.node >= 0
        out[self.node[m]] = self.detections[m]
        return out


@dataclass
class ShearField:
    vectors: np.ndarray  # (126, 2) dx, dy px; NaN while missing
    provenance: np.ndarray  # (126,) str
    nominal: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        if self.vectors.shape != (N_MARKERS, 2) or self.provenance.shape != (N_MARKERS,):
            raise ValueError("a shear field has exactly 126 entries")

    @property
    def detected(self) -> np.ndarray:
        return self.provenance == DETECTED

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["node_row", "node_col", "dx_px", "dy_px", "provenance"])
            for i in range(N_MARKERS):
                dx, dy = self.vectors[i]
                w.writerow([i // MARKER_COLS, i % MARKER_COLS, f"{dx:.4f}", f"{dy:.4f}", self.provenance[i]])


def grid_pitch(shape: tuple[int, int]) -> tuple[float, float]:
    """(column pitch, row pitch) of the nominal grid in px."""
    return shape[1] / MARKER_COLS, shape[0] / MARKER_ROWS


def match_to_grid(points: np.ndarray, nominal: np.ndarray, capture: float) -> np.ndarray:
    """Greedy nearest-wins assignment; ties go to the lower row, then column."""
    node = np.full(len(points), -1)
    if len(points) == 0:
        return node
    d = np.hypot(points[:, None, 0] - nominal[None, :, 0], points[:, None, 1] - nominal[None, :, 1])
    det_i, node_j = np.nonzero(d <= capture)
    order = np.lexsort((node_j % MARKER_COLS, node_j // MARKER_COLS, d[det_i, node_j]))
    taken = np.zeros(len(nominal), bool)
    for k in order:
        i, j = det_i[k], node_j[k]
        if node[i] < 0 and not taken[j]:
            node[i] = j
            taken[j] = True
    return node


def detect_markers(
    frame: TactileFrame,
    threshold: float | None = None,
    area_band: tuple[int, int] = (4, 80),
    capture_radius: float | None = None,
) -> MarkerSet:
    """Dark-blob centroids matched to the nominal grid.

    ``threshold`` is a darkness level below the median background; by
    default 40% of the background brightness. Centroids are darkness-weighted
    over each blob grown by one pixel, which keeps antialiased rims.
    """
    gray = to_gray(frame.pixels).astype(np.float64)
    shape = gray.shape
    nominal = nominal_grid(shape)
    bg = float(np.median(gray))
    dark = np.clip(bg - gray, 0.0, None)
    thr = 0.4 * bg if threshold is None else threshold
    labels, n = ndimage.label(dark >= thr, structure=_EIGHT)
    pts, conf = [], []
    if n:
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            if not area_band[0] <= areas[lab] <= area_band[1]:
                continue
            r0, r1 = max(sl[0].start - 1, 0), min(sl[0].stop + 1, shape[0])
            c0, c1 = max(sl[1].start - 1, 0), min(sl[1].stop + 1, shape[1])
            blob = ndimage.binary_dilation(labels[r0:r1, c0:c1] == lab, _EIGHT)
            wgt = dark[r0:r1, c0:c1] * blob
            rr, cc = np.mgrid[r0:r1, c0:c1]
            s = wgt.sum()
            pts.append(((wgt * cc).sum() / s, (wgt * rr).sum() / s))
            conf.append(min(1.0, float(dark[r0:r1, c0:c1][blob].max()) / bg))
    pts_a = np.array(pts, dtype=np.float64).reshape(-1, 2)
    if capture_radius is None:
        capture_radius = 0.5 * min(grid_pitch(shape))
    node = match_to_grid(pts_a, nominal, capture_radius)
    return MarkerSet(pts_a, np.array(conf), node, nominal)


def track_displacements(rest: MarkerSet, current: MarkerSet, timestamp: float = 0.0) -> ShearField:
    if rest.n_matched == 0:
        raise TrackingError("rest marker set has no matched detections")
    d = current.by_node() - rest.by_node()
    ok = np.isfinite(d).all(axis=1)
    prov = np.where(ok, DETECTED, MISSING).astype(object)
    d[~ok] = np.nan
    return ShearField(d, prov, rest.nominal.copy(), timestamp)


def interpolate_missing(field: ShearField, k: int = 4, power: float = 2.0) -> ShearField:
    """Fill non-detected nodes by inverse-distance weighting of the k nearest detected nodes."""
    det = field.detected
    if det.sum() < 3:
        raise InterpolationError(f"need at least 3 detected vectors, have {int(det.sum())}")
    vec = field.vectors.copy()
    prov = field.provenance.copy()
    src = field.nominal[det]
    val = field.vectors[det]
    kk = min(k, len(src))
    for i in np.nonzero(~det)[0]:
        d = np.hypot(*(src - field.nominal[i]).T)
        near = np.argsort(d, kind="stable")[:kk]
        w = 1.0 / d[near] ** power
        vec[i] = (w[:, None] * val[near]).sum(axis=0) / w.sum()
        prov[i] = INTERPOLATED
    return ShearField(vec, prov, field.nominal.copy(), field.timestamp)


def _draw_line(img, x0, y0, x1, y1, color):
    n = int(np.ceil(max(abs(x1 - x0), abs(y1 - y0)))) + 1
    xs = np.rint(np.linspace(x0, x1, n)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n)).astype(int)
    ok = (xs >= 0) & (ys >= 0) & (xs < img.shape[1]) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = color


def render_shear_overlay(frame: TactileFrame, field: ShearField, gain: float = 3.0) -> np.ndarray:
    """RGB overlay; arrows start at nominal nodes, red when detected, pink when interpolated."""
    img = frame.pixels.copy()
    for i in range(N_MARKERS):
        if field.provenance[i] == MISSING:
            continue
        color = RED if field.provenance[i] == DETECTED else PINK
        x0, y0 = field.nominal[i]
        dx, dy = field.vectors[i] * gain
        x1, y1 = x0 + dx, y0 + dy
        _draw_line(img, x0, y0, x1, y1, color)
        length = np.hypot(dx, dy)
        if length >= 3:
            ang = np.arctan2(dy, dx)
            head = min(3.0, 0.4 * length)
            for da in (2.6, -2.6):
                _draw_line(img, x1, y1, x1 + head * np.cos(ang + da), y1 + head * np.sin(ang + da), color)
        bx, by = int(round(x0)), int(round(y0))
        if 0 <= bx < img.shape[1] and 0 <= by < img.shape[0]:
            img[by, bx] = color
    return img
