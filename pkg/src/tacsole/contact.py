"""Contact patch segmentation and moment-based ellipse pose."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .frame_io import DiffImage, TactileFrame

DEFAULT_THRESHOLD = 25
DEFAULT_MIN_AREA = 20
DEGENERATE_EPS = 1e-6  # relative to (mu20 + mu02)^2

_EIGHT = np.ones((3, 3), bool)


@dataclass(frozen=True)
class ContactMask:
    labels: np.ndarray  # int32, 0 background, components 1..n
    n_components: int

    @property
    def binary(self) -> np.ndarray:
        return self.labels > 0

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class ContactPose:
    centroid: tuple[float, float]  # (row, col)
    orientation_deg: float  # [0, 180), measured from +col toward +row
    major: float
    minor: float
    area: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (exclusive)
    degenerate: bool = False


def label_mask(binary: np.ndarray, min_area: int = 0) -> ContactMask:
    """8-connected labelling; components smaller than ``min_area`` are dropped and the rest renumbered."""
    labels, n = ndimage.label(np.asarray(binary, bool), structure=_EIGHT)
    if n and min_area > 0:
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        keep = areas >= min_area
        keep[0] = False
        remap = np.zeros(n + 1, np.int32)
        remap[keep] = np.arange(1, keep.sum() + 1)
        labels = remap[labels]
        n = int(keep.sum())
    return ContactMask(labels.astype(np.int32), int(n))


def segment_contact(diff: DiffImage, threshold: int = DEFAULT_THRESHOLD,
                    min_area: int = DEFAULT_MIN_AREA) -> ContactMask:
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in [0, 255]")
    return label_mask(diff.values >= threshold, min_area)


def moments_pose(rows: np.ndarray, cols: np.ndarray) -> tuple:
    """Centroid, orientation, axes and degeneracy from pixel coordinates."""
    n = rows.size
    r0 = rows.mean()
    c0 = cols.mean()
    dr = rows - r0
    dc = cols - c0
    # normalised central moments; x = col, y = row
    mu20 = (dc * dc).sum() / n
    mu02 = (dr * dr).sum() / n
    mu11 = (dc * dr).sum() / n
    aniso = (mu20 - mu02) ** 2 + 4 * mu11 ** 2
    degenerate = aniso < DEGENERATE_EPS * (mu20 + mu02) ** 2 or n == 1
    theta = 0.5 * math.degrees(math.atan2(2 * mu11, mu20 - mu02)) % 180.0
    if theta >= 180.0:
        theta = 0.0
    root = math.sqrt(aniso)
    lam1 = 0.5 * (mu20 + mu02 + root)
    lam2 = max(0.5 * (mu20 + mu02 - root), 0.0)
    # a filled ellipse has variance (axis/4)^2 along each axis; 1/12 floor keeps 1 px strips > 0
    major = 4 * math.sqrt(lam1 + 1 / 12)
    minor = 4 * math.sqrt(lam2 + 1 / 12)
    return (float(r0), float(c0)), float(theta), major, minor, bool(degenerate)


def estimate_pose(mask: ContactMask) -> list[ContactPose]:
    """One pose per component, largest area first (ties by label)."""
    if mask.n_components == 0:
        return []
    out = []
    for lab, sl in enumerate(ndimage.find_objects(mask.labels), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(mask.labels[sl] == lab)
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        centroid, theta, major, minor, deg = moments_pose(rr.astype(np.float64), cc.astype(np.float64))
        bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        out.append((-rr.size, lab, ContactPose(centroid, theta, major, minor, int(rr.size), bbox, deg)))
    out.sort(key=lambda t: (t[0], t[1]))
    return [p for _, _, p in out]


def poses_to_csv(poses: list[ContactPose], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "centroid_row", "centroid_col", "orientation_deg", "major", "minor", "area"])
        for i, p in enumerate(poses, start=1):
            w.writerow([i, f"{p.centroid[0]:.4f}", f"{p.centroid[1]:.4f}", f"{p.orientation_deg:.4f}",
                        f"{p.major:.4f}", f"{p.minor:.4f}", p.area])


def render_pose_overlay(frame: TactileFrame, poses: list[ContactPose]) -> np.ndarray:
    """Ellipse outline in yellow with the major axis in red."""
    img = frame.pixels.copy()
    h, w = img.shape[:2]
    t = np.linspace(0, 2 * np.pi, 180, endpoint=False)
    for p in poses:
        r0, c0 = p.centroid
        a = math.radians(p.orientation_deg)
        ca, sa = math.cos(a), math.sin(a)
        ex = 0.5 * p.major * np.cos(t)
        ey = 0.5 * p.minor * np.sin(t)
        cols = np.rint(c0 + ex * ca - ey * sa).astype(int)
        rows = np.rint(r0 + ex * sa + ey * ca).astype(int)
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        img[rows[ok], cols[ok]] = (255, 255, 0)
        s = np.linspace(-0.5 * p.major, 0.5 * p.major, max(int(p.major) + 1, 2))
        cols = np.rint(c0 + s * ca).astype(int)
        rows = np.rint(r0 + s * sa).astype(int)
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        img[rows[ok], cols[ok]] = (255, 0, 0)
    return img
