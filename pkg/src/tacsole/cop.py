"""Centre-of-pressure proxy from textured-floor contact images and the safe-zone rule.

Thresholding follows the inverted-binary convention: with a band of
[200, 255], a pixel is foreground iff its grayscale value is <= 200, i.e.
everything the band would turn white is zeroed. On the press images the
elastomer background sits above the band's lower edge and the dents left by
the floor cylinders fall below it, so the dents are the foreground.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .contact import ContactMask, label_mask
from .errors import GeometryError
from .frame_io import SensorGeometry, TactileFrame, to_gray

SAFE = "safe"
UNSAFE = "unsafe"
NO_CONTACT = "no_contact"

BAND = (200, 255)
SAFE_FRACTION = 0.25

BLUE = (0, 0, 255)
GREEN = (0, 255, 0)
RED_LINE = (255, 0, 0)


@dataclass(frozen=True)
class CoPEstimate:
    cop_row: float
    cop_col: float
    n_pixels: int
    offset_fraction: float
    status: str
    timestamp: float = 0.0
    frame_index: int = 0


def threshold_pressure(frame: TactileFrame | np.ndarray, band: tuple[int, int] = BAND,
                       min_area: int = 0) -> ContactMask:
    """Inverted binary threshold: foreground iff gray <= band[0]."""
    px = frame.pixels if isinstance(frame, TactileFrame) else np.asarray(frame)
    gray = to_gray(px) if px.ndim == 3 else px
    return label_mask(gray <= band[0], min_area)


def classify_safety(offset_fraction: float, n_pixels: int = 1,
                    safe_fraction: float = SAFE_FRACTION) -> str:
    if n_pixels == 0:
        return NO_CONTACT
    return SAFE if abs(offset_fraction) <= safe_fraction else UNSAFE


def _offset(cop_row: float, geom: SensorGeometry) -> float:
    h = geom.roi_height
    sign = 1.0 if geom.front_row == "bottom" else -1.0
    return sign * (cop_row - (h - 1) / 2) / (h / 2)


def estimate_cop(mask: ContactMask | np.ndarray, geom: SensorGeometry = SensorGeometry(),
                 safe_fraction: float = SAFE_FRACTION, mode: str = "pixel",
                 timestamp: float = 0.0, frame_index: int = 0) -> CoPEstimate:
    """Binary-weighted mean of set pixel rows (and columns).

    ``mode="contour"`` instead averages per-component centroids, which weights
    every blob equally and therefore differs when blob areas differ.
    Positive ``offset_fraction`` points toward the toe.
    """
    binary = mask.binary if isinstance(mask, ContactMask) else np.asarray(mask, bool)
    if binary.shape != geom.shape:
        raise GeometryError(f"mask {binary.shape} does not match ROI {geom.shape}")
    if mode == "pixel":
        rows, cols = np.nonzero(binary)
        n = rows.size
        if n == 0:
            return CoPEstimate(float("nan"), float("nan"), 0, 0.0, NO_CONTACT, timestamp, frame_index)
        cop_row = rows.sum() / n
        cop_col = cols.sum() / n
    elif mode == "contour":
        lab = mask if isinstance(mask, ContactMask) else label_mask(binary)
        n = int(binary.sum())
        if lab.n_components == 0:
            return CoPEstimate(float("nan"), float("nan"), 0, 0.0, NO_CONTACT, timestamp, frame_index)
        cents = np.array(ndimage.center_of_mass(binary, lab.labels, range(1, lab.n_components + 1)))
        cop_row, cop_col = cents.mean(axis=0)
    else:
        raise ValueError(f"unknown CoP mode {mode!r}")
    off = _offset(float(cop_row), geom)
    return CoPEstimate(float(cop_row), float(cop_col), int(n), off,
                       classify_safety(off, n, safe_fraction), timestamp, frame_index)


def cop_from_frame(frame: TactileFrame, geom: SensorGeometry = SensorGeometry(),
                   safe_fraction: float = SAFE_FRACTION, band: tuple[int, int] = BAND,
                   mode: str = "pixel") -> CoPEstimate:
    """Threshold then estimate; the per-frame CoP pipeline."""
    px = frame.pixels
    if px.shape[:2] != geom.shape:
        raise GeometryError(f"frame {px.shape[1]}x{px.shape[0]} does not match ROI "
                            f"{geom.roi_width}x{geom.roi_height}")
    if mode == "pixel":
        mask = to_gray(px) <= band[0]
    else:
        mask = threshold_pressure(frame, band)
    return estimate_cop(mask, geom, safe_fraction, mode, frame.timestamp, frame.frame_index)


def render_cop_overlay(frame: TactileFrame, est: CoPEstimate) -> np.ndarray:
    """Blue line at the geometric centre row, CoP line green when safe and red otherwise."""
    img = frame.pixels.copy()
    h = img.shape[0]
    img[int(round((h - 1) / 2))] = BLUE
    if est.n_pixels > 0:
        r = int(round(est.cop_row))
        if 0 <= r < h:
            img[r] = GREEN if est.status == SAFE else RED_LINE
    return img


TRACE_COLUMNS = ["timestamp", "frame_index", "cop_row", "cop_col", "n_pixels", "offset_fraction", "status"]


def cop_row_fields(e: CoPEstimate) -> list:
    return [f"{e.timestamp:.6f}", e.frame_index, f"{e.cop_row:.6f}", f"{e.cop_col:.6f}",
            e.n_pixels, f"{e.offset_fraction:.6f}", e.status]


def write_trace(estimates: Iterable[CoPEstimate], path: str | Path) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for e in estimates:
            w.writerow(cop_row_fields(e))
            n += 1
    return n
