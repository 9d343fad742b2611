"""Synthetic tactile images with exact ground truth.

Depth is an indentation height in mm (positive into the pad). Surface
gradients are unitless slopes ``dz/dx`` (x along columns) and ``dz/dy``
(y along rows). Shading is Lambertian under four coloured lights placed on
the four sides of the pad; colour therefore encodes gradient direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import SceneError
from .frame_io import SensorGeometry, TactileFrame

MARKER_ROWS = 14
MARKER_COLS = 9
N_MARKERS = MARKER_ROWS * MARKER_COLS
TERRAIN_CLASSES = ("blank", "rock", "spike", "tile")

CALIBRATION_PITCH_MM = 0.5
SPHERE_RADIUS_MM = 2.0  # 4 mm diameter calibration ball


# --------------------------------------------------------------------------- shading


@dataclass(frozen=True)
class ShadingModel:
    """Four directional lights (red, green, blue, white) plus ambient.

    ``darkening`` scales intensity by ``1 - darkening * depth_mm``; it is zero
    for calibration scenes so colour depends on the surface normal only.
    """

    elevation_deg: float = 40.0
    # (azimuth_deg, rgb intensity); azimuth 0 points along +x (columns)
    lights: tuple = (
        (0.0, (150.0, 0.0, 0.0)),
        (180.0, (0.0, 150.0, 0.0)),
        (90.0, (0.0, 0.0, 150.0)),
        (270.0, (45.0, 45.0, 45.0)),
    )
    albedo: float = 1.0
    ambient: tuple = (30.0, 30.0, 30.0)
    darkening: float = 0.0

    def directions(self) -> np.ndarray:
        el = math.radians(self.elevation_deg)
        d = []
        for az, _ in self.lights:
            a = math.radians(az)
            d.append((math.cos(el) * math.cos(a), math.cos(el) * math.sin(a), math.sin(el)))
        return np.array(d)

    def intensities(self) -> np.ndarray:
        return np.array([rgb for _, rgb in self.lights], dtype=np.float64)

    def shade(self, gx: np.ndarray, gy: np.ndarray, depth: np.ndarray | None = None) -> np.ndarray:
        """Float RGB radiance for a gradient field (no noise, no clamping)."""
        norm = np.sqrt(1.0 + gx * gx + gy * gy)
        # normal of the pressed surface h = -z is (dz/dx, dz/dy, 1)
        n = np.stack([gx / norm, gy / norm, 1.0 / norm], axis=-1)
        lam = np.clip(n @ self.directions().T, 0.0, None)  # (H, W, 4)
        rgb = np.asarray(self.ambient) + self.albedo * (lam @ self.intensities())
        if self.darkening and depth is not None:
            rgb = rgb * np.clip(1.0 - self.darkening * depth, 0.0, 1.0)[..., None]
        return rgb


PRESS_SHADING = ShadingModel(
    lights=(
        (0.0, (90.0, 0.0, 0.0)),
        (180.0, (0.0, 90.0, 0.0)),
        (90.0, (0.0, 0.0, 90.0)),
        (270.0, (190.0, 190.0, 190.0)),
    ),
    ambient=(45.0, 45.0, 45.0),
    darkening=0.9,
)
TERRAIN_SHADING = ShadingModel(darkening=0.35)


def quantize(rgb: np.ndarray, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    if noise_sigma > 0:
        rgb = rgb + np.random.default_rng(seed).normal(0.0, noise_sigma, rgb.shape)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def reference_image(shape: tuple[int, int], shading: ShadingModel = ShadingModel()) -> np.ndarray:
    """The flat, no-contact rendering (uint8, noise-free)."""
    z = np.zeros(shape)
    return quantize(shading.shade(z, z, z))


# --------------------------------------------------------------------------- primitives


def _shoulder(inside_mm: np.ndarray, depth: float, width: float) -> np.ndarray:
    """Depth profile rising linearly over ``width`` mm from a footprint edge."""
    return depth * np.clip(inside_mm / width, 0.0, 1.0) * (inside_mm > 0)


@dataclass(frozen=True)
class Sphere:
    center_mm: tuple[float, float]  # (x, y)
    radius_mm: float = SPHERE_RADIUS_MM
    depth_mm: float = 1.0

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise SceneError("sphere radius must be positive")
        if not 0 <= self.depth_mm <= self.radius_mm:
            raise SceneError("sphere depth must lie in [0, radius]")

    @property
    def contact_radius_mm(self) -> float:
        r, d = self.radius_mm, self.depth_mm
        return math.sqrt(max(r * r - (r - d) ** 2, 0.0))

    def extent(self):
        a = self.contact_radius_mm
        x, y = self.center_mm
        return x - a, x + a, y - a, y + a

    def evaluate(self, x, y):
        r, d = self.radius_mm, self.depth_mm
        dx, dy = x - self.center_mm[0], y - self.center_mm[1]
        rho2 = dx * dx + dy * dy
        inside = rho2 < self.contact_radius_mm ** 2
        root = np.sqrt(np.clip(r * r - rho2, 1e-12, None))
        z = np.where(inside, root - (r - d), 0.0)
        gx = np.where(inside, -dx / root, 0.0)
        gy = np.where(inside, -dy / root, 0.0)
        return np.clip(z, 0.0, None), gx, gy


@dataclass(frozen=True)
class EdgeIndenter:
    """A straight or curved edge pressed into the pad.

    ``profile`` selects the cross-section: ``"v"`` (box or cube edge, linear
    flanks), ``"round"`` (prism edge, parabolic), and ``curvature_mm`` bends
    the edge into an arc (circular edge of a cylinder).
    """

    center_mm: tuple[float, float]
    length_mm: float
    angle_deg: float = 0.0
    depth_mm: float = 0.5
    half_width_mm: float = 1.5
    profile: str = "v"
    curvature_mm: float | None = None

    def extent(self):
        h = 0.5 * self.length_mm + self.half_width_mm
        x, y = self.center_mm
        return x - h, x + h, y - h, y + h

    def evaluate(self, x, y):
        a = math.radians(self.angle_deg)
        dx, dy = x - self.center_mm[0], y - self.center_mm[1]
        u = dx * math.cos(a) + dy * math.sin(a)
        v = -dx * math.sin(a) + dy * math.cos(a)
        if self.curvature_mm:
            rad = self.curvature_mm
            # arc centred at v = rad; distance across the edge is radial
            arc_u = rad * np.arctan2(u, rad - v)  # arc length coordinate
            v = rad - np.hypot(u, v - rad)
            u = arc_u
        w = self.half_width_mm
        across = np.clip(1.0 - np.abs(v) / w, 0.0, None)
        along = np.clip((0.5 * self.length_mm - np.abs(u)) / w, 0.0, 1.0)
        shape = across if self.profile == "v" else across * (2.0 - across)
        z = self.depth_mm * shape * along
        return z, None, None


@dataclass(frozen=True)
class ScrewHead:
    """Domed cap with a straight slot."""

    center_mm: tuple[float, float]
    radius_mm: float = 4.0
    depth_mm: float = 0.6
    slot_angle_deg: float = 0.0
    slot_width_mm: float = 1.0

    def extent(self):
        x, y = self.center_mm
        r = self.radius_mm
        return x - r, x + r, y - r, y + r

    def evaluate(self, x, y):
        dx, dy = x - self.center_mm[0], y - self.center_mm[1]
        rho2 = (dx * dx + dy * dy) / self.radius_mm ** 2
        z = self.depth_mm * np.clip(1.0 - rho2, 0.0, None)
        a = math.radians(self.slot_angle_deg)
        across = np.abs(-dx * math.sin(a) + dy * math.cos(a))
        z = np.where(across < 0.5 * self.slot_width_mm, 0.3 * z, z)
        return z, None, None


@dataclass(frozen=True)
class Stamp:
    """Flat-topped footprint (square, disk or superellipse) with a soft shoulder."""

    center_mm: tuple[float, float]
    half_size_mm: tuple[float, float]  # semi-axes along the rotated u, v
    depth_mm: float = 0.5
    angle_deg: float = 0.0
    exponent: float = 2.0  # 2: ellipse, large: rectangle
    shoulder_mm: float = 0.6

    def extent(self):
        h = max(self.half_size_mm)
        x, y = self.center_mm
        return x - h, x + h, y - h, y + h

    def evaluate(self, x, y):
        a = math.radians(self.angle_deg)
        dx, dy = x - self.center_mm[0], y - self.center_mm[1]
        u = (dx * math.cos(a) + dy * math.sin(a)) / self.half_size_mm[0]
        v = (-dx * math.sin(a) + dy * math.cos(a)) / self.half_size_mm[1]
        p = self.exponent
        if p >= 50:
            radius = np.maximum(np.abs(u), np.abs(v))
        else:
            radius = (np.abs(u) ** p + np.abs(v) ** p) ** (1.0 / p)
        inside_mm = (1.0 - radius) * min(self.half_size_mm)
        return _shoulder(inside_mm, self.depth_mm, self.shoulder_mm), None, None


# --------------------------------------------------------------------------- scenes


@dataclass(frozen=True)
class IndenterScene:
    indenters: Sequence = ()
    pixel_pitch_mm: float | tuple[float, float] = CALIBRATION_PITCH_MM  # scalar or (row, col)
    shape: tuple[int, int] = (143, 114)
    noise_sigma: float = 0.0
    seed: int = 0
    blur_px: float = 0.0

    @property
    def pitch(self) -> tuple[float, float]:
        p = self.pixel_pitch_mm
        return (float(p), float(p)) if np.isscalar(p) else (float(p[0]), float(p[1]))


@dataclass
class GroundTruth:
    depth: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    contact_mask: np.ndarray
    pose: object | None = None
    terrain_label: str | None = None
    shading_gx: np.ndarray | None = field(default=None, repr=False)
    shading_gy: np.ndarray | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)


def central_gradients(depth: np.ndarray, pitch: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference slopes (one-sided on the border), unitless."""
    gy, gx = np.gradient(depth, pitch[0], pitch[1])
    return gx, gy


def _coords(shape, pitch):
    rows, cols = np.indices(shape, dtype=np.float64)
    return cols * pitch[1], rows * pitch[0]


def render_depth(scene: IndenterScene):
    """Analytic depth of the union of indenters (deepest wins) and shading slopes."""
    h, w = scene.shape
    pitch = scene.pitch
    if min(pitch) <= 0:
        raise SceneError("pixel pitch must be positive")
    x, y = _coords(scene.shape, pitch)
    xmax, ymax = (w - 1) * pitch[1], (h - 1) * pitch[0]
    depth = np.zeros(scene.shape)
    sgx = np.zeros(scene.shape)
    sgy = np.zeros(scene.shape)
    analytic = True
    for ind in scene.indenters:
        x0, x1, y0, y1 = ind.extent()
        if x0 < 0 or y0 < 0 or x1 > xmax or y1 > ymax:
            raise SceneError(f"{type(ind).__name__} at {ind.center_mm} leaves the ROI")
        # primitives vanish outside their extent, so evaluate on that window only
        win = (slice(max(int(math.floor(y0 / pitch[0])), 0), int(math.ceil(y1 / pitch[0])) + 1),
               slice(max(int(math.floor(x0 / pitch[1])), 0), int(math.ceil(x1 / pitch[1])) + 1))
        z, gx, gy = ind.evaluate(x[win], y[win])
        deeper = z > depth[win]
        depth[win] = np.where(deeper, z, depth[win])
        if gx is None:
            analytic = False
        else:
            sgx[win] = np.where(deeper, gx, sgx[win])
            sgy[win] = np.where(deeper, gy, sgy[win])
    if scene.blur_px > 0:
        depth = ndimage.gaussian_filter(depth, scene.blur_px, mode="constant")
        depth[depth < 1e-6] = 0.0
        analytic = False
    if not analytic:
        sgx, sgy = central_gradients(depth, pitch)
    return depth, sgx, sgy


def render_indentation(scene: IndenterScene, shading: ShadingModel = ShadingModel()):
    """Render ``scene``; returns ``(TactileFrame, GroundTruth)``."""
    if scene.noise_sigma < 0:
        raise SceneError("noise_sigma must be non-negative")
    depth, sgx, sgy = render_depth(scene)
    gx, gy = central_gradients(depth, scene.pitch)
    rgb = shading.shade(sgx, sgy, depth)
    pixels = quantize(rgb, scene.noise_sigma, scene.seed)
    truth = GroundTruth(depth, gx, gy, depth > 0, shading_gx=sgx, shading_gy=sgy)
    return TactileFrame(pixels), truth


# --------------------------------------------------------------------------- markers


@dataclass
class MarkerTruth:
    vectors: np.ndarray  # (126, 2) as (dx, dy) px
    occluded: np.ndarray  # (126,) bool
    nominal: np.ndarray  # (126, 2) as (x, y) px


def nominal_grid(shape: tuple[int, int] = (143, 114)) -> np.ndarray:
    """Rest marker centres as (x, y) px, row-major over 14 rows x 9 columns."""
    h, w = shape
    cx = (np.arange(MARKER_COLS) + 0.5) * w / MARKER_COLS - 0.5
    cy = (np.arange(MARKER_ROWS) + 0.5) * h / MARKER_ROWS - 0.5
    gx, gy = np.meshgrid(cx, cy)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def occlusion_count(dropout: float, n: int = N_MARKERS) -> int:
    """Number of occluded markers: ``dropout * n`` rounded half up."""
    return int(math.floor(dropout * n + 0.5))


MARKER_RADIUS_PX = 2.0
MARKER_FAINT_ALPHA = 0.15


def render_marker_grid(
    displacements,
    dropout: float = 0.0,
    seed: int = 0,
    shape: tuple[int, int] = (143, 114),
    noise_sigma: float = 0.0,
    shading: ShadingModel = ShadingModel(),
    marker_level: float = 25.0,
    supersample: int = 4,
):
    """Dark disks at nominal grid positions plus ``displacements`` (dx, dy px)."""
    disp = np.asarray(displacements, dtype=np.float64)
    if disp.shape != (N_MARKERS, 2):
        raise SceneError(f"need {N_MARKERS} displacement vectors, got shape {disp.shape}")
    if not 0 <= dropout < 1:
        raise SceneError("dropout must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    occluded = np.zeros(N_MARKERS, bool)
    occluded[rng.choice(N_MARKERS, occlusion_count(dropout), replace=False)] = True
    nominal = nominal_grid(shape)
    centres = nominal + disp
    h, w = shape
    z = np.zeros(shape)
    rgb = shading.shade(z, z)
    cover = np.zeros(shape)
    alpha = np.where(occluded, MARKER_FAINT_ALPHA, 1.0)
    r = MARKER_RADIUS_PX
    ss = supersample
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    for (cx, cy), a in zip(centres, alpha):
        c0, c1 = int(math.floor(cx - r - 1)), int(math.ceil(cx + r + 1))
        r0, r1 = int(math.floor(cy - r - 1)), int(math.ceil(cy + r + 1))
        c0, r0 = max(c0, 0), max(r0, 0)
        c1, r1 = min(c1, w - 1), min(r1, h - 1)
        if c0 > c1 or r0 > r1:
            continue
        pr, pc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        sy = pr[..., None, None] + sub[:, None] - cy
        sx = pc[..., None, None] + sub[None, :] - cx
        frac = ((sx * sx + sy * sy) <= r * r).mean(axis=(-1, -2))
        cover[r0 : r1 + 1, c0 : c1 + 1] = np.maximum(cover[r0 : r1 + 1, c0 : c1 + 1], a * frac)
    rgb = rgb * (1 - cover[..., None]) + marker_level * cover[..., None]
    frame = TactileFrame(quantize(rgb, noise_sigma, seed + 1))
    return frame, MarkerTruth(disp.copy(), occluded, nominal)


# --------------------------------------------------------------------------- terrain


def _lattice(extent_mm: float, pitch_mm: float, rng, jitter: bool = True) -> np.ndarray:
    """``floor(extent / pitch)`` centres on a pitch lattice with a seeded phase."""
    n = int(math.floor(extent_mm / pitch_mm))
    slack = extent_mm - n * pitch_mm
    phase = rng.uniform(-0.5, 0.5) * slack if jitter else 0.0
    return 0.5 * slack + phase + (np.arange(n) + 0.5) * pitch_mm


TILE_SIZE_MM = 12.0
TILE_PITCH_MM = 25.0
SPIKE_DIAMETER_MM = 2.5
SPIKE_PITCH_MM = 12.5
ROCK_SPACING_MM = (20.0, 40.0)
FABRIC_BLUR_PX = 0.8


def terrain_indenters(cls: str, geom: SensorGeometry, rng) -> list:
    width_mm, length_mm = geom.pad_width_mm, geom.pad_length_mm
    # usable extent: pixel-centre coordinates span (n-1) * pitch
    ext_x = (geom.roi_width - 1) * geom.mm_per_px_col
    ext_y = (geom.roi_height - 1) * geom.mm_per_px_row
    if cls == "blank":
        return []
    if cls == "tile":
        out = []
        for cy in _lattice(ext_y, TILE_PITCH_MM, rng):
            for cx in _lattice(ext_x, TILE_PITCH_MM, rng):
                out.append(Stamp((cx, cy), (TILE_SIZE_MM / 2,) * 2, rng.uniform(0.45, 0.6),
                                 exponent=100.0, shoulder_mm=0.8))
        return out
    if cls == "spike":
        # spike centres counted on the full pad so floor(58/12.5) x floor(90/12.5) fit
        out = []
        xs = _lattice(width_mm, SPIKE_PITCH_MM, rng) * ext_x / width_mm
        ys = _lattice(length_mm, SPIKE_PITCH_MM, rng) * ext_y / length_mm
        for cy in ys:
            for cx in xs:
                out.append(Stamp((cx, cy), (SPIKE_DIAMETER_MM / 2,) * 2, rng.uniform(0.7, 0.9),
                                 shoulder_mm=0.5))
        return out
    if cls == "rock":
        return _rocks(ext_x, ext_y, rng)
    raise SceneError(f"unknown terrain class {cls!r}; expected one of {TERRAIN_CLASSES}")


def _rocks(ext_x: float, ext_y: float, rng) -> list:
    """Irregular rounded dents; each new rock sits 20-40 mm from its nearest neighbour."""
    lo, hi = ROCK_SPACING_MM
    margin = 7.5
    centres: list[np.ndarray] = []
    attempts = 0
    while attempts < 400:
        attempts += 1
        if not centres:
            c = np.array([rng.uniform(margin, ext_x - margin), rng.uniform(margin, ext_y - margin)])
        else:
            base = centres[rng.integers(len(centres))]
            s = rng.uniform(lo, hi)
            a = rng.uniform(0, 2 * math.pi)
            c = base + s * np.array([math.cos(a), math.sin(a)])
            if not (margin <= c[0] <= ext_x - margin and margin <= c[1] <= ext_y - margin):
                continue
            if min(np.hypot(*(c - o)) for o in centres) < lo:
                continue
        centres.append(c)
    out = []
    for c in centres:
        ecc = rng.uniform(1.0, 2.0)
        major = rng.uniform(6.0, 7.0)
        out.append(Stamp((float(c[0]), float(c[1])), (major, major / ecc), rng.uniform(0.3, 1.0),
                         angle_deg=rng.uniform(0, 180), exponent=rng.uniform(1.6, 2.6),
                         shoulder_mm=1.5))
    return out


def render_terrain(
    cls: str,
    fabric_blur: bool = False,
    seed: int = 0,
    geom: SensorGeometry = SensorGeometry(),
    noise_sigma: float = 1.0,
    shading: ShadingModel = TERRAIN_SHADING,
):
    """Imprint of one terrain class at the sensor's own pixel pitch."""
    if cls not in TERRAIN_CLASSES:
        raise SceneError(f"unknown terrain class {cls!r}; expected one of {TERRAIN_CLASSES}")
    rng = np.random.default_rng(seed)
    inds = terrain_indenters(cls, geom, rng)
    scene = IndenterScene(
        inds,
        pixel_pitch_mm=(geom.mm_per_px_row, geom.mm_per_px_col),
        shape=geom.shape,
        noise_sigma=noise_sigma,
        seed=seed,
        blur_px=FABRIC_BLUR_PX if fabric_blur else 0.0,
    )
    frame, truth = render_indentation(scene, shading)
    truth.terrain_label = cls
    truth.extra["centres_mm"] = np.array([i.center_mm for i in inds]).reshape(-1, 2)
    return frame, truth


def terrain_reference(geom: SensorGeometry = SensorGeometry(),
                      shading: ShadingModel = TERRAIN_SHADING) -> TactileFrame:
    return TactileFrame(reference_image(geom.shape, shading))


# --------------------------------------------------------------------------- textured press


TEXTURE_PITCH_MM = 6.0
TEXTURE_RADIUS_MM = 1.4
PRESS_DEPTH_MM = 0.9


def press_layout(geom: SensorGeometry = SensorGeometry()) -> np.ndarray:
    """Texture cylinder centres (x_mm, y_mm) on a regular lattice."""
    ext_x = (geom.roi_width - 1) * geom.mm_per_px_col
    ext_y = (geom.roi_height - 1) * geom.mm_per_px_row
    rng = np.random.default_rng(0)
    xs = _lattice(ext_x, TEXTURE_PITCH_MM, rng, jitter=False)
    ys = _lattice(ext_y, TEXTURE_PITCH_MM, rng, jitter=False)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def press_profile(offset_fraction: float, geom: SensorGeometry, rows_mm: np.ndarray) -> np.ndarray:
    """Triangular pressure along the front-back axis centred on the requested CoP."""
    h = geom.roi_height
    sign = 1.0 if geom.front_row == "bottom" else -1.0
    f = float(np.clip(offset_fraction, -1.0, 1.0))
    centre_px = (h - 1) / 2 + sign * f * (h / 2)
    centre_px = float(np.clip(centre_px, 0, h - 1))
    half_px = max(min(centre_px, h - 1 - centre_px, h / 2), 1.5 * TEXTURE_PITCH_MM / geom.mm_per_px_row)
    rows_px = rows_mm / geom.mm_per_px_row
    return np.clip(1.0 - np.abs(rows_px - centre_px) / half_px, 0.0, 1.0)


def render_press(
    offset_fraction: float,
    geom: SensorGeometry = SensorGeometry(),
    seed: int = 0,
    noise_sigma: float = 1.0,
    shading: ShadingModel = PRESS_SHADING,
):
    """Foot pressed onto the cylinder-textured platform with its CoP at ``offset_fraction``.

    Cylinders under positive pressure leave a dark dent whose area grows with the
    local pressure. ``truth.extra['n_contacts']`` counts the dents.
    """
    centres = press_layout(geom)
    p = press_profile(offset_fraction, geom, centres[:, 1])
    inds = []
    min_frac = 0.3
    for (cx, cy), pi in zip(centres, p):
        if pi <= 0:
            continue
        r = TEXTURE_RADIUS_MM * math.sqrt(min_frac + (1 - min_frac) * pi)
        inds.append(Stamp((cx, cy), (r, r), PRESS_DEPTH_MM, shoulder_mm=0.3))
    scene = IndenterScene(
        inds,
        pixel_pitch_mm=(geom.mm_per_px_row, geom.mm_per_px_col),
        shape=geom.shape,
        noise_sigma=noise_sigma,
        seed=seed,
    )
    frame, truth = render_indentation(scene, shading)
    truth.extra["n_contacts"] = len(inds)
    truth.extra["centres_mm"] = np.array([i.center_mm for i in inds]).reshape(-1, 2)
    return frame, truth


def press_reference(geom: SensorGeometry = SensorGeometry(),
                    shading: ShadingModel = PRESS_SHADING) -> TactileFrame:
    return TactileFrame(reference_image(geom.shape, shading))


# --------------------------------------------------------------------------- calibration


@dataclass(frozen=True)
class SphereAnnotation:
    center_px: tuple[float, float]  # (x, y)
    diameter_px: float
    radius_mm: float = SPHERE_RADIUS_MM
    pitch_mm: float = CALIBRATION_PITCH_MM


def render_calibration_images(
    n_images: int,
    seed: int = 0,
    shape: tuple[int, int] = (143, 114),
    pitch_mm: float = CALIBRATION_PITCH_MM,
    depth_range: tuple[float, float] = (0.3, 1.0),
    noise_sigma: float = 0.5,
    flicker_fraction: float = 0.0,
    shading: ShadingModel = ShadingModel(),
):
    """Sphere calibration presses at random positions and depths.

    A ``flicker_fraction`` of images gets a global lighting gain error and heavy
    noise, emulating the inconsistent-lighting captures a real set contains.
    Yields ``(frame, annotation)``.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    for i in range(n_images):
        d = rng.uniform(*depth_range)
        a = math.sqrt(2 * SPHERE_RADIUS_MM * d - d * d)
        margin = a + 2 * pitch_mm
        cx = rng.uniform(margin, (w - 1) * pitch_mm - margin)
        cy = rng.uniform(margin, (h - 1) * pitch_mm - margin)
        flicker = rng.random() < flicker_fraction
        img_seed = int(rng.integers(2**31))
        scene = IndenterScene([Sphere((cx, cy), SPHERE_RADIUS_MM, d)], pitch_mm, shape,
                              noise_sigma=12.0 if flicker else noise_sigma, seed=img_seed)
        sh = shading
        if flicker:
            g = rng.uniform(0.6, 0.8)
            sh = ShadingModel(shading.elevation_deg,
                              tuple((az, tuple(g * c for c in rgb)) for az, rgb in shading.lights),
                              shading.albedo, shading.ambient, shading.darkening)
        frame, _ = render_indentation(scene, sh)
        yield frame, SphereAnnotation((cx / pitch_mm, cy / pitch_mm), 2 * a / pitch_mm,
                                      SPHERE_RADIUS_MM, pitch_mm)
