"""Gradient regression from colour and Poisson integration to depth.

The gradient model is a 5-64-64-64-2 ReLU perceptron implemented directly in
numpy and trained with seeded mini-batch SGD. Integration solves the
discrete Poisson equation with a matrix-free conjugate-gradient loop.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import AnnotationError, DataError, DivergenceError, GeometryError, NumericError
from .frame_io import TactileFrame, diff_reference
from .synth import SphereAnnotation

log = logging.getLogger(__name__)

HIDDEN = (64, 64, 64)
N_IN = 5
N_OUT = 2


@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        if self.gx.shape != self.gy.shape:
            raise GeometryError("gx and gy must have the same shape")

    @property
    def width(self) -> int:
        return self.gx.shape[1]

    @property
    def height(self) -> int:
        return self.gx.shape[0]


@dataclass
class DepthMap:
    z: np.ndarray
    units: str = "px"  # "mm" when a pixel pitch was supplied
    boundary: str = "dirichlet"

    @property
    def width(self) -> int:
        return self.z.shape[1]

    @property
    def height(self) -> int:
        return self.z.shape[0]


# --------------------------------------------------------------------------- calibration data


@dataclass(frozen=True)
class CalibrationConfig:
    train_fraction: float = 0.8
    empty_rate: float = 0.03
    window_margin_px: int = 3
    cull_threshold: float = 3.0  # mean |diff| outside the disk, gray levels
    seed: int = 0


@dataclass
class CalibrationSet:
    features: np.ndarray  # (N, 5) raw r, g, b, x, y
    targets: np.ndarray  # (N, 2) gx, gy
    train: np.ndarray  # (N,) bool
    image_id: np.ndarray  # (N,) int
    annotations: list = field(default_factory=list)
    image_shape: tuple[int, int] = (143, 114)
    culled: list = field(default_factory=list)
    config: CalibrationConfig = CalibrationConfig()

    @property
    def n_train(self) -> int:
        return int(self.train.sum())

    @property
    def n_test(self) -> int:
        return int((~self.train).sum())


def sphere_gradients(ann: SphereAnnotation, cols: np.ndarray, rows: np.ndarray):
    """Analytic slopes of a spherical cap inside the annotated contact disk, zero outside."""
    p = ann.pitch_mm
    dx = (cols - ann.center_px[0]) * p
    dy = (rows - ann.center_px[1]) * p
    rho2 = dx * dx + dy * dy
    a = 0.5 * ann.diameter_px * p
    inside = rho2 < a * a
    root = np.sqrt(np.clip(ann.radius_mm ** 2 - rho2, 1e-12, None))
    return np.where(inside, -dx / root, 0.0), np.where(inside, -dy / root, 0.0)


def _outside_noise(frame: TactileFrame, reference: TactileFrame, ann: SphereAnnotation) -> float:
    d = diff_reference(frame, reference).values.astype(np.float64)
    rows, cols = np.indices(d.shape)
    r = 0.5 * ann.diameter_px + 2
    far = (cols - ann.center_px[0]) ** 2 + (rows - ann.center_px[1]) ** 2 > r * r
    return float(d[far].mean())


def build_calibration_set(
    images: Iterable[tuple[TactileFrame, SphereAnnotation]],
    reference: TactileFrame,
    config: CalibrationConfig = CalibrationConfig(),
) -> CalibrationSet:
    """Pixel samples around each annotated sphere press.

    Images whose background deviates from the reference by more than
    ``config.cull_threshold`` on average are dropped. The survivors are split
    by image into train/test, and ``empty_rate`` of all samples are replaced
    by background pixels with a zero target.
    """
    rng = np.random.default_rng(config.seed)
    ref = reference.pixels.astype(np.float64)
    h, w = reference.height, reference.width
    feats, targs, ids, anns, culled = [], [], [], [], []
    kept = 0
    for k, (frame, ann) in enumerate(images):
        if frame.pixels.shape != reference.pixels.shape:
            raise GeometryError("calibration frame and reference differ in size")
        rad = 0.5 * ann.diameter_px
        cx, cy = ann.center_px
        if cx - rad < 0 or cy - rad < 0 or cx + rad > w - 1 or cy + rad > h - 1:
            raise AnnotationError(f"annotation {k} disk leaves the ROI")
        if _outside_noise(frame, reference, ann) > config.cull_threshold:
            culled.append(k)
            continue
        m = rad + config.window_margin_px
        c0, c1 = max(int(math.floor(cx - m)), 0), min(int(math.ceil(cx + m)), w - 1)
        r0, r1 = max(int(math.floor(cy - m)), 0), min(int(math.ceil(cy + m)), h - 1)
        rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        rows, cols = rows.ravel(), cols.ravel()
        gx, gy = sphere_gradients(ann, cols.astype(float), rows.astype(float))
        px = frame.pixels[rows, cols].astype(np.float64)
        feats.append(np.column_stack([px, cols, rows]))
        targs.append(np.column_stack([gx, gy]))
        ids.append(np.full(len(rows), kept))
        anns.append(ann)
        kept += 1
    if kept == 0:
        raise DataError("no usable calibration images")
    X = np.concatenate(feats)
    Y = np.concatenate(targs)
    image_id = np.concatenate(ids)
    order = rng.permutation(kept)
    n_train = int(round(config.train_fraction * kept))
    train_images = np.zeros(kept, bool)
    train_images[order[:n_train]] = True
    train = train_images[image_id]
    n_empty = int(round(config.empty_rate * len(X)))
    if n_empty:
        idx = rng.choice(len(X), n_empty, replace=False)
        er = rng.integers(0, h, n_empty)
        ec = rng.integers(0, w, n_empty)
        X[idx] = np.column_stack([ref[er, ec], ec, er])
        Y[idx] = 0.0
    return CalibrationSet(X, Y, train, image_id, anns, (h, w), culled, config)


# --------------------------------------------------------------------------- model


@dataclass
class GradientModel:
    weights: list  # (in, out) matrices
    biases: list
    input_offset: np.ndarray
    input_scale: np.ndarray
    image_shape: tuple[int, int] = (143, 114)
    seed: int = 0
    dropout: float = 0.1
    learning_rate: float = 1e-3
    momentum: float = 0.9
    history: dict = field(default_factory=dict)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.input_offset) / self.input_scale

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Inference pass on normalised features (dropout disabled)."""
        a = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ W + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.forward(self.normalize(features))


def init_model(seed: int = 0, image_shape=(143, 114), dims=(N_IN, *HIDDEN, N_OUT), **kw) -> GradientModel:
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    h, w = image_shape
    offset = np.zeros(N_IN)
    scale = np.array([255.0, 255.0, 255.0, w, h])
    return GradientModel(Ws, bs, offset, scale, tuple(image_shape), seed, **kw)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    dropout: float = 0.1
    seed: int = 0


def _mse(model: GradientModel, X: np.ndarray, Y: np.ndarray, chunk: int = 65536) -> float:
    if len(X) == 0:
        return float("nan")
    tot = 0.0
    for i in range(0, len(X), chunk):
        d = model.forward(X[i : i + chunk]) - Y[i : i + chunk]
        tot += float((d * d).sum())
    return tot / (len(X) * Y.shape[1])


def train_gradient_mlp(cal: CalibrationSet, config: TrainConfig = TrainConfig()) -> GradientModel:
    """Mini-batch SGD with momentum on the per-pixel MSE; deterministic per seed."""
    Xtr = cal.features[cal.train]
    Ytr = cal.targets[cal.train]
    if len(Xtr) == 0:
        raise DataError("empty training split")
    model = init_model(config.seed, cal.image_shape, dropout=config.dropout,
                       learning_rate=config.learning_rate, momentum=config.momentum)
    Xn = model.normalize(Xtr)
    Xte = model.normalize(cal.features[~cal.train])
    Yte = cal.targets[~cal.train]
    rng = np.random.default_rng(config.seed + 1)
    Ws, bs = model.weights, model.biases
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    keep = 1.0 - config.dropout
    lr, mu = config.learning_rate, config.momentum
    n = len(Xn)
    B = config.batch_size
    epoch_loss = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        tot = 0.0
        for s in range(0, n, B):
            idx = perm[s : s + B]
            x, y = Xn[idx], Ytr[idx]
            m = len(idx)
            acts, masks = [x], []
            a = x
            for W, b in zip(Ws[:-1], bs[:-1]):
                a = np.maximum(a @ W + b, 0.0)
                if config.dropout > 0:
                    mk = (rng.random(a.shape) < keep) / keep
                    a = a * mk
                    masks.append(mk)
                else:
                    masks.append(None)
                acts.append(a)
            out = a @ Ws[-1] + bs[-1]
            diff = out - y
            tot += float((diff * diff).sum())
            delta = diff * (2.0 / (m * N_OUT))
            for L in range(len(Ws) - 1, -1, -1):
                gW = acts[L].T @ delta
                gb = delta.sum(axis=0)
                if L > 0:
                    delta = delta @ Ws[L].T
                    mk = masks[L - 1]
                    delta = delta * (acts[L] > 0)
                    if mk is not None:
                        delta = delta * mk
                vW[L] = mu * vW[L] - lr * gW
                vb[L] = mu * vb[L] - lr * gb
                Ws[L] += vW[L]
                bs[L] += vb[L]
        loss = tot / (n * N_OUT)
        if not math.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
        epoch_loss.append(loss)
        log.info("epoch %d train loss %.6f", epoch + 1, loss)
    model.history = {
        "epoch_loss": epoch_loss,
        "train_mse": _mse(model, Xn, Ytr),
        "test_mse": _mse(model, Xte, Yte),
    }
    return model


def predict_gradients(model: GradientModel, frame: TactileFrame) -> GradientField:
    h, w = model.image_shape
    if (frame.height, frame.width) != (h, w):
        raise GeometryError(f"model expects {w}x{h} frames, got {frame.width}x{frame.height}")
    rows, cols = np.indices((h, w))
    X = np.column_stack([frame.pixels.reshape(-1, 3).astype(np.float64), cols.ravel(), rows.ravel()])
    g = model.predict(X)
    return GradientField(g[:, 0].reshape(h, w), g[:, 1].reshape(h, w))


# --------------------------------------------------------------------------- model file

MLP_MAGIC = b"TACMLP1"


def save_model(model: GradientModel, path: str | Path) -> None:
    """Little-endian: magic, uint32 layer count, uint32 dims, float64 W (row-major
    in x out) and b per layer, float64 input offset and scale, uint32 image
    height and width, uint64 seed, float64 dropout, learning rate, momentum."""
    dims = model.dims
    parts = [MLP_MAGIC, struct.pack("<I", len(model.weights))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for W, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.asarray(model.input_offset, dtype="<f8").tobytes())
    parts.append(np.asarray(model.input_scale, dtype="<f8").tobytes())
    parts.append(struct.pack("<IIQ", model.image_shape[0], model.image_shape[1], model.seed))
    parts.append(struct.pack("<ddd", model.dropout, model.learning_rate, model.momentum))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> GradientModel:
    buf = Path(path).read_bytes()
    if not buf.startswith(MLP_MAGIC):
        raise DataError(f"{path}: not a TACMLP1 model file")
    pos = len(MLP_MAGIC)
    (n_layers,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    dims = struct.unpack_from(f"<{n_layers + 1}I", buf, pos)
    pos += 4 * (n_layers + 1)

    def take(count, shape):
        nonlocal pos
        arr = np.frombuffer(buf, "<f8", count, pos).reshape(shape).astype(np.float64)
        pos += 8 * count
        return arr

    Ws, bs = [], []
    for i, o in zip(dims[:-1], dims[1:]):
        Ws.append(take(i * o, (i, o)))
        bs.append(take(o, (o,)))
    offset = take(dims[0], (dims[0],))
    scale = take(dims[0], (dims[0],))
    h, w, seed = struct.unpack_from("<IIQ", buf, pos)
    pos += 16
    dropout, lr, mom = struct.unpack_from("<ddd", buf, pos)
    return GradientModel(Ws, bs, offset, scale, (h, w), seed, dropout, lr, mom)


# --------------------------------------------------------------------------- output files

MM_PER_LEVEL = 0.001  # depth rasters store micrometres


def write_depth_pgm(path: str | Path, z_mm: np.ndarray, mm_per_level: float = MM_PER_LEVEL) -> Path:
    """16-bit P5 of ``z / mm_per_level`` (negatives clip to 0) plus a ``.scale.txt`` sidecar."""
    from .pnm import write_pnm

    path = Path(path)
    levels = np.clip(np.rint(np.asarray(z_mm) / mm_per_level), 0, 65535).astype(np.uint16)
    write_pnm(path, levels)
    side = path.with_suffix(".scale.txt")
    side.write_text(f"mm_per_level {mm_per_level:.6g}\n", encoding="utf-8")
    return side


def read_depth_pgm(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_depth_pgm`, in mm."""
    from .pnm import read_pnm

    path = Path(path)
    scale = MM_PER_LEVEL
    side = path.with_suffix(".scale.txt")
    if side.exists():
        key, val = side.read_text(encoding="utf-8").split()
        if key != "mm_per_level":
            raise DataError(f"{side}: unexpected scale key {key!r}")
        scale = float(val)
    return read_pnm(path).astype(np.float64) * scale


def write_gradients_csv(path: str | Path, gx: np.ndarray, gy: np.ndarray, nonzero_only: bool = True) -> int:
    """Rows of ``row, col, gx, gy``; by default only pixels with a nonzero slope."""
    keep = (gx != 0) | (gy != 0) if nonzero_only else np.ones(gx.shape, bool)
    rows, cols = np.nonzero(keep)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,gx,gy\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r},{c},{gx[r, c]:.6f},{gy[r, c]:.6f}\n")
    return len(rows)


# --------------------------------------------------------------------------- Poisson


@dataclass
class PoissonInfo:
    iterations: int
    residual: float
    stop: str  # "tolerance" or "max_iterations"


def divergence(g: GradientField) -> np.ndarray:
    """Central-difference divergence (one-sided on the border), pixel units."""
    return np.gradient(g.gx, axis=1) + np.gradient(g.gy, axis=0)


def _neg_laplacian_dirichlet(z: np.ndarray) -> np.ndarray:
    # z holds interior unknowns; the zero boundary ring is implicit
    out = 4.0 * z
    out[1:, :] -= z[:-1, :]
    out[:-1, :] -= z[1:, :]
    out[:, 1:] -= z[:, :-1]
    out[:, :-1] -= z[:, 1:]
    return out


def _neg_laplacian_neumann(z: np.ndarray) -> np.ndarray:
    # graph Laplacian of the pixel grid (zero-flux boundary)
    out = np.zeros_like(z)
    dv = z[1:, :] - z[:-1, :]
    dh = z[:, 1:] - z[:, :-1]
    out[:-1, :] -= dv
    out[1:, :] += dv
    out[:, :-1] -= dh
    out[:, 1:] += dh
    return out


def _cg(apply, b: np.ndarray, rtol: float, maxiter: int, project=None):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float((r * r).sum())
    bnorm = math.sqrt(float((b * b).sum()))
    if bnorm == 0.0:
        return x, PoissonInfo(0, 0.0, "tolerance")
    k = 0
    res = 1.0
    while k < maxiter:
        Ap = apply(p)
        alpha = rs / float((p * Ap).sum())
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        k += 1
        rs_new = float((r * r).sum())
        res = math.sqrt(rs_new) / bnorm
        if res < rtol:
            return x, PoissonInfo(k, res, "tolerance")
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, PoissonInfo(k, res, "max_iterations")


def integrate_poisson(
    g: GradientField,
    boundary: str = "dirichlet",
    pitch_mm: float | None = None,
    rtol: float = 1e-6,
    maxiter: int = 10_000,
) -> tuple[DepthMap, PoissonInfo]:
    """Solve lap(z) = div(g) with the five-point Laplacian.

    ``g`` holds unitless slopes. With ``pitch_mm`` the result is in mm,
    otherwise in pixel-height units. Dirichlet pins the border to zero;
    Neumann solves the zero-flux least-squares problem and shifts the result
    so the border mean is zero.
    """
    if not (np.isfinite(g.gx).all() and np.isfinite(g.gy).all()):
        raise NumericError("gradient field contains non-finite values")
    h, w = g.gx.shape
    if boundary == "dirichlet":
        z = np.zeros((h, w))
        if h < 3 or w < 3:
            return DepthMap(z, "mm" if pitch_mm else "px", boundary), PoissonInfo(0, 0.0, "tolerance")
        rhs = -divergence(g)[1:-1, 1:-1]
        zi, info = _cg(_neg_laplacian_dirichlet, rhs, rtol, maxiter)
        z[1:-1, 1:-1] = zi
    elif boundary == "neumann":
        # edge-averaged slopes, b = D^T g_edge
        ex = 0.5 * (g.gx[:, 1:] + g.gx[:, :-1])
        ey = 0.5 * (g.gy[1:, :] + g.gy[:-1, :])
        rhs = np.zeros((h, w))
        rhs[:, :-1] -= ex
        rhs[:, 1:] += ex
        rhs[:-1, :] -= ey
        rhs[1:, :] += ey
        rhs -= rhs.mean()
        z, info = _cg(_neg_laplacian_neumann, rhs, rtol, maxiter, project=lambda r: r - r.mean())
        border = np.concatenate([z[0], z[-1], z[1:-1, 0], z[1:-1, -1]])
        z -= border.mean()
    else:
        raise ValueError(f"unknown boundary condition {boundary!r}")
    if pitch_mm:
        z = z * pitch_mm
    return DepthMap(z, "mm" if pitch_mm else "px", boundary), info
