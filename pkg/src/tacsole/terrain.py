"""Terrain classification from contact-image blob statistics.

A lightweight substitute for the CNN transfer-learning recipe: eight hand-made
features feed a multinomial logistic regression trained with label smoothing.

Reference configuration for the CNN route (not implemented here): ResNet-50
pretrained on ImageNet, images resized to 224x224, AdamW with lr 0.001 and
weight decay 0.05, a OneCycle schedule, MixUp/CutMix applied to 70% of
batches, label smoothing 0.1, at most 40 epochs with early stopping after six
epochs without validation improvement.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .contact import label_mask
from .errors import DataError, DivergenceError, GeometryError, ModelError
from .frame_io import DirectorySource, SensorGeometry, TactileFrame, diff_reference, load_frame
from .pnm import write_pnm
from .synth import TERRAIN_CLASSES, render_terrain, terrain_reference

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "blob_count",
    "mean_blob_area",
    "blob_area_std",
    "mean_spacing",
    "spacing_std",
    "regularity",
    "mean_diff",
    "coverage",
)
DIFF_THRESHOLD = 10
MIN_BLOB_AREA = 4
MODEL_MAGIC = b"TACLR1"
# counts of the reference image set, per class
PAPER_COUNTS = {"blank": 1042, "rock": 956, "spike": 947, "tile": 995}


@dataclass(frozen=True)
class TerrainFeatures:
    blob_count: int
    mean_blob_area: float
    blob_area_std: float
    mean_spacing: float
    spacing_std: float
    regularity: float
    mean_diff: float
    coverage: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


def extract_features(frame: TactileFrame, reference: TactileFrame,
                     geom: SensorGeometry = SensorGeometry(),
                     threshold: int = DIFF_THRESHOLD, min_area: int = MIN_BLOB_AREA) -> TerrainFeatures:
    """diff -> threshold -> filled components -> blob statistics.

    Spacing is the nearest-neighbour centroid distance in px. Coverage is the
    contact area over the physical pad area and ``mean_diff`` is averaged over
    contact pixels, so zero-diff padding leaves every feature unchanged.
    """
    diff = diff_reference(frame, reference).values
    binary = ndimage.binary_fill_holes(diff >= threshold)
    mask = label_mask(binary, min_area)
    n = mask.n_components
    if n == 0:
        return TerrainFeatures(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(diff), mask.labels, idx)
    cents = np.array(ndimage.center_of_mass(np.ones_like(diff), mask.labels, idx)).reshape(-1, 2)
    if n >= 2:
        d, _ = cKDTree(cents).query(cents, k=2)
        nn = d[:, 1]
        sp_mean, sp_std = float(nn.mean()), float(nn.std())
        regular = float(np.clip(1.0 - sp_std / sp_mean, 0.0, 1.0)) if sp_mean > 0 else 0.0
    else:
        sp_mean = sp_std = regular = 0.0
    fg = mask.labels > 0
    px_area = geom.mm_per_px_row * geom.mm_per_px_col
    coverage = min(1.0, fg.sum() * px_area / (geom.pad_length_mm * geom.pad_width_mm))
    return TerrainFeatures(int(n), float(areas.mean()), float(areas.std()), sp_mean, sp_std,
                           regular, float(diff[fg].mean()), float(coverage))


# --------------------------------------------------------------------------- model


@dataclass
class TerrainModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    mean: np.ndarray  # (D,)
    std: np.ndarray  # (D,)
    classes: tuple[str, ...] = TERRAIN_CLASSES
    smoothing: float = 0.1
    seed: int = 0
    history: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ModelError(f"model expects {self.dim} features, got {X.shape[1]}")
        return ((X - self.mean) / self.std) @ self.weights.T + self.bias

    def proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))


@dataclass(frozen=True)
class TerrainPrediction:
    label: str
    confidence: dict
    top: float


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TerrainTrainConfig:
    smoothing: float = 0.1
    max_epochs: int = 40
    patience: int = 6
    l2: float = 1e-4
    init_step: float = 1.0
    seed: int = 0


def _loss_grad(W, b, Xn, T, l2):
    P = softmax(Xn @ W.T + b)
    n = len(Xn)
    loss = -np.sum(T * np.log(np.clip(P, 1e-300, None))) / n + 0.5 * l2 * np.sum(W * W)
    G = (P - T) / n
    return loss, G.T @ Xn + l2 * W, G.sum(axis=0)


def _targets(y: np.ndarray, k: int, smoothing: float) -> np.ndarray:
    T = np.full((len(y), k), smoothing / k)
    T[np.arange(len(y)), y] += 1.0 - smoothing
    return T


def train_classifier(X: np.ndarray, y: np.ndarray, X_val: np.ndarray | None = None,
                     y_val: np.ndarray | None = None, config: TerrainTrainConfig = TerrainTrainConfig(),
                     classes: tuple[str, ...] = TERRAIN_CLASSES) -> TerrainModel:
    """Full-batch gradient descent with Armijo backtracking; one step per epoch.

    Early stopping watches the smoothed validation loss (training loss when no
    validation set is given) and keeps the best weights.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0 or len(np.unique(y)) < 2:
        raise DataError("terrain training needs at least two classes")
    k = len(classes)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Xn = (X - mean) / std
    T = _targets(y, k, config.smoothing)
    if X_val is not None and len(X_val):
        Xv = (np.asarray(X_val, dtype=np.float64) - mean) / std
        Tv = _targets(np.asarray(y_val), k, config.smoothing)
    else:
        Xv, Tv = Xn, T
    rng = np.random.default_rng(config.seed)
    W = rng.normal(0.0, 0.01, (k, X.shape[1]))
    b = np.zeros(k)
    step = config.init_step
    loss, gW, gb = _loss_grad(W, b, Xn, T, config.l2)
    best = (np.inf, W, b, 0)
    stale = 0
    hist = {"train_loss": [], "val_loss": [], "val_acc": [], "step": []}
    for epoch in range(1, config.max_epochs + 1):
        gnorm2 = float(np.sum(gW * gW) + np.sum(gb * gb))
        while True:
            W2, b2 = W - step * gW, b - step * gb
            loss2, gW2, gb2 = _loss_grad(W2, b2, Xn, T, config.l2)
            if loss2 <= loss - 0.5 * step * gnorm2 or step < 1e-10:
                break
            step *= 0.5
        if not np.isfinite(loss2):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
        hist["step"].append(step)
        step *= 2.0
        vl, _, _ = _loss_grad(W, b, Xv, Tv, 0.0)
        acc = float(np.mean(np.argmax(Xv @ W.T + b, axis=1) == np.argmax(Tv, axis=1)))
        hist["train_loss"].append(float(loss))
        hist["val_loss"].append(float(vl))
        hist["val_acc"].append(acc)
        if vl < best[0] - 1e-9:
            best = (vl, W.copy(), b.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    hist["best_epoch"] = best[3]
    hist["epochs_run"] = len(hist["train_loss"])
    model = TerrainModel(best[1], best[2], mean, std, tuple(classes), config.smoothing, config.seed, hist)
    hist["train_acc"] = float(np.mean(np.argmax(model.logits(X), axis=1) == y))
    return model


def classify(model: TerrainModel, frame: TactileFrame, reference: TactileFrame,
             geom: SensorGeometry = SensorGeometry()) -> TerrainPrediction:
    return predict_features(model, extract_features(frame, reference, geom).vector())


def predict_features(model: TerrainModel, x: np.ndarray) -> TerrainPrediction:
    p = model.proba(x)[0]
    i = int(np.argmax(p))  # first maximum, so ties follow class order
    return TerrainPrediction(model.classes[i], {c: float(v) for c, v in zip(model.classes, p)}, float(p[i]))


def confusion_matrix(model: TerrainModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-normalised percentages; rows are true labels; empty rows stay zero."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise DataError("empty test set")
    pred = np.argmax(model.logits(X), axis=1)
    return confusion_from_labels(np.asarray(y), pred, len(model.classes))


def confusion_from_labels(y: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    counts = np.zeros((k, k))
    np.add.at(counts, (y, pred), 1)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(100.0 * counts, rows, out=np.zeros_like(counts), where=rows > 0)


def write_confusion_csv(cm: np.ndarray, classes, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *classes])
        for c, row in zip(classes, cm):
            w.writerow([c, *(f"{v:.2f}" for v in row)])


def confusion_heatmap(cm: np.ndarray, cell: int = 32) -> np.ndarray:
    """White-to-blue cells, one per matrix entry, with 1 px grey separators."""
    k = cm.shape[0]
    v = np.clip(cm / 100.0, 0, 1)
    img = np.empty((k * cell, k * cell, 3), np.uint8)
    for i in range(k):
        for j in range(k):
            c = (np.array([255, 255, 255]) * (1 - v[i, j]) + np.array([20, 40, 160]) * v[i, j])
            img[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell] = np.rint(c).astype(np.uint8)
    img[::cell] = 128
    img[:, ::cell] = 128
    return img


def save_model(model: TerrainModel, path: str | Path) -> None:
    """Little-endian: magic, u32 dim, u32 K, K x (u16 len + utf-8 name),
    f64 weights (K*D), bias (K), mean (D), std (D), f64 smoothing, u64 seed."""
    k, d = model.weights.shape
    parts = [MODEL_MAGIC, struct.pack("<II", d, k)]
    for c in model.classes:
        raw = c.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    for arr in (model.weights, model.bias, model.mean, model.std):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<dQ", model.smoothing, model.seed))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> TerrainModel:
    buf = Path(path).read_bytes()
    if not buf.startswith(MODEL_MAGIC):
        raise ModelError(f"{path} is not a terrain model file")
    off = len(MODEL_MAGIC)
    d, k = struct.unpack_from("<II", buf, off)
    off += 8
    classes = []
    for _ in range(k):
        (n,) = struct.unpack_from("<H", buf, off)
        classes.append(buf[off + 2: off + 2 + n].decode("utf-8"))
        off += 2 + n

    def take(count):
        nonlocal off
        a = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return a

    W = take(k * d).reshape(k, d)
    b, mean, std = take(k), take(d), take(d)
    smoothing, seed = struct.unpack_from("<dQ", buf, off)
    return TerrainModel(W, b, mean, std, tuple(classes), smoothing, int(seed))


# --------------------------------------------------------------------------- datasets


def class_seeds(seed: int, class_index: int, n: int) -> np.ndarray:
    return np.random.SeedSequence([seed, class_index]).generate_state(n, np.uint32)


def synth_features(counts: dict, seed: int = 0, fabric_blur: bool = True,
                   geom: SensorGeometry = SensorGeometry()):
    """Render a labelled set in memory and return ``(X, y)``."""
    ref = terrain_reference(geom)
    X, y = [], []
    for ci, cls in enumerate(TERRAIN_CLASSES):
        for s in class_seeds(seed, ci, counts.get(cls, 0)):
            frame, _ = render_terrain(cls, fabric_blur, int(s), geom)
            X.append(extract_features(frame, ref, geom).vector())
            y.append(ci)
    return np.array(X).reshape(-1, len(FEATURE_NAMES)), np.array(y, dtype=np.int64)


def write_dataset(root: str | Path, counts: dict, seed: int = 0, fabric_blur: bool = True,
                  geom: SensorGeometry = SensorGeometry()) -> None:
    """Directory per class of ``frame_%06d.ppm`` files plus ``reference.ppm``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_pnm(root / "reference.ppm", terrain_reference(geom).pixels)
    for ci, cls in enumerate(TERRAIN_CLASSES):
        if counts.get(cls, 0) <= 0:
            continue
        d = root / cls
        d.mkdir(exist_ok=True)
        for i, s in enumerate(class_seeds(seed, ci, counts.get(cls, 0))):
            frame, _ = render_terrain(cls, fabric_blur, int(s), geom)
            write_pnm(d / f"frame_{i:06d}.ppm", frame.pixels)


def load_dataset_features(root: str | Path, reference: TactileFrame | None = None,
                          geom: SensorGeometry = SensorGeometry(),
                          classes: tuple[str, ...] = TERRAIN_CLASSES):
    """Features and labels from a directory-per-class tree; missing classes are skipped."""
    root = Path(root)
    if reference is None:
        if not (root / "reference.ppm").exists():
            raise DataError(f"{root} has no reference.ppm and none was given")
        reference = load_frame(root / "reference.ppm")
    X, y = [], []
    for ci, cls in enumerate(classes):
        d = root / cls
        if not d.is_dir() or not any(d.iterdir()):
            continue
        for frame in DirectorySource(d):
            if frame.pixels.shape != reference.pixels.shape:
                raise GeometryError(f"{cls} frame {frame.frame_index} does not match the reference")
            X.append(extract_features(frame, reference, geom).vector())
            y.append(ci)
    if not X:
        raise DataError(f"no labelled frames under {root}")
    return np.array(X), np.array(y, dtype=np.int64)
