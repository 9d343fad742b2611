import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacsole import terrain
from tacsole.errors import DataError, GeometryError, ModelError
from tacsole.frame_io import SensorGeometry, TactileFrame
from tacsole.synth import TERRAIN_CLASSES, render_terrain, terrain_reference
from tacsole.terrain import (
    FEATURE_NAMES,
    TerrainTrainConfig,
    classify,
    confusion_from_labels,
    confusion_heatmap,
    confusion_matrix,
    extract_features,
    softmax,
    train_classifier,
    write_confusion_csv,
)

G = SensorGeometry()
REF = terrain_reference(G)


def feats(cls, seed=0, blur=False):
    frame, _ = render_terrain(cls, blur, seed, G)
    return extract_features(frame, REF, G)


def test_blank_has_no_blobs():
    f = feats("blank", blur=True)
    assert f.blob_count == 0 and f.coverage == 0
    assert np.isfinite(f.vector()).all() and len(f.vector()) == len(FEATURE_NAMES)


def test_spike_spacing_matches_grid_pitch():
    # nearest neighbour on the 12.5 mm grid runs along the finer-sampled axis
    expect = 12.5 / max(G.mm_per_px_row, G.mm_per_px_col)
    for seed in range(3):
        f = feats("spike", seed)
        assert abs(f.mean_spacing - expect) <= 0.15 * expect


def test_tile_area_and_regularity():
    expect = 12.0 ** 2 / (G.mm_per_px_row * G.mm_per_px_col)
    for seed in range(3):
        f = feats("tile", seed)
        assert abs(f.mean_blob_area - expect) <= 0.2 * expect
        assert f.regularity > feats("rock", seed).regularity


def test_features_bounded():
    for cls in TERRAIN_CLASSES:
        for seed in range(3):
            f = feats(cls, seed, blur=True)
            assert 0 <= f.coverage <= 1 and 0 <= f.regularity <= 1 and f.blob_count >= 0


def test_dimension_mismatch():
    with pytest.raises(GeometryError):
        extract_features(TactileFrame(np.zeros((10, 10, 3), np.uint8)), REF, G)


@pytest.mark.parametrize("cls", ["rock", "spike", "tile"])
def test_padding_invariance(cls):
    frame, _ = render_terrain(cls, True, 4, G)
    pad = ((7, 5), (3, 9), (0, 0))
    a = extract_features(frame, REF, G).vector()
    b = extract_features(TactileFrame(np.pad(frame.pixels, pad, mode="edge")),
                         TactileFrame(np.pad(REF.pixels, pad, mode="edge")), G).vector()
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


# --------------------------------------------------------------------------- classifier


def toy(seed=0, n=60):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-2, 0.5, (n, 3)), rng.normal(2, 0.5, (n, 3))])
    return X, np.repeat([0, 1], n)


def test_separable_toy_full_accuracy():
    X, y = toy()
    m = train_classifier(X, y)
    assert m.history["train_acc"] == 1.0


def test_training_deterministic():
    X, y = toy(3)
    a = train_classifier(X, y, config=TerrainTrainConfig(seed=5))
    b = train_classifier(X, y, config=TerrainTrainConfig(seed=5))
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_single_class_rejected():
    with pytest.raises(DataError):
        train_classifier(np.zeros((5, 3)), np.zeros(5, int))


def test_early_stop_and_epoch_cap():
    X, y = toy(1)
    m = train_classifier(X, y, X, y, TerrainTrainConfig(max_epochs=40, patience=6))
    assert m.history["epochs_run"] <= 40
    if m.history["epochs_run"] < 40:
        assert m.history["epochs_run"] - m.history["best_epoch"] == 6


def test_dimension_mismatch_model_error():
    X, y = toy()
    m = train_classifier(X, y)
    with pytest.raises(ModelError):
        m.proba(np.zeros((1, 5)))


@settings(max_examples=50)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 6))
def test_softmax_sums_to_one_and_permutes(seed, k):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 5, (4, k))
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-12) and (p >= 0).all() and (p <= 1).all()
    perm = rng.permutation(k)
    assert np.allclose(softmax(z[:, perm]), p[:, perm], atol=1e-15)


def test_model_file_round_trip(tmp_path):
    X, y = toy()
    m = train_classifier(X, y)
    terrain.save_model(m, tmp_path / "t.bin")
    assert (tmp_path / "t.bin").read_bytes().startswith(b"TACLR1")
    m2 = terrain.load_model(tmp_path / "t.bin")
    assert np.array_equal(m.proba(X), m2.proba(X))
    assert m2.classes == m.classes and m2.smoothing == 0.1 and m2.seed == m.seed
    (tmp_path / "x.bin").write_bytes(b"junk")
    with pytest.raises(ModelError):
        terrain.load_model(tmp_path / "x.bin")


# --------------------------------------------------------------------------- confusion


def test_perfect_labels_identity():
    y = np.array([0, 0, 1, 2, 3, 3])
    assert np.array_equal(confusion_from_labels(y, y, 4), 100 * np.eye(4))


def test_one_class_set_single_row():
    cm = confusion_from_labels(np.array([2, 2, 2]), np.array([2, 1, 2]), 4)
    assert cm[2].sum() == pytest.approx(100) and not np.delete(cm, 2, axis=0).any()


@settings(max_examples=50)
@given(seed=st.integers(0, 10_000))
def test_confusion_rows_sum_to_100(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 4, 50)
    cm = confusion_from_labels(y, rng.integers(0, 4, 50), 4)
    rows = np.round(cm, 2).sum(axis=1)
    present = np.bincount(y, minlength=4) > 0
    assert np.all(np.abs(rows[present] - 100) <= 0.5)


def test_empty_test_set_raises():
    X, y = toy()
    m = train_classifier(X, y)
    with pytest.raises(DataError):
        confusion_matrix(m, np.zeros((0, 3)), np.zeros(0, int))


def test_confusion_outputs(tmp_path):
    cm = 100 * np.eye(4)
    write_confusion_csv(cm, TERRAIN_CLASSES, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "true\\pred,blank,rock,spike,tile" and lines[1] == "blank,100.00,0.00,0.00,0.00"
    img = confusion_heatmap(cm)
    assert img.shape == (128, 128, 3) and img.dtype == np.uint8


# --------------------------------------------------------------------------- full synthetic set


def test_validation_accuracy(terrain_model):
    assert max(terrain_model.history["val_acc"]) >= 0.95


def test_blank_confident_and_blurred_spike(terrain_model):
    for seed in range(3):
        frame, _ = render_terrain("blank", True, 900 + seed, G)
        p = classify(terrain_model, frame, REF, G)
        assert p.label == "blank" and p.top >= 0.9
        assert sum(p.confidence.values()) == pytest.approx(1, abs=1e-9)
        frame, _ = render_terrain("spike", True, 900 + seed, G)
        assert classify(terrain_model, frame, REF, G).label == "spike"


def test_dataset_directory_round_trip(tmp_path):
    terrain.write_dataset(tmp_path, {"blank": 2, "tile": 3}, seed=7)
    X, y = terrain.load_dataset_features(tmp_path)
    X2, y2 = terrain.synth_features({"blank": 2, "tile": 3}, seed=7)
    assert np.array_equal(y, y2) and np.allclose(X, X2)
