import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacsole import depth
from tacsole.depth import (
    CalibrationConfig,
    GradientField,
    TrainConfig,
    build_calibration_set,
    integrate_poisson,
    predict_gradients,
    sphere_gradients,
    train_gradient_mlp,
)
from tacsole.errors import AnnotationError, DataError, GeometryError, NumericError
from tacsole.frame_io import TactileFrame
from tacsole.synth import (
    IndenterScene,
    Sphere,
    SphereAnnotation,
    reference_image,
    render_calibration_images,
    render_indentation,
)

H, W = 143, 114


def paraboloid(c=10.0, R=40.0, shape=(H, W)):
    """z = c (1 - (rho/R)^2) inside rho < R, with analytic slopes (px units)."""
    h, w = shape
    rows, cols = np.indices(shape, dtype=np.float64)
    dx, dy = cols - (w - 1) / 2, rows - (h - 1) / 2
    inside = dx * dx + dy * dy < R * R
    z = np.where(inside, c * (1 - (dx * dx + dy * dy) / R**2), 0.0)
    gx = np.where(inside, -2 * c * dx / R**2, 0.0)
    gy = np.where(inside, -2 * c * dy / R**2, 0.0)
    return z, GradientField(gx, gy)


# --------------------------------------------------------------------------- Poisson


def test_zero_field_gives_zero_depth():
    dm, info = integrate_poisson(GradientField(np.zeros((H, W)), np.zeros((H, W))))
    assert not dm.z.any() and info.stop == "tolerance"


def test_paraboloid_rmse_within_two_percent():
    z, g = paraboloid()
    dm, info = integrate_poisson(g)
    rmse = math.sqrt(np.mean((dm.z - z) ** 2))
    assert rmse <= 0.02 * z.max()
    assert info.stop == "tolerance" and info.residual < 1e-6


def test_dirichlet_boundary_is_zero():
    _, g = paraboloid()
    z = integrate_poisson(g)[0].z
    assert not z[0].any() and not z[-1].any() and not z[:, 0].any() and not z[:, -1].any()


def test_neumann_mode_recovers_shape():
    z, g = paraboloid()
    dm, info = integrate_poisson(g, boundary="neumann")
    zz = dm.z - dm.z[0, 0]
    assert math.sqrt(np.mean((zz - z) ** 2)) <= 0.02 * z.max()
    assert dm.boundary == "neumann"


def test_non_finite_gradient_raises():
    gx = np.zeros((5, 5))
    gx[2, 2] = np.nan
    with pytest.raises(NumericError):
        integrate_poisson(GradientField(gx, np.zeros((5, 5))))


def test_iteration_cap_reported():
    _, g = paraboloid()
    _, info = integrate_poisson(g, maxiter=3)
    assert info.stop == "max_iterations" and info.iterations == 3


def test_render_ground_truth_round_trip():
    sp = Sphere((28.0, 35.0), 2.0, 0.8)
    _, truth = render_indentation(IndenterScene([sp], 0.5))
    dm, _ = integrate_poisson(GradientField(truth.gx, truth.gy), pitch_mm=0.5)
    rmse = math.sqrt(np.mean((dm.z - truth.depth) ** 2))
    assert dm.units == "mm"
    assert rmse <= 0.05 * 0.8


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), seed=st.integers(0, 1000))
def test_poisson_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    shape = (24, 20)
    g1 = GradientField(*rng.normal(size=(2, *shape)))
    g2 = GradientField(*rng.normal(size=(2, *shape)))
    combo = GradientField(a * g1.gx + b * g2.gx, a * g1.gy + b * g2.gy)
    z1 = integrate_poisson(g1, rtol=1e-12)[0].z
    z2 = integrate_poisson(g2, rtol=1e-12)[0].z
    z = integrate_poisson(combo, rtol=1e-12)[0].z
    assert np.allclose(z, a * z1 + b * z2, atol=1e-8 * (1 + abs(a) + abs(b)))


def test_round_trip_reproduces_consistent_gradients():
    # depth vanishing at the border: its own central differences come back
    rows, cols = np.indices((40, 30), dtype=np.float64)
    z = np.sin(np.pi * rows / 39) ** 2 * np.sin(np.pi * cols / 29) ** 2
    gy, gx = np.gradient(z)
    zr = integrate_poisson(GradientField(gx, gy), rtol=1e-12)[0].z
    gy2, gx2 = np.gradient(zr)
    assert np.abs(gx2 - gx)[2:-2, 2:-2].max() < 0.02 * np.abs(gx).max()
    assert np.abs(gy2 - gy)[2:-2, 2:-2].max() < 0.02 * np.abs(gy).max()


# --------------------------------------------------------------------------- calibration set


def test_sphere_gradients_analytic():
    ann = SphereAnnotation((50.0, 60.0), 2 * math.sqrt(3) / 0.5, 2.0, 0.5)
    gx, gy = sphere_gradients(ann, np.array([50.0, 60.0, 50.0 + 1.0]), np.array([60.0, 60.0, 60.0]))
    assert gx[0] == 0 and gy[0] == 0  # apex
    assert gx[1] == 0 and gy[1] == 0  # outside the disk
    rho = 0.5  # one pixel at 0.5 mm pitch
    assert math.hypot(gx[2], gy[2]) == pytest.approx(rho / math.sqrt(4.0 - rho * rho))


def test_sphere_gradient_at_half_contact_radius():
    a_mm = math.sqrt(3)
    ann = SphereAnnotation((50.0, 60.0), 2 * a_mm / 0.5, 2.0, 0.5)
    off_px = 0.5 * a_mm / 0.5
    gx, gy = sphere_gradients(ann, np.array([50.0 + off_px]), np.array([60.0]))
    rho = 0.5 * a_mm
    assert math.hypot(gx[0], gy[0]) == pytest.approx(rho / math.sqrt(4.0 - rho**2))


@pytest.fixture(scope="module")
def small_set():
    ref = TactileFrame(reference_image((H, W)))
    return build_calibration_set(render_calibration_images(60, seed=4, flicker_fraction=0.2), ref,
                                 CalibrationConfig(seed=1))


def test_calibration_split_and_empty_points(small_set):
    s = small_set
    assert s.n_train + s.n_test == len(s.features)
    assert set(np.unique(s.image_id[s.train])).isdisjoint(np.unique(s.image_id[~s.train]))
    assert 0.7 <= s.n_train / len(s.features) <= 0.9
    x, y = s.features[:, 3], s.features[:, 4]
    assert x.min() >= 0 and y.min() >= 0 and x.max() <= W - 1 and y.max() <= H - 1
    assert len(s.culled) > 0


def test_calibration_annotation_outside_roi():
    ref = TactileFrame(reference_image((H, W)))
    frame, ann = next(render_calibration_images(1, seed=0))
    bad = SphereAnnotation((1.0, 1.0), ann.diameter_px, ann.radius_mm, ann.pitch_mm)
    with pytest.raises(AnnotationError):
        build_calibration_set([(frame, bad)], ref)


# --------------------------------------------------------------------------- MLP


def test_model_layer_shapes():
    m = depth.init_model(0)
    assert m.dims == [5, 64, 64, 64, 2]


def test_training_is_deterministic(small_set, tmp_path):
    cfg = TrainConfig(epochs=2, seed=3)
    a = train_gradient_mlp(small_set, cfg)
    b = train_gradient_mlp(small_set, cfg)
    depth.save_model(a, tmp_path / "a.bin")
    depth.save_model(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_model_file_round_trip(small_set, tmp_path):
    m = train_gradient_mlp(small_set, TrainConfig(epochs=1, seed=0))
    depth.save_model(m, tmp_path / "m.bin")
    assert (tmp_path / "m.bin").read_bytes().startswith(b"TACMLP1")
    m2 = depth.load_model(tmp_path / "m.bin")
    for W1, W2 in zip(m.weights + m.biases, m2.weights + m2.biases):
        assert np.array_equal(W1, W2)
    assert m2.momentum == m.momentum and m2.seed == m.seed
    frame, _ = next(render_calibration_images(1, seed=9))
    g1, g2 = predict_gradients(m, frame), predict_gradients(m2, frame)
    assert np.array_equal(g1.gx, g2.gx) and np.array_equal(g1.gy, g2.gy)


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE")
    with pytest.raises(DataError):
        depth.load_model(tmp_path / "x.bin")


def test_constant_zero_target_fits():
    n = 2000
    rng = np.random.default_rng(0)
    feats = np.column_stack([np.full((n, 3), 155.0), rng.uniform(0, W - 1, n), rng.uniform(0, H - 1, n)])
    cal = depth.CalibrationSet(feats, np.zeros((n, 2)), np.arange(n) % 5 != 0, np.arange(n) // 20)
    before = float(np.mean(depth.init_model(0).predict(feats) ** 2))
    m = train_gradient_mlp(cal, TrainConfig(seed=0))
    # dropout noise keeps the fit off exact zero; require a 50x drop
    assert m.history["test_mse"] < before / 50 and m.history["test_mse"] < 1e-3


def test_empty_training_split_raises():
    cal = depth.CalibrationSet(np.zeros((3, 5)), np.zeros((3, 2)), np.zeros(3, bool), np.zeros(3, int))
    with pytest.raises(DataError):
        train_gradient_mlp(cal)


def test_zero_final_layer_predicts_zero():
    m = depth.init_model(0)
    m.weights[-1][:] = 0
    m.biases[-1][:] = 0
    g = predict_gradients(m, TactileFrame(reference_image((H, W))))
    assert not g.gx.any() and not g.gy.any()


def test_predict_dimension_mismatch():
    m = depth.init_model(0)
    with pytest.raises(GeometryError):
        predict_gradients(m, TactileFrame(np.zeros((10, 10, 3), np.uint8)))


def test_trained_model_flat_and_sphere(gradient_model, calib_reference):
    g = predict_gradients(gradient_model, calib_reference)
    assert np.hypot(g.gx, g.gy).max() <= 0.05
    frame, truth = render_indentation(IndenterScene([Sphere((28.0, 35.0), 2.0, 0.7)], 0.5))
    g = predict_gradients(gradient_model, frame)
    m = truth.contact_mask
    a = np.stack([g.gx[m], g.gy[m]], 1)
    b = np.stack([truth.gx[m], truth.gy[m]], 1)
    cos = (a * b).sum() / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos >= 0.9


def test_training_loss_trend(gradient_model):
    loss = np.array(gradient_model.history["epoch_loss"])
    assert len(loss) == 30
    # non-increasing up to one plateau step of noise
    step = np.abs(np.diff(loss[:5])).max()
    assert np.all(np.diff(loss) <= step)
    assert loss[-1] < loss[0]
