import time

import numpy as np
import pytest

from tacsole import depth, terrain
from tacsole.frame_io import SensorGeometry, TactileFrame
from tacsole.synth import TERRAIN_CLASSES, reference_image, render_calibration_images

GEOM = SensorGeometry()


@pytest.fixture(scope="session")
def geom():
    return GEOM


@pytest.fixture(scope="session")
def calib_reference():
    return TactileFrame(reference_image((143, 114)))


@pytest.fixture(scope="session")
def calibration_5000(calib_reference):
    images = render_calibration_images(5000, seed=0, flicker_fraction=0.1)
    return depth.build_calibration_set(images, calib_reference, depth.CalibrationConfig(seed=0))


@pytest.fixture(scope="session")
def gradient_model(calibration_5000):
    t0 = time.perf_counter()
    model = depth.train_gradient_mlp(calibration_5000, depth.TrainConfig(seed=0))
    model.history["train_seconds"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def terrain_sets():
    """Default-size training set plus separate validation and test sets."""
    X, y = terrain.synth_features(terrain.PAPER_COUNTS, seed=0)
    Xv, yv = terrain.synth_features({c: 100 for c in TERRAIN_CLASSES}, seed=1)
    Xt, yt = terrain.synth_features({c: 100 for c in TERRAIN_CLASSES}, seed=2)
    return (X, y), (Xv, yv), (Xt, yt)


@pytest.fixture(scope="session")
def terrain_model(terrain_sets):
    (X, y), (Xv, yv), _ = terrain_sets
    return terrain.train_classifier(X, y, Xv, yv)


def rng(seed=0):
    return np.random.default_rng(seed)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
