import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from tacsole.cop import (
    BLUE,
    GREEN,
    NO_CONTACT,
    RED_LINE,
    SAFE,
    UNSAFE,
    classify_safety,
    cop_from_frame,
    estimate_cop,
    render_cop_overlay,
    threshold_pressure,
    write_trace,
)
from tacsole.errors import GeometryError
from tacsole.frame_io import SensorGeometry, TactileFrame
from tacsole.synth import render_press

G = SensorGeometry()
SMALL = SensorGeometry(roi_width=20, roi_height=24)


def brute_cop(mask):
    sr = sc = n = 0
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            if mask[r, c]:
                sr += r
                sc += c
                n += 1
    return sr / n, sc / n, n


def blank():
    return np.zeros(G.shape, bool)


def test_single_pixel():
    m = blank()
    m[50, 30] = True
    e = estimate_cop(m, G)
    assert e.cop_row == 50 and e.cop_col == 30 and e.n_pixels == 1


def test_two_equal_blobs():
    m = blank()
    m[38:43, 10:15] = True
    m[58:63, 80:85] = True
    assert estimate_cop(m, G).cop_row == 50


def test_empty_mask_is_no_contact():
    e = estimate_cop(blank(), G)
    assert e.status == NO_CONTACT and e.n_pixels == 0


def test_mask_shape_checked():
    with pytest.raises(GeometryError):
        estimate_cop(np.zeros((10, 10), bool), G)


@settings(max_examples=1000, deadline=None)
@given(mask=arrays(bool, SMALL.shape))
def test_matches_brute_force(mask):
    e = estimate_cop(mask, SMALL)
    if not mask.any():
        assert e.status == NO_CONTACT and e.n_pixels == 0
        return
    r, c, n = brute_cop(mask)
    assert (e.cop_row, e.cop_col, e.n_pixels) == (r, c, n)
    assert 0 <= e.cop_row <= SMALL.roi_height - 1 and 0 <= e.cop_col <= SMALL.roi_width - 1
    assert e.status == classify_safety(e.offset_fraction, n, 0.25)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(-20, 20))
def test_translation_equivariance(seed, k):
    rng = np.random.default_rng(seed)
    m = blank()
    m[30:110] = rng.random((80, G.roi_width)) < 0.1
    m[30, 0] = True
    e0 = estimate_cop(m, G)
    e1 = estimate_cop(np.roll(m, k, axis=0), G)
    assert e1.cop_row - e0.cop_row == pytest.approx(k, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), extra=st.integers(1, 50))
def test_adding_front_pixels_moves_cop_forward(seed, extra):
    rng = np.random.default_rng(seed)
    m = rng.random(G.shape) < 0.05
    e0 = estimate_cop(m, G)
    front = int(np.floor(e0.cop_row)) + 1
    free = np.argwhere(~m[front:]) + (front, 0)
    pick = free[rng.choice(len(free), min(extra, len(free)), replace=False)]
    m2 = m.copy()
    m2[pick[:, 0], pick[:, 1]] = True
    e1 = estimate_cop(m2, G)
    assert e1.cop_row > e0.cop_row and e1.offset_fraction > e0.offset_fraction


def test_front_row_sign():
    m = blank()
    m[120, 50] = True
    assert estimate_cop(m, G).offset_fraction > 0
    top = SensorGeometry(front_row="top")
    assert estimate_cop(m, top).offset_fraction == -estimate_cop(m, G).offset_fraction


def test_centre_row_is_safe_with_zero_offset():
    m = blank()
    m[71, :] = True
    e = estimate_cop(m, G)
    assert e.offset_fraction == 0 and e.status == SAFE


def test_safety_boundary():
    assert classify_safety(0.25) == SAFE
    assert classify_safety(-0.25) == SAFE
    assert classify_safety(0.30) == UNSAFE
    assert classify_safety(0.0, n_pixels=0) == NO_CONTACT


@given(off=st.floats(-2, 2), sf=st.floats(0, 1))
def test_status_pure_function(off, sf):
    s = classify_safety(off, 5, sf)
    assert s == classify_safety(off, 7, sf)
    assert (s == UNSAFE) == (abs(off) > sf)


def test_contour_mode_differs_on_unequal_blobs():
    m = blank()
    m[20:30, 10:30] = True  # 200 px centred at 24.5
    m[100:102, 10:12] = True  # 4 px centred at 100.5
    px = estimate_cop(m, G, mode="pixel")
    ct = estimate_cop(m, G, mode="contour")
    assert ct.cop_row == pytest.approx((24.5 + 100.5) / 2)
    assert px.cop_row == pytest.approx((200 * 24.5 + 4 * 100.5) / 204)
    with pytest.raises(ValueError):
        estimate_cop(m, G, mode="median")


# --------------------------------------------------------------------------- threshold


def test_uniform_white_frame_empty():
    m = threshold_pressure(TactileFrame(np.full((*G.shape, 3), 255, np.uint8)))
    assert not m.binary.any()


def test_all_zero_frame_full():
    m = threshold_pressure(TactileFrame(np.zeros((*G.shape, 3), np.uint8)))
    assert m.binary.all()


def test_band_edge_inclusive():
    px = np.array([[199, 200, 201]], np.uint8)
    assert threshold_pressure(px).binary.tolist() == [[True, True, False]]


@pytest.mark.parametrize("offset", [-0.5, 0.0, 0.3, 0.6])
def test_press_blob_count(offset):
    frame, truth = render_press(offset, seed=1)
    n = truth.extra["n_contacts"]
    got = threshold_pressure(frame).n_components
    assert abs(got - n) <= 0.1 * n


@pytest.mark.parametrize("offset", [-0.4, 0.0, 0.25, 0.5])
def test_press_cop_tracks_offset(offset):
    frame, _ = render_press(offset, seed=0)
    e = cop_from_frame(frame)
    assert e.offset_fraction == pytest.approx(offset, abs=0.08)


def test_cop_from_frame_modes_agree_with_estimate():
    frame, _ = render_press(0.2, seed=0)
    m = threshold_pressure(frame)
    assert cop_from_frame(frame) == estimate_cop(m, G)
    assert cop_from_frame(frame, mode="contour") == estimate_cop(m, G, mode="contour")


def test_frame_geometry_checked():
    with pytest.raises(GeometryError):
        cop_from_frame(TactileFrame(np.zeros((10, 10, 3), np.uint8)))


# --------------------------------------------------------------------------- outputs


def test_overlay_colours():
    frame = TactileFrame(np.full((*G.shape, 3), 128, np.uint8))
    m = blank()
    m[72, 5] = True
    img = render_cop_overlay(frame, estimate_cop(m, G))
    assert (img[71] == BLUE).all() and (img[72] == GREEN).all()
    m = blank()
    m[130, 5] = True
    img = render_cop_overlay(frame, estimate_cop(m, G))
    assert (img[130] == RED_LINE).all()
    img = render_cop_overlay(frame, estimate_cop(blank(), G))
    colored = (img != 128).any(-1)
    assert ndimage.label(colored)[1] == 1 and colored[71].all()


def test_trace_csv(tmp_path):
    m = blank()
    m[50, 30] = True
    n = write_trace([estimate_cop(m, G, timestamp=0.5, frame_index=3)], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert n == 1
    assert lines[0] == "timestamp,frame_index,cop_row,cop_col,n_pixels,offset_fraction,status"
    assert lines[1].split(",")[1] == "3" and lines[1].endswith(UNSAFE)
