import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacsole.contact import ContactMask, estimate_pose, label_mask, poses_to_csv, segment_contact
from tacsole.frame_io import DiffImage, TactileFrame, diff_reference
from tacsole.synth import IndenterScene, Sphere, reference_image, render_indentation


def rect_mask(length, width, angle_deg, centre=(71.0, 56.0), shape=(143, 114)):
    """Pixel-centre inclusion test for a rotated rectangle (angle from +col toward +row)."""
    rows, cols = np.indices(shape, dtype=np.float64)
    a = math.radians(angle_deg)
    dr, dc = rows - centre[0], cols - centre[1]
    u = dc * math.cos(a) + dr * math.sin(a)
    v = -dc * math.sin(a) + dr * math.cos(a)
    return (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)


def angle_diff(a, b):
    d = abs(a - b) % 180
    return min(d, 180 - d)


def sphere_diff(centres):
    ref = TactileFrame(reference_image((143, 114)))
    frame, _ = render_indentation(IndenterScene([Sphere(c, 5.0, 1.5) for c in centres], 0.5))
    return diff_reference(frame, ref)


def test_zero_diff_is_empty():
    m = segment_contact(DiffImage(np.zeros((143, 114), np.uint8)))
    assert m.n_components == 0 and not m.binary.any()
    assert estimate_pose(m) == []


def test_single_and_double_dent():
    assert segment_contact(sphere_diff([(28.0, 35.0)])).n_components == 1
    assert segment_contact(sphere_diff([(15.0, 20.0), (40.0, 50.0)])).n_components == 2


def test_threshold_range_checked():
    with pytest.raises(ValueError):
        segment_contact(DiffImage(np.zeros((4, 4), np.uint8)), threshold=300)


def test_min_area_filter_and_labels():
    b = np.zeros((30, 30), bool)
    b[2:4, 2:4] = True  # 4 px, dropped
    b[10:20, 10:20] = True
    b[25:28, 0:10] = True  # 30 px
    m = label_mask(b, min_area=20)
    assert m.n_components == 2
    assert sorted(np.unique(m.labels)) == [0, 1, 2]


def test_eight_connectivity():
    b = np.zeros((5, 5), bool)
    b[1, 1] = b[2, 2] = b[3, 3] = True
    assert label_mask(b).n_components == 1


def test_axis_aligned_rectangle():
    b = np.zeros((143, 114), bool)
    b[60:70, 30:70] = True
    p = estimate_pose(label_mask(b))[0]
    assert angle_diff(p.orientation_deg, 0) <= 1
    assert p.major / p.minor == pytest.approx(4.0, rel=0.02)
    assert p.area == 400
    assert p.major >= p.minor > 0
    assert not p.degenerate


def test_rotated_rectangle_30():
    p = estimate_pose(label_mask(rect_mask(40, 10, 30)))[0]
    assert angle_diff(p.orientation_deg, 30) <= 3


def test_disk_flagged_degenerate():
    rows, cols = np.indices((60, 60))
    disk = np.hypot(rows - 29.5, cols - 29.5) < 15
    p = estimate_pose(label_mask(disk))[0]
    assert p.degenerate and 0 <= p.orientation_deg < 180


@pytest.mark.parametrize("angle", range(0, 180, 10))
def test_orientation_every_ten_degrees(angle):
    p = estimate_pose(label_mask(rect_mask(36, 12, angle)))[0]
    assert angle_diff(p.orientation_deg, angle) <= 3
    assert 0 <= p.orientation_deg < 180


def test_components_ordered_by_area(tmp_path):
    b = np.zeros((60, 60), bool)
    b[2:8, 2:8] = True
    b[20:40, 20:30] = True
    b[50:55, 40:58] = True
    poses = estimate_pose(label_mask(b))
    assert [p.area for p in poses] == [200, 90, 36]
    for p in poses:
        r0, c0, r1, c1 = p.bbox
        assert r0 <= p.centroid[0] < r1 and c0 <= p.centroid[1] < c1
    poses_to_csv(poses, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0].startswith("component,centroid_row")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.integers(-10, 10), b=st.integers(-10, 10))
def test_centroid_translation_equivariant(seed, a, b):
    rng = np.random.default_rng(seed)
    base = np.zeros((80, 80), bool)
    h, w = rng.integers(3, 20, 2)
    r0, c0 = rng.integers(15, 40, 2)
    base[r0:r0 + h, c0:c0 + w] = rng.random((h, w)) < 0.8
    base[r0, c0:c0 + w] = True  # keep it connected enough to form a main blob
    shifted = np.roll(np.roll(base, a, axis=0), b, axis=1)
    p0 = estimate_pose(label_mask(base))
    p1 = estimate_pose(label_mask(shifted))
    assert len(p0) == len(p1)
    for q0, q1 in zip(p0, p1):
        assert q1.centroid[0] - q0.centroid[0] == pytest.approx(a, abs=1e-9)
        assert q1.centroid[1] - q0.centroid[1] == pytest.approx(b, abs=1e-9)
        assert q1.orientation_deg == pytest.approx(q0.orientation_deg, abs=1e-9)
        assert q1.area == q0.area


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_area_equals_pixel_count(seed):
    rng = np.random.default_rng(seed)
    b = rng.random((40, 40)) < 0.3
    m = label_mask(b)
    poses = estimate_pose(m)
    assert sum(p.area for p in poses) == int(b.sum())
    for lab in range(1, m.n_components + 1):
        count = 0
        for r in range(40):
            for c in range(40):
                count += m.labels[r, c] == lab
        assert count in [p.area for p in poses]


def test_contact_mask_dims_match_diff():
    d = sphere_diff([(28.0, 35.0)])
    m = segment_contact(d)
    assert isinstance(m, ContactMask) and (m.height, m.width) == (d.height, d.width)
