import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multipose.geometry import (BoundingBox, DegenerateBoxError, InconsistentAnnotationError, Pose,
                                UndefinedOKSError, box_iou, compute_oks, count_keypoints_in_box,
                                crop_transform, pose_box, select_overlapping_instances)

coord = st.floats(-50, 150, allow_nan=False)
size = st.floats(1, 80, allow_nan=False)
boxes = st.builds(BoundingBox, coord, coord, size, size)


def _pose(xy, pid=0, visible=None):
    return Pose.from_xy(np.asarray(xy, dtype=float), visible, pid)


def test_iou_known_values():
    a = BoundingBox(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, BoundingBox(5, 0, 10, 10)) == pytest.approx(50 / 150)
    assert box_iou(a, BoundingBox(10, 0, 5, 5)) == 0.0


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(box_iou(b, a))


def test_degenerate_box_rejected():
    with pytest.raises(DegenerateBoxError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(DegenerateBoxError):
        crop_transform(BoundingBox(0, 0, 1, 1), (0, 64))


def test_pose_is_immutable_and_hashable():
    p = _pose([[1, 2], [3, 4]], pid=3)
    with pytest.raises(ValueError):
        p.keypoints[0, 0] = 9
    assert p == _pose([[1, 2], [3, 4]], pid=3)
    assert len({p, _pose([[1, 2], [3, 4]], pid=3)}) == 1


def test_oks_identity_and_undefined():
    p = _pose([[10, 10], [20, 30], [5, 5]], visible=[1, 1, 0])
    assert compute_oks(p, p, 100.0) == 1.0
    # The unlabeled keypoint does not count, however far off it is.
    moved = p.with_xy(np.array([[10, 10], [20, 30], [500, 500]]))
    assert compute_oks(p, moved, 100.0) == 1.0
    with pytest.raises(UndefinedOKSError):
        compute_oks(_pose([[1, 1]], visible=[0]), p, 1.0)


def test_oks_hand_value():
    gt = _pose([[0, 0], [0, 0]])
    pred = _pose([[3, 4], [0, 0]])
    s2, k = 400.0, 0.08
    expected = (np.exp(-25 / (2 * s2 * k * k)) + 1.0) / 2
    assert compute_oks(gt, pred, s2) == pytest.approx(expected)


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=6), st.floats(0.1, 1e4),
       st.floats(0, 20), st.floats(0, 20))
def test_oks_in_unit_interval_and_monotone(pts, s2, d1, d2):
    gt = _pose(pts)
    near = gt.with_xy(gt.xy + min(d1, d2))
    far = gt.with_xy(gt.xy + max(d1, d2))
    a, b = compute_oks(gt, near, s2), compute_oks(gt, far, s2)
    assert 0.0 <= b <= a <= 1.0


def test_keypoint_count_boundary_inclusive():
    box = BoundingBox(0, 0, 10, 10)
    p = _pose([[0, 0], [10, 10], [10.001, 5], [5, 5]], visible=[1, 1, 1, 0])
    assert count_keypoints_in_box(p, box) == 2


def test_pose_box_margin():
    b = pose_box(_pose([[10, 20], [30, 60]]), margin=0.1)
    assert (b.x, b.y, b.w, b.h) == pytest.approx((8, 16, 24, 48))


def test_selection_order_and_rule():
    primary = BoundingBox(0, 0, 40, 40)
    p0 = _pose([[20, 20]] * 5, pid="a")
    far = _pose([[35, 35], [36, 36], [37, 37], [90, 90], [91, 91]], pid="far")
    near = _pose([[25, 25], [26, 26], [27, 27], [60, 60], [61, 61]], pid="near")
    few = _pose([[20, 20], [21, 21], [90, 90], [91, 91], [92, 92]], pid="few")
    got = select_overlapping_instances(primary, [far, few, p0, near], "a", k=3)
    assert [p.instance_id for p in got] == ["a", "near", "far"]
    got = select_overlapping_instances(primary, [far, few, p0], "a", k=2)
    assert [p.instance_id for p in got] == ["a", "few", "far"]


def test_selection_tie_breaks_by_id():
    primary = BoundingBox(0, 0, 40, 40)
    p0 = _pose([[20, 20]] * 3, pid=0)
    twin_b = _pose([[10, 10], [12, 12], [14, 14]], pid=2)
    twin_a = _pose([[10, 10], [12, 12], [14, 14]], pid=1)
    got = select_overlapping_instances(primary, [twin_b, p0, twin_a], 0)
    assert [p.instance_id for p in got] == [0, 1, 2]


def test_selection_inconsistent_ids():
    box = BoundingBox(0, 0, 10, 10)
    p = _pose([[1, 1]], pid=1)
    with pytest.raises(InconsistentAnnotationError):
        select_overlapping_instances(box, [p], 5)
    with pytest.raises(InconsistentAnnotationError):
        select_overlapping_instances(box, [p, p], 1)


@given(boxes, st.sampled_from([(64, 64), (64, 48), (32, 64)]),
       st.lists(st.tuples(coord, coord), min_size=1, max_size=5))
def test_crop_round_trip_and_corners(box, target, pts):
    c = crop_transform(box, target)
    pts = np.asarray(pts)
    np.testing.assert_allclose(c.invert(c.apply(pts)), pts, atol=1e-9 * (1 + np.abs(pts).max()))
    H, W = target
    corners = c.apply([[c.region.x, c.region.y], [c.region.x2, c.region.y2]])
    np.testing.assert_allclose(corners, [[0, 0], [W, H]], atol=1e-7 * max(H, W))
    # The source box fits inside the crop and is centred in it.
    tb = c.apply_box(box)
    assert tb.x >= -1e-7 and tb.y >= -1e-7 and tb.x2 <= W + 1e-6 and tb.y2 <= H + 1e-6
    np.testing.assert_allclose(tb.center, (W / 2, H / 2), atol=1e-6 * max(H, W))


def test_crop_image_resamples_pixel_centres():
    img = np.arange(16, dtype=float).reshape(4, 4)
    c = crop_transform(BoundingBox(0, 0, 4, 4), (4, 4))
    np.testing.assert_allclose(c.apply_image(img), img)
    # 2x upsampling of a box: crop pixel centres land between source pixels.
    c2 = crop_transform(BoundingBox(1, 1, 2, 2), (4, 4))
    out = c2.apply_image(img)
    assert out[0, 0] == pytest.approx(img[1, 1] - 0.25 * 1 - 0.25 * 4)
