import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multipose.geometry import BoundingBox, Pose, crop_transform
from multipose.heatmap_codec import (HeatmapSet, aggregate_score, crop_to_heatmap, decode, decode_arrays,
                                     dump_heatmaps, encode, heatmap_to_crop, mse_loss, read_pgm, write_pgm)

RES, INP = (16, 16), (64, 64)


def _pose(xy, visible=None):
    return Pose.from_xy(np.asarray(xy, dtype=float), visible)


def test_coordinate_maps_are_inverse():
    xy = np.array([[0.0, 0.0], [2.0, 2.0], [63.9, 10.0]])
    np.testing.assert_allclose(heatmap_to_crop(crop_to_heatmap(xy, RES, INP), RES, INP), xy)
    # The centre of heatmap cell (0, 0) is crop pixel (2, 2).
    np.testing.assert_allclose(crop_to_heatmap([[2.0, 2.0]], RES, INP), [[0.0, 0.0]])


def test_encode_peak_and_zero_channels():
    p = _pose([[2.0, 2.0], [30.0, 30.0], [-5.0, 10.0]], visible=[1, 0, 1])
    h = encode(p, RES, 2.0, INP).data
    assert h[0, 0, 0] == pytest.approx(1.0)
    assert not h[..., 1].any()  # unlabeled
    assert not h[..., 2].any()  # outside the crop


def test_encode_matches_direct_gaussian():
    p = _pose([[21.0, 37.0]])
    h = encode(p, RES, 1.5, INP).data[..., 0]
    cx, cy = 21.0 / 4 - 0.5, 37.0 / 4 - 0.5
    yy, xx = np.mgrid[0:16, 0:16]
    np.testing.assert_allclose(h, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 1.5 ** 2)))


def test_encode_rejects_bad_sigma():
    with pytest.raises(ValueError):
        encode(_pose([[1.0, 1.0]]), RES, 0.0)


def test_decode_quarter_shift_and_borders():
    h = np.zeros((5, 5, 1))
    h[2, 2, 0] = 1.0
    h[2, 3, 0] = 0.5
    h[1, 2, 0] = 0.2
    kp = decode_arrays(h)[0]
    assert tuple(kp) == (2.25, 1.75, 1.0)
    # Corner peak: off-grid neighbours count as zero, so it moves inward only.
    h = np.zeros((5, 5, 1))
    h[0, 0, 0] = 0.8
    kp = decode_arrays(h)[0]
    assert tuple(kp[:2]) == (0.0, 0.0)
    h[0, 1, 0] = 0.1
    assert tuple(decode_arrays(h)[0][:2]) == (0.25, 0.0)


def test_decode_with_crop_maps_to_image():
    box = BoundingBox(10.0, 20.0, 32.0, 32.0)
    crop = crop_transform(box, INP)
    img_xy = np.array([[26.0, 36.0], [14.0, 30.0]])
    h = encode(crop.apply_pose(_pose(img_xy)), RES, 2.0, INP)
    sp = decode(h, selector=1, crop=crop)
    # 0.5 heatmap px is 2 crop px, which is 1 image px at this scale.
    assert np.abs(sp.xy - img_xy).max() <= 1.0
    assert sp.selector_used == 1 and sp.source_box == box


@given(st.floats(0, 15), st.floats(0, 15), st.floats(1.0, 3.0))
def test_round_trip_error_at_most_half_cell(hx, hy, sigma):
    crop_xy = heatmap_to_crop([[hx, hy]], RES, INP)
    h = encode(_pose(crop_xy), RES, sigma, INP).data
    got = decode_arrays(h)[0, :2]
    assert np.abs(got - [hx, hy]).max() <= 0.5 + 1e-12


def test_aggregate_score_floor():
    assert aggregate_score(np.array([0.9, 0.5, 0.01])) == pytest.approx(0.7)
    assert aggregate_score(np.array([0.0, 0.01])) == 0.0


def test_mse_weighting():
    p = np.zeros((4, 4, 3))
    t = np.ones((4, 4, 3))
    t[..., 2] = 5.0
    assert mse_loss(p, t) == pytest.approx((1 + 1 + 25) / 3)
    assert mse_loss(p, t, [1, 1, 0]) == pytest.approx(1.0)
    assert mse_loss(p, t, [0, 0, 0], return_supervised=True) == (0.0, False)
    with pytest.raises(ValueError):
        mse_loss(p, t[..., :2])


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, size=(7, 5)) / 255.0
    a[0, 0] = 32 / 255.0  # a whitespace byte right after the header
    write_pgm(tmp_path / "a.pgm", a)
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), a)


def test_dump_heatmaps_names(tmp_path):
    hs = HeatmapSet(np.random.default_rng(0).random((4, 4, 3)))
    paths = dump_heatmaps(hs, tmp_path, "img7", 1)
    assert [p.name for p in paths] == ["img7_1_0.pgm", "img7_1_1.pgm", "img7_1_2.pgm"]
