import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multipose.geometry import BoundingBox, Pose, crop_transform
from multipose.target_assignment import InstanceSelector, as_selector, build_targets, multi_instance_loss

from .oracles import brute_loss, brute_targets

CROP = crop_transform(BoundingBox(0.0, 0.0, 64.0, 64.0), (64, 64))


def _pose(xy, pid, visible=None):
    return Pose.from_xy(np.asarray(xy, dtype=float), visible, pid)


def test_selector_constructors():
    s = InstanceSelector.hard(1, 3)
    assert s.is_hard and s.label() == 1 and s.weights.tolist() == [0, 1, 0]
    t = InstanceSelector.interpolate(0.25)
    assert not t.is_hard and t.weights.tolist() == [0.75, 0.25]
    with pytest.raises(ValueError):
        InstanceSelector.hard(2, 2)
    with pytest.raises(ValueError):
        InstanceSelector.soft([0.6, 0.6])
    with pytest.raises(ValueError):
        as_selector([0.5, 0.5], 3)
    assert as_selector(0, 2) == InstanceSelector.hard(0, 2)


def test_single_person_duplicates_into_every_slot():
    p = _pose([[32, 10], [20, 30], [44, 30], [25, 55], [40, 55]], "a")
    t = build_targets(CROP, p, [p], N=3)
    assert t.n_true == 1
    for i in range(1, 3):
        assert np.array_equal(t.targets[i], t.targets[0])
        assert np.array_equal(t.target_weights[i], t.target_weights[0])


def test_dont_care_zeroes_residual_weights():
    p = _pose([[32, 10], [20, 30], [44, 30], [25, 55], [40, 55]], "a")
    t = build_targets(CROP, p, [p], N=2, residual_mode="dont-care")
    assert not t.target_weights[1].any()
    assert t.target_weights[0].all()


def test_second_person_takes_slot_one():
    a = _pose([[32, 10], [20, 30], [44, 30], [25, 55], [40, 55]], "a")
    b = _pose([[50, 12], [40, 30], [60, 30], [45, 58], [58, 58]], "b")
    t = build_targets(CROP, a, [b, a], N=2)
    assert t.n_true == 2 and [p.instance_id for p in t.assigned] == ["a", "b"]
    t3 = build_targets(CROP, b, [b, a], N=1)
    assert t3.n_true == 1 and t3.assigned[0].instance_id == "b"


def test_bad_arguments():
    p = _pose([[1, 1]], 0)
    with pytest.raises(ValueError):
        build_targets(CROP, p, [p], N=0)
    with pytest.raises(ValueError):
        build_targets(CROP, p, [p], N=1, residual_mode="ignore")


def test_loss_zero_at_target_and_slot_count_checked():
    p = _pose([[32, 10], [20, 30], [44, 30], [25, 55], [40, 55]], "a")
    t = build_targets(CROP, p, [p], N=2)
    assert multi_instance_loss(list(t.targets), t) == 0.0
    with pytest.raises(ValueError):
        multi_instance_loss([t.targets[0]], t)


pose_xy = st.lists(st.tuples(st.floats(-20, 84), st.floats(-20, 84)), min_size=3, max_size=3)


@given(st.lists(pose_xy, min_size=1, max_size=4), st.integers(1, 4), st.integers(1, 3),
       st.sampled_from(["duplicate", "dont-care"]), st.integers(0, 2**31 - 1))
def test_matches_brute_force(poses_xy, N, k, mode, seed):
    rng = np.random.default_rng(seed)
    poses = [_pose(xy, i) for i, xy in enumerate(poses_xy)]
    prim = int(rng.integers(len(poses)))
    t = build_targets(CROP, poses[prim], poses, N, k, (16, 16), 2.0, mode, dtype=np.float64)
    order, bt, bw = brute_targets([p.xy for p in poses], [p.labeled for p in poses], list(range(len(poses))),
                                  prim, N, k, (16, 16), (64, 64), 2.0, mode)
    assert [p.instance_id for p in t.assigned] == order[:t.n_true]
    np.testing.assert_allclose(t.targets, bt, atol=1e-12)
    np.testing.assert_array_equal(t.target_weights, bw)
    preds = rng.random((N, 16, 16, 3))
    assert multi_instance_loss(preds, t) == pytest.approx(brute_loss(preds, bt, bw), abs=1e-9)
