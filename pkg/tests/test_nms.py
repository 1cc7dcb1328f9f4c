import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from multipose.geometry import BoundingBox
from multipose.heatmap_codec import SCORE_FLOOR, ScoredPose
from multipose.train_eval import oks_nms, pairwise_oks, pose_oks

from .oracles import exhaustive_nms
from .oracles import pose_oks as oracle_pose_oks

BOX = BoundingBox(0, 0, 40, 40)


def _sp(xy, score, scores=None):
    xy = np.asarray(xy, dtype=float)
    s = np.full(len(xy), 0.9) if scores is None else np.asarray(scores, dtype=float)
    return ScoredPose(np.column_stack([xy, s]), score, None, BOX)


def test_single_pose_kept():
    p = _sp([[1, 2], [3, 4]], 0.5)
    assert oks_nms([p]) == [p]
    assert oks_nms([]) == []


def test_identical_poses_keep_best():
    a = _sp([[1, 2], [3, 4]], 0.9)
    b = _sp([[1, 2], [3, 4]], 0.8)
    assert oks_nms([b, a]) == [a]


def test_near_duplicate_and_distinct():
    a = _sp([[10, 10], [20, 20]], 0.7)
    b = _sp([[10.5, 10], [20, 20.5]], 0.9)
    c = _sp([[35, 5], [5, 35]], 0.5)
    m = pairwise_oks([a, b, c])
    assert m[0, 1] > 0.9 and m[0, 2] < 0.3 and m[1, 2] < 0.3
    assert oks_nms([a, b, c]) == [b, c]


def test_pose_oks_uses_reference_keypoints_and_box():
    ref = _sp([[0, 0], [10, 10]], 1.0, scores=[0.9, 0.0])
    other = _sp([[3, 4], [99, 99]], 1.0)
    expected = np.exp(-25 / (2 * BOX.area * 0.08 ** 2))
    assert pose_oks(ref, other) == expected
    assert pose_oks(_sp([[0, 0]], 1.0, scores=[0.0]), other) == 0.0


poses_strategy = st.lists(
    st.tuples(st.lists(st.tuples(st.floats(0, 40), st.floats(0, 40), st.floats(0, 1)), min_size=3, max_size=3),
              st.floats(0, 1)),
    min_size=0, max_size=12)


@given(poses_strategy, st.floats(0.3, 0.95))
def test_nms_properties_and_oracle(raw, threshold):
    poses = [ScoredPose(np.asarray(kp, dtype=float), s, None, BOX) for kp, s in raw]
    kept = oks_nms(poses, threshold)
    ids = [next(i for i, p in enumerate(poses) if p is k) for k in kept]
    assert len(set(ids)) == len(ids)
    if poses:
        best = max(range(len(poses)), key=lambda i: (poses[i].aggregate_score, -i))
        assert best in ids
    # OKS is measured against the higher-scoring pose, which is kept first.
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert pose_oks(a, b) <= threshold
    matrix = [[oracle_pose_oks(p.xy, p.scores, q.xy, BOX.area, 0.08, SCORE_FLOOR) for q in poses] for p in poses]
    assert ids == exhaustive_nms([p.aggregate_score for p in poses], matrix, threshold)
