from __future__ import annotations

from typing import Sequence

import numpy as np

from ..geometry import DEFAULT_KAPPA, oks_from_arrays
from ..heatmap_codec import ScoredPose

# Two crops decode the same person on 16x16 grids at different scales, so
# their duplicates often land well below 0.9 OKS. Distinct people in heavy
# overlap stay under 0.5 almost always.
DEFAULT_NMS_THRESHOLD = 0.5


def pose_oks(ref: ScoredPose, other: ScoredPose, kappas=DEFAULT_KAPPA) -> float:
    """OKS of ``other`` against ``ref``, over the keypoints ``ref`` actually found.

    Uses ``ref``'s source box area as the scale; 0 when ``ref`` found nothing.
    """
    present = ref.present
    if not present.any():
        return 0.0
    return oks_from_arrays(ref.xy, present, other.xy, ref.scale_sq, kappas)


def oks_nms(poses: Sequence[ScoredPose], threshold: float = DEFAULT_NMS_THRESHOLD,
            kappas=DEFAULT_KAPPA) -> list[ScoredPose]:
    """Greedy suppression: keep the best remaining pose, drop those with OKS > threshold to it."""
    order = sorted(range(len(poses)), key=lambda i: -poses[i].aggregate_score)
    kept = []
    remaining = order
    while remaining:
        head, rest = remaining[0], remaining[1:]
        kept.append(poses[head])
        remaining = [j for j in rest if pose_oks(poses[head], poses[j], kappas) <= threshold]
    return kept


def pairwise_oks(poses: Sequence[ScoredPose], kappas=DEFAULT_KAPPA) -> np.ndarray:
    n = len(poses)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            m[i, j] = pose_oks(poses[i], poses[j], kappas)
    return m
