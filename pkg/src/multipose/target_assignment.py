"""Multi-instance training targets and their loss.

Slot 0 always holds the pose whose box defines the crop. Slots 1.. hold the
other poses visible in the crop, nearest first. Slots left over once the
visible poses run out repeat slot 0 (``duplicate``), or carry zero weight
(``dont-care``, kept for ablations only).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

from . import geometry
from .geometry import CropTransform, Pose
from .heatmap_codec import DEFAULT_SIGMA, encode_arrays, mse_loss

RESIDUAL_MODES = ("duplicate", "dont-care")


class InstanceSelector:
    """Which instance the network should produce: a hard slot or a soft mix.

    A hard selector ``lam`` is the one-hot vector over ``n_slots`` slots.
    """

    __slots__ = ("weights", "index")

    def __init__(self, weights, index: int | None = None):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(w) < 1:
            raise ValueError(f"selector weights must be a non-empty vector, got shape {w.shape}")
        if (w < 0).any() or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError(f"selector weights must be >= 0 and sum to 1, got {w}")
        self.weights = w
        self.index = index

    @classmethod
    def hard(cls, lam: int, n_slots: int) -> "InstanceSelector":
        if not (0 <= int(lam) < n_slots) or int(lam) != lam:
            raise ValueError(f"selector {lam} out of range [0, {n_slots - 1}]")
        w = np.zeros(n_slots)
        w[int(lam)] = 1.0
        return cls(w, int(lam))

    @classmethod
    def soft(cls, weights) -> "InstanceSelector":
        return cls(weights)

    @classmethod
    def interpolate(cls, t: float) -> "InstanceSelector":
        """``[1 - t, t]``: t=0 is slot 0, t=1 is slot 1."""
        return cls([1.0 - t, t])

    @property
    def n_slots(self) -> int:
        return len(self.weights)

    @property
    def is_hard(self) -> bool:
        return self.index is not None

    def label(self):
        return self.index if self.is_hard else [float(x) for x in self.weights]

    def __eq__(self, other):
        return isinstance(other, InstanceSelector) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        if self.is_hard:
            return f"InstanceSelector.hard({self.index}, {self.n_slots})"
        return f"InstanceSelector.soft({self.weights.tolist()})"


def as_selector(sel, n_slots: int) -> InstanceSelector:
    if isinstance(sel, InstanceSelector):
        if sel.n_slots != n_slots:
            raise ValueError(f"selector has {sel.n_slots} slots, model expects {n_slots}")
        return sel
    if np.ndim(sel) == 0:
        return InstanceSelector.hard(sel, n_slots)
    s = InstanceSelector.soft(sel)
    if s.n_slots != n_slots:
        raise ValueError(f"selector has {s.n_slots} slots, model expects {n_slots}")
    return s


@dataclass
class TrainingSample:
    input_image: np.ndarray  # (H, W, 3) in [0, 1]
    targets: np.ndarray  # (N, H', W', K)
    target_weights: np.ndarray  # (N, K)
    n_true: int
    crop: CropTransform | None = None
    image_id: Any = None
    primary_id: Hashable = None
    assigned_ids: list = field(default_factory=list)
    crop_poses: list = field(default_factory=list)  # all poses in crop frame

    @property
    def N(self) -> int:
        return len(self.targets)


@dataclass
class Targets:
    targets: np.ndarray  # (N, H', W', K)
    target_weights: np.ndarray  # (N, K)
    n_true: int
    assigned: list  # crop-frame poses in slot order, length n_true


def build_targets(crop: CropTransform, primary: Pose, all_poses: Sequence[Pose], N: int,
                  k: int = 3, resolution: tuple[int, int] | None = None,
                  sigma: float = DEFAULT_SIGMA, residual_mode: str = "duplicate",
                  dtype=np.float32) -> Targets:
    """Distance-ordered heatmap targets for every selector slot of one crop.

    Membership (``>= k`` labeled keypoints inside) is tested in the crop frame
    against the whole crop rectangle.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if residual_mode not in RESIDUAL_MODES:
        raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}, got {residual_mode!r}")
    H, W = crop.target_size
    resolution = resolution if resolution is not None else (H // 4, W // 4)
    in_crop = [crop.apply_pose(p) for p in all_poses]
    chosen = geometry.select_overlapping_instances(crop.crop_rect(), in_crop, primary.instance_id, k)
    n_true = min(len(chosen), N)
    assigned = chosen[:n_true]

    Hh, Wh = resolution
    K = primary.K
    targets = np.empty((N, Hh, Wh, K), dtype=dtype)
    weights = np.empty((N, K), dtype=dtype)
    for i, pose in enumerate(assigned):
        targets[i] = encode_arrays(pose.xy, pose.labeled, resolution, sigma, (H, W))
        weights[i] = pose.labeled
    for i in range(n_true, N):
        targets[i] = targets[0]
        weights[i] = weights[0] if residual_mode == "duplicate" else 0.0
    return Targets(targets, weights, n_true, assigned)


def multi_instance_loss(predictions, sample) -> float:
    """Average over slots of the weighted heatmap MSE against each slot target."""
    targets, weights = sample.targets, sample.target_weights
    if len(predictions) != len(targets):
        raise ValueError(f"got {len(predictions)} predictions for {len(targets)} target slots")
    total = 0.0
    for pred, tgt, w in zip(predictions, targets, weights):
        total += mse_loss(pred, tgt, w)
    return total / len(targets)
