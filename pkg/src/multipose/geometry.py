"""Keypoints, poses, boxes, crop transforms and object keypoint similarity.

Coordinates are continuous pixels: pixel ``(row r, col c)`` covers
``[c, c+1) x [r, r+1)`` and its center sits at ``(c + 0.5, r + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_KAPPA = 0.08
POSE_BOX_MARGIN = 0.1


class Visibility(IntEnum):
    UNLABELED = 0
    LABELED = 1


class InconsistentAnnotationError(ValueError):
    pass


class UndefinedOKSError(ValueError):
    pass


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visibility: Visibility = Visibility.LABELED

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"keypoint coordinates must be finite, got ({self.x}, {self.y})")
        object.__setattr__(self, "visibility", Visibility(int(self.visibility)))


@dataclass(frozen=True, eq=False)
class Pose:
    """K keypoints stored as a ``(K, 3)`` array of ``x, y, visibility``."""

    keypoints: np.ndarray
    instance_id: Hashable = 0

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 3:
            raise ValueError(f"pose keypoints must be (K, 3), got {kp.shape}")
        if not np.isfinite(kp).all():
            raise ValueError("pose keypoints must be finite")
        if not np.isin(kp[:, 2], (Visibility.UNLABELED, Visibility.LABELED)).all():
            raise ValueError("visibility must be 0 (unlabeled) or 1 (labeled)")
        kp.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)

    @classmethod
    def from_xy(cls, xy, visible=None, instance_id: Hashable = 0) -> "Pose":
        xy = np.asarray(xy, dtype=np.float64)
        vis = np.ones(len(xy)) if visible is None else np.asarray(visible, dtype=np.float64)
        return cls(np.column_stack([xy, vis]), instance_id)

    @property
    def K(self) -> int:
        return len(self.keypoints)

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def labeled(self) -> np.ndarray:
        return self.keypoints[:, 2] == Visibility.LABELED

    def keypoint(self, i: int) -> Keypoint:
        x, y, v = self.keypoints[i]
        return Keypoint(float(x), float(y), Visibility(int(v)))

    def with_xy(self, xy) -> "Pose":
        return Pose(np.column_stack([np.asarray(xy, dtype=np.float64), self.keypoints[:, 2]]),
                    self.instance_id)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return self.instance_id == other.instance_id and np.array_equal(self.keypoints, other.keypoints)

    def __hash__(self):
        return hash((self.instance_id, self.keypoints.tobytes()))


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0) or not np.isfinite([self.x, self.y, self.w, self.h]).all():
            raise DegenerateBoxError(f"box needs finite coords and w, h > 0: {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def expand(self, margin: float) -> "BoundingBox":
        """Grow by ``margin`` times the width/height on every side."""
        return BoundingBox(self.x - margin * self.w, self.y - margin * self.h,
                           self.w * (1 + 2 * margin), self.h * (1 + 2 * margin))

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def pose_box(pose: Pose, margin: float = POSE_BOX_MARGIN) -> BoundingBox:
    """Tight box over labeled keypoints, grown by ``margin`` per side."""
    pts = pose.xy[pose.labeled]
    if len(pts) == 0:
        raise DegenerateBoxError("pose has no labeled keypoints")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    w = max(x1 - x0, 1e-6)
    h = max(y1 - y0, 1e-6)
    return BoundingBox(float(x0), float(y0), float(w), float(h)).expand(margin)


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def count_keypoints_in_box(pose: Pose, box: BoundingBox) -> int:
    """Labeled keypoints inside ``box``; the boundary counts as inside."""
    x, y = pose.xy[:, 0], pose.xy[:, 1]
    inside = (x >= box.x) & (x <= box.x2) & (y >= box.y) & (y <= box.y2)
    return int(np.count_nonzero(inside & pose.labeled))


def select_overlapping_instances(primary: BoundingBox, poses: Sequence[Pose],
                                 primary_id: Hashable, k: int = 3) -> list[Pose]:
    """Poses sharing the ``primary`` box, primary first, then nearest first.

    A non-primary pose qualifies when at least ``k`` of its labeled keypoints
    fall inside ``primary``. Neighbours are ordered by the center distance of
    their own derived box from ``primary``; ties go to the smaller instance_id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    matches = [p for p in poses if p.instance_id == primary_id]
    if len(matches) != 1:
        raise InconsistentAnnotationError(
            f"expected exactly one pose with instance_id {primary_id!r}, found {len(matches)}")
    others = []
    for p in poses:
        if p.instance_id == primary_id or count_keypoints_in_box(p, primary) < k:
            continue
        others.append((center_distance(pose_box(p), primary), _sort_key(p.instance_id), p))
    others.sort(key=lambda t: (t[0], t[1]))
    return [matches[0]] + [p for _, _, p in others]


def _sort_key(instance_id):
    # Mixed id types would not compare; order by type name first.
    return (type(instance_id).__name__, instance_id)


def compute_oks(gt: Pose, pred: Pose, scale_sq: float,
                kappas: np.ndarray | float = DEFAULT_KAPPA) -> float:
    """Object keypoint similarity, averaged over the labeled keypoints of ``gt``."""
    if not scale_sq > 0:
        raise ValueError(f"scale_sq must be positive, got {scale_sq}")
    return oks_from_arrays(gt.xy, gt.labeled, pred.xy, scale_sq, kappas)


def oks_from_arrays(gt_xy: np.ndarray, gt_labeled: np.ndarray, pred_xy: np.ndarray,
                    scale_sq: float, kappas=DEFAULT_KAPPA) -> float:
    if not np.any(gt_labeled):
        raise UndefinedOKSError("OKS undefined: reference pose has no labeled keypoints")
    kappas = np.broadcast_to(np.asarray(kappas, dtype=np.float64), (len(gt_xy),))
    d2 = np.sum((np.asarray(gt_xy) - np.asarray(pred_xy)) ** 2, axis=1)
    e = np.exp(-d2 / (2.0 * scale_sq * kappas ** 2))
    return float(e[gt_labeled].mean())


@dataclass(frozen=True)
class CropTransform:
    """Uniform scale + translation mapping an image region onto a crop.

    ``region`` is the source box after margin and aspect padding; its corners
    land exactly on the crop corners.
    """

    source_box: BoundingBox
    target_size: tuple[int, int]
    region: BoundingBox = field(repr=False)
    scale: float = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        """2x3 affine coefficients, image frame -> crop frame."""
        s = self.scale
        return np.array([[s, 0.0, -s * self.region.x], [0.0, s, -s * self.region.y]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - (self.region.x, self.region.y)) * self.scale

    def invert(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts / self.scale + (self.region.x, self.region.y)

    def apply_pose(self, pose: Pose) -> Pose:
        return pose.with_xy(self.apply(pose.xy))

    def invert_pose(self, pose: Pose) -> Pose:
        return pose.with_xy(self.invert(pose.xy))

    def apply_box(self, box: BoundingBox) -> BoundingBox:
        x, y = self.apply([box.x, box.y])
        return BoundingBox(float(x), float(y), box.w * self.scale, box.h * self.scale)

    def crop_rect(self) -> BoundingBox:
        H, W = self.target_size
        return BoundingBox(0.0, 0.0, float(W), float(H))

    def apply_image(self, image: np.ndarray, order: int = 1) -> np.ndarray:
        """Resample ``image`` (H, W) or (H, W, C) into the crop; outside is 0."""
        H, W = self.target_size
        # Crop pixel centers in crop frame, mapped back to image pixel indices.
        cx = (np.arange(W) + 0.5) / self.scale + self.region.x - 0.5
        cy = (np.arange(H) + 0.5) / self.scale + self.region.y - 0.5
        rows, cols = np.meshgrid(cy, cx, indexing="ij")
        img = np.asarray(image)
        if img.ndim == 2:
            return ndimage.map_coordinates(img, [rows, cols], order=order, mode="constant", cval=0.0)
        return np.stack([ndimage.map_coordinates(img[..., c], [rows, cols], order=order,
                                                 mode="constant", cval=0.0)
                         for c in range(img.shape[2])], axis=-1)


def crop_transform(box: BoundingBox, target: tuple[int, int], margin: float = 0.0) -> CropTransform:
    """Map ``box`` (grown by ``margin``) onto a ``target = (H, W)`` crop.

    The shorter side of the box, relative to the target aspect ratio, is
    padded symmetrically so the mapping is a uniform scale.
    """
    H, W = target
    if H <= 0 or W <= 0:
        raise DegenerateBoxError(f"target size must be positive, got {target}")
    if not (box.w > 0 and box.h > 0):
        raise DegenerateBoxError(f"degenerate box {box}")
    b = box.expand(margin) if margin else box
    aspect = W / H
    w, h = b.w, b.h
    if w / h > aspect:
        h = w / aspect
    else:
        w = h * aspect
    cx, cy = b.center
    region = BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)
    return CropTransform(box, (int(H), int(W)), region, W / w)
