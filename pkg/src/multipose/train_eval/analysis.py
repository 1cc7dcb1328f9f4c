"""Diagnostics of trained multi-instance models on held-out crops."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..geometry import DEFAULT_KAPPA, BoundingBox, oks_from_arrays
from ..heatmap_codec import decode_arrays, heatmap_to_crop
from ..model import PoseNet
from ..synth_data import Dataset, record_poses
from .inference import candidate_poses, crop_inputs
from .nms import DEFAULT_NMS_THRESHOLD, oks_nms, pose_oks


@dataclass
class ResidualAgreement:
    n_crops: int
    mutual_oks: list = field(default_factory=list)
    kept_after_nms: list = field(default_factory=list)

    def fraction_above(self, level: float) -> float:
        return float(np.mean(np.asarray(self.mutual_oks) >= level)) if self.n_crops else 0.0

    def fraction_merged(self) -> float:
        return float(np.mean(np.asarray(self.kept_after_nms) == 1)) if self.n_crops else 0.0


def residual_agreement(model: PoseNet, dataset: Dataset, split: str = "test",
                       nms_threshold: float = DEFAULT_NMS_THRESHOLD, kappas=DEFAULT_KAPPA,
                       max_images: int | None = None) -> ResidualAgreement:
    """For single-person images: OKS between the selector-0 and selector-1 poses.

    The mutual OKS is the smaller of the two directed values. Also counts how
    many of the two poses survive suppression.
    """
    records = [r for r in dataset.split(split) if len(r["poses"]) == 1][:max_images]
    out = ResidualAgreement(len(records))
    for r in records:
        box = BoundingBox(*r["poses"][0]["bbox"])
        a, b = candidate_poses(model, [box], dataset.image(r["image_id"]), 2, r["image_id"])[0]
        out.mutual_oks.append(min(pose_oks(a, b, kappas), pose_oks(b, a, kappas)))
        out.kept_after_nms.append(len(oks_nms([a, b], nms_threshold, kappas)))
    return out


@dataclass
class SeparationResult:
    n_crops: int  # two-person crops inspected
    n_detected: int  # crops where both people are found by some selector
    n_ordered: int  # of those, selector 0 fits the primary better than selector 1

    @property
    def fraction(self) -> float:
        return self.n_ordered / self.n_detected if self.n_detected else 0.0


def instance_separation(model: PoseNet, dataset: Dataset, split: str = "test",
                        detect_oks: float = 0.5, kappas=DEFAULT_KAPPA) -> SeparationResult:
    """Check that selector 0 follows the crop's own person on two-person crops.

    A crop counts when each ground-truth person reaches ``detect_oks`` with
    at least one of the two selector outputs.
    """
    n_crops = n_det = n_ok = 0
    for r in dataset.split(split):
        if len(r["poses"]) != 2:
            continue
        poses = record_poses(r)
        boxes = [BoundingBox(*p["bbox"]) for p in r["poses"]]
        per_box = candidate_poses(model, boxes, dataset.image(r["image_id"]), 2, r["image_id"])
        for i, (p0, p1) in enumerate(per_box):
            n_crops += 1
            prim, other = poses[i], poses[1 - i]
            a_prim, a_other = boxes[i].area, boxes[1 - i].area

            def oks(gt, area, pred):
                return oks_from_arrays(gt.xy, gt.labeled, pred.xy, area, kappas)

            if max(oks(prim, a_prim, p0), oks(prim, a_prim, p1)) < detect_oks:
                continue
            if max(oks(other, a_other, p0), oks(other, a_other, p1)) < detect_oks:
                continue
            n_det += 1
            if oks(prim, a_prim, p0) > oks(prim, a_prim, p1):
                n_ok += 1
    return SeparationResult(n_crops, n_det, n_ok)


@dataclass
class PathCheck:
    image_id: str
    primary_id: object
    endpoints_bitwise: bool
    steps: np.ndarray  # mean keypoint displacement between adjacent t samples
    separation: float  # mean keypoint distance between the two endpoint poses
    path: np.ndarray  # (steps, K, 2) crop-frame keypoints

    @property
    def max_step(self) -> float:
        return float(self.steps.max())

    @property
    def continuous(self) -> bool:
        return self.max_step < self.separation


def _crop_xy(h: np.ndarray, input_size) -> np.ndarray:
    return heatmap_to_crop(decode_arrays(h)[..., :2], h.shape[-3:-1], input_size)


def continuous_path(model: PoseNet, x: np.ndarray, steps: int = 11) -> tuple[bool, np.ndarray, float, np.ndarray]:
    """Sweep the soft selector over ``steps`` points for one crop ``(H, W, 3)``.

    Returns ``(endpoints_bitwise, step_sizes, separation, path)``.
    """
    hard = model.sweep(x, 2)
    soft = model.continuous_sweep(x, steps)
    bitwise = (np.array_equal(soft[0].data, hard[0].data)
               and np.array_equal(soft[-1].data, hard[1].data))
    path = np.stack([_crop_xy(h.data, model.config.input_size) for h in soft])
    step_sizes = np.linalg.norm(np.diff(path, axis=0), axis=2).mean(axis=1)
    separation = float(np.linalg.norm(path[-1] - path[0], axis=1).mean())
    return bitwise, step_sizes, separation, path


def find_separated_crop(model: PoseNet, dataset: Dataset, split: str = "test",
                        min_separation: float = 8.0, kappas=DEFAULT_KAPPA):
    """First two-person crop whose two selector poses land on different people.

    ``min_separation`` is the mean keypoint distance between the two poses, in
    crop pixels. Returns ``(record, primary_index, crop_input)`` or None.
    """
    size = model.config.input_size
    for r in dataset.split(split):
        if len(r["poses"]) != 2:
            continue
        poses = record_poses(r)
        img = dataset.image(r["image_id"])
        for i, pr in enumerate(r["poses"]):
            x, crops = crop_inputs(img, [BoundingBox(*pr["bbox"])], size)
            hs = model.sweep_batch(x, 2)[0]
            xy = _crop_xy(hs, size)
            if np.linalg.norm(xy[0] - xy[1], axis=1).mean() < min_separation:
                continue
            gt = [crops[0].apply_pose(p) for p in poses]
            area = float(size[0] * size[1])
            o0 = oks_from_arrays(gt[i].xy, gt[i].labeled, xy[0], area, kappas)
            o1 = oks_from_arrays(gt[1 - i].xy, gt[1 - i].labeled, xy[1], area, kappas)
            if o0 >= 0.5 and o1 >= 0.5:
                return r, i, x[0]
    return None


def path_check(model: PoseNet, dataset: Dataset, split: str = "test", steps: int = 11) -> PathCheck | None:
    found = find_separated_crop(model, dataset, split)
    if found is None:
        return None
    r, i, x = found
    bitwise, step_sizes, sep, path = continuous_path(model, x, steps)
    return PathCheck(r["image_id"], r["poses"][i]["instance_id"], bitwise, step_sizes, sep, path)


@dataclass
class OverheadTiming:
    single_ms: float  # median N=1 forward
    sweep_ms: float  # median cached N=2 sweep
    n_images: int

    @property
    def ratio(self) -> float:
        return self.sweep_ms / self.single_ms


def sweep_overhead(model_n2: PoseNet, model_n1: PoseNet, crops: np.ndarray, warmup: int = 5) -> OverheadTiming:
    """Median per-image wall time of a cached two-selector sweep vs one forward.

    Both models see the same batch-1 crops, interleaved so drift in machine
    load affects both equally.
    """
    for x in crops[:warmup]:
        model_n1.predict(x)
        model_n2.sweep(x, 2)
    single, sweep = [], []
    for x in crops:
        t0 = time.perf_counter()
        model_n1.predict(x)
        t1 = time.perf_counter()
        model_n2.sweep(x, 2)
        t2 = time.perf_counter()
        single.append(t1 - t0)
        sweep.append(t2 - t1)
    return OverheadTiming(float(np.median(single)) * 1e3, float(np.median(sweep)) * 1e3, len(crops))


def sample_crops(dataset: Dataset, input_size=(64, 64), split: str = "test", limit: int = 200) -> np.ndarray:
    """Up to ``limit`` crops ``(n, H, W, 3)``, one per ground-truth box."""
    out = []
    for r in dataset.split(split):
        boxes = [BoundingBox(*p["bbox"]) for p in r["poses"]]
        x, _ = crop_inputs(dataset.image(r["image_id"]), boxes, input_size)
        out.extend(x)
        if len(out) >= limit:
            break
    return np.stack(out[:limit])
