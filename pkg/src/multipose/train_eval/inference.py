"""Top-down inference: crop each box, sweep the selector, decode, merge, suppress."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import DEFAULT_KAPPA, BoundingBox, CropTransform, crop_transform
from ..heatmap_codec import ScoredPose, aggregate_score, decode_arrays, heatmap_to_crop
from ..model import PoseNet
from ..synth_data import Dataset
from .nms import DEFAULT_NMS_THRESHOLD, oks_nms


def crop_inputs(image: np.ndarray, boxes: Sequence[BoundingBox],
                input_size: tuple[int, int]) -> tuple[np.ndarray, list[CropTransform]]:
    """Crops ``(B, H, W, 3)`` for a grayscale or RGB float image."""
    crops = [crop_transform(b, input_size) for b in boxes]
    img = np.asarray(image, dtype=np.float32)
    patches = []
    for c in crops:
        p = c.apply_image(img).astype(np.float32)
        patches.append(np.repeat(p[:, :, None], 3, axis=2) if p.ndim == 2 else p)
    if not patches:
        return np.zeros((0, *input_size, 3), np.float32), []
    return np.stack(patches), crops


def heatmaps_to_poses(heatmaps: np.ndarray, crop: CropTransform, image_id=None) -> list[ScoredPose]:
    """Decode ``(N, H', W', K)`` selector outputs into image-frame poses."""
    kp = decode_arrays(heatmaps)
    res = heatmaps.shape[1:3]
    out = []
    for lam in range(len(kp)):
        k = kp[lam].copy()
        k[:, :2] = crop.invert(heatmap_to_crop(k[:, :2], res, crop.target_size))
        out.append(ScoredPose(k, aggregate_score(k[:, 2]), lam, crop.source_box, image_id))
    return out


def candidate_poses(model: PoseNet, boxes: Sequence[BoundingBox], image: np.ndarray,
                    N: int | None = None, image_id=None) -> list[list[ScoredPose]]:
    """Per box, the ``N`` decoded poses before suppression."""
    if not boxes:
        return []
    x, crops = crop_inputs(image, boxes, model.config.input_size)
    hs = model.sweep_batch(x, N)
    return [heatmaps_to_poses(h, c, image_id) for h, c in zip(hs, crops)]


def infer_image(model: PoseNet, boxes: Sequence[BoundingBox], image: np.ndarray,
                N: int | None = None, nms_threshold: float = DEFAULT_NMS_THRESHOLD,
                kappas=DEFAULT_KAPPA, image_id=None) -> list[ScoredPose]:
    """Poses for every box and selector, pooled and passed through OKS-NMS."""
    pool = [p for per_box in candidate_poses(model, boxes, image, N, image_id) for p in per_box]
    return oks_nms(pool, nms_threshold, kappas)


@dataclass
class DatasetPredictions:
    poses: list[ScoredPose]
    ms_per_image: float


def predict_dataset(model: PoseNet, dataset: Dataset, split: str = "test", N: int | None = None,
                    nms_threshold: float = DEFAULT_NMS_THRESHOLD, kappas=DEFAULT_KAPPA,
                    batch_size: int = 64) -> DatasetPredictions:
    """Run inference on every image of ``split`` using its ground-truth boxes.

    Crops from several images share one batched sweep; suppression stays per
    image. ``ms_per_image`` is wall time divided by the image count.
    """
    records = dataset.split(split)
    t0 = time.perf_counter()
    jobs = []  # (image_index, crop, input)
    for ri, r in enumerate(records):
        boxes = [BoundingBox(*p["bbox"]) for p in r["poses"]]
        x, crops = crop_inputs(dataset.image(r["image_id"]), boxes, model.config.input_size)
        jobs.extend((ri, c, xi) for c, xi in zip(crops, x))
    pools: list[list[ScoredPose]] = [[] for _ in records]
    for start in range(0, len(jobs), batch_size):
        chunk = jobs[start:start + batch_size]
        hs = model.sweep_batch(np.stack([j[2] for j in chunk]), N)
        for (ri, crop, _), h in zip(chunk, hs):
            pools[ri].extend(heatmaps_to_poses(h, crop, records[ri]["image_id"]))
    poses = [p for pool in pools for p in oks_nms(pool, nms_threshold, kappas)]
    elapsed = (time.perf_counter() - t0) * 1e3
    return DatasetPredictions(poses, elapsed / max(len(records), 1))
