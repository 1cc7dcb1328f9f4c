"""COCO-style keypoint AP with greedy matching and 101-point interpolation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..geometry import DEFAULT_KAPPA, BoundingBox, oks_from_arrays
from ..heatmap_codec import ScoredPose
from ..synth_data import Dataset, record_poses

OKS_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))
# i / 100 rather than linspace: linspace(0, 1, 101)[70] is 0.7000000000000001,
# which would skip a recall of exactly 0.7.
RECALL_POINTS = np.arange(101) / 100
MAX_DETS = 20


class UnknownImageError(KeyError):
    pass


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    ar: float
    n_images: int
    n_gt: int
    n_pred: int
    per_difficulty: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"AP": self.ap, "AP50": self.ap50, "AP75": self.ap75, "AR": self.ar}

    def table(self) -> str:
        lines = [f"{'split':<14}{'AP':>8}{'AP50':>8}{'AP75':>8}{'AR':>8}{'images':>8}"]
        rows = [("all", self)] + sorted(self.per_difficulty.items())
        for name, r in rows:
            lines.append(f"{name:<14}{100 * r.ap:8.2f}{100 * r.ap50:8.2f}"
                         f"{100 * r.ap75:8.2f}{100 * r.ar:8.2f}{r.n_images:8d}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_difficulty"] = {k: v.to_dict() for k, v in self.per_difficulty.items()}
        return d


def pose_hash(p: ScoredPose) -> str:
    """Content hash used to order predictions with equal scores."""
    h = hashlib.sha1(str(p.image_id).encode())
    h.update(np.ascontiguousarray(p.keypoints, dtype=np.float64).tobytes())
    return h.hexdigest()


def interpolated_ap(tp: np.ndarray, n_gt: int) -> tuple[float, float]:
    """101-point interpolated precision and final recall for a score-sorted hit vector."""
    if n_gt == 0:
        return 0.0, 0.0
    if len(tp) == 0:
        return 0.0, 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # Precision envelope: best precision at any recall at least this high.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def _match_image(preds: list[ScoredPose], gts: list[tuple[np.ndarray, np.ndarray, float]],
                 kappas) -> np.ndarray:
    """OKS matrix ``(n_pred, n_gt)``."""
    m = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, (xy, lab, area) in enumerate(gts):
            m[i, j] = oks_from_arrays(xy, lab, p.xy, area, kappas)
    return m


def _evaluate_records(records, by_image, kappas, max_dets) -> EvalReport:
    n_gt = 0
    entries = []  # (score, hash, image_index, rank)
    oks_mats = []
    for ri, r in enumerate(records):
        gts = [(pose.xy, pose.labeled, BoundingBox(*g["bbox"]).area)
               for pose, g in zip(record_poses(r), r["poses"]) if pose.labeled.any()]
        n_gt += len(gts)
        preds = sorted(by_image.get(r["image_id"], []), key=lambda p: (-p.aggregate_score, pose_hash(p)))
        preds = preds[:max_dets]
        oks_mats.append(_match_image(preds, gts, kappas))
        entries.extend((-p.aggregate_score, pose_hash(p), ri, k) for k, p in enumerate(preds))
    entries.sort()
    n_pred = len(entries)

    aps, ars = [], []
    for thr in OKS_THRESHOLDS:
        hits = {}
        for ri, m in enumerate(oks_mats):
            taken = np.zeros(m.shape[1], dtype=bool)
            for k in range(m.shape[0]):
                best, best_j = thr, -1
                for j in range(m.shape[1]):
                    if not taken[j] and m[k, j] >= best:
                        best, best_j = m[k, j], j
                if best_j >= 0:
                    taken[best_j] = True
                hits[(ri, k)] = best_j >= 0
        tp = np.array([hits[(ri, k)] for _, _, ri, k in entries], dtype=np.float64)
        ap, ar = interpolated_ap(tp, n_gt)
        aps.append(ap)
        ars.append(ar)
    i50 = OKS_THRESHOLDS.index(0.5)
    i75 = OKS_THRESHOLDS.index(0.75)
    return EvalReport(float(np.mean(aps)), aps[i50], aps[i75], float(np.mean(ars)),
                      len(records), n_gt, n_pred)


def evaluate(predictions: Sequence[ScoredPose], dataset: Dataset, kappas=DEFAULT_KAPPA,
             split: str | None = "test", max_dets: int = MAX_DETS,
             per_difficulty: bool = True) -> EvalReport:
    """AP averaged over OKS thresholds 0.50:0.05:0.95.

    Within an image, predictions are taken by descending score and each one
    claims the unmatched ground truth with the highest OKS at or above the
    threshold. Ground-truth scale is the area of its box.
    """
    records = dataset.records if split is None else dataset.split(split)
    known = {r["image_id"] for r in records}
    by_image: dict = {}
    for p in predictions:
        if p.image_id not in known:
            raise UnknownImageError(f"prediction references unknown image_id {p.image_id!r}")
        by_image.setdefault(p.image_id, []).append(p)
    report = _evaluate_records(records, by_image, kappas, max_dets)
    if per_difficulty:
        for name in sorted({r["difficulty"] for r in records}):
            subset = [r for r in records if r["difficulty"] == name]
            report.per_difficulty[name] = _evaluate_records(subset, by_image, kappas, max_dets)
    return report


# -- predictions file --------------------------------------------------------

def _lambda_json(sel):
    if sel is None or isinstance(sel, (int, np.integer)):
        return None if sel is None else int(sel)
    weights = getattr(sel, "weights", sel)
    return [float(v) for v in np.asarray(weights).ravel()]


def predictions_to_json(poses: Sequence[ScoredPose]) -> list[dict]:
    return [{
        "image_id": p.image_id,
        "keypoints": [float(v) for v in p.keypoints.ravel()],
        "aggregate_score": float(p.aggregate_score),
        "lambda": _lambda_json(p.selector_used),
        "box": p.source_box.as_list() if p.source_box is not None else None,
    } for p in poses]


def predictions_from_json(items: list[dict]) -> list[ScoredPose]:
    out = []
    for it in items:
        kp = np.asarray(it["keypoints"], dtype=np.float64).reshape(-1, 3)
        box = BoundingBox(*it["box"]) if it.get("box") is not None else None
        out.append(ScoredPose(kp, float(it["aggregate_score"]), it.get("lambda"), box, it["image_id"]))
    return out


def write_predictions(poses: Sequence[ScoredPose], path) -> None:
    Path(path).write_text(json.dumps(predictions_to_json(poses), indent=1) + "\n")


def read_predictions(path) -> list[ScoredPose]:
    return predictions_from_json(json.loads(Path(path).read_text()))
