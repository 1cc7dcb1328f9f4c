"""Gaussian heatmap encoding, argmax decoding and the weighted heatmap MSE.

Heatmap cell ``j`` covers crop pixels ``[j*stride, (j+1)*stride)``, so a crop
coordinate ``u`` sits at heatmap coordinate ``u / stride - 0.5``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .geometry import BoundingBox, CropTransform, Pose

DEFAULT_SIGMA = 2.0
SCORE_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class HeatmapSet:
    data: np.ndarray  # (H', W', K)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"heatmaps must be (H', W', K), got {self.data.shape}")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def K(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ScoredPose:
    """Decoded keypoints ``(K, 3)`` of ``x, y, score`` plus the pose score."""

    keypoints: np.ndarray
    aggregate_score: float
    selector_used: Any = None
    source_box: BoundingBox | None = None
    image_id: Any = None

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def scores(self) -> np.ndarray:
        return self.keypoints[:, 2]

    @property
    def present(self) -> np.ndarray:
        return self.scores >= SCORE_FLOOR

    @property
    def scale_sq(self) -> float:
        return self.source_box.area if self.source_box is not None else 1.0


def _as_array(h) -> np.ndarray:
    return h.data if isinstance(h, HeatmapSet) else np.asarray(h)


def heatmap_to_crop(hxy, resolution: tuple[int, int], input_size: tuple[int, int]) -> np.ndarray:
    (Hh, Wh), (H, W) = resolution, input_size
    hxy = np.asarray(hxy, dtype=np.float64)
    return (hxy + 0.5) * np.array([W / Wh, H / Hh])


def crop_to_heatmap(xy, resolution: tuple[int, int], input_size: tuple[int, int]) -> np.ndarray:
    (Hh, Wh), (H, W) = resolution, input_size
    xy = np.asarray(xy, dtype=np.float64)
    return xy * np.array([Wh / W, Hh / H]) - 0.5


def encode_arrays(xy: np.ndarray, labeled: np.ndarray, resolution: tuple[int, int],
                  sigma: float = DEFAULT_SIGMA, input_size: tuple[int, int] | None = None,
                  dtype=np.float64) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    Hh, Wh = resolution
    H, W = input_size if input_size is not None else (4 * Hh, 4 * Wh)
    xy = np.asarray(xy, dtype=np.float64)
    K = len(xy)
    out = np.zeros((Hh, Wh, K), dtype=dtype)
    hxy = crop_to_heatmap(xy, resolution, (H, W))
    gx = np.arange(Wh, dtype=np.float64)
    gy = np.arange(Hh, dtype=np.float64)
    for i in range(K):
        x, y = xy[i]
        if not labeled[i] or not (0 <= x < W and 0 <= y < H):
            continue
        ex = np.exp(-((gx - hxy[i, 0]) ** 2) / (2 * sigma ** 2))
        ey = np.exp(-((gy - hxy[i, 1]) ** 2) / (2 * sigma ** 2))
        out[:, :, i] = np.outer(ey, ex)
    return out


def encode(pose: Pose, resolution: tuple[int, int], sigma: float = DEFAULT_SIGMA,
           input_size: tuple[int, int] | None = None) -> HeatmapSet:
    """One unit-peak Gaussian per keypoint; unlabeled or off-crop keypoints stay zero.

    ``pose`` is in crop coordinates; ``input_size`` defaults to 4x the heatmap.
    """
    return HeatmapSet(encode_arrays(pose.xy, pose.labeled, resolution, sigma, input_size))


def decode_arrays(h: np.ndarray) -> np.ndarray:
    """Batched decode: ``(..., H', W', K) -> (..., K, 3)`` in heatmap coordinates."""
    h = np.asarray(h)
    lead = h.shape[:-3]
    Hh, Wh, K = h.shape[-3:]
    flat = np.moveaxis(h.reshape(-1, Hh, Wh, K), -1, 1).reshape(-1, Hh * Wh)  # (M*K, H'W')
    idx = np.argmax(flat, axis=1)
    rows = np.arange(len(flat))
    peak = flat[rows, idx]
    py, px = np.divmod(idx, Wh)
    maps = flat.reshape(-1, Hh, Wh)

    def _neighbour(yy, xx):
        ok = (yy >= 0) & (yy < Hh) & (xx >= 0) & (xx < Wh)
        vals = np.zeros(len(yy), dtype=np.float64)
        vals[ok] = maps[rows[ok], yy[ok], xx[ok]]
        return vals

    # An off-grid neighbour counts as 0, so a border peak only moves inward.
    dx = np.sign(_neighbour(py, px + 1) - _neighbour(py, px - 1))
    dy = np.sign(_neighbour(py + 1, px) - _neighbour(py - 1, px))
    x = px + 0.25 * dx
    y = py + 0.25 * dy
    score = np.clip(peak, 0.0, 1.0)
    out = np.stack([x, y, score], axis=-1).reshape(*lead, K, 3)
    return out


def aggregate_score(scores: np.ndarray, floor: float = SCORE_FLOOR) -> float:
    s = np.asarray(scores)
    keep = s >= floor
    return float(s[keep].mean()) if keep.any() else 0.0


def decode(h, selector=None, crop: CropTransform | None = None,
           input_size: tuple[int, int] | None = None) -> ScoredPose:
    """Argmax decode with a quarter-cell shift toward the larger neighbour.

    Coordinates are heatmap cells unless ``crop`` is given, in which case they
    are mapped through the crop inverse into the image frame.
    """
    arr = _as_array(h)
    kp = decode_arrays(arr)
    if crop is not None:
        size = input_size if input_size is not None else crop.target_size
        kp[:, :2] = crop.invert(heatmap_to_crop(kp[:, :2], arr.shape[:2], size))
    return ScoredPose(kp, aggregate_score(kp[:, 2]), selector,
                      crop.source_box if crop is not None else None)


def mse_loss(pred, target, weights=None, return_supervised: bool = False):
    """Mean squared error over supervised channels and every pixel.

    Channels whose weight is 0 are excluded from both numerator and count.
    With no supervised channel the loss is 0.0; pass ``return_supervised``
    to also get that flag.
    """
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ValueError(f"mse_loss: shape mismatch {p.shape} vs {t.shape}")
    K = p.shape[-1]
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (K,):
        raise ValueError(f"mse_loss: weights shape {w.shape} != ({K},)")
    n = np.count_nonzero(w)
    if n == 0:
        return (0.0, False) if return_supervised else 0.0
    d2 = (p.astype(np.float64) - t) ** 2
    per_channel = d2.reshape(-1, K).sum(axis=0)
    loss = float((per_channel * w).sum() / (n * d2.size / K))
    return (loss, True) if return_supervised else loss


def write_pgm(path, channel: np.ndarray) -> None:
    """8-bit binary PGM (P5); values in [0, 1] are scaled by 255."""
    img = np.clip(np.round(np.asarray(channel, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
    return data.astype(np.float64) / maxval


def dump_heatmaps(h, out_dir, image_id, lam) -> list[Path]:
    """Write one ``<image_id>_<lambda>_<k>.pgm`` per channel."""
    arr = _as_array(h)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(arr.shape[-1]):
        p = out_dir / f"{image_id}_{lam}_{k}.pgm"
        write_pgm(p, arr[:, :, k])
        paths.append(p)
    return paths
