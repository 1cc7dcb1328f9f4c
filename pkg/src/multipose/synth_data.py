"""Procedural multi-person scenes with controllable overlap.

Each person is a stick figure with five keypoints (head, left hand, right
hand, left foot, right foot). People are drawn in order, so later ones occlude
earlier ones; annotations stay complete regardless of occlusion.
"""
from __future__ import annotations

import base64
import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .geometry import BoundingBox, Pose, box_iou, crop_transform, pose_box, select_overlapping_instances
from .heatmap_codec import DEFAULT_SIGMA
from .target_assignment import TrainingSample, build_targets

K = 5
KEYPOINT_NAMES = ("head", "left_hand", "right_hand", "left_foot", "right_foot")
SKELETON = ((0, 1), (0, 2), (0, 3), (0, 4))
MAX_PLACEMENT_TRIES = 400
MAX_SCENE_RESTARTS = 25


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple[int, int] = (96, 96)
    n_instances: int = 1
    iou_range: tuple[float, float] = (0.0, 0.0)
    scale_range: tuple[float, float] = (40.0, 60.0)

    def __post_init__(self):
        lo, hi = self.iou_range
        if self.n_instances < 1:
            raise ValueError(f"n_instances must be >= 1, got {self.n_instances}")
        if not (0.0 <= lo <= hi < 1.0):
            raise ValueError(f"iou_range must satisfy 0 <= lo <= hi < 1, got {self.iou_range}")


@dataclass(frozen=True)
class Difficulty:
    name: str
    n_instances: int
    iou_range: tuple[float, float]
    fraction: float


DEFAULT_MIX = (
    Difficulty("single", 1, (0.0, 0.0), 0.45),
    Difficulty("two_moderate", 2, (0.15, 0.4), 0.25),
    Difficulty("two_heavy", 2, (0.4, 0.7), 0.25),
    Difficulty("three", 3, (0.15, 0.5), 0.05),
)

# Half isolated people, half heavily overlapping pairs.
OCCLUSION_MIX = (
    Difficulty("single", 1, (0.0, 0.0), 0.5),
    Difficulty("two_heavy", 2, (0.4, 0.7), 0.5),
)

MIX_PRESETS = {"default": DEFAULT_MIX, "occlusion": OCCLUSION_MIX}


@dataclass
class DatasetConfig:
    splits: dict = field(default_factory=lambda: {"train": 4000, "val": 200, "test": 500})
    mix: tuple = DEFAULT_MIX
    image_size: tuple[int, int] = (96, 96)
    scale_range: tuple[float, float] = (40.0, 60.0)
    seed: int = 0
    image_format: str = "png"  # or "inline"

    def __post_init__(self):
        self.mix = tuple(d if isinstance(d, Difficulty) else Difficulty(
            d["name"], int(d["n_instances"]), tuple(d["iou_range"]), float(d["fraction"]))
            for d in self.mix)
        self.image_size = tuple(self.image_size)
        self.scale_range = tuple(self.scale_range)
        if self.image_format not in ("png", "inline"):
            raise ValueError(f"image_format must be 'png' or 'inline', got {self.image_format!r}")
        total = sum(d.fraction for d in self.mix)
        if not np.isclose(total, 1.0):
            raise ValueError(f"difficulty fractions must sum to 1, got {total}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = [asdict(m) for m in self.mix]
        return d


# -- scene rendering -------------------------------------------------------

def _skeleton(rng: np.random.Generator, center: np.ndarray, height: float) -> dict:
    s = height
    neck = center + np.array([0.0, -0.22 * s])
    head = neck + np.array([0.0, -0.12 * s])
    hip = neck + np.array([rng.uniform(-0.05, 0.05) * s, 0.28 * s])
    shoulder = neck + np.array([0.0, 0.04 * s])
    arm, leg = 0.32 * s, 0.42 * s
    th_l, th_r = np.radians(rng.uniform(20, 150, size=2))
    ph_l, ph_r = np.radians(rng.uniform(5, 30, size=2))
    lhand = shoulder + arm * np.array([-np.sin(th_l), np.cos(th_l)])
    rhand = shoulder + arm * np.array([np.sin(th_r), np.cos(th_r)])
    lfoot = hip + leg * np.array([-np.sin(ph_l), np.cos(ph_l)])
    rfoot = hip + leg * np.array([np.sin(ph_r), np.cos(ph_r)])
    return {
        "keypoints": np.stack([head, lhand, rhand, lfoot, rfoot]),
        "segments": [(neck, hip), (shoulder, lhand), (shoulder, rhand), (hip, lfoot), (hip, rfoot),
                     (head, neck)],
        "head": head,
        "head_radius": 0.08 * s,
        "thickness": max(2.0, 0.06 * s),
    }


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    L2 = float(d @ d)
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / max(L2, 1e-12), 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def _render(figures: Sequence[dict], appearance: Sequence[dict], size: tuple[int, int],
            rng: np.random.Generator) -> np.ndarray:
    H, W = size
    py, px = np.mgrid[0:H, 0:W] + 0.5
    img = np.full((H, W), rng.uniform(0.0, 0.2))
    img += rng.normal(0.0, 0.03, size=(H, W))
    for fig, app in zip(figures, appearance):
        dist = np.hypot(px - fig["head"][0], py - fig["head"][1]) - fig["head_radius"]
        for a, b in fig["segments"]:
            dist = np.minimum(dist, _segment_distance(px, py, a, b) - fig["thickness"] / 2)
        cover = np.clip(0.5 - dist, 0.0, 1.0)
        phase = (px * np.cos(app["angle"]) + py * np.sin(app["angle"])) * 2 * np.pi / app["period"]
        shade = app["gray"] * (1.0 - app["stripe"] * 0.5 * (1.0 + np.sin(phase)))
        img = img * (1.0 - cover) + shade * cover
    return np.clip(img, 0.0, 1.0)


def _appearance(rng: np.random.Generator, taken: list[float]) -> dict:
    for _ in range(100):
        g = rng.uniform(0.45, 1.0)
        if all(abs(g - t) >= 0.15 for t in taken):
            break
    return {"gray": g, "stripe": rng.uniform(0.0, 0.3), "period": rng.uniform(4.0, 10.0),
            "angle": rng.uniform(0.0, np.pi)}


def _fits(kp: np.ndarray, size: tuple[int, int], margin: float = 2.0) -> bool:
    H, W = size
    return bool((kp[:, 0] >= margin).all() and (kp[:, 0] <= W - margin).all()
                and (kp[:, 1] >= margin).all() and (kp[:, 1] <= H - margin).all())


def _place_scene(spec: SceneSpec, rng: np.random.Generator) -> list[dict] | None:
    H, W = spec.image_size
    lo, hi = spec.iou_range
    figures, boxes = [], []
    for j in range(spec.n_instances):
        for _ in range(MAX_PLACEMENT_TRIES):
            height = rng.uniform(*spec.scale_range)
            if j == 0:
                center = rng.uniform([0.3 * height, 0.45 * height], [W - 0.3 * height, H - 0.45 * height])
            else:
                anchor = boxes[rng.integers(len(boxes))]
                offset = rng.uniform(-1.0, 1.0, size=2) * (0.9 * anchor.w, 0.6 * anchor.h)
                center = np.array(anchor.center) + offset + np.array([0.0, 0.1 * height])
            fig = _skeleton(rng, center, height)
            kp = np.round(fig["keypoints"], 4)
            if not _fits(kp, spec.image_size):
                continue
            box = pose_box(Pose.from_xy(kp))
            if j > 0:
                ious = [box_iou(box, b) for b in boxes]
                if not (lo <= max(ious) <= hi) or max(ious) > hi:
                    continue
            fig["keypoints"] = kp
            figures.append(fig)
            boxes.append(box)
            break
        else:
            return None
    return figures


def generate_scene(spec: SceneSpec, seed) -> tuple[np.ndarray, list[Pose]]:
    """Render one scene: a float (H, W) image in [0, 1] and its poses.

    For two or more people, each person after the first has box IoU inside
    ``spec.iou_range`` with at least one earlier person and no IoU above it
    with any. Raises :class:`SceneGenerationError` when placement keeps
    failing.
    """
    rng = np.random.default_rng(seed)
    for _ in range(MAX_SCENE_RESTARTS):
        figures = _place_scene(spec, rng)
        if figures is not None:
            break
    else:
        raise SceneGenerationError(
            f"could not place {spec.n_instances} people with IoU in {spec.iou_range}")
    taken: list[float] = []
    appearance = []
    for _ in figures:
        app = _appearance(rng, taken)
        taken.append(app["gray"])
        appearance.append(app)
    image = _render(figures, appearance, spec.image_size, rng)
    poses = [Pose.from_xy(f["keypoints"], instance_id=i) for i, f in enumerate(figures)]
    return image, poses


def scene_iou(poses: Sequence[Pose]) -> float:
    """Largest pairwise IoU among the derived pose boxes (0 for one person)."""
    boxes = [pose_box(p) for p in poses]
    best = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            best = max(best, box_iou(boxes[i], boxes[j]))
    return best


# -- datasets --------------------------------------------------------------

@dataclass
class Dataset:
    """A manifest plus its decoded 8-bit images, keyed by image_id."""

    manifest: dict
    images: dict = field(default_factory=dict)
    root: Path | None = None

    @property
    def records(self) -> list[dict]:
        return self.manifest["records"]

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    def record(self, image_id) -> dict:
        for r in self.records:
            if r["image_id"] == image_id:
                return r
        raise KeyError(f"unknown image_id {image_id!r}")

    def image(self, image_id) -> np.ndarray:
        """Float (H, W) image in [0, 1]."""
        if image_id not in self.images:
            self.images[image_id] = _load_image(self.record(image_id)["image"], self.root)
        return self.images[image_id].astype(np.float32) / 255.0


def record_poses(record: dict) -> list[Pose]:
    return [Pose(np.asarray(p["keypoints"], dtype=np.float64), p["instance_id"]) for p in record["poses"]]


def _split_plan(n: int, mix: Sequence[Difficulty], rng: np.random.Generator) -> list[Difficulty]:
    counts = [int(np.floor(d.fraction * n)) for d in mix]
    rem = n - sum(counts)
    order = np.argsort([-(d.fraction * n - c) for d, c in zip(mix, counts)], kind="stable")
    for i in order[:rem]:
        counts[i] += 1
    plan = [d for d, c in zip(mix, counts) for _ in range(c)]
    perm = rng.permutation(len(plan))
    return [plan[i] for i in perm]


def _encode_image(img_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img_u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _load_image(ref, root: Path | None) -> np.ndarray:
    if isinstance(ref, dict):
        raw = base64.b64decode(ref["data"])
        return np.frombuffer(raw, dtype=np.uint8).reshape(ref["shape"]).copy()
    path = Path(ref) if root is None else Path(root) / ref
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def _generate_job(job):
    image_size, n_instances, iou_range, scale_range, seed = job
    return generate_scene(SceneSpec(image_size, n_instances, iou_range, scale_range), np.random.SeedSequence(seed))


def make_dataset(config: DatasetConfig, out_dir=None, workers: int = 1) -> Dataset:
    """Generate every split; write ``manifest.json``, images and ``stats.csv`` if ``out_dir`` is set.

    Image ``i`` of split ``s`` is seeded from ``(seed, s, i)`` alone, so the
    result does not depend on generation order or on ``workers``.
    """
    jobs, meta = [], []
    for s_idx, (split, n) in enumerate(sorted(config.splits.items())):
        plan = _split_plan(n, config.mix, np.random.default_rng([config.seed, s_idx, 2**31]))
        for i, level in enumerate(plan):
            jobs.append((tuple(config.image_size), level.n_instances, tuple(level.iou_range),
                         tuple(config.scale_range), [config.seed, s_idx, i]))
            meta.append((split, i, level))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(_generate_job, jobs, chunksize=16))
    else:
        scenes = [_generate_job(j) for j in jobs]

    records, images = [], {}
    for (split, i, level), (image, poses) in zip(meta, scenes):
        image_id = f"{split}_{i:05d}"
        u8 = np.round(image * 255.0).astype(np.uint8)
        images[image_id] = u8
        if config.image_format == "inline":
            ref = {"encoding": "base64-u8", "shape": list(u8.shape),
                   "data": base64.b64encode(u8.tobytes()).decode("ascii")}
        else:
            ref = f"images/{image_id}.png"
        records.append({
            "image_id": image_id,
            "split": split,
            "difficulty": level.name,
            "iou": round(scene_iou(poses), 6),
            "image": ref,
            "poses": [{"instance_id": p.instance_id,
                       "keypoints": p.keypoints.tolist(),
                       "bbox": pose_box(p).as_list()} for p in poses],
        })
    manifest = {
        "config": {
            "K": K,
            "keypoint_names": list(KEYPOINT_NAMES),
            "skeleton": [list(e) for e in SKELETON],
            "seed": config.seed,
            "image_size": list(config.image_size),
            "generator": config.to_dict(),
        },
        "records": records,
    }
    ds = Dataset(manifest, images)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def write_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if any(isinstance(r["image"], str) for r in ds.records):
        (out / "images").mkdir(exist_ok=True)
    for r in ds.records:
        if isinstance(r["image"], str):
            (out / r["image"]).write_bytes(_encode_image(ds.images[r["image_id"]]))
    (out / "manifest.json").write_text(json.dumps(ds.manifest, sort_keys=True, indent=1) + "\n")
    write_stats_csv(instance_histogram(ds), out / "stats.csv")
    ds.root = out


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    manifest = json.loads(manifest_path.read_text())
    for r in manifest["records"]:
        ids = [p["instance_id"] for p in r["poses"]]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{r['image_id']}: duplicate instance ids")
        if any(len(p["keypoints"]) != manifest["config"]["K"] for p in r["poses"]):
            raise ValueError(f"{r['image_id']}: keypoint count differs from K")
    return Dataset(manifest, {}, manifest_path.parent)


# -- statistics ------------------------------------------------------------

HIST_BINS = ("1", "2", "3+")


def instances_per_box(record: dict, k: int = 3, crop_size=(64, 64)) -> list[int]:
    """For every pose as primary: how many poses its crop holds (k-keypoint rule)."""
    poses = record_poses(record)
    out = []
    for p in poses:
        crop = crop_transform(BoundingBox(*record_bbox(record, p.instance_id)), crop_size)
        in_crop = [crop.apply_pose(q) for q in poses]
        out.append(len(select_overlapping_instances(crop.crop_rect(), in_crop, p.instance_id, k)))
    return out


def record_bbox(record: dict, instance_id) -> list[float]:
    for p in record["poses"]:
        if p["instance_id"] == instance_id:
            return p["bbox"]
    raise KeyError(instance_id)


def instance_histogram(ds: Dataset, k: int = 3) -> dict[str, dict[str, float]]:
    """Fraction of primary boxes holding 1, 2 and 3+ instances, per split."""
    hist: dict[str, dict[str, float]] = {}
    for split in sorted({r["split"] for r in ds.records}):
        counts = {b: 0 for b in HIST_BINS}
        for r in ds.split(split):
            for n in instances_per_box(r, k):
                counts[HIST_BINS[min(n, 3) - 1]] += 1
        total = sum(counts.values()) or 1
        hist[split] = {b: counts[b] / total for b in HIST_BINS}
    return hist


def write_stats_csv(hist: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "instances_per_box", "fraction"])
        for split, bins in hist.items():
            for b in HIST_BINS:
                w.writerow([split, b, f"{bins[b]:.6f}"])


# -- training samples ------------------------------------------------------

def extract_samples(ds: Dataset, input_size=(64, 64), N: int = 2, k: int = 3, split: str | None = None,
                    sigma: float = DEFAULT_SIGMA, residual_mode: str = "duplicate") -> Iterator[TrainingSample]:
    """One sample per (image, primary person); the crop is that person's box."""
    records = ds.records if split is None else ds.split(split)
    res = (input_size[0] // 4, input_size[1] // 4)
    for r in records:
        poses = record_poses(r)
        img = ds.image(r["image_id"])
        for p in poses:
            crop = crop_transform(BoundingBox(*record_bbox(r, p.instance_id)), input_size)
            t = build_targets(crop, p, poses, N, k, res, sigma, residual_mode)
            patch = crop.apply_image(img).astype(np.float32)
            yield TrainingSample(
                input_image=np.repeat(patch[:, :, None], 3, axis=2),
                targets=t.targets,
                target_weights=t.target_weights,
                n_true=t.n_true,
                crop=crop,
                image_id=r["image_id"],
                primary_id=p.instance_id,
                assigned_ids=[a.instance_id for a in t.assigned],
                crop_poses=[crop.apply_pose(q) for q in poses],
            )


@dataclass
class SampleArrays:
    """Stacked samples for minibatch training."""

    images: np.ndarray  # (S, H, W) grayscale; expanded to 3 channels per batch
    targets: np.ndarray  # (S, N, H', W', K)
    weights: np.ndarray  # (S, N, K)
    n_true: np.ndarray
    keys: list  # (image_id, primary_id)

    def __len__(self) -> int:
        return len(self.images)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.repeat(self.images[idx][..., None], 3, axis=3)
        return x, self.targets[idx], self.weights[idx]


def stack_samples(samples) -> SampleArrays:
    imgs, tg, wt, nt, keys = [], [], [], [], []
    for s in samples:
        imgs.append(s.input_image[:, :, 0])
        tg.append(s.targets)
        wt.append(s.target_weights)
        nt.append(s.n_true)
        keys.append((s.image_id, s.primary_id))
    return SampleArrays(np.stack(imgs), np.stack(tg), np.stack(wt), np.array(nt), keys)
