"""Why one box can hold two answers.

Generates a scene where two stick figures overlap heavily, crops the box of
one of them, and shows the training targets for every selector slot: slot 0
is always the box owner, slot 1 the nearest other person with at least three
keypoints inside the crop. Then checks that decoding each target recovers
the right person.

    python3 demos/01_one_box_two_people.py      # writes demos/out/01_*.png
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from multipose import Pose, compute_oks, crop_transform, decode  # noqa: E402
from multipose.geometry import pose_box  # noqa: E402
from multipose.heatmap_codec import HeatmapSet  # noqa: E402
from multipose.synth_data import KEYPOINT_NAMES, SceneSpec, generate_scene, scene_iou  # noqa: E402
from multipose.target_assignment import build_targets  # noqa: E402

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

image, poses = generate_scene(SceneSpec(n_instances=2, iou_range=(0.4, 0.7)), seed=3)
print(f"scene: {len(poses)} people, box IoU {scene_iou(poses):.2f}")

owner = poses[0]
box = pose_box(owner)
crop = crop_transform(box, (64, 64))
targets = build_targets(crop, owner, poses, N=2)
print("slot assignment:", [p.instance_id for p in targets.assigned])

# Decode each slot's target and map it back to the image.
for slot, who in enumerate(targets.assigned):
    sp = decode(HeatmapSet(targets.targets[slot]), selector=slot, crop=crop)
    gt = next(p for p in poses if p.instance_id == who.instance_id)
    # Keypoints outside the crop have empty targets; score only the ones inside.
    inside = Pose.from_xy(gt.xy, sp.present.astype(float), gt.instance_id)
    oks = compute_oks(inside, inside.with_xy(sp.xy), box.area)
    print(f"  slot {slot}: person {who.instance_id}, {int(sp.present.sum())}/{len(gt.xy)} keypoints "
          f"in crop, decoded OKS {oks:.3f}")

fig, axes = plt.subplots(2, 1 + len(KEYPOINT_NAMES), figsize=(13, 4.5))
patch = crop.apply_image(image)
for slot in range(2):
    axes[slot, 0].imshow(patch, cmap="gray")
    axes[slot, 0].set_title(f"crop, slot {slot}", fontsize=8)
    for k, name in enumerate(KEYPOINT_NAMES):
        axes[slot, k + 1].imshow(targets.targets[slot][:, :, k], cmap="magma", vmin=0, vmax=1)
        axes[slot, k + 1].set_title(name, fontsize=8)
for ax in axes.flat:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(OUT / "01_targets.png", dpi=100)
print(f"wrote {OUT / '01_targets.png'}")

# A single-person crop: the spare slot copies the owner.
alone, solo = generate_scene(SceneSpec(n_instances=1), seed=4)
t1 = build_targets(crop_transform(pose_box(solo[0]), (64, 64)), solo[0], solo, N=2)
print("single person: slot 1 duplicates slot 0:", bool(np.array_equal(t1.targets[0], t1.targets[1])))
