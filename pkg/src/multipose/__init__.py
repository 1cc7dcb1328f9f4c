"""Top-down multi-instance pose estimation on synthetic crowded scenes.

A single network predicts a different person's keypoints for the same box
depending on an instance selector. Everything runs on numpy.
"""
from .geometry import BoundingBox, CropTransform, Pose, compute_oks, crop_transform
from .heatmap_codec import HeatmapSet, ScoredPose, decode, encode
from .model import ModelConfig, PoseNet
from .target_assignment import InstanceSelector, build_targets, multi_instance_loss

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "CropTransform", "HeatmapSet", "InstanceSelector", "ModelConfig", "Pose",
    "PoseNet", "ScoredPose", "build_targets", "compute_oks", "crop_transform", "decode", "encode",
    "multi_instance_loss",
]
