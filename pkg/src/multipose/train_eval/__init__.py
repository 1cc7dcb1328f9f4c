"""Training, inference, evaluation and benchmarking."""
from .analysis import (OverheadTiming, PathCheck, ResidualAgreement, SeparationResult,
                       continuous_path, find_separated_crop, instance_separation, path_check,
                       residual_agreement, sample_crops, sweep_overhead)
from .benchmark import DEFAULT_CONFIGS, BenchmarkError, BenchmarkResult, run_benchmark
from .evaluation import (OKS_THRESHOLDS, EvalReport, UnknownImageError, evaluate, interpolated_ap,
                         read_predictions, write_predictions)
from .inference import candidate_poses, crop_inputs, infer_image, predict_dataset
from .nms import DEFAULT_NMS_THRESHOLD, oks_nms, pairwise_oks, pose_oks
from .training import (TrainConfig, TrainingDivergedError, TrainResult, evaluate_loss,
                       multi_instance_batch_loss, train)

__all__ = [
    "BenchmarkError", "BenchmarkResult", "DEFAULT_CONFIGS", "DEFAULT_NMS_THRESHOLD", "EvalReport",
    "OKS_THRESHOLDS", "OverheadTiming", "PathCheck", "ResidualAgreement", "SeparationResult",
    "TrainConfig", "TrainResult", "TrainingDivergedError", "UnknownImageError", "candidate_poses",
    "continuous_path", "crop_inputs", "evaluate", "evaluate_loss", "find_separated_crop",
    "infer_image", "instance_separation", "interpolated_ap", "multi_instance_batch_loss",
    "oks_nms", "pairwise_oks", "path_check", "pose_oks", "predict_dataset", "read_predictions",
    "residual_agreement", "run_benchmark", "sample_crops", "sweep_overhead", "train",
    "write_predictions",
]
