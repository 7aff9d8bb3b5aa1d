from .checkpoint import component_checksum, load_checkpoint, save_checkpoint
from .config import SamplingPolicy, TrainConfig, default_policy
from .evaluate import (
    TOY_BENCHMARK,
    attach_delta_m,
    evaluate_model,
    merge_baseline_reports,
    predict_batch,
)
from .loop import (
    TrainingDiverged,
    build_multistream,
    infer,
    mask_config,
    stage1_train,
    stage2_train,
    train_single_task,
    unet_config,
)
from .sampler import sample_task_batch

__all__ = [
    "TrainConfig",
    "SamplingPolicy",
    "default_policy",
    "sample_task_batch",
    "stage1_train",
    "stage2_train",
    "train_single_task",
    "build_multistream",
    "infer",
    "unet_config",
    "mask_config",
    "TrainingDiverged",
    "evaluate_model",
    "predict_batch",
    "merge_baseline_reports",
    "attach_delta_m",
    "TOY_BENCHMARK",
    "save_checkpoint",
    "load_checkpoint",
    "component_checksum",
]
