from .multistream import MultiStreamModel
from .task_attention import (
    AttentionTrace,
    MaskConfig,
    TaskAttentionLayer,
    compute_pi,
    sample_mask,
    sample_masks,
)
from .tokens import TaskTokenTable, build_token_table
from .unet import DenoiserUNet, UNetConfig, concat_latents, latent_mse

__all__ = [
    "AttentionTrace",
    "MaskConfig",
    "TaskAttentionLayer",
    "compute_pi",
    "sample_mask",
    "sample_masks",
    "TaskTokenTable",
    "build_token_table",
    "DenoiserUNet",
    "UNetConfig",
    "concat_latents",
    "latent_mse",
    "MultiStreamModel",
]
