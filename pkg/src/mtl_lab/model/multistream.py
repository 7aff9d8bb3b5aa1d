"""Two-UNet model: a frozen per-task stream feeding a trainable main stream.

The frozen UNet (trained in stage 1) runs once per auxiliary task to produce
feature streams; the main UNet regresses the main task's latent while
attending to those streams through its task-attention layers.
"""

from __future__ import annotations

import numpy as np

from ..nn import Tensor, no_grad
from ..tasks import TaskId, auxiliary_tasks
from .task_attention import AttentionTrace, MaskConfig
from .tokens import TaskTokenTable
from .unet import DenoiserUNet


class MultiStreamModel:
    def __init__(self, aux: DenoiserUNet, main: DenoiserUNet, mask_cfg: MaskConfig):
        if not main.cfg.task_attention:
            raise ValueError("main UNet must be built with task_attention=True")
        if aux.cfg.task_attention:
            raise ValueError("auxiliary UNet must not carry task-attention layers")
        aux.freeze()
        self.aux = aux
        self.main = main
        self.mask_cfg = mask_cfg

    def aux_streams(self, x, token_table: TaskTokenTable, main_task: TaskId):
        """Frozen forward per auxiliary task; features keyed by block index."""
        streams: dict[int, list[tuple[str, Tensor]]] = {}
        with no_grad():
            for task in auxiliary_tasks(main_task):
                _, feats = self.aux.forward(
                    x, token_table.token(task), record_features=True
                )
                for block_idx, feat in feats.items():
                    streams.setdefault(block_idx, []).append((task.name, feat))
        return streams

    def forward(
        self,
        x,
        main_task: TaskId,
        token_table: TaskTokenTable,
        rng: np.random.Generator | None = None,
        train: bool = False,
        trace: AttentionTrace | None = None,
    ) -> Tensor:
        """Full multi-stream forward. Masking only applies when ``train`` is
        set; evaluation is deterministic (rho forced to 0)."""
        streams = self.aux_streams(x, token_table, main_task)
        mask_cfg = self.mask_cfg if train else None
        return self.main.forward(
            x,
            token_table.token(main_task),
            aux_features=streams,
            main_task=main_task.name,
            mask_cfg=mask_cfg,
            rng=rng,
            trace=trace,
        )
