"""Fixed per-task conditioning embeddings.

Each task gets one frozen vector; conditioning happens through cross-attention
on that vector inside every transformer block. Embeddings are orthonormal
basis rows so tasks are maximally separated and never drift during training.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..tasks import TASKS, TaskId


class TaskTokenTable:
    def __init__(self, embeddings: dict[str, np.ndarray], frozen: bool = True):
        self.embeddings = {k: np.asarray(v, dtype=np.float64).copy() for k, v in embeddings.items()}
        dims = {v.shape for v in self.embeddings.values()}
        if len(dims) != 1:
            raise ValueError("all token embeddings must share one dimension")
        (self.d_tok,) = dims.pop()
        self.frozen = frozen

    def token(self, task: TaskId | str) -> np.ndarray:
        name = task.name if isinstance(task, TaskId) else task
        return self.embeddings[name].copy()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.embeddings):
            h.update(name.encode())
            h.update(self.embeddings[name].tobytes())
        return h.hexdigest()


def build_token_table(d_tok: int = 16, task_names: tuple[str, ...] | None = None) -> TaskTokenTable:
    names = task_names if task_names is not None else tuple(t.name for t in TASKS)
    if d_tok < len(names):
        raise ValueError(f"d_tok={d_tok} too small for {len(names)} orthonormal tokens")
    eye = np.eye(d_tok)
    return TaskTokenTable({name: eye[i] for i, name in enumerate(names)})
