"""Single-task mini-batch sampling."""

from __future__ import annotations

import numpy as np

from ..data.datasets import DatasetReader
from ..data.scene import SceneSample
from ..tasks import TaskId
from .config import SamplingPolicy


def sample_task_batch(
    policy: SamplingPolicy,
    datasets: dict[str, DatasetReader],
    batch_size: int,
    rng: np.random.Generator,
    task: TaskId | None = None,
) -> tuple[TaskId, str, list[SceneSample]]:
    """Draw a task (unless forced), then a dataset from the task's weights,
    then a mini-batch; every sample carries labels for the chosen task."""
    if task is None:
        task = policy.draw_task(rng)
    dataset_id = policy.draw_dataset(task, rng)
    ds = datasets[dataset_id]
    if task.name not in ds.coverage:
        raise ValueError(f"dataset {dataset_id} has no labels for task {task.name}")
    indices = rng.integers(0, len(ds), size=batch_size)
    samples = [ds.sample(int(i)) for i in indices]
    return task, dataset_id, samples
