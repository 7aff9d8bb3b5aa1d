"""Training configuration and the task/dataset sampling policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.datasets import DatasetReader
from ..tasks import TASKS, TaskId, get_task


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    effective_batch_size: int = 32
    grad_accum_steps: int = 2
    stage1_steps: int = 3000
    stage2_steps: int = 1500
    seed: int = 0
    head_count: int = 4
    rho: float = 0.4
    mask_strategy: str = "sample_pi"
    mask_granularity: str = "per_location"
    optimizer: str = "adam"
    resolution: tuple[int, int] = (32, 64)
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2)
    d_tok: int = 16
    ff_mult: int = 4
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.effective_batch_size % self.grad_accum_steps:
            raise ValueError(
                f"effective_batch_size={self.effective_batch_size} not divisible by "
                f"grad_accum_steps={self.grad_accum_steps}"
            )
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    @property
    def minibatch_size(self) -> int:
        return self.effective_batch_size // self.grad_accum_steps


@dataclass(frozen=True)
class SamplingPolicy:
    """Uniform task draw plus per-task dataset weights."""

    task_names: tuple[str, ...]
    dataset_weights: dict[str, dict[str, float]]

    def __post_init__(self):
        for name in self.task_names:
            weights = self.dataset_weights.get(name)
            if not weights:
                raise ValueError(f"task {name} has no providing dataset")
            total = sum(weights.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"dataset weights for {name} sum to {total}, expected 1")

    def draw_task(self, rng: np.random.Generator) -> TaskId:
        return get_task(self.task_names[rng.integers(0, len(self.task_names))])

    def draw_dataset(self, task: TaskId, rng: np.random.Generator) -> str:
        weights = self.dataset_weights[task.name]
        names = sorted(weights)
        probs = np.array([weights[n] for n in names])
        return names[int(rng.choice(len(names), p=probs))]


# depth and normal favor the indoor corpus; flows split evenly across their
# two providers; everything else has a single source
_PREFERRED = {
    "depth": {"toy-indoor": 0.9, "toy-urban": 0.1},
    "normal": {"toy-indoor": 0.9, "toy-urban": 0.1},
    "optical_flow": {"toy-urban": 0.5, "toy-objects": 0.5},
    "scene_flow": {"toy-urban": 0.5, "toy-objects": 0.5},
}


def default_policy(
    datasets: dict[str, DatasetReader], task_names: tuple[str, ...] | None = None
) -> SamplingPolicy:
    """Build the sampling policy from the datasets' coverage."""
    names = task_names if task_names is not None else tuple(t.name for t in TASKS)
    weights: dict[str, dict[str, float]] = {}
    for name in names:
        providers = tuple(d for d, ds in sorted(datasets.items()) if name in ds.coverage)
        if not providers:
            raise ValueError(f"no dataset provides labels for task {name}")
        preferred = _PREFERRED.get(name)
        if preferred and set(preferred) <= set(providers):
            weights[name] = dict(preferred)
        else:
            weights[name] = {d: 1.0 / len(providers) for d in providers}
    return SamplingPolicy(task_names=names, dataset_weights=weights)
