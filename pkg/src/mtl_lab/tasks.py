"""The seven dense-prediction tasks and their static properties."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TaskId:
    name: str
    frames_required: int
    codec_kind: str
    metric_direction: str

    def __post_init__(self):
        if self.frames_required not in (1, 2):
            raise ValueError(f"frames_required must be 1 or 2, got {self.frames_required}")
        if self.metric_direction not in ("higher_better", "lower_better"):
            raise ValueError(f"bad metric_direction {self.metric_direction!r}")


SEMANTIC = TaskId("semantic", 1, "palette", "higher_better")
NORMAL = TaskId("normal", 1, "unit_vector", "lower_better")
DEPTH = TaskId("depth", 1, "affine_invariant_percentile", "lower_better")
OPTICAL_FLOW = TaskId("optical_flow", 2, "affine_invariant_minmax", "lower_better")
SCENE_FLOW = TaskId("scene_flow", 2, "affine_invariant_minmax", "lower_better")
SHADING = TaskId("shading", 1, "tonemap", "lower_better")
ALBEDO = TaskId("albedo", 1, "tonemap", "lower_better")

TASKS: tuple[TaskId, ...] = (SEMANTIC, NORMAL, DEPTH, OPTICAL_FLOW, SCENE_FLOW, SHADING, ALBEDO)

_BY_NAME = {t.name: t for t in TASKS}


def get_task(name: str) -> TaskId:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; known: {sorted(_BY_NAME)}") from None


def auxiliary_tasks(main: TaskId) -> tuple[TaskId, ...]:
    """All tasks except the main one, in canonical order."""
    return tuple(t for t in TASKS if t is not main)
