"""Per-task annotation encoding to 3-channel maps in [-1, +1], and back.

Every task's native annotation is mapped into a shared 3-channel image space
so a single regression model can target all of them:

* semantic labels go through a color palette lookup,
* depth is scaled by its 2nd/98th percentiles,
* optical and scene flow are scaled per channel by min/max,
* shading and albedo are tone-mapped by a per-image scalar,
* normals pass through unchanged.

Grayscale results are replicated to 3 channels; the optical-flow horizontal
channel is repeated once to fill channel 3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tasks import TaskId

IGNORE_RGB = np.zeros(3)

# Corners of the RGB cube at +/-0.8: pairwise L2 distance is at least 1.6 and
# every entry stays clear of the reserved ignore gray at the origin.
_DEFAULT_CLASS_NAMES = ("road", "building", "pole", "light", "sign", "vegetation", "sky", "vehicle")


@dataclass(frozen=True)
class SemanticPalette:
    """Ordered class palette; rgb vectors live in [-1, +1]^3."""

    entries: tuple[tuple[int, tuple[float, float, float]], ...]
    names: tuple[str, ...]
    ignore_index: int = 255

    def __post_init__(self):
        rgb = self.rgb_array()
        if np.abs(rgb).max() > 1.0:
            raise ValueError("palette rgb entries must lie in [-1, +1]")
        d = np.linalg.norm(rgb[:, None] - rgb[None, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() <= 0.0:
            raise ValueError("palette rgb entries must be pairwise distinct")
        indices = [idx for idx, _ in self.entries]
        if sorted(indices) != list(range(len(indices))):
            raise ValueError("palette class indices must be 0..K-1")
        if self.ignore_index in indices:
            raise ValueError("ignore_index collides with a class index")

    def rgb_array(self) -> np.ndarray:
        ordered = sorted(self.entries, key=lambda e: e[0])
        return np.array([rgb for _, rgb in ordered], dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return len(self.entries)

    def min_pairwise_distance(self) -> float:
        rgb = self.rgb_array()
        d = np.linalg.norm(rgb[:, None] - rgb[None, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        return float(d.min())

    def to_json(self) -> str:
        doc = {
            "classes": [
                {"name": self.names[idx], "index": idx, "rgb": list(rgb)}
                for idx, rgb in sorted(self.entries, key=lambda e: e[0])
            ],
            "ignore_index": self.ignore_index,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SemanticPalette":
        doc = json.loads(text)
        classes = doc["classes"]
        entries = tuple((c["index"], tuple(float(v) for v in c["rgb"])) for c in classes)
        names = tuple(c["name"] for c in sorted(classes, key=lambda c: c["index"]))
        return cls(entries=entries, names=names, ignore_index=int(doc["ignore_index"]))

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "SemanticPalette":
        return cls.from_json(Path(path).read_text())


def default_palette() -> SemanticPalette:
    corners = []
    for i in range(8):
        corners.append((0.8 if i & 4 else -0.8, 0.8 if i & 2 else -0.8, 0.8 if i & 1 else -0.8))
    entries = tuple((i, corners[i]) for i in range(8))
    return SemanticPalette(entries=entries, names=_DEFAULT_CLASS_NAMES)


@dataclass(frozen=True)
class AffineRecord:
    """Per-channel [a, b] anchors of the linear map onto [-1, +1]."""

    a: np.ndarray = field()
    b: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=np.float64)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=np.float64)))
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have matching shapes")
        if np.any(self.a > self.b):
            raise ValueError("affine record requires a <= b per channel")


def _affine_scale(values: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Map [a, b] -> [-1, +1] per channel; degenerate channels map to zero."""
    span = b - a
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (values - a) / safe - 1.0
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, -1.0, 1.0)


def invert_affine(values: np.ndarray, record: AffineRecord) -> np.ndarray:
    """Exact inverse of the linear [a, b] -> [-1, +1] map.

    Degenerate channels (a == b) decode to the constant a.
    """
    a, b = record.a, record.b
    span = b - a
    out = (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * span + a
    return np.where(span > 0, out, a)


def _check_hw(annotation: np.ndarray, task: TaskId, channels: int | None):
    if channels is None:
        if annotation.ndim != 2:
            raise ValueError(f"{task.name} annotation must be H x W, got shape {annotation.shape}")
    else:
        if annotation.ndim != 3 or annotation.shape[-1] != channels:
            raise ValueError(
                f"{task.name} annotation must be H x W x {channels}, got shape {annotation.shape}"
            )


def encode_task(
    task: TaskId,
    annotation: np.ndarray,
    palette: SemanticPalette | None = None,
    valid: np.ndarray | None = None,
) -> tuple[np.ndarray, AffineRecord | None]:
    """Encode a task-native annotation into an H x W x 3 map in [-1, +1].

    ``valid`` restricts the percentile/min-max/tone-map statistics to valid
    pixels. An :class:`AffineRecord` is returned for depth and both flows so
    round-trips can be inverted; other tasks return None.
    """
    annotation = np.asarray(annotation)

    if task.codec_kind == "palette":
        if palette is None:
            raise ValueError("semantic encoding requires a palette")
        _check_hw(annotation, task, None)
        labels = annotation.astype(np.int64)
        known = (labels >= 0) & (labels < palette.n_classes)
        ignore = labels == palette.ignore_index
        if np.any(~known & ~ignore):
            bad = np.unique(labels[~known & ~ignore])
            raise ValueError(f"semantic labels outside palette: {bad.tolist()}")
        rgb = palette.rgb_array()
        out = np.where(ignore[..., None], IGNORE_RGB, rgb[np.clip(labels, 0, palette.n_classes - 1)])
        return out, None

    if task.codec_kind == "unit_vector":
        _check_hw(annotation, task, 3)
        return annotation.astype(np.float64), None

    if task.codec_kind == "affine_invariant_percentile":
        _check_hw(annotation, task, None)
        depth = annotation.astype(np.float64)
        sel = depth[valid] if valid is not None else depth
        if sel.size == 0:
            raise ValueError("depth encoding needs at least one valid pixel")
        if np.any(sel <= 0):
            raise ValueError("depth must be strictly positive on valid pixels")
        a = np.percentile(sel, 2.0)
        b = np.percentile(sel, 98.0)
        scaled = _affine_scale(depth, np.float64(a), np.float64(b))
        return np.repeat(scaled[..., None], 3, axis=-1), AffineRecord(a, b)

    if task.codec_kind == "affine_invariant_minmax":
        channels = 2 if task.name == "optical_flow" else 3
        _check_hw(annotation, task, channels)
        flow = annotation.astype(np.float64)
        sel = flow[valid] if valid is not None else flow.reshape(-1, channels)
        if sel.size == 0:
            raise ValueError("flow encoding needs at least one valid pixel")
        a = sel.min(axis=0)
        b = sel.max(axis=0)
        scaled = _affine_scale(flow, a, b)
        if task.name == "optical_flow":
            out = np.stack([scaled[..., 0], scaled[..., 1], scaled[..., 0]], axis=-1)
        else:
            out = scaled
        return out, AffineRecord(a, b)

    if task.codec_kind == "tonemap":
        if task.name == "shading":
            _check_hw(annotation, task, None)
            values = annotation.astype(np.float64)
            lum = values
        else:
            _check_hw(annotation, task, 3)
            values = annotation.astype(np.float64)
            lum = values.mean(axis=-1)
        sel = lum[valid] if valid is not None else lum
        p90 = np.percentile(sel, 90.0)
        scale = 1.0 / p90 if p90 > 1e-8 else 1.0
        mapped = np.clip(values * scale, 0.0, 1.0) * 2.0 - 1.0
        if mapped.ndim == 2:
            mapped = np.repeat(mapped[..., None], 3, axis=-1)
        return mapped, None

    raise ValueError(f"unknown task codec {task.codec_kind!r}")


def postprocess_task(
    task: TaskId, decoded: np.ndarray, palette: SemanticPalette | None = None
) -> np.ndarray:
    """Map a decoded H x W x 3 image back to the task's native space."""
    decoded = np.asarray(decoded, dtype=np.float64)
    if decoded.ndim != 3 or decoded.shape[-1] != 3:
        raise ValueError(f"decoded map must be H x W x 3, got {decoded.shape}")
    if not np.all(np.isfinite(decoded)):
        raise ValueError("decoded map contains non-finite values")

    if task.codec_kind == "palette":
        if palette is None:
            raise ValueError("semantic post-processing requires a palette")
        rgb = palette.rgb_array()
        d2 = ((decoded[..., None, :] - rgb) ** 2).sum(axis=-1)
        # argmin returns the first minimum, so ties go to the lowest class index
        return np.argmin(d2, axis=-1).astype(np.int64)

    if task.name == "optical_flow":
        return decoded[..., :2].copy()

    if task.name in ("depth", "shading"):
        return decoded.mean(axis=-1)

    if task.codec_kind == "unit_vector":
        norm = np.linalg.norm(decoded, axis=-1, keepdims=True)
        return decoded / np.maximum(norm, 1e-12)

    # scene flow and albedo decode as-is
    return decoded.copy()
