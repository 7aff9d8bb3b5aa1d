"""Figure-data emitters: flow color wheels, palette/depth/normal renders and
attention bar-plot data.

Flow uses the HSV convention where hue encodes the direction angle
atan2(-v_y, -v_x) and saturation the magnitude; the 3-channel flow variant
additionally darkens with its depth-motion channel. All emitters return
float RGB images in [0, 1]; PNG writing goes through matplotlib's Agg
backend.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import colors as mcolors

from .model.task_attention import AttentionTrace
from .taskcodec import SemanticPalette


def _resolve_scale(magnitude: np.ndarray, scale) -> float:
    if scale == "auto":
        m = float(magnitude.max())
        return m if m > 0 else 1.0
    value = float(scale)
    if value <= 0:
        raise ValueError("flow color scale must be positive")
    return value


def flow_to_color(flow: np.ndarray, scale="auto") -> np.ndarray:
    """HSV flow rendering: hue from direction, saturation from magnitude."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"expected H x W x 2 flow, got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    vx, vy = flow[..., 0], flow[..., 1]
    magnitude = np.hypot(vx, vy)
    hue = (np.arctan2(-vy, -vx) + np.pi) / (2 * np.pi)
    sat = np.minimum(1.0, magnitude / _resolve_scale(magnitude, scale))
    hsv = np.stack([hue, sat, np.ones_like(hue)], axis=-1)
    return mcolors.hsv_to_rgb(hsv)


def sceneflow_to_color(flow3: np.ndarray, scales=("auto", "auto")) -> np.ndarray:
    """Lateral motion sets hue/saturation; the depth-motion channel darkens
    the value monotonically."""
    flow3 = np.asarray(flow3, dtype=np.float64)
    if flow3.ndim != 3 or flow3.shape[-1] != 3:
        raise ValueError(f"expected H x W x 3 flow, got {flow3.shape}")
    if not np.all(np.isfinite(flow3)):
        raise ValueError("flow contains non-finite values")
    vx, vy, vz = flow3[..., 0], flow3[..., 1], flow3[..., 2]
    magnitude = np.hypot(vx, vy)
    hue = (np.arctan2(-vy, -vx) + np.pi) / (2 * np.pi)
    sat = np.minimum(1.0, magnitude / _resolve_scale(magnitude, scales[0]))
    z_scale = _resolve_scale(np.abs(vz), scales[1])
    value = 1.0 - np.clip(vz / z_scale, 0.0, 1.0)
    hsv = np.stack([hue, sat, value], axis=-1)
    return mcolors.hsv_to_rgb(hsv)


def depth_to_color(depth: np.ndarray, valid: np.ndarray | None = None, cmap: str = "viridis") -> np.ndarray:
    """Monotone-colormap depth render, normalized over valid pixels."""
    depth = np.asarray(depth, dtype=np.float64)
    if valid is None:
        valid = np.ones(depth.shape, dtype=bool)
    lo, hi = depth[valid].min(), depth[valid].max()
    norm = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    rgba = plt.get_cmap(cmap)(np.clip(norm, 0, 1))
    out = rgba[..., :3]
    out[~valid] = 0.0
    return out


def normal_to_color(normals: np.ndarray) -> np.ndarray:
    """Unit normals mapped linearly from [-1, 1] axes into RGB."""
    return np.clip((np.asarray(normals) + 1.0) / 2.0, 0.0, 1.0)


def semantic_to_color(labels: np.ndarray, palette: SemanticPalette) -> np.ndarray:
    rgb = (palette.rgb_array() + 1.0) / 2.0
    out = np.zeros(labels.shape + (3,))
    known = (labels >= 0) & (labels < palette.n_classes)
    out[known] = rgb[labels[known]]
    return out


def grayscale_to_color(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.repeat(v[..., None], 3, axis=-1)


def save_png(path: str | Path, image: np.ndarray):
    plt.imsave(str(path), np.clip(image, 0.0, 1.0))


def viz_attention(trace: AttentionTrace, out_dir: str | Path, render_png: bool = True) -> Path:
    """Write attention traces as CSV (source of truth) plus bar charts."""
    rows = trace.rows()
    if not rows:
        raise ValueError("empty attention trace")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "attention_traces.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer_index", "main_task", "aux_task", "mean_score"])
        writer.writeheader()
        writer.writerows(rows)
    if render_png:
        for layer, main in trace.keys():
            vec = trace.mean(layer, main)
            names = [r["aux_task"] for r in rows if r["layer_index"] == layer and r["main_task"] == main]
            fig, ax = plt.subplots(figsize=(4, 2.4))
            ax.bar(range(len(vec)), vec)
            ax.set_xticks(range(len(vec)))
            ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
            ax.set_ylim(0, 1)
            ax.set_title(f"layer {layer}: {main}", fontsize=9)
            fig.tight_layout()
            fig.savefig(out_dir / f"attention_layer{layer:02d}_{main}.png", dpi=110)
            plt.close(fig)
    return csv_path


# renderers for post-processed model outputs; scalar maps arrive in [-1, 1]
TASK_RENDERERS = {
    "optical_flow": lambda pred, palette: flow_to_color(pred),
    "scene_flow": lambda pred, palette: sceneflow_to_color(pred),
    "depth": lambda pred, palette: depth_to_color(pred),
    "normal": lambda pred, palette: normal_to_color(pred),
    "semantic": lambda pred, palette: semantic_to_color(pred, palette),
    "shading": lambda pred, palette: grayscale_to_color((pred + 1.0) / 2.0),
    "albedo": lambda pred, palette: np.clip((pred + 1.0) / 2.0, 0.0, 1.0),
}
