"""Evaluation metrics, the least-squares alignment protocol and the
multi-task aggregate.

Affine-ambiguous predictions (depth, both flows, shading, albedo) are fit to
the ground truth per channel with a closed-form scale/shift before their
metric is computed; semantic and normals are compared directly.

The multi-task aggregate is the mean signed relative change of each task's
metric versus its single-task baseline, sign-flipped for lower-is-better
metrics; tasks evaluated on several datasets average their per-dataset
relative changes first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tasks import TASKS, get_task

ALIGNED_TASKS = ("depth", "optical_flow", "scene_flow", "shading", "albedo")


# -- alignment ---------------------------------------------------------------


def align_least_squares(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Per-channel least-squares fit of scale and shift: argmin ||s*pred + b - gt||.

    Returns the aligned prediction over the full map. Channels where the
    prediction is constant fall back to a shift-only fit (s = 1).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred/gt shapes differ: {pred.shape} vs {gt.shape}")
    squeeze = pred.ndim == 2
    if squeeze:
        pred, gt = pred[..., None], gt[..., None]
    if valid is None:
        valid = np.ones(pred.shape[:2], dtype=bool)
    if valid.sum() < 2:
        raise ValueError("alignment needs at least two valid pixels")
    out = np.empty_like(pred)
    for c in range(pred.shape[-1]):
        p = pred[..., c][valid]
        g = gt[..., c][valid]
        pc = p - p.mean()
        var = (pc * pc).sum()
        if var <= 1e-12:
            s = 1.0
        else:
            s = (pc * (g - g.mean())).sum() / var
        b = g.mean() - s * p.mean()
        out[..., c] = s * pred[..., c] + b
    return out[..., 0] if squeeze else out


# -- per-task metrics ----------------------------------------------------------


def miou(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    n_classes: int,
    ignore_index: int = 255,
) -> tuple[np.ndarray, float]:
    """(per-class IoU %, mean %) over classes present in gt or pred."""
    pred = np.asarray(pred_labels).ravel()
    gt = np.asarray(gt_labels).ravel()
    keep = gt != ignore_index
    pred, gt = pred[keep], gt[keep]
    conf = np.bincount(gt * n_classes + pred, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    per_class = np.full(n_classes, np.nan)
    present = denom > 0
    per_class[present] = 100.0 * tp[present] / denom[present]
    return per_class, float(np.nanmean(per_class)) if present.any() else float("nan")


def confusion_matrix(pred_labels, gt_labels, n_classes, ignore_index=255) -> np.ndarray:
    pred = np.asarray(pred_labels).ravel()
    gt = np.asarray(gt_labels).ravel()
    keep = gt != ignore_index
    return np.bincount(
        gt[keep] * n_classes + pred[keep], minlength=n_classes * n_classes
    ).reshape(n_classes, n_classes)


def miou_from_confusion(conf: np.ndarray) -> tuple[np.ndarray, float]:
    tp = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    per_class = np.full(conf.shape[0], np.nan)
    present = denom > 0
    per_class[present] = 100.0 * tp[present] / denom[present]
    return per_class, float(np.nanmean(per_class))


def mean_angular_error(pred_normals, gt_normals, valid=None) -> float:
    """Mean arccos of the dot product between unit-normalized fields, degrees."""
    pred = np.asarray(pred_normals, dtype=np.float64)
    gt = np.asarray(gt_normals, dtype=np.float64)
    if valid is None:
        valid = np.ones(pred.shape[:2], dtype=bool)
    p = pred[valid]
    g = gt[valid]
    p = p / np.maximum(np.linalg.norm(p, axis=-1, keepdims=True), 1e-12)
    g = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    dots = np.clip((p * g).sum(axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


def abs_rel(pred_depth, gt_depth, valid=None) -> float:
    """100 * mean(|pred - gt| / gt) over valid pixels."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    p, g = pred[valid], gt[valid]
    if np.any(g <= 0):
        raise ValueError("gt depth must be strictly positive on valid pixels")
    return float(100.0 * np.mean(np.abs(p - g) / g))


def epe(pred_flow, gt_flow, valid=None, dims: int = 2) -> float:
    """Average endpoint error: mean Euclidean norm of the per-pixel difference."""
    pred = np.asarray(pred_flow, dtype=np.float64)
    gt = np.asarray(gt_flow, dtype=np.float64)
    if pred.shape[-1] != dims or gt.shape[-1] != dims:
        raise ValueError(f"expected {dims}-channel flow, got {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape[:2], dtype=bool)
    diff = pred[valid] - gt[valid]
    return float(np.linalg.norm(diff, axis=-1).mean())


def rmse(pred, gt, valid=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if valid is None:
        sq = (pred - gt) ** 2
        return float(np.sqrt(sq.mean()))
    return float(np.sqrt(((pred - gt) ** 2)[valid].mean()))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2 * sigma**2))
    k /= k.sum()
    return np.outer(k, k)


def ssim(pred, gt, valid=None, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    kern = _gaussian_kernel()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for c in range(pred.shape[-1]):
        p, g = pred[..., c], gt[..., c]
        conv = lambda x: ndimage.correlate(x, kern, mode="reflect")
        mu_p, mu_g = conv(p), conv(g)
        var_p = conv(p * p) - mu_p**2
        var_g = conv(g * g) - mu_g**2
        cov = conv(p * g) - mu_p * mu_g
        smap = ((2 * mu_p * mu_g + c1) * (2 * cov + c2)) / (
            (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
        )
        scores.append(smap[valid].mean() if valid is not None else smap.mean())
    return float(np.mean(scores))


def lmse(pred, gt, valid=None, window: int = 16, shift: int | None = None) -> float:
    """Local MSE over half-overlapping windows with a per-window scale fit.

    Each window's prediction is rescaled to minimize its squared error, and
    the summed window errors are normalized by the summed gt energy.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    shift = window // 2 if shift is None else shift
    h, w = pred.shape[:2]
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    ys = list(range(0, h - window + 1, shift)) or [0]
    xs = list(range(0, w - window + 1, shift)) or [0]
    scores = []
    for c in range(pred.shape[-1]):
        ssq = total = 0.0
        for y0 in ys:
            for x0 in xs:
                sl = (slice(y0, y0 + window), slice(x0, x0 + window))
                p, g, m = pred[sl + (c,)], gt[sl + (c,)], valid[sl]
                energy = np.sum(g * g * m)
                pp = np.sum(p * p * m)
                alpha = np.sum(g * p * m) / pp if pp > 1e-10 else 0.0
                ssq += np.sum(m * (g - alpha * p) ** 2)
                total += energy
        scores.append(ssq / total if total > 0 else 0.0)
    return float(np.mean(scores))


def depth_extras(pred, gt, valid=None) -> dict[str, float]:
    """Optional depth metrics: Sq Rel, RMSE log and delta threshold accuracies."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    p, g = pred[valid], gt[valid]
    if np.any(g <= 0):
        raise ValueError("gt depth must be strictly positive on valid pixels")
    p = np.maximum(p, 1e-6)
    ratio = np.maximum(p / g, g / p)
    return {
        "sq_rel": float(np.mean((p - g) ** 2 / g)),
        "rmse_log": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "delta1": float(100.0 * np.mean(ratio < 1.25)),
        "delta2": float(100.0 * np.mean(ratio < 1.25**2)),
        "delta3": float(100.0 * np.mean(ratio < 1.25**3)),
    }


# -- multi-task aggregate --------------------------------------------------------


def delta_m(
    model_metrics: dict[str, dict[str, float]],
    baseline_metrics: dict[str, dict[str, float]],
    directions: dict[str, str] | None = None,
) -> float:
    """Mean signed relative change vs the single-task baselines, in percent.

    Inputs map task name -> {dataset -> metric value}. Tasks measured on
    several datasets (depth here) average their per-dataset relative changes
    before entering the task mean.
    """
    if directions is None:
        directions = {t.name: t.metric_direction for t in TASKS}
    if set(model_metrics) != set(directions) or set(baseline_metrics) != set(directions):
        raise ValueError(
            f"metrics must cover exactly the tasks {sorted(directions)}; "
            f"got model={sorted(model_metrics)} baseline={sorted(baseline_metrics)}"
        )
    task_scores = []
    for task_name, direction in directions.items():
        m_by_ds = model_metrics[task_name]
        b_by_ds = baseline_metrics[task_name]
        if set(m_by_ds) != set(b_by_ds):
            raise ValueError(f"{task_name}: model and baseline datasets differ")
        rels = []
        for ds, b in b_by_ds.items():
            if b == 0:
                raise ValueError(f"{task_name}/{ds}: zero baseline")
            sign = 1.0 if direction == "higher_better" else -1.0
            rels.append(sign * 100.0 * (m_by_ds[ds] - b) / b)
        task_scores.append(float(np.mean(rels)))
    return float(np.mean(task_scores))


# -- report ------------------------------------------------------------------------


@dataclass
class MetricEntry:
    task: str
    dataset: str
    metric: str
    value: float
    n_samples: int


@dataclass
class MetricsReport:
    entries: list[MetricEntry] = field(default_factory=list)
    delta_m: float | None = None
    baseline_ref: str | None = None
    extras: dict = field(default_factory=dict)

    def add(self, task: str, dataset: str, metric: str, value: float, n_samples: int):
        self.entries.append(MetricEntry(task, dataset, metric, float(value), int(n_samples)))

    def task_values(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for e in self.entries:
            out.setdefault(e.task, {})[e.dataset] = e.value
        return out

    def to_json(self) -> str:
        doc = {
            "entries": [vars(e) for e in self.entries],
            "delta_m": self.delta_m,
            "baseline_ref": self.baseline_ref,
            "extras": self.extras,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        report = cls(
            entries=[MetricEntry(**e) for e in doc["entries"]],
            delta_m=doc.get("delta_m"),
            baseline_ref=doc.get("baseline_ref"),
            extras=doc.get("extras", {}),
        )
        return report

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_json(Path(path).read_text())


METRIC_NAMES = {
    "semantic": "mIoU_%",
    "normal": "mAE_deg",
    "depth": "AbsRel_%",
    "optical_flow": "EPE2D_px",
    "scene_flow": "EPE3D_m",
    "shading": "RMSE",
    "albedo": "RMSE",
}


def render_table(report: MetricsReport) -> str:
    """Aligned plain-text rendering of a metrics report."""
    header = f"{'task':<14}{'dataset':<14}{'metric':<12}{'value':>12}{'n':>6}"
    lines = [header, "-" * len(header)]
    for e in report.entries:
        lines.append(f"{e.task:<14}{e.dataset:<14}{e.metric:<12}{e.value:>12.4f}{e.n_samples:>6}")
    if report.delta_m is not None:
        lines.append("-" * len(header))
        lines.append(f"{'delta_m':<40}{report.delta_m:>12.2f}")
        if report.baseline_ref:
            lines.append(f"baselines: {report.baseline_ref}")
    return "\n".join(lines)


def direction_of(task_name: str) -> str:
    return get_task(task_name).metric_direction
