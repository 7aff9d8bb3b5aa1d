"""Held-out toy benchmark: one metric per (task, dataset) pair plus the
multi-task aggregate against the seven single-task baselines.

Depth is scored on both datasets that provide it, mirroring a benchmark
suite where depth has two evaluation sets; affine-ambiguous predictions are
least-squares aligned per sample before their metric.
"""

from __future__ import annotations

import numpy as np

from ..latentcodec import LatentCodec
from ..metrics import (
    ALIGNED_TASKS,
    METRIC_NAMES,
    MetricsReport,
    abs_rel,
    align_least_squares,
    confusion_matrix,
    delta_m,
    epe,
    mean_angular_error,
    miou_from_confusion,
    rmse,
)
from ..model.multistream import MultiStreamModel
from ..model.task_attention import AttentionTrace
from ..model.tokens import TaskTokenTable
from ..model.unet import DenoiserUNet
from ..nn import no_grad
from ..taskcodec import SemanticPalette, default_palette, postprocess_task
from ..tasks import get_task
from .loop import encode_batch_inputs

TOY_BENCHMARK: tuple[tuple[str, str], ...] = (
    ("semantic", "toy-urban"),
    ("normal", "toy-indoor"),
    ("depth", "toy-indoor"),
    ("depth", "toy-urban"),
    ("optical_flow", "toy-urban"),
    ("scene_flow", "toy-urban"),
    ("shading", "toy-indoor"),
    ("albedo", "toy-indoor"),
)


def predict_batch(
    model: DenoiserUNet | MultiStreamModel,
    samples,
    task,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    trace: AttentionTrace | None = None,
) -> np.ndarray:
    """Decoded 3-channel predictions for a batch of samples (eval mode)."""
    x = encode_batch_inputs(samples, task, codec)
    with no_grad():
        if isinstance(model, MultiStreamModel):
            out = model.forward(x, task, token_table, trace=trace)
        else:
            out = model.forward(x, token_table.token(task))
    return codec.decode_batch(out.data)


def evaluate_model(
    model: DenoiserUNet | MultiStreamModel,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    eval_datasets: dict,
    palette: SemanticPalette | None = None,
    benchmark: tuple[tuple[str, str], ...] = TOY_BENCHMARK,
    batch_size: int = 8,
    record_attention: bool = False,
) -> tuple[MetricsReport, AttentionTrace | None]:
    palette = palette or default_palette()
    report = MetricsReport()
    trace = AttentionTrace() if (record_attention and isinstance(model, MultiStreamModel)) else None

    for task_name, dataset_id in benchmark:
        if dataset_id not in eval_datasets:
            raise ValueError(f"missing evaluation dataset {dataset_id}")
        task = get_task(task_name)
        ds = eval_datasets[dataset_id]
        if task_name not in ds.coverage:
            raise ValueError(f"dataset {dataset_id} has no labels for {task_name}")

        per_sample_values = []
        conf = None
        for start in range(0, len(ds), batch_size):
            samples = [ds.sample(i) for i in range(start, min(start + batch_size, len(ds)))]
            decoded = predict_batch(model, samples, task, codec, token_table, trace=trace)
            for sample, dec in zip(samples, decoded):
                pred = postprocess_task(task, dec, palette)
                gt = sample.labels[task_name]
                valid = sample.validity[task_name]
                if task_name == "semantic":
                    labels_gt = gt.copy()
                    labels_gt[~valid] = palette.ignore_index
                    c = confusion_matrix(pred, labels_gt, palette.n_classes, palette.ignore_index)
                    conf = c if conf is None else conf + c
                    continue
                if task_name in ALIGNED_TASKS:
                    pred = align_least_squares(pred, gt, valid)
                if task_name == "normal":
                    per_sample_values.append(mean_angular_error(pred, gt, valid))
                elif task_name == "depth":
                    per_sample_values.append(abs_rel(pred, gt, valid))
                elif task_name == "optical_flow":
                    per_sample_values.append(epe(pred, gt, valid, dims=2))
                elif task_name == "scene_flow":
                    per_sample_values.append(epe(pred, gt, valid, dims=3))
                else:  # shading, albedo
                    per_sample_values.append(rmse(pred, gt, valid))

        if task_name == "semantic":
            _, value = miou_from_confusion(conf)
        else:
            value = float(np.mean(per_sample_values))
        report.add(task_name, dataset_id, METRIC_NAMES[task_name], value, len(ds))
    return report, trace


def merge_baseline_reports(reports: dict[str, MetricsReport]) -> dict[str, dict[str, float]]:
    """Combine seven single-task reports into one task -> dataset -> value map."""
    merged: dict[str, dict[str, float]] = {}
    for task_name, rep in reports.items():
        values = rep.task_values()
        if task_name not in values:
            raise ValueError(f"baseline report for {task_name} lacks that task's metrics")
        merged[task_name] = values[task_name]
    return merged


def attach_delta_m(
    report: MetricsReport, baselines: dict[str, dict[str, float]], baseline_ref: str
) -> MetricsReport:
    report.delta_m = delta_m(report.task_values(), baselines)
    report.baseline_ref = baseline_ref
    return report
