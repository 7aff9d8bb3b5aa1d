"""Command-line surface.

Subcommands: gen-data, train-stage1, train-stage2, train-single, eval,
infer, viz-flow, viz-attn, report. Every command writes its artifacts under
--out plus a machine-readable summary.json carrying the resolved config hash
and a version string. Exit codes: 0 success, 1 usage error, 2 runtime
failure. MTL_LAB_THREADS caps data-generation worker threads (default 1).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import build_toy_corpus, load_split, read_raster, tree_checksum, write_raster
from .latentcodec import CodecConfig, LatentCodec, build_codec, codec_from_state
from .metrics import MetricsReport, render_table
from .model import DenoiserUNet, MultiStreamModel, build_token_table
from .model.task_attention import AttentionTrace
from .taskcodec import default_palette
from .tasks import get_task
from .training import (
    TrainConfig,
    attach_delta_m,
    default_policy,
    evaluate_model,
    infer,
    load_checkpoint,
    merge_baseline_reports,
    save_checkpoint,
    stage1_train,
    stage2_train,
    train_single_task,
    unet_config,
)
from .training.loop import _cfg_doc, mask_config
from .viz import TASK_RENDERERS, flow_to_color, save_png, sceneflow_to_color, viz_attention


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


@dataclass
class RunConfig:
    train: TrainConfig
    codec: CodecConfig
    data_root: str | None = None
    out_dir: str | None = None

    def to_doc(self) -> dict:
        return {
            "train": _cfg_doc(self.train),
            "codec": {"mode": self.codec.mode, "f": self.codec.f, "c_lat": self.codec.c_lat},
            "data_root": self.data_root,
            "out_dir": self.out_dir,
        }


def _strict_fields(doc: dict, cls, what: str) -> dict:
    allowed = set(cls.__dataclass_fields__)
    unknown = set(doc) - allowed
    if unknown:
        raise UsageError(f"unknown {what} config keys: {sorted(unknown)}")
    return doc


def load_run_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    doc: dict = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"malformed config {path}: {e}")
    unknown = set(doc) - {"train", "codec", "data_root", "out_dir"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    train_doc = _strict_fields(dict(doc.get("train", {})), TrainConfig, "train")
    for key in ("resolution", "channel_mult"):
        if key in train_doc:
            train_doc[key] = tuple(train_doc[key])
    if seed is not None:
        train_doc["seed"] = seed
    codec_doc = _strict_fields(dict(doc.get("codec", {})), CodecConfig, "codec")
    try:
        train = TrainConfig(**train_doc)
        codec = CodecConfig(**codec_doc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}")
    return RunConfig(
        train=train,
        codec=codec,
        data_root=doc.get("data_root"),
        out_dir=out or doc.get("out_dir"),
    )


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0:
            return f"mtl-lab-{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.TimeoutExpired):
        pass
    return f"mtl-lab-{__version__}"


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def write_summary(out_dir: Path, command: str, cfg_doc: dict, outputs: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "command": command,
        "config_hash": config_hash(cfg_doc),
        "version": version_string(),
        "outputs": outputs,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def _write_history(out_dir: Path, history: list[dict]):
    with (out_dir / "train_log.jsonl").open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def _build_codec_for_training(run: RunConfig, datasets) -> LatentCodec:
    if run.codec.mode == "invertible_shuffle":
        return build_codec(run.codec)
    frames = []
    for ds in datasets.values():
        for i in range(min(4, len(ds))):
            frames.append(ds.sample(i).frame_i)
    return build_codec(run.codec, prefit_corpus=np.stack(frames), seed=run.train.seed)


def _codec_components(codec: LatentCodec) -> dict:
    state = codec.state_dict()
    return {"codec": state} if state else {}


def _codec_from_checkpoint(manifest: dict, components: dict) -> LatentCodec:
    doc = manifest["extra"]["codec"]
    cfg = CodecConfig(mode=doc["mode"], f=doc["f"], c_lat=doc["c_lat"])
    return codec_from_state(cfg, components.get("codec", {}), width=doc.get("width", 24))


def _rebuild_from_checkpoint(path: Path):
    """Returns (kind, model, codec, token_table, train_cfg)."""
    manifest, components = load_checkpoint(path)
    train_doc = dict(manifest["config"])
    train_doc["resolution"] = tuple(train_doc["resolution"])
    train_doc["channel_mult"] = tuple(train_doc["channel_mult"])
    cfg = TrainConfig(**train_doc)
    codec = _codec_from_checkpoint(manifest, components)
    token_table = build_token_table(d_tok=cfg.d_tok)
    for name, vec in components.get("token_table", {}).items():
        token_table.embeddings[name] = vec
    kind = manifest["kind"]
    rng = np.random.default_rng(0)
    if kind == "stage2":
        aux = DenoiserUNet(unet_config(cfg, codec), rng)
        aux.load_state_dict(components["aux"])
        main = DenoiserUNet(unet_config(cfg, codec, task_attention=True), rng)
        main.load_state_dict(components["main"])
        model: DenoiserUNet | MultiStreamModel = MultiStreamModel(aux, main, mask_config(cfg))
    else:
        model = DenoiserUNet(unet_config(cfg, codec), rng)
        model.load_state_dict(components["unet"])
    return kind, model, codec, token_table, cfg


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = _require_out(args)
    resolution = _parse_resolution(args.resolution)
    build_toy_corpus(out, n_train=args.n_train, n_eval=args.n_eval, seed=args.seed, resolution=resolution)
    checksums = {
        split: {ds: tree_checksum(out / split / ds) for ds in ("toy-indoor", "toy-urban", "toy-objects")}
        for split in ("train", "eval")
    }
    doc = {
        "seed": args.seed,
        "n_train": args.n_train,
        "n_eval": args.n_eval,
        "resolution": list(resolution),
    }
    write_summary(out, "gen-data", doc, {"checksums": checksums})
    print(f"wrote toy corpus to {out}")
    return 0


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise UsageError(f"bad resolution {text!r}, expected HxW like 32x64")


def cmd_train_stage1(args) -> int:
    run = load_run_config(args.config, seed=args.seed, out=args.out)
    out = _require_out(args)
    data_root = args.data or run.data_root
    if not data_root:
        raise UsageError("--data (or data_root in the config) is required")
    datasets = load_split(data_root, "train")
    codec = _build_codec_for_training(run, datasets)
    token_table = build_token_table(d_tok=run.train.d_tok)
    policy = default_policy(datasets)
    model, history = stage1_train(
        run.train, policy, datasets, codec, token_table, checkpoint_dir=out / "checkpoints"
    )
    ckpt = save_checkpoint(
        out / "checkpoint-final",
        kind="stage1",
        step=run.train.stage1_steps,
        seed=run.train.seed,
        config=_cfg_doc(run.train),
        components={"unet": model.state_dict(), "token_table": token_table.embeddings}
        | _codec_components(codec),
        extra={"codec": _codec_doc(run.codec)},
    )
    _write_history(out, history)
    write_summary(out, "train-stage1", run.to_doc(), {"checkpoint": str(ckpt)})
    print(f"stage-1 checkpoint: {ckpt}")
    return 0


def _codec_doc(cfg: CodecConfig) -> dict:
    return {"mode": cfg.mode, "f": cfg.f, "c_lat": cfg.c_lat, "width": 24}


def cmd_train_single(args) -> int:
    run = load_run_config(args.config, seed=args.seed, out=args.out)
    out = _require_out(args)
    task = get_task(args.task)
    data_root = args.data or run.data_root
    if not data_root:
        raise UsageError("--data (or data_root in the config) is required")
    datasets = load_split(data_root, "train")
    codec = _build_codec_for_training(run, datasets)
    token_table = build_token_table(d_tok=run.train.d_tok)
    model, history = train_single_task(task, run.train, datasets, codec, token_table)
    ckpt = save_checkpoint(
        out / "checkpoint-final",
        kind=f"single:{task.name}",
        step=run.train.stage1_steps,
        seed=run.train.seed,
        config=_cfg_doc(run.train),
        components={"unet": model.state_dict(), "token_table": token_table.embeddings}
        | _codec_components(codec),
        extra={"codec": _codec_doc(run.codec)},
    )
    _write_history(out, history)
    write_summary(out, "train-single", run.to_doc(), {"checkpoint": str(ckpt), "task": task.name})
    print(f"single-task ({task.name}) checkpoint: {ckpt}")
    return 0


def cmd_train_stage2(args) -> int:
    if not args.checkpoint:
        raise UsageError("train-stage2 requires --checkpoint pointing at a stage-1 checkpoint")
    ckpt_path = Path(args.checkpoint)
    if not (ckpt_path / "manifest.json").exists():
        raise UsageError(f"no checkpoint manifest under {ckpt_path}")
    kind, stage1_model, codec, token_table, ckpt_cfg = _rebuild_from_checkpoint(ckpt_path)
    if kind != "stage1":
        raise UsageError(f"train-stage2 needs a stage1 checkpoint, got kind={kind}")
    run = load_run_config(args.config, seed=args.seed, out=args.out)
    out = _require_out(args)
    cfg = run.train if args.config else ckpt_cfg
    if args.seed is not None and not args.config:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    data_root = args.data or run.data_root
    if not data_root:
        raise UsageError("--data (or data_root in the config) is required")
    datasets = load_split(data_root, "train")
    policy = default_policy(datasets)
    ms, history = stage2_train(
        stage1_model, cfg, policy, datasets, codec, token_table,
        checkpoint_dir=out / "checkpoints",
    )
    ckpt = save_checkpoint(
        out / "checkpoint-final",
        kind="stage2",
        step=cfg.stage2_steps,
        seed=cfg.seed,
        config=_cfg_doc(cfg),
        components={
            "aux": ms.aux.state_dict(),
            "main": ms.main.state_dict(),
            "token_table": token_table.embeddings,
        }
        | _codec_components(codec),
        extra={"codec": _codec_doc(run.codec)},
    )
    _write_history(out, history)
    write_summary(out, "train-stage2", _cfg_doc(cfg), {"checkpoint": str(ckpt)})
    print(f"stage-2 checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("eval requires --checkpoint")
    ckpt_path = Path(args.checkpoint)
    if not (ckpt_path / "manifest.json").exists():
        raise UsageError(f"no checkpoint manifest under {ckpt_path}")
    out = _require_out(args)
    if not args.data:
        raise UsageError("--data is required")
    kind, model, codec, token_table, cfg = _rebuild_from_checkpoint(ckpt_path)
    datasets = load_split(args.data, "eval")
    palette = default_palette()
    from .training import TOY_BENCHMARK

    benchmark = TOY_BENCHMARK
    if kind.startswith("single:"):
        only = kind.split(":", 1)[1]
        benchmark = tuple(row for row in TOY_BENCHMARK if row[0] == only)
    report, trace = evaluate_model(
        model, codec, token_table, datasets, palette,
        benchmark=benchmark, record_attention=args.record_attention,
    )
    warnings = []
    if args.baselines:
        baselines = _load_baseline_reports(Path(args.baselines))
        if baselines is None:
            warnings.append("incomplete baselines: delta_m omitted")
        else:
            attach_delta_m(report, baselines, baseline_ref=str(args.baselines))
    else:
        warnings.append("no --baselines given: delta_m omitted")
    report.save(out / "report.json")
    (out / "report.txt").write_text(render_table(report))
    outputs = {"report": str(out / "report.json"), "warnings": warnings}
    if trace is not None and trace.rows():
        (out / "traces.json").write_text(json.dumps(trace.to_jsonable(), indent=2))
        outputs["traces"] = str(out / "traces.json")
    write_summary(out, "eval", _cfg_doc(cfg), outputs)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(render_table(report))
    return 0


def _load_baseline_reports(path: Path) -> dict | None:
    from .tasks import TASKS

    reports = {}
    for t in TASKS:
        rp = path / f"{t.name}.json"
        if not rp.exists():
            return None
        reports[t.name] = MetricsReport.load(rp)
    return merge_baseline_reports(reports)


def cmd_infer(args) -> int:
    if not args.checkpoint:
        raise UsageError("infer requires --checkpoint")
    if not args.frame_a:
        raise UsageError("infer requires --frame-a")
    out = _require_out(args)
    task = get_task(args.task)
    kind, model, codec, token_table, cfg = _rebuild_from_checkpoint(Path(args.checkpoint))
    frame_a = read_raster(Path(args.frame_a).with_suffix(""))
    frame_b = read_raster(Path(args.frame_b).with_suffix("")) if args.frame_b else None
    if task.frames_required == 2 and frame_b is None:
        raise UsageError(f"task {task.name} needs --frame-b")
    palette = default_palette()
    pred = infer(model, codec, token_table, (frame_a, frame_b), task, palette)
    write_raster(out / f"pred_{task.name}", pred, task=task.name)
    save_png(out / f"pred_{task.name}.png", TASK_RENDERERS[task.name](pred, palette))
    write_summary(
        out, "infer", _cfg_doc(cfg),
        {"prediction": str(out / f"pred_{task.name}.bin"), "task": task.name,
         "depth_colormap": "viridis"},
    )
    print(f"prediction written to {out / f'pred_{task.name}.bin'}")
    return 0


def cmd_viz_flow(args) -> int:
    if not args.flow:
        raise UsageError("viz-flow requires --flow")
    out = _require_out(args)
    flow = read_raster(Path(args.flow).with_suffix(""))
    scale = "auto" if args.scale == "auto" else float(args.scale)
    if flow.ndim == 3 and flow.shape[-1] == 2:
        image = flow_to_color(flow, scale=scale)
    elif flow.ndim == 3 and flow.shape[-1] == 3:
        image = sceneflow_to_color(flow, scales=(scale, "auto"))
    else:
        raise UsageError(f"flow raster must be H x W x 2 or H x W x 3, got {flow.shape}")
    save_png(out / "flow.png", image)
    write_summary(out, "viz-flow", {"scale": args.scale}, {"image": str(out / "flow.png")})
    print(f"wrote {out / 'flow.png'}")
    return 0


def cmd_viz_attn(args) -> int:
    if not args.traces:
        raise UsageError("viz-attn requires --traces")
    out = _require_out(args)
    rows = json.loads(Path(args.traces).read_text())
    if not rows:
        raise UsageError("empty trace file")
    grouped = AttentionTrace()
    keys = sorted({(r["layer_index"], r["main_task"]) for r in rows})
    for layer, main in keys:
        subset = [r for r in rows if r["layer_index"] == layer and r["main_task"] == main]
        grouped.add(
            layer, main,
            tuple(r["aux_task"] for r in subset),
            np.array([r["mean_score"] for r in subset]),
        )
    csv_path = viz_attention(grouped, out)
    write_summary(out, "viz-attn", {}, {"csv": str(csv_path)})
    print(f"wrote {csv_path}")
    return 0


def cmd_report(args) -> int:
    if not args.metrics:
        raise UsageError("report requires --metrics")
    out = _require_out(args)
    report = MetricsReport.load(args.metrics)
    text = render_table(report)
    (out / "report.txt").write_text(text)
    write_summary(out, "report", {}, {"table": str(out / "report.txt")})
    print(text)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="mtl-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen-data", help="generate the toy datasets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=64)
    p.add_argument("--n-eval", type=int, default=16)
    p.add_argument("--resolution", default="32x64")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-stage1", help="train the single-stream model")
    common(p)
    p.add_argument("--data", help="dataset root (contains train/ and eval/)")
    p.set_defaults(fn=cmd_train_stage1)

    p = sub.add_parser("train-single", help="train a single-task baseline")
    common(p)
    p.add_argument("--data")
    p.add_argument("--task", required=True)
    p.set_defaults(fn=cmd_train_single)

    p = sub.add_parser("train-stage2", help="train the multi-stream model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint", help="stage-1 checkpoint directory")
    p.set_defaults(fn=cmd_train_stage2)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out toy set")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--baselines", help="directory with per-task baseline reports")
    p.add_argument("--record-attention", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run one prediction")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--frame-a")
    p.add_argument("--frame-b")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("viz-flow", help="render a flow raster to a color image")
    p.add_argument("--flow", help="flow raster (.bin with .json sidecar)")
    p.add_argument("--scale", default="auto")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_viz_flow)

    p = sub.add_parser("viz-attn", help="render attention traces to CSV and bar charts")
    p.add_argument("--traces", help="traces.json produced by eval --record-attention")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_viz_attn)

    p = sub.add_parser("report", help="render a metrics report as a table")
    p.add_argument("--metrics", help="report.json produced by eval")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"mtl-lab: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"mtl-lab: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
