"""Two-stage training with task-gradient isolation, plus inference.

Every optimizer step accumulates gradients from mini-batches of one single
task, then steps and resets, so no step ever mixes task gradients. Stage 2
freezes the stage-1 UNet as the per-task auxiliary stream and trains a main
UNet (initialized from the same weights) whose transformer blocks attend to
the auxiliary features under stochastic task masking.

Training is single-threaded and seed-deterministic: two runs with the same
config produce bit-identical parameters.
"""

from __future__ import annotations

import numpy as np

from ..data.scene import SceneSample
from ..latentcodec import LatentCodec, encode_image
from ..model.multistream import MultiStreamModel
from ..model.task_attention import MaskConfig
from ..model.tokens import TaskTokenTable
from ..model.unet import DenoiserUNet, UNetConfig, concat_latents
from ..nn import Tensor
from ..nn import autograd as ag
from ..nn.optim import Adam
from ..taskcodec import SemanticPalette, default_palette, encode_task, postprocess_task
from ..tasks import TaskId
from .checkpoint import save_checkpoint
from .config import SamplingPolicy, TrainConfig
from .sampler import sample_task_batch


class TrainingDiverged(RuntimeError):
    pass


def unet_config(cfg: TrainConfig, codec: LatentCodec, task_attention: bool = False) -> UNetConfig:
    h, w = cfg.resolution
    return UNetConfig(
        c_lat=codec.c_lat,
        latent_hw=(h // codec.f, w // codec.f),
        base_channels=cfg.base_channels,
        channel_mult=cfg.channel_mult,
        heads=cfg.head_count,
        d_tok=cfg.d_tok,
        ff_mult=cfg.ff_mult,
        task_attention=task_attention,
    )


def mask_config(cfg: TrainConfig) -> MaskConfig:
    return MaskConfig(strategy=cfg.mask_strategy, rho=cfg.rho, granularity=cfg.mask_granularity)


def encode_batch_inputs(samples: list[SceneSample], task: TaskId, codec: LatentCodec) -> np.ndarray:
    """Stacked input latents (B, 2C, h, w); single-frame tasks duplicate frame i."""
    frames_i = np.stack([s.frame_i for s in samples])
    z_i = codec.encode_batch(frames_i)
    if task.frames_required == 2:
        z_j = codec.encode_batch(np.stack([s.frame_j for s in samples]))
    else:
        z_j = z_i
    return np.concatenate([z_i, z_j], axis=1)


def encode_batch_targets(
    samples: list[SceneSample], task: TaskId, codec: LatentCodec, palette: SemanticPalette
) -> tuple[np.ndarray, np.ndarray]:
    """Target latents (B, C, h, w) and the latent-cell validity mask (B, 1, h, w).

    A latent cell is valid only when every pixel it covers is valid, so
    invalid pixels cannot leak gradient through the codec.
    """
    maps, valids = [], []
    for s in samples:
        label = s.labels[task.name]
        valid = s.validity[task.name].copy()
        if task.name == "semantic":
            valid &= label != palette.ignore_index
        map3, _ = encode_task(task, label, palette, valid=valid)
        maps.append(map3)
        valids.append(valid)
    zt = codec.encode_batch(np.stack(maps))
    vb = np.stack(valids)
    b, h, w = vb.shape
    f = codec.f
    lat_valid = vb.reshape(b, h // f, f, w // f, f).all(axis=(2, 4))[:, None]
    return zt, lat_valid


def masked_latent_loss(pred: Tensor, target: np.ndarray, lat_valid: np.ndarray) -> Tensor:
    """Latent MSE with invalid cells in-filled by the detached prediction,
    so they contribute exactly zero loss and zero gradient."""
    infilled = np.where(lat_valid, target, pred.data)
    return ag.tmean(ag.square(pred - Tensor(infilled)))


def _loss_single_stream(model, task, samples, codec, token_table, palette):
    x = encode_batch_inputs(samples, task, codec)
    zt, lat_valid = encode_batch_targets(samples, task, codec, palette)
    pred = model.forward(x, token_table.token(task))
    return masked_latent_loss(pred, zt, lat_valid)


def _loss_multi_stream(ms, task, samples, codec, token_table, palette, rng):
    x = encode_batch_inputs(samples, task, codec)
    zt, lat_valid = encode_batch_targets(samples, task, codec, palette)
    pred = ms.forward(x, task, token_table, rng=rng, train=True)
    return masked_latent_loss(pred, zt, lat_valid)


def _run_loop(
    *,
    steps: int,
    cfg: TrainConfig,
    policy: SamplingPolicy,
    datasets,
    sample_rng: np.random.Generator,
    loss_fn,
    optimizer: Adam,
    model_ref,
    hooks: dict | None,
    stage: str,
    checkpoint_dir=None,
    checkpoint_fn=None,
) -> list[dict]:
    history = []
    mini = cfg.minibatch_size
    for step in range(steps):
        task = policy.draw_task(sample_rng)
        if hooks and "pre_step" in hooks:
            hooks["pre_step"](step=step, task=task, model=model_ref, optimizer=optimizer)
        model_ref.zero_grad()
        batches = []
        loss_total = 0.0
        for _ in range(cfg.grad_accum_steps):
            _, dataset_id, samples = sample_task_batch(policy, datasets, mini, sample_rng, task=task)
            loss = loss_fn(task, samples)
            loss.backward(1.0 / cfg.grad_accum_steps)
            loss_total += loss.item() / cfg.grad_accum_steps
            batches.append((dataset_id, samples))
        if not np.isfinite(loss_total):
            raise TrainingDiverged(
                f"{stage}: non-finite loss {loss_total} at step {step} on task {task.name}"
            )
        optimizer.step()
        record = {
            "step": step,
            "stage": stage,
            "task": task.name,
            "datasets": [d for d, _ in batches],
            "loss": loss_total,
        }
        history.append(record)
        if hooks and "post_step" in hooks:
            hooks["post_step"](
                step=step, task=task, model=model_ref, optimizer=optimizer, batches=batches,
                loss=loss_total,
            )
        if checkpoint_fn and checkpoint_dir and (step + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(checkpoint_dir / f"step_{step + 1:06d}", step + 1)
    return history


def stage1_train(
    cfg: TrainConfig,
    policy: SamplingPolicy,
    datasets,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    palette: SemanticPalette | None = None,
    hooks: dict | None = None,
    checkpoint_dir=None,
) -> tuple[DenoiserUNet, list[dict]]:
    """Train the task-conditioned single-stream UNet under gradient isolation."""
    palette = palette or default_palette()
    init_ss, sample_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = DenoiserUNet(unet_config(cfg, codec), np.random.default_rng(init_ss))
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    sample_rng = np.random.default_rng(sample_ss)

    def checkpoint_fn(path, step):
        save_checkpoint(
            path, kind="stage1", step=step, seed=cfg.seed, config=_cfg_doc(cfg),
            components={"unet": model.state_dict(), "token_table": token_table.embeddings},
        )

    history = _run_loop(
        steps=cfg.stage1_steps,
        cfg=cfg,
        policy=policy,
        datasets=datasets,
        sample_rng=sample_rng,
        loss_fn=lambda task, samples: _loss_single_stream(
            model, task, samples, codec, token_table, palette
        ),
        optimizer=optimizer,
        model_ref=model,
        hooks=hooks,
        stage="stage1",
        checkpoint_dir=checkpoint_dir,
        checkpoint_fn=checkpoint_fn if checkpoint_dir else None,
    )
    return model, history


def train_single_task(
    task: TaskId,
    cfg: TrainConfig,
    datasets,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    palette: SemanticPalette | None = None,
    hooks: dict | None = None,
) -> tuple[DenoiserUNet, list[dict]]:
    """Stage-1 training restricted to one task (the per-task baselines)."""
    from .config import default_policy

    providers = {d: ds for d, ds in datasets.items() if task.name in ds.coverage}
    policy = default_policy(providers, task_names=(task.name,))
    return stage1_train(cfg, policy, providers, codec, token_table, palette, hooks)


def build_multistream(
    stage1_model: DenoiserUNet, cfg: TrainConfig, codec: LatentCodec
) -> MultiStreamModel:
    """Assemble the stage-2 model: frozen copy of the stage-1 UNet as the
    auxiliary stream, main UNet initialized from the same weights with fresh
    task-attention layers."""
    init_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    aux = DenoiserUNet(stage1_model.cfg, init_rng)
    aux.load_state_dict(stage1_model.state_dict())
    main_cfg = unet_config(cfg, codec, task_attention=True)
    main = DenoiserUNet(main_cfg, init_rng)
    main.load_state_dict(stage1_model.state_dict(), strict=False)
    return MultiStreamModel(aux, main, mask_config(cfg))


def stage2_train(
    stage1_model: DenoiserUNet,
    cfg: TrainConfig,
    policy: SamplingPolicy,
    datasets,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    palette: SemanticPalette | None = None,
    hooks: dict | None = None,
    checkpoint_dir=None,
) -> tuple[MultiStreamModel, list[dict]]:
    """Train the main UNet against the frozen auxiliary stream."""
    palette = palette or default_palette()
    ms = build_multistream(stage1_model, cfg, codec)
    optimizer = Adam(ms.main.parameters(), lr=cfg.learning_rate)
    ss = np.random.SeedSequence((cfg.seed, 3))
    sample_ss, mask_ss = ss.spawn(2)
    sample_rng = np.random.default_rng(sample_ss)
    mask_rng = np.random.default_rng(mask_ss)

    def checkpoint_fn(path, step):
        save_checkpoint(
            path, kind="stage2", step=step, seed=cfg.seed, config=_cfg_doc(cfg),
            components={
                "aux": ms.aux.state_dict(),
                "main": ms.main.state_dict(),
                "token_table": token_table.embeddings,
            },
        )

    history = _run_loop(
        steps=cfg.stage2_steps,
        cfg=cfg,
        policy=policy,
        datasets=datasets,
        sample_rng=sample_rng,
        loss_fn=lambda task, samples: _loss_multi_stream(
            ms, task, samples, codec, token_table, palette, mask_rng
        ),
        optimizer=optimizer,
        model_ref=ms.main,
        hooks=hooks,
        stage="stage2",
        checkpoint_dir=checkpoint_dir,
        checkpoint_fn=checkpoint_fn if checkpoint_dir else None,
    )
    return ms, history


def infer(
    model: DenoiserUNet | MultiStreamModel,
    codec: LatentCodec,
    token_table: TaskTokenTable,
    image_pair: tuple[np.ndarray, np.ndarray | None],
    task: TaskId,
    palette: SemanticPalette | None = None,
) -> np.ndarray:
    """Full chain: encode -> forward -> decode -> post-process.

    Deterministic: no masking, no sampling. Flow tasks require both frames;
    single-frame tasks always duplicate frame a.
    """
    palette = palette or default_palette()
    frame_a, frame_b = image_pair
    if task.frames_required == 2 and frame_b is None:
        raise ValueError(f"task {task.name} needs a second frame")
    z_a = encode_image(frame_a, codec)
    z_b = encode_image(frame_b, codec) if (task.frames_required == 2) else None
    x = concat_latents(z_a, z_b)[None]
    if isinstance(model, MultiStreamModel):
        out = model.forward(x, task, token_table)
    else:
        out = model.forward(x, token_table.token(task))
    decoded = codec.decode_batch(out.data)[0]
    return postprocess_task(task, decoded, palette)


def _cfg_doc(cfg: TrainConfig) -> dict:
    doc = dict(vars(cfg)) if not hasattr(cfg, "__dataclass_fields__") else {
        k: getattr(cfg, k) for k in cfg.__dataclass_fields__
    }
    doc["resolution"] = list(doc["resolution"])
    doc["channel_mult"] = list(doc["channel_mult"])
    return doc
