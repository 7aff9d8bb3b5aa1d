"""Acceptance suite: every exit criterion, one pass/fail line each.

The end-to-end smoke (criterion 9) trains the full two-stage pipeline plus
the seven single-task baselines on a generated toy corpus at reduced
resolution and compares the two stages' multi-task aggregate on a held-out
split. Budget on CPU: well under 30 minutes; everything else is seconds.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import pytest
from scipy import stats

from mtl_lab.data import build_toy_corpus, generate_scene, load_split, warp_backward
from mtl_lab.latentcodec import CodecConfig, build_codec, decode_latent, encode_image
from mtl_lab.model import (
    DenoiserUNet,
    MaskConfig,
    TaskAttentionLayer,
    UNetConfig,
    build_token_table,
    latent_mse,
    sample_mask,
    sample_masks,
)
from mtl_lab.model.task_attention import compute_pi
from mtl_lab.nn import Tensor
from mtl_lab.nn import autograd as ag
from mtl_lab.metrics import (
    abs_rel,
    align_least_squares,
    delta_m,
    epe,
    mean_angular_error,
    miou,
    rmse,
)
from mtl_lab.taskcodec import default_palette, encode_task, invert_affine, postprocess_task
from mtl_lab.tasks import DEPTH, OPTICAL_FLOW, SEMANTIC, TASKS
from mtl_lab.training import (
    TOY_BENCHMARK,
    TrainConfig,
    attach_delta_m,
    build_multistream,
    default_policy,
    evaluate_model,
    merge_baseline_reports,
    stage1_train,
    stage2_train,
    train_single_task,
    unet_config,
)
from mtl_lab.training.loop import encode_batch_inputs, encode_batch_targets, masked_latent_loss


def _report(criterion: str):
    print(f"\nACCEPTANCE {criterion}: PASS")


# -- 1: multi-task aggregate oracle against published benchmark rows -------------


def test_criterion_1_delta_m_oracle():
    t0 = time.monotonic()
    baseline = {
        "semantic": {"cityscapes": 48.17},
        "normal": {"diode": 22.27},
        "depth": {"kitti": 14.21, "diode": 32.56},
        "optical_flow": {"kitti": 10.36},
        "scene_flow": {"kitti": 0.2735},
        "shading": {"mid": 0.2145},
        "albedo": {"mid": 0.2551},
    }
    jtr_adapted = {
        "semantic": {"cityscapes": 20.46},
        "normal": {"diode": 50.91},
        "depth": {"kitti": 39.27, "diode": 73.14},
        "optical_flow": {"kitti": 34.92},
        "scene_flow": {"kitti": 0.5176},
        "shading": {"mid": 0.3030},
        "albedo": {"mid": 0.3565},
    }
    dmtl_adapted = {
        "semantic": {"cityscapes": 45.92},
        "normal": {"diode": 44.56},
        "depth": {"kitti": 24.83, "diode": 58.17},
        "optical_flow": {"kitti": 36.60},
        "scene_flow": {"kitti": 0.3502},
        "shading": {"mid": 0.3004},
        "albedo": {"mid": 0.3660},
    }
    assert delta_m(jtr_adapted, baseline) == pytest.approx(-106.87, abs=1.0)
    assert delta_m(dmtl_adapted, baseline) == pytest.approx(-78.76, abs=1.0)
    assert time.monotonic() - t0 < 1.0
    _report("1 delta_m oracle")


# -- 2: codec round-trips ----------------------------------------------------------


def test_criterion_2_codec_round_trips():
    t0 = time.monotonic()
    palette = default_palette()
    rng = np.random.default_rng(2)
    for _ in range(100):
        labels = rng.integers(0, palette.n_classes, size=(12, 16))
        map3, _ = encode_task(SEMANTIC, labels, palette)
        assert np.array_equal(postprocess_task(SEMANTIC, map3, palette), labels)

    codec = build_codec(CodecConfig(mode="invertible_shuffle", f=2))
    for _ in range(20):
        img = rng.uniform(-1, 1, size=(16, 24, 3))
        z = encode_image(img, codec)
        assert np.abs(decode_latent(z, codec) - img).max() == 0.0

    for _ in range(20):
        depth = rng.uniform(0.5, 12.0, size=(20, 20))
        map3, record = encode_task(DEPTH, depth)
        recovered = invert_affine(postprocess_task(DEPTH, map3), record)
        clipped = np.clip(depth, record.a[0], record.b[0])
        assert np.abs(recovered - clipped).max() <= 1e-5
    assert time.monotonic() - t0 < 10.0
    _report("2 codec round-trips")


# -- shared tiny pipeline fixtures ---------------------------------------------------


@pytest.fixture(scope="module")
def iso_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("iso-corpus")
    build_toy_corpus(root, n_train=10, n_eval=4, seed=31, resolution=(16, 32))
    datasets = load_split(root, "train")
    codec = build_codec(CodecConfig(mode="invertible_shuffle", f=2))
    table = build_token_table(d_tok=16)
    return datasets, codec, table


# -- 3: gradient isolation oracle over 20 interleaved steps ---------------------------


def test_criterion_3_gradient_isolation(iso_setup):
    t0 = time.monotonic()
    datasets, codec, table = iso_setup
    palette = default_palette()
    cfg = TrainConfig(
        learning_rate=1e-3, effective_batch_size=8, grad_accum_steps=2, stage1_steps=20,
        seed=13, head_count=2, resolution=(16, 32), base_channels=8, channel_mult=(1, 2),
        d_tok=16, ff_mult=2,
    )
    policy = default_policy(datasets)
    records = []

    def pre_step(step, task, model, optimizer):
        records.append(
            {"task": task, "before": model.state_dict(), "opt": optimizer.state()}
        )

    def post_step(step, task, model, optimizer, batches, loss):
        records[-1]["batches"] = batches
        records[-1]["after"] = model.state_dict()

    stage1_train(
        cfg, policy, datasets, codec, table, hooks={"pre_step": pre_step, "post_step": post_step}
    )
    tasks_seen = {r["task"].name for r in records}
    assert len(records) == 20
    assert len(tasks_seen) > 1, "expected interleaved tasks"

    probe = DenoiserUNet(unet_config(cfg, codec), np.random.default_rng(0))
    names = [n for n, _ in probe.named_parameters()]
    worst = 0.0
    for rec in records:
        probe.load_state_dict(rec["before"])
        grads = {n: np.zeros_like(p.data) for n, p in probe.named_parameters()}
        for _, samples in rec["batches"]:
            for sample in samples:  # independent per-sample recomputation
                probe.zero_grad()
                x = encode_batch_inputs([sample], rec["task"], codec)
                zt, lv = encode_batch_targets([sample], rec["task"], codec, palette)
                loss = masked_latent_loss(probe.forward(x, table.token(rec["task"])), zt, lv)
                loss.backward()
                for n, p in probe.named_parameters():
                    if p.grad is not None:
                        grads[n] += p.grad / (cfg.minibatch_size * cfg.grad_accum_steps)
        opt = rec["opt"]
        t = opt["t"] + 1
        for i, n in enumerate(names):
            g = grads[n]
            m = 0.9 * opt["m"][i] + 0.1 * g
            v = 0.999 * opt["v"][i] + 0.001 * g * g
            expect = rec["before"][n] - cfg.learning_rate * (m / (1 - 0.9**t)) / (
                np.sqrt(v / (1 - 0.999**t)) + 1e-8
            )
            delta_expect = expect - rec["before"][n]
            delta_actual = rec["after"][n] - rec["before"][n]
            moved = np.abs(delta_expect) > 1e-18
            if moved.any():
                rel = np.abs(delta_actual - delta_expect)[moved] / np.abs(delta_expect)[moved]
                worst = max(worst, float(rel.max()))
    assert worst < 1e-6, f"worst relative update error {worst}"
    assert time.monotonic() - t0 < 120.0
    _report(f"3 gradient isolation (worst rel err {worst:.2e})")


# -- 4: step-0 multi-stream equivalence ------------------------------------------------


def test_criterion_4_step0_equivalence(iso_setup):
    datasets, codec, table = iso_setup
    cfg = TrainConfig(
        learning_rate=1e-3, effective_batch_size=4, grad_accum_steps=2, stage1_steps=3,
        seed=3, head_count=2, resolution=(16, 32), base_channels=8, channel_mult=(1, 2),
        d_tok=16, ff_mult=2,
    )
    policy = default_policy(datasets)
    stage1_model, _ = stage1_train(cfg, policy, datasets, codec, table)
    ms = build_multistream(stage1_model, cfg, codec)
    for task in (DEPTH, SEMANTIC, OPTICAL_FLOW):
        samples = [datasets["toy-urban"].sample(i) for i in range(3)]
        x = encode_batch_inputs(samples, task, codec)
        single = stage1_model.forward(x, table.token(task))
        multi = ms.forward(x, task, table)
        assert np.array_equal(single.data, multi.data)
    _report("4 step-0 equivalence")


# -- 5: masking statistics ---------------------------------------------------------------


def test_criterion_5_masking_statistics():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    pi = np.array([0.2, 0.3, 0.5])
    cfg = MaskConfig(strategy="sample_pi", rho=1.0)
    masks = sample_masks(np.tile(pi, (10_000, 1)), cfg, rng)
    freq = (masks == 0.0).mean(axis=0)
    l1 = float(np.abs(freq - pi).sum())
    assert l1 < 0.05
    counts = (masks == 0.0).sum(axis=0)
    assert stats.chisquare(counts, f_exp=pi * 10_000).pvalue > 0.01

    cfg0 = MaskConfig(strategy="sample_pi", rho=0.0)
    masks0 = sample_masks(np.tile(pi, (10_000, 1)), cfg0, rng)
    assert (masks0 == 0.0).sum() == 0
    assert time.monotonic() - t0 < 30.0
    _report(f"5 masking statistics (L1 {l1:.4f})")


# -- 6: attention normalization and mask exactness ------------------------------------------


def test_criterion_6_attention_normalization():
    rng = np.random.default_rng(6)
    names = tuple(t.name for t in TASKS)
    layer = TaskAttentionLayer(channels=16, heads=4, task_names=names, rng=rng)
    b, p = 2, 12
    main = Tensor(rng.normal(size=(b, p, 16)))
    aux = [(n, Tensor(rng.normal(size=(b, p, 16)))) for n in names if n != "depth"]

    q = ag.reshape(layer._split(layer.q_proj[layer._index["depth"]](main), b, p),
                   (b, layer.heads, p, 1, layer.dh)) * Tensor(1.0 / np.sqrt(layer.dh))
    ks = [ag.reshape(layer._split(layer.k_proj[layer._index[n]](f), b, p),
                     (b, layer.heads, p, 1, layer.dh)) for n, f in aux]
    logits = ag.matmul(q, ag.transpose(ag.concat(ks, axis=3), (0, 1, 2, 4, 3)))
    weights = ag.softmax(logits, axis=-1).data
    sums = weights.sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-5

    pi = compute_pi(weights.mean(axis=(0, 1, 2, 3)))
    mask = sample_mask(pi, MaskConfig(strategy="sample_pi", rho=1.0), np.random.default_rng(0))
    bias = np.where(mask > 0, 0.0, -np.inf)
    masked = ag.softmax(logits + Tensor(bias), axis=-1).data
    assert np.all(masked[..., mask == 0.0] == 0.0)
    assert np.abs(masked.sum(axis=-1) - 1.0).max() < 1e-5
    _report("6 attention normalization")


# -- 7: finite-difference gradient check on a micro model -------------------------------------


def test_criterion_7_gradient_check():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    cfg = UNetConfig(
        c_lat=3, latent_hw=(4, 4), base_channels=2, channel_mult=(1,), heads=1, d_tok=4,
        ff_mult=2, groups=2,
    )
    model = DenoiserUNet(cfg, rng)
    model.out_conv.weight.data = rng.normal(size=model.out_conv.weight.data.shape) * 0.05
    params = model.parameters()
    n_params = sum(p.data.size for p in params)
    assert n_params <= 1000

    token = np.array([1.0, 0.0, 0.0, 0.0])
    x = rng.normal(size=(2, 6, 4, 4))
    target = rng.normal(size=(2, 3, 4, 4))

    def loss_value():
        return latent_mse(model.forward(Tensor(x), token), target).item()

    model.zero_grad()
    latent_mse(model.forward(Tensor(x), token), target).backward()
    flat_grad = np.concatenate(
        [(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel() for p in params]
    )

    eps = 1e-5
    worst = 0.0
    for _ in range(50):
        d = rng.normal(size=n_params)
        d /= np.linalg.norm(d)
        analytic = float(flat_grad @ d)
        saved = [p.data.copy() for p in params]

        def set_theta(vec):
            off = 0
            for p, s in zip(params, saved):
                p.data = s + vec[off : off + s.size].reshape(s.shape)
                off += s.size

        set_theta(eps * d)
        hi = loss_value()
        set_theta(-eps * d)
        lo = loss_value()
        set_theta(np.zeros(n_params))
        numeric = (hi - lo) / (2 * eps)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-3, f"worst directional gradient error {worst}"
    assert time.monotonic() - t0 < 60.0
    _report(f"7 gradient check (worst rel err {worst:.2e})")


# -- 8: data-generator physics over 100 seeds ---------------------------------------------------


def test_criterion_8_generator_physics():
    t0 = time.monotonic()
    styles = ("indoor", "urban", "objects")
    for seed in range(100):
        s = generate_scene(seed, resolution=(16, 32), style=styles[seed % 3])
        recomposed = np.clip(s.labels["albedo"] * s.labels["shading"][..., None], 0, 1) * 2 - 1
        assert np.array_equal(s.frame_i, recomposed)

        flow = s.labels["optical_flow"]
        valid = s.validity["optical_flow"]
        warped = warp_backward(s.frame_j, flow)
        assert np.abs(warped - s.frame_i)[valid].mean() < 0.05

        h, w = flow.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w]
        ty = (yy + flow[..., 1]).astype(np.int64)
        tx = (xx + flow[..., 0]).astype(np.int64)
        inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        check = valid & inside
        dz = s.meta["depth_j"][ty[check], tx[check]] - s.labels["depth"][check]
        assert np.array_equal(s.labels["scene_flow"][check][:, 2], dz)
    assert time.monotonic() - t0 < 60.0
    _report("8 generator physics")


# -- 9: toy end-to-end smoke -----------------------------------------------------------------


SMOKE_CFG = TrainConfig(
    learning_rate=2e-2,
    effective_batch_size=16,
    grad_accum_steps=2,
    stage1_steps=450,
    stage2_steps=150,
    seed=42,
    head_count=4,
    rho=0.4,
    mask_strategy="sample_pi",
    resolution=(16, 32),
    base_channels=32,
    channel_mult=(1, 2),
    d_tok=16,
    ff_mult=4,
)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    t0 = time.monotonic()
    root = tmp_path_factory.mktemp("smoke-corpus")
    build_toy_corpus(root, n_train=64, n_eval=16, seed=123, resolution=SMOKE_CFG.resolution)
    train = load_split(root, "train")
    evald = load_split(root, "eval")
    codec = build_codec(CodecConfig(mode="invertible_shuffle", f=2))
    table = build_token_table(d_tok=SMOKE_CFG.d_tok)
    policy = default_policy(train)

    stage1_model, history1 = stage1_train(SMOKE_CFG, policy, train, codec, table)
    ms, _ = stage2_train(stage1_model, SMOKE_CFG, policy, train, codec, table)

    baseline_cfg = dataclasses.replace(SMOKE_CFG, stage1_steps=100)
    baseline_reports = {}
    for task in TASKS:
        bm, bh = train_single_task(task, baseline_cfg, train, codec, table)
        assert {h["task"] for h in bh} == {task.name}
        bench = tuple(row for row in TOY_BENCHMARK if row[0] == task.name)
        rep, _ = evaluate_model(bm, codec, table, evald, benchmark=bench)
        baseline_reports[task.name] = rep
    baselines = merge_baseline_reports(baseline_reports)

    report1, _ = evaluate_model(stage1_model, codec, table, evald)
    attach_delta_m(report1, baselines, "smoke-baselines")
    report2, _ = evaluate_model(ms, codec, table, evald)
    attach_delta_m(report2, baselines, "smoke-baselines")
    elapsed = time.monotonic() - t0
    return {
        "history1": history1,
        "stage1": stage1_model,
        "stage2": ms,
        "codec": codec,
        "table": table,
        "eval": evald,
        "report1": report1,
        "report2": report2,
        "elapsed": elapsed,
    }


def test_criterion_9_end_to_end(smoke_run):
    losses = np.array([h["loss"] for h in smoke_run["history1"]])
    k = max(1, len(losses) // 10)
    ratio = losses[-k:].mean() / losses[:k].mean()
    assert ratio <= 0.5, f"stage-1 loss ratio {ratio:.3f}"

    dm1 = smoke_run["report1"].delta_m
    dm2 = smoke_run["report2"].delta_m
    assert dm1 is not None and dm2 is not None
    assert dm2 >= dm1, f"stage-2 dm {dm2:.2f} < stage-1 dm {dm1:.2f}"

    # zero-motion pairs must regress to smaller flow than moving pairs
    ms = smoke_run["stage2"]
    codec, table = smoke_run["codec"], smoke_run["table"]
    evald = smoke_run["eval"]
    palette = default_palette()
    ds = evald["toy-urban"]
    static_epe, moving_epe = [], []
    for i in range(len(ds)):
        sample = ds.sample(i)
        z_i = codec.encode_batch(sample.frame_i[None])
        x_static = np.concatenate([z_i, z_i], axis=1)
        pred_static = postprocess_task(
            OPTICAL_FLOW, codec.decode_batch(ms.forward(x_static, OPTICAL_FLOW, table).data)[0]
        )
        static_epe.append(float(np.linalg.norm(pred_static, axis=-1).mean()))

        z_j = codec.encode_batch(sample.frame_j[None])
        x_moving = np.concatenate([z_i, z_j], axis=1)
        pred_moving = postprocess_task(
            OPTICAL_FLOW, codec.decode_batch(ms.forward(x_moving, OPTICAL_FLOW, table).data)[0]
        )
        target, _ = encode_task(
            OPTICAL_FLOW, sample.labels["optical_flow"], valid=sample.validity["optical_flow"]
        )
        moving_epe.append(
            float(np.linalg.norm(pred_moving - target[..., :2], axis=-1).mean())
        )
    assert np.median(static_epe) < np.median(moving_epe), (
        f"static median {np.median(static_epe):.4f} vs moving {np.median(moving_epe):.4f}"
    )

    assert smoke_run["elapsed"] < 30 * 60
    _report(
        f"9 end-to-end (loss ratio {ratio:.3f}, dm1 {dm1:.1f}, dm2 {dm2:.1f}, "
        f"{smoke_run['elapsed'] / 60:.1f} min)"
    )


# -- 10: metric unit suite -----------------------------------------------------------------------


def test_criterion_10_metric_unit_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(10)

    gt = rng.uniform(1.0, 5.0, size=(8, 8))
    np.testing.assert_allclose(align_least_squares(2.0 * gt + 3.0, gt), gt, atol=1e-6)

    labels = rng.integers(0, 4, size=(8, 8))
    assert miou(labels, labels, 4)[1] == pytest.approx(100.0)

    a = np.zeros((4, 4, 3))
    b = np.zeros((4, 4, 3))
    a[..., 0] = 1.0
    b[..., 1] = 1.0
    assert mean_angular_error(a, b) == pytest.approx(90.0)
    assert mean_angular_error(a, -a) == pytest.approx(180.0)

    assert abs_rel(1.5 * gt, gt) == pytest.approx(50.0)

    flow = np.zeros((4, 4, 2))
    flow[..., 0] = 3.0
    flow[..., 1] = 4.0
    assert epe(flow, np.zeros((4, 4, 2)), dims=2) == pytest.approx(5.0)
    off3 = np.broadcast_to(np.array([1.0, 2.0, 2.0]), (4, 4, 3))
    assert epe(off3, np.zeros((4, 4, 3)), dims=3) == pytest.approx(3.0)

    img = rng.uniform(0, 1, size=(8, 8))
    assert rmse(img + 0.1, img) == pytest.approx(0.1)

    pred = gt + rng.normal(scale=0.3, size=gt.shape)
    base_val = abs_rel(align_least_squares(pred, gt), gt)
    corrupt_val = abs_rel(align_least_squares(-2.0 * pred + 5.0, gt), gt)
    assert corrupt_val == pytest.approx(base_val, abs=1e-6)
    assert time.monotonic() - t0 < 10.0
    _report("10 metric unit suite")
