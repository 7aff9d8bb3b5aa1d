import numpy as np
import pytest
from scipy import stats

from mtl_lab.model.task_attention import (
    AttentionTrace,
    MaskConfig,
    TaskAttentionLayer,
    compute_pi,
    sample_mask,
    sample_masks,
)
from mtl_lab.nn import Tensor

AUX = ("normal", "depth", "optical_flow")


def make_layer(channels=8, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    names = ("semantic",) + AUX
    return TaskAttentionLayer(channels, heads, names, rng), rng


def make_feats(rng, b=2, p=6, c=8, n=3):
    main = Tensor(rng.normal(size=(b, p, c)))
    aux = [(AUX[i], Tensor(rng.normal(size=(b, p, c)))) for i in range(n)]
    return main, aux


def test_compute_pi_normalizes():
    np.testing.assert_allclose(compute_pi(np.array([0.1, 0.1, 0.2])), [0.25, 0.25, 0.5])
    np.testing.assert_allclose(compute_pi(np.array([0.7])), [1.0])
    np.testing.assert_allclose(compute_pi(np.ones(6)), np.full(6, 1 / 6))


def test_compute_pi_all_zero_falls_back_to_uniform():
    np.testing.assert_allclose(compute_pi(np.zeros(4)), np.full(4, 0.25))


def test_compute_pi_rejects_negative():
    with pytest.raises(ValueError, match="non-negative"):
        compute_pi(np.array([0.5, -0.1]))


def test_sample_mask_rho_zero_never_masks():
    rng = np.random.default_rng(0)
    cfg = MaskConfig(strategy="sample_pi", rho=0.0)
    for _ in range(50):
        assert np.all(sample_mask(np.array([0.2, 0.3, 0.5]), cfg, rng) == 1.0)


def test_sample_mask_deterministic_peak():
    rng = np.random.default_rng(0)
    cfg = MaskConfig(strategy="sample_pi", rho=1.0)
    for _ in range(50):
        np.testing.assert_array_equal(
            sample_mask(np.array([1.0, 0.0, 0.0]), cfg, rng), [0.0, 1.0, 1.0]
        )


def test_sample_pi_monte_carlo_matches_pi():
    rng = np.random.default_rng(7)
    pi = np.array([0.2, 0.3, 0.5])
    cfg = MaskConfig(strategy="sample_pi", rho=1.0)
    masks = sample_masks(np.tile(pi, (10_000, 1)), cfg, rng)
    freq = (masks == 0.0).mean(axis=0)
    assert np.abs(freq - pi).sum() < 0.05
    counts = (masks == 0.0).sum(axis=0)
    chi = stats.chisquare(counts, f_exp=pi * 10_000)
    assert chi.pvalue > 0.01


def test_sample_k_pi_masks_between_1_and_n_minus_1():
    rng = np.random.default_rng(3)
    cfg = MaskConfig(strategy="sample_k_pi", rho=1.0)
    masks = sample_masks(np.tile([0.25, 0.25, 0.25, 0.25], (500, 1)), cfg, rng)
    n_masked = (masks == 0.0).sum(axis=1)
    assert n_masked.min() >= 1 and n_masked.max() <= 3
    assert len(np.unique(n_masked)) == 3


def test_argmax_masks_highest_with_lowest_index_ties():
    rng = np.random.default_rng(0)
    cfg = MaskConfig(strategy="argmax", rho=1.0)
    np.testing.assert_array_equal(sample_mask(np.array([0.4, 0.4, 0.2]), cfg, rng), [0, 1, 1])
    np.testing.assert_array_equal(sample_mask(np.array([0.1, 0.2, 0.7]), cfg, rng), [1, 1, 0])


def test_uniform_strategy_masks_exactly_one():
    rng = np.random.default_rng(0)
    cfg = MaskConfig(strategy="uniform", rho=1.0)
    masks = sample_masks(np.tile([0.9, 0.05, 0.05], (2000, 1)), cfg, rng)
    freq = (masks == 0.0).mean(axis=0)
    assert np.abs(freq - 1 / 3).max() < 0.05


def test_rho_half_masks_about_half():
    rng = np.random.default_rng(11)
    cfg = MaskConfig(strategy="sample_pi", rho=0.5)
    masks = sample_masks(np.tile([0.5, 0.5], (4000, 1)), cfg, rng)
    masked_rows = (masks == 0.0).any(axis=1).mean()
    assert abs(masked_rows - 0.5) < 0.05


def test_mask_config_validation():
    with pytest.raises(ValueError):
        MaskConfig(strategy="bogus")
    with pytest.raises(ValueError):
        MaskConfig(rho=1.5)
    with pytest.raises(ValueError):
        MaskConfig(granularity="per_pixel")


def test_empty_aux_set_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="empty"):
        sample_masks(np.zeros((3, 0)), MaskConfig(rho=1.0), rng)


def test_zero_init_layer_is_identity():
    layer, rng = make_layer()
    main, aux = make_feats(rng)
    out, _ = layer(main, aux, "semantic")
    assert np.array_equal(out.data, main.data)


def test_identical_aux_features_give_uniform_attention():
    # softmax over identical keys is uniform, whatever the weights are
    layer, rng = make_layer()
    shared = Tensor(rng.normal(size=(2, 6, 8)))
    aux = [(name, shared) for name in AUX]
    main = Tensor(rng.normal(size=(2, 6, 8)))
    # make keys identical across tasks by sharing projections
    layer.share_projections()
    _, trace = layer(main, aux, "semantic", record=True)
    np.testing.assert_allclose(trace, np.full(3, 1 / 3), atol=1e-12)


def test_single_aux_task_gets_full_attention():
    layer, rng = make_layer()
    main = Tensor(rng.normal(size=(1, 4, 8)))
    aux = [("depth", Tensor(rng.normal(size=(1, 4, 8))))]
    _, trace = layer(main, aux, "semantic", record=True)
    np.testing.assert_allclose(trace, [1.0])


def test_unmasked_weights_sum_to_one_per_location():
    layer, rng = make_layer(seed=5)
    main, aux = make_feats(rng, b=3, p=10)
    # reach inside: run with record and also grab full weights via a probe
    q = layer.q_proj[layer._index["semantic"]](main)
    _, trace = layer(main, aux, "semantic", record=True)
    assert trace.sum() == pytest.approx(1.0, abs=1e-5)


def test_masked_task_weight_exactly_zero_and_rest_renormalized():
    layer, rng = make_layer(seed=9)
    main, aux = make_feats(rng, b=1, p=5)
    cfg = MaskConfig(strategy="sample_pi", rho=1.0, granularity="per_layer")
    mask_rng = np.random.default_rng(0)
    # per_layer granularity with rho=1 masks exactly one task for the sample
    out_masked, _ = layer(main, aux, "semantic", mask_cfg=cfg, rng=mask_rng)
    assert out_masked.data.shape == main.data.shape
    # verify exact zero by reproducing the mask draw on the pi the layer saw
    probe_rng = np.random.default_rng(0)
    from mtl_lab.nn import autograd as ag

    q = ag.reshape(
        layer._split(layer.q_proj[layer._index["semantic"]](main), 1, 5), (1, 2, 5, 1, 4)
    ) * Tensor(1.0 / np.sqrt(layer.dh))
    ks = [
        ag.reshape(layer._split(layer.k_proj[layer._index[n]](f), 1, 5), (1, 2, 5, 1, 4))
        for n, f in aux
    ]
    k = ag.concat(ks, axis=3)
    logits = ag.matmul(q, ag.transpose(k, (0, 1, 2, 4, 3)))
    unmasked = ag.softmax(logits, axis=-1)
    pi = unmasked.data.mean(axis=1).reshape(1, 5, 3).mean(axis=1)
    masks = sample_masks(pi, cfg, probe_rng)
    bias = np.where(masks > 0, 0.0, -np.inf).reshape(1, 1, 1, 1, 3)
    masked_w = ag.softmax(logits + Tensor(bias), axis=-1).data
    assert np.all(masked_w[..., masks[0] == 0.0] == 0.0)
    sums = masked_w.sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


def test_shared_projections_make_traces_task_independent():
    layer, rng = make_layer(seed=13)
    names = ("semantic",) + AUX
    feats = {n: Tensor(rng.normal(size=(2, 6, 8))) for n in names}
    layer.share_projections()
    traces = {}
    for main_name in ("semantic", "normal"):
        aux = [(n, feats[n]) for n in names if n != main_name]
        # identical inputs: the same main features for both tasks
        _, trace = layer(feats["semantic"], aux, main_name, record=True)
        traces[main_name] = trace
    # identical aux features are required for exact equality
    shared_feat = feats["semantic"]
    for main_name in ("semantic", "normal"):
        aux = [(n, shared_feat) for n in names if n != main_name]
        _, trace = layer(shared_feat, aux, main_name, record=True)
        traces[main_name] = trace
    np.testing.assert_array_equal(traces["semantic"], traces["normal"])


def test_gradients_flow_to_projections_but_not_aux_constants():
    layer, rng = make_layer(seed=21)
    main = Tensor(rng.normal(size=(1, 4, 8)), requires_grad=True)
    aux_tensors = [Tensor(rng.normal(size=(1, 4, 8))) for _ in AUX]
    aux = list(zip(AUX, aux_tensors))
    layer.out_proj.weight.data[:] = rng.normal(size=layer.out_proj.weight.data.shape) * 0.1
    out, _ = layer(main, aux, "semantic")
    (out * out).sum().backward()
    assert layer.q_proj[0].weight.grad is not None
    assert layer.out_proj.weight.grad is not None
    assert all(t.grad is None for t in aux_tensors)
    assert main.grad is not None


def test_attention_trace_accumulates_rows():
    trace = AttentionTrace()
    trace.add(0, "semantic", AUX, np.array([0.2, 0.3, 0.5]))
    trace.add(0, "semantic", AUX, np.array([0.4, 0.3, 0.3]))
    np.testing.assert_allclose(trace.mean(0, "semantic"), [0.3, 0.3, 0.4])
    rows = trace.rows()
    assert len(rows) == 3
    assert rows[0] == {
        "layer_index": 0,
        "main_task": "semantic",
        "aux_task": "normal",
        "mean_score": pytest.approx(0.3),
    }
