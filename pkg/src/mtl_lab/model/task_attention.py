"""1-to-N cross-stream task attention with attention-guided masking.

The main stream's features query the auxiliary streams' features across a
task dimension: one query per spatial location against N keys, one per
auxiliary task. Each task owns its projection triple; the main task
contributes only its query projection, auxiliary tasks only key/value.
The output projection starts at zero so a fresh layer is an exact identity
through its residual.

Masking draws a task to silence from the current attention distribution
(high-attention tasks are masked more often) and is applied as -inf on the
pre-softmax logits, so masked weights are exactly zero and the rest stay a
convex combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Linear, Module, ModuleList, Parameter, Tensor
from ..nn import autograd as ag

STRATEGIES = ("sample_pi", "sample_k_pi", "argmax", "uniform")


@dataclass(frozen=True)
class MaskConfig:
    strategy: str = "sample_pi"
    rho: float = 0.4
    granularity: str = "per_location"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown masking strategy {self.strategy!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.granularity not in ("per_location", "per_layer"):
            raise ValueError(f"unknown granularity {self.granularity!r}")


def compute_pi(scores: np.ndarray) -> np.ndarray:
    """Normalize non-negative attention scores into a probability vector.

    All-zero scores fall back to the uniform distribution.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D vector")
    if np.any(scores < 0):
        raise ValueError("attention scores must be non-negative")
    total = scores.sum()
    if total <= 0:
        return np.full(scores.size, 1.0 / scores.size)
    return scores / total


def _categorical_rows(pis: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row; all-zero rows are treated as uniform."""
    sums = pis.sum(axis=1, keepdims=True)
    uniform = np.full_like(pis, 1.0 / pis.shape[1])
    probs = np.where(sums > 0, pis / np.where(sums > 0, sums, 1.0), uniform)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(pis.shape[0])
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, pis.shape[1] - 1)


def sample_masks(pis: np.ndarray, cfg: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    """Vectorized mask sampling: one binary mask row per probability row.

    With probability 1 - rho a row keeps every task (all ones); otherwise the
    configured strategy silences one task (or k tasks for ``sample_k_pi``).
    """
    pis = np.atleast_2d(np.asarray(pis, dtype=np.float64))
    m, n = pis.shape
    if n == 0:
        raise ValueError("empty auxiliary task set")
    masks = np.ones((m, n))
    if cfg.rho <= 0.0:
        return masks
    gated = np.nonzero(rng.random(m) < cfg.rho)[0]
    if gated.size == 0:
        return masks

    if cfg.strategy == "sample_pi":
        chosen = _categorical_rows(pis[gated], rng)
        masks[gated, chosen] = 0.0
    elif cfg.strategy == "argmax":
        chosen = np.argmax(pis[gated], axis=1)  # ties resolve to lowest index
        masks[gated, chosen] = 0.0
    elif cfg.strategy == "uniform":
        chosen = rng.integers(0, n, size=gated.size)
        masks[gated, chosen] = 0.0
    elif cfg.strategy == "sample_k_pi":
        if n < 2:
            return masks  # no k in [1, n-1]; never silence the only stream
        ks = rng.integers(1, n, size=gated.size)
        for row, k in zip(gated, ks):
            p = pis[row].copy()
            if p.sum() <= 0:
                p = np.ones(n)
            for _ in range(int(k)):
                c = _categorical_rows(p[None], rng)[0]
                masks[row, c] = 0.0
                p[c] = 0.0
                if p.sum() <= 0:
                    break
    return masks


def sample_mask(pi: np.ndarray, cfg: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    """Single-vector form of :func:`sample_masks`."""
    return sample_masks(np.asarray(pi)[None], cfg, rng)[0]


class AttentionTrace:
    """Running mean of attention mass per (layer, main task, auxiliary task)."""

    def __init__(self):
        self._sums: dict[tuple[int, str], np.ndarray] = {}
        self._counts: dict[tuple[int, str], int] = {}
        self._aux_names: dict[tuple[int, str], tuple[str, ...]] = {}

    def add(self, layer: int, main_task: str, aux_names: tuple[str, ...], vec: np.ndarray):
        key = (layer, main_task)
        if key in self._sums:
            self._sums[key] += vec
            self._counts[key] += 1
        else:
            self._sums[key] = vec.copy()
            self._counts[key] = 1
            self._aux_names[key] = tuple(aux_names)

    def mean(self, layer: int, main_task: str) -> np.ndarray:
        key = (layer, main_task)
        return self._sums[key] / self._counts[key]

    def keys(self) -> list[tuple[int, str]]:
        return sorted(self._sums)

    def rows(self) -> list[dict]:
        out = []
        for layer, main in self.keys():
            vec = self.mean(layer, main)
            for aux, score in zip(self._aux_names[(layer, main)], vec):
                out.append(
                    {
                        "layer_index": layer,
                        "main_task": main,
                        "aux_task": aux,
                        "mean_score": float(score),
                    }
                )
        return out

    def to_jsonable(self) -> list[dict]:
        return self.rows()


class TaskAttentionLayer(Module):
    """Per-block task attention: Q from the main stream, K/V per auxiliary task."""

    def __init__(self, channels: int, heads: int, task_names: tuple[str, ...], rng: np.random.Generator):
        if channels % heads:
            raise ValueError(f"channels={channels} not divisible by heads={heads}")
        self.channels = channels
        self.heads = heads
        self.dh = channels // heads
        self.task_names = tuple(task_names)
        self._index = {name: i for i, name in enumerate(self.task_names)}
        self.q_proj = ModuleList([Linear(channels, channels, rng, bias=False) for _ in self.task_names])
        self.k_proj = ModuleList([Linear(channels, channels, rng, bias=False) for _ in self.task_names])
        self.v_proj = ModuleList([Linear(channels, channels, rng, bias=False) for _ in self.task_names])
        self.out_proj = Linear(channels, channels, rng, bias=False)
        self.out_proj.weight.data[:] = 0.0  # identity at initialization

    def share_projections(self):
        """Copy task 0's (q, k, v) weights into every task (ablation aid)."""
        for plist in (self.q_proj, self.k_proj, self.v_proj):
            first = plist[0]
            for other in list(plist)[1:]:
                other.weight.data = first.weight.data.copy()

    def _split(self, t: Tensor, b: int, p: int) -> Tensor:
        return ag.transpose(ag.reshape(t, (b, p, self.heads, self.dh)), (0, 2, 1, 3))

    def forward(
        self,
        main_feats: Tensor,
        aux_feats: list[tuple[str, Tensor]],
        main_task: str,
        mask_cfg: MaskConfig | None = None,
        rng: np.random.Generator | None = None,
        record: bool = False,
    ) -> tuple[Tensor, np.ndarray | None]:
        """Enrich (B, P, C) main features with auxiliary streams.

        Returns the residual-updated features and, when ``record`` is set,
        the unmasked attention mass per auxiliary task averaged over batch,
        heads and locations.
        """
        if not aux_feats:
            raise ValueError("task attention needs at least one auxiliary stream")
        b, p, c = main_feats.shape
        if c != self.channels:
            raise ValueError(f"feature channels {c} != layer channels {self.channels}")
        n = len(aux_feats)
        aux_names = tuple(name for name, _ in aux_feats)

        q = self._split(self.q_proj[self._index[main_task]](main_feats), b, p)
        q = ag.reshape(q, (b, self.heads, p, 1, self.dh)) * Tensor(1.0 / np.sqrt(self.dh))
        ks, vs = [], []
        for name, feats in aux_feats:
            if feats.shape != main_feats.shape:
                raise ValueError(f"auxiliary stream {name} shape {feats.shape} != {main_feats.shape}")
            i = self._index[name]
            ks.append(ag.reshape(self._split(self.k_proj[i](feats), b, p), (b, self.heads, p, 1, self.dh)))
            vs.append(ag.reshape(self._split(self.v_proj[i](feats), b, p), (b, self.heads, p, 1, self.dh)))
        k = ag.concat(ks, axis=3)  # (B, H, P, N, dh)
        v = ag.concat(vs, axis=3)

        logits = ag.matmul(q, ag.transpose(k, (0, 1, 2, 4, 3)))
        unmasked = ag.softmax(logits, axis=-1)  # (B, H, P, 1, N)

        trace_vec = None
        if record:
            trace_vec = unmasked.data.mean(axis=(0, 1, 2, 3))

        weights = unmasked
        if mask_cfg is not None and mask_cfg.rho > 0.0:
            if rng is None:
                raise ValueError("masking requires an rng")
            pi = unmasked.data.mean(axis=1).reshape(b, p, n)  # head-averaged scores
            if mask_cfg.granularity == "per_location":
                masks = sample_masks(pi.reshape(b * p, n), mask_cfg, rng).reshape(b, 1, p, 1, n)
            else:
                masks = sample_masks(pi.mean(axis=1), mask_cfg, rng).reshape(b, 1, 1, 1, n)
            bias = np.where(masks > 0, 0.0, -np.inf)
            weights = ag.softmax(logits + Tensor(bias), axis=-1)

        attended = ag.matmul(weights, v)  # (B, H, P, 1, dh)
        attended = ag.reshape(attended, (b, self.heads, p, self.dh))
        attended = ag.reshape(ag.transpose(attended, (0, 2, 1, 3)), (b, p, c))
        out = main_feats + self.out_proj(attended)
        return out, trace_vec

    __call__ = forward
