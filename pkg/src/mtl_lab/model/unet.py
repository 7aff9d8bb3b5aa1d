"""Single-step task-conditioned UNet regressing target latents.

The network consumes two channel-concatenated input latents (the second
frame duplicates the first for single-frame tasks) and is conditioned on a
per-task token through cross-attention in every transformer block. There is
no timestep, noise or sampling anywhere: the forward pass is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..latentcodec import LatentGrid
from ..nn import Conv2d, GroupNorm, LayerNorm, Linear, Module, ModuleList, Parameter, Tensor
from ..nn import autograd as ag
from ..tasks import TASKS
from .task_attention import AttentionTrace, MaskConfig, TaskAttentionLayer


@dataclass(frozen=True)
class UNetConfig:
    c_lat: int
    latent_hw: tuple[int, int]
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2)
    heads: int = 4
    d_tok: int = 16
    ff_mult: int = 4
    groups: int = 8
    task_attention: bool = False
    task_names: tuple[str, ...] = field(default_factory=lambda: tuple(t.name for t in TASKS))

    def __post_init__(self):
        h, w = self.latent_hw
        down = 2 ** (len(self.channel_mult) - 1)
        if h % down or w % down:
            raise ValueError(f"latent {h}x{w} not divisible by the downsample path ({down}x)")
        for m in self.channel_mult:
            if (self.base_channels * m) % self.heads:
                raise ValueError("every level width must be divisible by the head count")

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mult)


class ResBlock(Module):
    def __init__(self, cin: int, cout: int, groups: int, rng: np.random.Generator):
        self.gn1 = GroupNorm(cin, groups)
        self.conv1 = Conv2d(cin, cout, 3, rng)
        self.gn2 = GroupNorm(cout, groups)
        self.conv2 = Conv2d(cout, cout, 3, rng)
        self.skip = Conv2d(cin, cout, 1, rng) if cin != cout else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(ag.silu(self.gn1(x)))
        h = self.conv2(ag.silu(self.gn2(h)))
        return h + (self.skip(x) if self.skip is not None else x)

    __call__ = forward


class SpatialSelfAttention(Module):
    """Multi-head attention over flattened locations with a learned positional bias."""

    def __init__(self, channels: int, heads: int, n_tokens: int, rng: np.random.Generator):
        self.heads = heads
        self.dh = channels // heads
        self.pos = Parameter(0.02 * rng.standard_normal((1, n_tokens, channels)))
        self.q = Linear(channels, channels, rng, bias=False)
        self.k = Linear(channels, channels, rng, bias=False)
        self.v = Linear(channels, channels, rng, bias=False)
        self.out = Linear(channels, channels, rng, bias=False)

    def _split(self, t: Tensor, b: int, p: int) -> Tensor:
        return ag.transpose(ag.reshape(t, (b, p, self.heads, self.dh)), (0, 2, 1, 3))

    def forward(self, tn: Tensor) -> Tensor:
        b, p, c = tn.shape
        h = tn + self.pos
        # scale folded into q so the P x P logits need no extra pass
        q = self._split(self.q(h), b, p) * Tensor(1.0 / np.sqrt(self.dh))
        k = self._split(self.k(h), b, p)
        v = self._split(self.v(h), b, p)
        logits = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2)))
        weights = ag.softmax(logits, axis=-1)
        o = ag.matmul(weights, v)
        o = ag.reshape(ag.transpose(o, (0, 2, 1, 3)), (b, p, c))
        return self.out(o)

    __call__ = forward


class TokenCrossAttention(Module):
    """Cross-attention onto the single task-token key/value."""

    def __init__(self, channels: int, d_tok: int, rng: np.random.Generator):
        self.scale = 1.0 / np.sqrt(channels)
        self.q = Linear(channels, channels, rng, bias=False)
        self.k = Linear(d_tok, channels, rng, bias=False)
        self.v = Linear(d_tok, channels, rng, bias=False)
        self.out = Linear(channels, channels, rng, bias=False)

    def forward(self, tn: Tensor, token: Tensor) -> Tensor:
        q = self.q(tn)
        k = self.k(token)  # (1, 1, C)
        v = self.v(token)
        logits = ag.matmul(q, ag.transpose(k, (0, 2, 1))) * Tensor(self.scale)
        weights = ag.softmax(logits, axis=-1)  # single key: weight is exactly 1
        return self.out(ag.matmul(weights, v))

    __call__ = forward


class FeedForward(Module):
    def __init__(self, channels: int, mult: int, rng: np.random.Generator):
        self.fc1 = Linear(channels, channels * mult, rng)
        self.fc2 = Linear(channels * mult, channels, rng)

    def forward(self, tn: Tensor) -> Tensor:
        return self.fc2(ag.silu(self.fc1(tn)))

    __call__ = forward


class TransformerBlock(Module):
    """Spatial attention, optional task attention, token cross-attention, FF."""

    def __init__(self, cfg: UNetConfig, channels: int, n_tokens: int, rng: np.random.Generator):
        self.ln_spatial = LayerNorm(channels)
        self.spatial = SpatialSelfAttention(channels, cfg.heads, n_tokens, rng)
        self.task_attn = (
            TaskAttentionLayer(channels, cfg.heads, cfg.task_names, rng) if cfg.task_attention else None
        )
        self.ln_token = LayerNorm(channels)
        self.token_attn = TokenCrossAttention(channels, cfg.d_tok, rng)
        self.ln_ff = LayerNorm(channels)
        self.ff = FeedForward(channels, cfg.ff_mult, rng)

    def forward(
        self,
        x: Tensor,
        token: Tensor,
        aux: list[tuple[str, Tensor]] | None = None,
        main_task: str | None = None,
        mask_cfg: MaskConfig | None = None,
        rng: np.random.Generator | None = None,
        record_trace: bool = False,
    ) -> tuple[Tensor, Tensor, np.ndarray | None]:
        b, c, h, w = x.shape
        t = ag.reshape(ag.transpose(x, (0, 2, 3, 1)), (b, h * w, c))
        t = t + self.spatial(self.ln_spatial(t))
        feat = t  # the per-task stream feature other models attend to
        trace_vec = None
        if self.task_attn is not None and aux is not None:
            t, trace_vec = self.task_attn(
                t, aux, main_task, mask_cfg=mask_cfg, rng=rng, record=record_trace
            )
        t = t + self.token_attn(self.ln_token(t), token)
        t = t + self.ff(self.ln_ff(t))
        out = ag.transpose(ag.reshape(t, (b, h, w, c)), (0, 3, 1, 2))
        return out, feat, trace_vec

    __call__ = forward


class DenoiserUNet(Module):
    """The regression UNet; ``cfg.task_attention`` adds one task-attention
    layer after spatial attention in every transformer block."""

    def __init__(self, cfg: UNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        ch = cfg.level_channels
        levels = len(ch)
        h, w = cfg.latent_hw
        self.conv_in = Conv2d(2 * cfg.c_lat, ch[0], 3, rng)

        self.enc_res = ModuleList()
        self.enc_tf = ModuleList()
        self.downs = ModuleList()
        for i in range(levels):
            hw = (h >> i) * (w >> i)
            self.enc_res.append(ResBlock(ch[i], ch[i], cfg.groups, rng))
            self.enc_tf.append(TransformerBlock(cfg, ch[i], hw, rng))
            if i < levels - 1:
                self.downs.append(Conv2d(ch[i], ch[i + 1], 3, rng, stride=2))

        hw_mid = (h >> (levels - 1)) * (w >> (levels - 1))
        self.mid_res1 = ResBlock(ch[-1], ch[-1], cfg.groups, rng)
        self.mid_tf = TransformerBlock(cfg, ch[-1], hw_mid, rng)
        self.mid_res2 = ResBlock(ch[-1], ch[-1], cfg.groups, rng)

        self.dec_res = ModuleList()
        self.dec_tf = ModuleList()
        self.ups = ModuleList()
        for i in reversed(range(levels)):
            hw = (h >> i) * (w >> i)
            self.dec_res.append(ResBlock(2 * ch[i], ch[i], cfg.groups, rng))
            self.dec_tf.append(TransformerBlock(cfg, ch[i], hw, rng))
            if i > 0:
                self.ups.append(Conv2d(ch[i], ch[i - 1], 3, rng))

        self.out_norm = GroupNorm(ch[0], cfg.groups)
        self.out_conv = Conv2d(ch[0], cfg.c_lat, 3, rng, zero_init=True)

    @property
    def n_transformer_blocks(self) -> int:
        return 2 * len(self.cfg.level_channels) + 1

    def forward(
        self,
        x: Tensor | np.ndarray,
        token: np.ndarray,
        aux_features: dict[int, list[tuple[str, Tensor]]] | None = None,
        main_task: str | None = None,
        mask_cfg: MaskConfig | None = None,
        rng: np.random.Generator | None = None,
        record_features: bool = False,
        trace: AttentionTrace | None = None,
    ):
        """Run the UNet. Returns the output tensor, plus the per-block
        post-spatial-attention features when ``record_features`` is set."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != 2 * self.cfg.c_lat:
            raise ValueError(
                f"input must be (B, {2 * self.cfg.c_lat}, h, w), got {x.shape}"
            )
        token = np.asarray(token, dtype=np.float64)
        if token.shape != (self.cfg.d_tok,):
            raise ValueError(f"token must have dimension {self.cfg.d_tok}, got {token.shape}")
        token_t = Tensor(token.reshape(1, 1, -1))

        features: dict[int, Tensor] = {}
        block_idx = 0

        def run_block(block: TransformerBlock, h_in: Tensor) -> Tensor:
            nonlocal block_idx
            aux = aux_features.get(block_idx) if aux_features is not None else None
            h_out, feat, trace_vec = block(
                h_in,
                token_t,
                aux=aux,
                main_task=main_task,
                mask_cfg=mask_cfg,
                rng=rng,
                record_trace=trace is not None,
            )
            if record_features:
                features[block_idx] = feat
            if trace is not None and trace_vec is not None:
                trace.add(block_idx, main_task, tuple(n for n, _ in aux), trace_vec)
            block_idx += 1
            return h_out

        h = self.conv_in(x)
        skips = []
        levels = len(self.cfg.level_channels)
        for i in range(levels):
            h = self.enc_res[i](h)
            h = run_block(self.enc_tf[i], h)
            skips.append(h)
            if i < levels - 1:
                h = self.downs[i](h)

        h = self.mid_res1(h)
        h = run_block(self.mid_tf, h)
        h = self.mid_res2(h)

        for j, i in enumerate(reversed(range(levels))):
            h = ag.concat([h, skips[i]], axis=1)
            h = self.dec_res[j](h)
            h = run_block(self.dec_tf[j], h)
            if i > 0:
                h = ag.upsample_nearest(h, 2)
                h = self.ups[j](h)

        out = self.out_conv(ag.silu(self.out_norm(h)))
        if record_features:
            return out, features
        return out


def concat_latents(z_i: LatentGrid, z_j: LatentGrid | None) -> np.ndarray:
    """Stack two latents channel-wise; a missing second frame duplicates the first."""
    if z_j is None:
        z_j = z_i
    if z_i.data.shape != z_j.data.shape:
        raise ValueError(f"latent shapes differ: {z_i.data.shape} vs {z_j.data.shape}")
    return np.concatenate([z_i.data, z_j.data], axis=0)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, LatentGrid):
        return x.data
    return np.asarray(x, dtype=np.float64)


def latent_mse(pred, target):
    """Mean of squared element-wise differences.

    Tensor inputs keep the graph (training loss); plain arrays return a float.
    """
    pa, ta = _as_array(pred), _as_array(target)
    if pa.shape != ta.shape:
        raise ValueError(f"latent shapes differ: {pa.shape} vs {ta.shape}")
    if isinstance(pred, Tensor) or isinstance(target, Tensor):
        pt = pred if isinstance(pred, Tensor) else Tensor(pa)
        tt = target if isinstance(target, Tensor) else Tensor(ta)
        return ag.tmean(ag.square(pt - tt))
    return float(np.mean((pa - ta) ** 2))
