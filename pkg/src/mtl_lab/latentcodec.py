"""Frozen image codec defining the latent space all regression happens in.

Two modes:

* ``invertible_shuffle`` (default): a lossless space-to-depth rearrangement.
  Linear and exactly invertible, which makes every downstream contract
  testable to machine precision.
* ``tiny_autoencoder``: a small convolutional bottleneck pre-fit once on a
  reconstruction objective and frozen afterwards. Mirrors the 4-channel /8
  latent shape of large pretrained image codecs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Module, Tensor, no_grad
from .nn import autograd as ag
from .nn.optim import Adam


@dataclass(frozen=True)
class CodecConfig:
    mode: str = "invertible_shuffle"
    f: int = 2
    c_lat: int | None = None

    def __post_init__(self):
        if self.mode not in ("invertible_shuffle", "tiny_autoencoder"):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        if self.mode == "invertible_shuffle":
            expected = 3 * self.f * self.f
            if self.c_lat is None:
                object.__setattr__(self, "c_lat", expected)
            elif self.c_lat != expected:
                raise ValueError(
                    f"invertible_shuffle with f={self.f} forces c_lat={expected}, got {self.c_lat}"
                )
        else:
            if self.c_lat is None:
                object.__setattr__(self, "c_lat", 4)
            if self.f & (self.f - 1):
                raise ValueError("tiny_autoencoder downsample factor must be a power of two")


@dataclass
class LatentGrid:
    """A (C, H/f, W/f) real grid plus the downsample factor that produced it."""

    data: np.ndarray
    f: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"latent grid must be (C, h, w), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent grid contains non-finite values")

    @property
    def c_lat(self) -> int:
        return self.data.shape[0]


def space_to_depth(image: np.ndarray, f: int) -> np.ndarray:
    """(H, W, 3) -> (3*f*f, H/f, W/f); channel index is (c, dy, dx) major."""
    h, w, c = image.shape
    x = image.transpose(2, 0, 1).reshape(c, h // f, f, w // f, f)
    return np.ascontiguousarray(x.transpose(0, 2, 4, 1, 3).reshape(c * f * f, h // f, w // f))


def depth_to_space(latent: np.ndarray, f: int) -> np.ndarray:
    cff, h, w = latent.shape
    c = cff // (f * f)
    x = latent.reshape(c, f, f, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * f, w * f)
    return np.ascontiguousarray(x.transpose(1, 2, 0))


class _TinyAutoencoder(Module):
    def __init__(self, f: int, c_lat: int, width: int, rng: np.random.Generator):
        self.f = f
        self.enc = []
        ch = 3
        n_down = int(np.log2(f))
        for i in range(n_down):
            nxt = width * (2 ** min(i, 2))
            self.enc.append(Conv2d(ch, nxt, 3, rng, stride=2))
            ch = nxt
        self.enc_out = Conv2d(ch, c_lat, 1, rng)
        self.dec_in = Conv2d(c_lat, ch, 1, rng)
        self.dec = []
        for i in reversed(range(n_down)):
            nxt = 3 if i == 0 else width * (2 ** min(i - 1, 2))
            self.dec.append(Conv2d(ch, nxt, 3, rng))
            ch = nxt
        for i, m in enumerate(self.enc):
            setattr(self, f"enc{i}", m)
        for i, m in enumerate(self.dec):
            setattr(self, f"dec{i}", m)

    def encode(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.enc:
            h = ag.silu(conv(h))
        return self.enc_out(h)

    def decode(self, z: Tensor) -> Tensor:
        h = ag.silu(self.dec_in(z))
        for i, conv in enumerate(self.dec):
            h = ag.upsample_nearest(h, 2)
            h = conv(h)
            if i < len(self.dec) - 1:
                h = ag.silu(h)
        return h


class LatentCodec:
    """Frozen encoder/decoder pair. Construct via :func:`build_codec`."""

    def __init__(self, cfg: CodecConfig, net: _TinyAutoencoder | None = None):
        self.cfg = cfg
        self._net = net
        if cfg.mode == "tiny_autoencoder" and net is None:
            raise ValueError("tiny_autoencoder codec requires a pre-fit network")

    @property
    def f(self) -> int:
        return self.cfg.f

    @property
    def c_lat(self) -> int:
        return self.cfg.c_lat

    def _check_divisible(self, h: int, w: int):
        if h % self.cfg.f or w % self.cfg.f:
            raise ValueError(f"image shape {h}x{w} not divisible by f={self.cfg.f}")

    def encode_batch(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) -> (B, C, h, w)."""
        b, h, w, _ = images.shape
        self._check_divisible(h, w)
        if self.cfg.mode == "invertible_shuffle":
            return np.stack([space_to_depth(img, self.cfg.f) for img in images])
        with no_grad():
            x = Tensor(images.transpose(0, 3, 1, 2))
            return self._net.encode(x).data

    def decode_batch(self, latents: np.ndarray) -> np.ndarray:
        """(B, C, h, w) -> (B, H, W, 3)."""
        if latents.shape[1] != self.cfg.c_lat:
            raise ValueError(f"latent has {latents.shape[1]} channels, expected {self.cfg.c_lat}")
        if self.cfg.mode == "invertible_shuffle":
            return np.stack([depth_to_space(z, self.cfg.f) for z in latents])
        with no_grad():
            return self._net.decode(Tensor(latents)).data.transpose(0, 2, 3, 1)

    def state_dict(self) -> dict:
        return {} if self._net is None else self._net.state_dict()

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.cfg.mode, self.cfg.f, self.cfg.c_lat)).encode())
        for name, arr in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def encode_image(map3: np.ndarray, codec: LatentCodec) -> LatentGrid:
    """Encode one H x W x 3 map into the latent space."""
    map3 = np.asarray(map3, dtype=np.float64)
    if map3.ndim != 3 or map3.shape[-1] != 3:
        raise ValueError(f"expected H x W x 3 input, got {map3.shape}")
    z = codec.encode_batch(map3[None])[0]
    return LatentGrid(z, codec.f)


def decode_latent(z: LatentGrid, codec: LatentCodec) -> np.ndarray:
    """Decode a latent grid back to an H x W x 3 map."""
    if z.c_lat != codec.c_lat:
        raise ValueError(f"latent has {z.c_lat} channels, codec expects {codec.c_lat}")
    return codec.decode_batch(z.data[None])[0]


def build_codec(
    cfg: CodecConfig,
    prefit_corpus: np.ndarray | None = None,
    seed: int = 0,
    prefit_steps: int = 800,
    prefit_lr: float = 3e-3,
    width: int = 24,
) -> LatentCodec:
    """Build a codec; tiny_autoencoder mode runs its one-time reconstruction fit."""
    if cfg.mode == "invertible_shuffle":
        return LatentCodec(cfg)
    if prefit_corpus is None:
        raise ValueError("tiny_autoencoder codec needs a prefit corpus of images")
    rng = np.random.default_rng(seed)
    net = _TinyAutoencoder(cfg.f, cfg.c_lat, width, rng)
    opt = Adam(net.parameters(), lr=prefit_lr)
    x = Tensor(prefit_corpus.transpose(0, 3, 1, 2))
    for _ in range(prefit_steps):
        net.zero_grad()
        recon = net.decode(net.encode(x))
        loss = ag.tmean(ag.square(recon - x))
        loss.backward()
        opt.step()
    return LatentCodec(cfg, net)


def codec_from_state(cfg: CodecConfig, state: dict, width: int = 24) -> LatentCodec:
    """Rebuild a codec from checkpointed weights without re-fitting."""
    if cfg.mode == "invertible_shuffle":
        return LatentCodec(cfg)
    net = _TinyAutoencoder(cfg.f, cfg.c_lat, width, np.random.default_rng(0))
    net.load_state_dict(state)
    return LatentCodec(cfg, net)


def reconstruction_mse(codec: LatentCodec, images: np.ndarray) -> float:
    recon = codec.decode_batch(codec.encode_batch(images))
    return float(np.mean((recon - images) ** 2))
