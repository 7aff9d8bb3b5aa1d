import numpy as np
import pytest

from mtl_lab.latentcodec import (
    CodecConfig,
    LatentGrid,
    build_codec,
    decode_latent,
    encode_image,
    reconstruction_mse,
)


@pytest.fixture(scope="module")
def shuffle_codec():
    return build_codec(CodecConfig(mode="invertible_shuffle", f=2))


def _blocky_corpus(n, h, w, seed):
    """Piecewise-constant images, the texture the toy scenes have."""
    rng = np.random.default_rng(seed)
    imgs = np.zeros((n, h, w, 3))
    for i in range(n):
        imgs[i] = rng.uniform(-1, 1, size=3)
        for _ in range(3):
            y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
            y1, x1 = rng.integers(y0 + 2, h + 1), rng.integers(x0 + 2, w + 1)
            imgs[i, y0:y1, x0:x1] = rng.uniform(-1, 1, size=3)
    return imgs


def test_shuffle_shape_and_round_trip(shuffle_codec):
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, size=(8, 8, 3))
    z = encode_image(img, shuffle_codec)
    assert z.data.shape == (12, 4, 4)
    assert z.c_lat == 12
    back = decode_latent(z, shuffle_codec)
    assert np.array_equal(back, img)


def test_shuffle_zero_maps_to_zero(shuffle_codec):
    z = encode_image(np.zeros((8, 8, 3)), shuffle_codec)
    assert np.all(z.data == 0.0)
    assert np.all(decode_latent(LatentGrid(np.zeros((12, 4, 4)), 2), shuffle_codec) == 0.0)


def test_shuffle_linearity(shuffle_codec):
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(8, 12, 3))
    y = rng.uniform(-1, 1, size=(8, 12, 3))
    a, b = 0.7, -1.3
    lhs = encode_image(a * x + b * y, shuffle_codec).data
    rhs = a * encode_image(x, shuffle_codec).data + b * encode_image(y, shuffle_codec).data
    assert np.abs(lhs - rhs).max() < 1e-6


def test_shuffle_encode_then_decode_is_identity_both_ways(shuffle_codec):
    rng = np.random.default_rng(5)
    z = LatentGrid(rng.uniform(-1, 1, size=(12, 4, 6)), 2)
    img = decode_latent(z, shuffle_codec)
    z2 = encode_image(img, shuffle_codec)
    assert np.array_equal(z.data, z2.data)


def test_non_divisible_shape_rejected(shuffle_codec):
    with pytest.raises(ValueError, match="divisible"):
        encode_image(np.zeros((7, 8, 3)), shuffle_codec)


def test_config_forces_channel_count():
    with pytest.raises(ValueError, match="forces c_lat"):
        CodecConfig(mode="invertible_shuffle", f=2, c_lat=4)
    cfg = CodecConfig(mode="tiny_autoencoder", f=8)
    assert cfg.c_lat == 4


def test_latent_grid_rejects_non_finite():
    bad = np.zeros((3, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        LatentGrid(bad, 1)


@pytest.fixture(scope="module")
def tiny_codec():
    corpus = _blocky_corpus(6, 24, 24, seed=42)
    codec = build_codec(
        CodecConfig(mode="tiny_autoencoder", f=8),
        prefit_corpus=corpus,
        seed=0,
        prefit_steps=350,
        prefit_lr=6e-3,
        width=16,
    )
    return codec, corpus


def test_tiny_autoencoder_shape_contract(tiny_codec):
    codec, corpus = tiny_codec
    z = encode_image(corpus[0], codec)
    assert z.data.shape == (4, 3, 3)
    assert decode_latent(z, codec).shape == (24, 24, 3)


def test_tiny_autoencoder_prefit_reconstruction(tiny_codec):
    codec, corpus = tiny_codec
    assert reconstruction_mse(codec, corpus) < 1e-2


def test_tiny_autoencoder_frozen_after_prefit(tiny_codec):
    codec, corpus = tiny_codec
    before = codec.checksum()
    codec.encode_batch(corpus)
    codec.decode_batch(codec.encode_batch(corpus))
    assert codec.checksum() == before
