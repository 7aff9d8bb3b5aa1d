import numpy as np
import pytest

from mtl_lab.data import build_toy_corpus, load_split
from mtl_lab.latentcodec import CodecConfig, build_codec
from mtl_lab.model import build_token_table
from mtl_lab.taskcodec import default_palette


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small shared corpus: 12 train / 6 eval samples per dataset at 16x32."""
    root = tmp_path_factory.mktemp("toy-corpus")
    build_toy_corpus(root, n_train=12, n_eval=6, seed=77, resolution=(16, 32))
    return root


@pytest.fixture(scope="session")
def train_datasets(toy_corpus):
    return load_split(toy_corpus, "train")


@pytest.fixture(scope="session")
def eval_datasets(toy_corpus):
    return load_split(toy_corpus, "eval")


@pytest.fixture(scope="session")
def shuffle_codec2():
    return build_codec(CodecConfig(mode="invertible_shuffle", f=2))


@pytest.fixture(scope="session")
def token_table16():
    return build_token_table(d_tok=16)


@pytest.fixture(scope="session")
def palette():
    return default_palette()


def tiny_train_config(**overrides):
    from mtl_lab.training import TrainConfig

    base = dict(
        learning_rate=2e-3,
        effective_batch_size=8,
        grad_accum_steps=2,
        stage1_steps=6,
        stage2_steps=3,
        seed=5,
        head_count=2,
        resolution=(16, 32),
        base_channels=8,
        channel_mult=(1, 2),
        d_tok=16,
        ff_mult=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def tiny_cfg():
    return tiny_train_config()
