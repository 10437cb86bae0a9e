import numpy as np
import pytest

from swinfree.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def tiny_config(**overrides):
    from swinfree.model import ModelConfig

    fields = dict(img_size=32, patch_size=2, embed_dim=8, depths=(2, 2, 2, 2), heads=(1, 2, 2, 4),
                  window_sizes=(4, 4, 4, 2), num_classes=10)
    fields.update(overrides)
    return ModelConfig(**fields).validate()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_img():
    return make_rng(7).standard_normal((2, 3, 32, 32)).astype(np.float32)
