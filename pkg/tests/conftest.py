import numpy as np
import pytest

from cascade_denoiser.config import ModelConfig
from cascade_denoiser.model import init_params
from cascade_denoiser.patchmatch import PatchTriplet
from cascade_denoiser.tensor import Tensor


TINY = dict(patch_size=16, search_radius=3, feat_channels=8,
            context_channels=8, hidden_channels=12, recon_channels=8,
            offset_groups=2, pre_width=4, max_iters=3, lookup_radius=2)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=123)


def random_triplet(cfg, seed=0):
    rng = np.random.default_rng(seed)
    p, C = cfg.patch_size, cfg.channels

    def patch():
        return Tensor(rng.uniform(0, 1, (C, p, p)))

    return PatchTriplet(ref_noisy=patch(), ref_pre=patch(),
                        sup_noisy=[patch(), patch()], sup_pre=[patch(), patch()],
                        ref_origin=(0, 0), sup_origins=[(0, 0), (0, 0)])


@pytest.fixture
def tiny_triplet(tiny_cfg):
    return random_triplet(tiny_cfg, seed=5)
