import numpy as np
import pytest

from growtrain.model import ModelConfig, init_params
from growtrain.rng import Rng


@pytest.fixture
def tiny_config():
    return ModelConfig(L=1, D=4, H=8, M=2, N_max=8, V=5, dropout_p=0.0)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, Rng(11).fork("init"))


def random_batch(rng: Rng, batch: int, n: int, n_masked: int, V: int,
                 mask_token_id: int = 0):
    """Random token ids with sorted distinct masked positions and targets."""
    ids = rng.integers(1, V, size=(batch, n))
    masked = np.stack([np.sort(rng.choice(n, size=n_masked, replace=False))
                       for _ in range(batch)]).astype(np.int64)
    targets = rng.integers(1, V, size=(batch, n_masked))
    return ids, masked, targets
