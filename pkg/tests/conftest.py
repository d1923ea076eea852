import numpy as np
import pytest
import torch

# Keep torch deterministic and cheap on the 2-core CI box.
torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density_sequence(rng, t=8, h=16, w=16):
    """Random valid density sequence in [0, 1]."""
    return rng.random((t, h, w))
