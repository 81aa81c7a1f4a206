import numpy as np
import pytest

from sorscn.reservoir import EnsembleModel, SubReservoir, new_random_block


def make_model(n_blocks=2, size=4, input_dim=3, output_dim=1, seed=0, theta=0.8, scale=1.0):
    """Small random model with a random (not fitted) readout."""
    rng = np.random.default_rng(seed)
    blocks = [
        new_random_block(rng, size=size, input_dim=input_dim, scale=scale, theta=theta, block_id=k)
        for k in range(n_blocks)
    ]
    readout = rng.standard_normal((output_dim, n_blocks * size))
    return EnsembleModel(
        blocks=blocks, readout=readout, input_dim=input_dim, output_dim=output_dim
    )


def zero_block(size, input_dim, block_id=0):
    """All-zero weights; skips the spectral invariant on purpose (test-only)."""
    return SubReservoir(
        input_weights=np.zeros((size, input_dim)),
        internal_weights=np.zeros((size, size)),
        bias=np.zeros(size),
        scale_lambda=1.0,
        spectral_target=1.0,
        block_id=block_id,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
