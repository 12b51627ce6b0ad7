import numpy as np
import pytest

from reranklab.model import CrossEncoderConfig, Vocab, init_params


def max_rel_err(a, b, floor=1e-8):
    """Elementwise relative error with the gradcheck denominator."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(12)


@pytest.fixture
def tiny_vocab():
    return Vocab([f"t{i}" for i in range(16)])


@pytest.fixture
def tiny_model(tiny_vocab):
    config = CrossEncoderConfig(
        vocab_size=tiny_vocab.size, d_model=8, n_layers=1, n_heads=2, d_ff=16, max_len=8, seed=7
    )
    return init_params(config)
