import numpy as np
import pytest

from ttstack.synthetic import write_synthetic


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """Full-size synthetic corpus (620 non-cancer / 125 cancer, 32x32 PGM)."""
    root = tmp_path_factory.mktemp("corpus")
    write_synthetic(root, seed=42)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
