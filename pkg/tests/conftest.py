import numpy as np
import pytest


@pytest.fixture(scope="session")
def blob_fixture():
    """Two well-separated 30-point Gaussian blobs plus 5 far-out outliers."""
    rng = np.random.default_rng(7)
    a = rng.normal(loc=(0.0, 0.0), scale=0.3, size=(30, 2))
    b = rng.normal(loc=(10.0, 10.0), scale=0.3, size=(30, 2))
    outliers = rng.uniform(40.0, 80.0, size=(5, 2))
    X = np.vstack([a, b, outliers])
    truth = np.array([0] * 30 + [1] * 30 + [-1] * 5)
    return X, truth


@pytest.fixture(scope="session")
def synth_small():
    from epicast.synth import synth_generate

    return synth_generate(seed=0, n_days=120, n_clusters=5, dim=25)
