import numpy as np
import pytest

from unistformer.core.dataset import synth_dataset
from unistformer.core.runtime import get_runtime_config
from unistformer.core.tensor import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def float64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def small_dataset():
    return synth_dataset(seed=3, num_classes=3, samples_per_class=2, frames=8)


@pytest.fixture
def dataset_dir(tmp_path, small_dataset):
    out = tmp_path / "data"
    small_dataset.save(out)
    return out


@pytest.fixture
def isolated_runtime(tmp_path, monkeypatch):
    """Point the per-user data and log directories at a temporary location."""
    for var in ("XDG_DATA_HOME", "XDG_STATE_HOME", "XDG_CACHE_HOME", "XDG_CONFIG_HOME"):
        monkeypatch.setenv(var, str(tmp_path / "home" / var.lower()))
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    get_runtime_config.cache_clear()
    yield get_runtime_config()
    get_runtime_config.cache_clear()
