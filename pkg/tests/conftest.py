import json
import os
import tempfile
from typing import Any, Dict, Generator

import numpy as np
import pytest

from gaussian_prep.sampling import example1_spec
from gaussian_prep.system_model import DerivedMatrices, SystemSpec, derive_matrices

Settings = Dict[str, Any]
ScenarioDoc = Dict[str, Any]

EXAMPLE1_SYSTEM = {
    "m": 1,
    "G": [[2.0, 0.0], [0.0, 0.0]],
    "Lambda_re": [[1.0, 0.0]],
    "Lambda_im": [[-1.0, 1.0]],
    "eta": 1.0,
}


@pytest.fixture
def sample_settings() -> Settings:
    """Return sample settings for testing"""
    return {
        "log_type": "console",
        "log_level": "DEBUG",
        "log_format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "tol_axis": 1e-8,
        "tol_rank": 1e-8,
        "cond_max": 1e10,
        "strict": False,
        "block_size": 250,
        "workers": 1,
        "record_trajectories": 4,
    }


@pytest.fixture
def temp_settings_file(sample_settings: Settings) -> Generator[str, None, None]:
    """Create a temporary settings file for testing"""
    fd, path = tempfile.mkstemp(suffix='.json')
    with os.fdopen(fd, 'w') as f:
        json.dump(sample_settings, f)
    yield path
    if os.path.exists(path):
        os.unlink(path)


@pytest.fixture
def example1() -> SystemSpec:
    """Single-mode system whose steady state is the vacuum"""
    return example1_spec()


@pytest.fixture
def example1_derived(example1: SystemSpec) -> DerivedMatrices:
    return derive_matrices(example1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def temp_out_dir() -> Generator[str, None, None]:
    """Temporary output directory, removed afterwards"""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield temp_dir


@pytest.fixture
def example1_scenario() -> ScenarioDoc:
    return {
        "name": "example1",
        "system": dict(EXAMPLE1_SYSTEM),
        "sim": {"dt": 0.01, "T": 2.0, "n_traj": 200, "seed": 7, "feedback": "none", "sample_every": 10},
        "outputs": ["report", "covariance_series", "trajectories"],
    }


@pytest.fixture
def write_scenario(temp_out_dir: str):
    """Factory writing a scenario document into the temporary directory"""

    def _write(doc: Any, filename: str = "scenario.json") -> str:
        path = os.path.join(temp_out_dir, filename)
        with open(path, 'w') as f:
            if isinstance(doc, str):
                f.write(doc)
            else:
                json.dump(doc, f)
        return path

    return _write
