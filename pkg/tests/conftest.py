from __future__ import annotations

import numpy as np
import pytest
import torch

from semcom.core import ExperimentConfig
from semcom.synthetic import scene, write_dataset

torch.set_num_threads(1)

# criterion id -> summary line, filled by the acceptance suite
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """Very narrow model for fast structural tests."""
    return ExperimentConfig().override(
        **{"model.width": 0.0625, "model.rrdb_blocks": 2, "train.batch_size": 2, "train.crop": 32}
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scene_tensor() -> torch.Tensor:
    arr, _ = scene(64, seed=3)
    return torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    write_dataset(root, count=4, size=64, seed=0)
    return root
