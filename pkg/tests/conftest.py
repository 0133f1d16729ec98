import pytest
import torch

from trajsteer.backend import ToyBackend
from trajsteer.testbed import PromptSpec, TestbedConfig


@pytest.fixture(scope="session")
def small_backend():
    """4-frame 16x16 toy backend shared across tests (weights are frozen)."""
    return ToyBackend(TestbedConfig(n_frames=4, height=16, width=16, weight_seed=0))


@pytest.fixture(scope="session")
def prompt():
    return PromptSpec(token_ids=(7, 23, 5), target_indices=(1,))


@pytest.fixture()
def rng():
    return torch.Generator().manual_seed(1234)
