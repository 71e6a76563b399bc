import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from imanip.controller import world_controller  # noqa: E402
from imanip.model.batch import ObservationBatch  # noqa: E402
from imanip.model.policy import PolicyConfig, PolicyModel  # noqa: E402
from imanip.model.schemas import RunConfig  # noqa: E402
from imanip.model.world import PROPRIO_DIM  # noqa: E402


@pytest.fixture
def tiny_config():
    """Two patches per side, one self-attention layer: fast enough for per-test builds."""
    return PolicyConfig(
        grid_size=8,
        rot_bins=12,
        d_model=16,
        latents=4,
        layers=1,
        patch_size=4,
        prompt_len=2,
        d_new=4,
        seed=0,
    )


@pytest.fixture
def toy_config():
    """2x2x2 grid with 1-voxel patches for full finite-difference checks."""
    return PolicyConfig(
        grid_size=2,
        rot_bins=4,
        d_model=4,
        latents=2,
        layers=1,
        patch_size=1,
        prompt_len=1,
        d_new=2,
        max_tokens=3,
        skip_reach=(1, 1, 0),
        seed=3,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return PolicyModel.build(tiny_config)


def random_batch(config: PolicyConfig, size: int, seed: int = 0) -> ObservationBatch:
    rng = np.random.default_rng(seed)
    g = config.grid_size
    return ObservationBatch(
        grids=(rng.random((size, g, g, g, config.channels)) < 0.2).astype(np.float64),
        proprio=rng.random((size, PROPRIO_DIM)),
        tokens=rng.integers(0, config.vocab_size, size=(size, config.max_tokens)),
    )


@pytest.fixture
def make_batch():
    return random_batch


@pytest.fixture(scope="session")
def demo_cache():
    """Demonstrations keyed by (skill, count, seed), generated once per session."""
    cache = {}

    def get(skill: str, count: int = 4, seed: int = 0):
        key = (skill, count, seed)
        if key not in cache:
            cache[key] = world_controller.generate_demos(skill, count, seed)
        return cache[key]

    return get


@pytest.fixture
def tiny_run_config(tmp_path):
    return RunConfig(
        schedule="B2-1N1",
        d_model=16,
        latents=4,
        layers=1,
        patch_size=4,
        prompt_len=2,
        d_new=4,
        demos_per_skill=3,
        eval_episodes=2,
        max_eval_steps=6,
        iterations_base=3,
        iterations_step=3,
        batch_size=4,
        base_gate=None,
        out=str(tmp_path),
    )


@pytest.fixture(autouse=True)
def _no_env_out(monkeypatch):
    monkeypatch.delenv("IMANIP_OUT", raising=False)
    monkeypatch.setattr("imanip.core.settings.IMANIP_OUT", None)


