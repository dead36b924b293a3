import numpy as np
import pytest

from aucorr.config import SynthConfig, TrainConfig, dump_config, toy_config
from aucorr.synth import gen_synthetic_dataset


def tiny_config(steps=3):
    """Toy model with a few training steps per stage, for plumbing tests."""
    cfg = toy_config()
    cfg.train = TrainConfig(batch_size=4, steps_spatial=steps, steps_temporal=steps,
                            steps_audio=steps, steps_joint=steps)
    cfg.synth = SynthConfig(frames=120, videos=2, val_videos=1)
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    cfg = tiny_config()
    root = tmp_path_factory.mktemp("tiny_data")
    return gen_synthetic_dataset(cfg.synth, root, seed=3), cfg


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    dump_config(tiny_config(), path)
    return path
