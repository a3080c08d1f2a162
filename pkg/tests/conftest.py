import pytest

from config.config import TrainConfig, build_config
from src.data import generate_task
from src.tensor import Rng


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY = {
    "classes": 2,
    "frames": 4,
    "frame_height": 8,
    "frame_width": 8,
    "patch": 4,
    "planted_count": 4,
    "train_size": 8,
    "val_size": 4,
    "test_size": 4,
    "d_emb": 8,
    "state_dim": 4,
    "strides": "2,2",
    "batch_size": 4,
    "epochs": 2,
    "pretrain_epochs": 1,
    "pretrain_batch_size": 4,
    "clip_frames": 2,
    "tau_long": 2,
    "tau_short": 1,
    "head_hidden": 8,
    "head_out": 4,
    "workers": 0,
    "bench_steps": 1,
}


def tiny_config(tmp_path=None, **changes) -> TrainConfig:
    values = dict(TINY)
    if tmp_path is not None:
        values.update(data_path=str(tmp_path / "tiny.s5ds"), out_dir=str(tmp_path / "runs"),
                      log_file=str(tmp_path / "s5.log"))
    values.update(changes)
    return build_config(values, "<tiny>")


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def config(tmp_path):
    return tiny_config(tmp_path)


@pytest.fixture
def dataset(config):
    return generate_task(config.task_spec(), 0)


@pytest.fixture
def make_config(tmp_path):
    def make(**changes):
        return tiny_config(tmp_path, **changes)
    return make
