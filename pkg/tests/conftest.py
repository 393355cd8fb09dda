import numpy as np
import pytest

from hazeforge import core
from hazeforge.mappers import DepthProvider, MapperConfig
from hazeforge.synthetic import homogeneous_pairs
from hazeforge.training import TrainConfig, train_panet

# criterion number -> (description, passed)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        desc, ok = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {desc}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def write_pairs(root, pairs):
    for p in pairs:
        core.save_image(root / "hazy" / f"{p.id}.png", p.hazy)
        core.save_image(root / "clean" / f"{p.id}.png", p.clean)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return write_pairs(root, homogeneous_pairs(2, 32, beta=0.9, airlight=0.8, seed=3))


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A 3-epoch toy checkpoint on two 32x32 synthetic pairs."""
    out = tmp_path_factory.mktemp("run")
    pairs = homogeneous_pairs(2, 32, beta=0.9, airlight=0.8, seed=3)
    cfg = TrainConfig(lr_init=1e-3, lr_final=1e-6, epochs=3, crop=32, seed=5)
    result = train_panet(pairs, cfg, MapperConfig.preset("toy"), DepthProvider("ramp"), out_dir=out)
    return result
