import os
from pathlib import Path

import numpy as np
import pytest

from fedtemp import rng
from fedtemp.nn import init_params

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def find_mnist():
    candidates = [os.environ.get("FEDTEMP_MNIST"), "/root/data/mnist",
                  Path(__file__).resolve().parents[1] / "data" / "mnist"]
    for c in candidates:
        if c and all((Path(c) / f).is_file() for f in MNIST_FILES):
            return Path(c)
    return None


def tiny_params(shapes=((4, 6), (6, 3)), seed=0, dtype=np.float64):
    return init_params(shapes, rng.stream(seed, "init"), dtype)


SYNTH_CONFIG = """\
rounds = 3
clients = 4
clients_per_round = 2
local_steps = 2
[data]
source = synth
hidden = 16
[defense]
root_size = 20
[posthoc]
holdout = 50
n_cal = 50
"""


@pytest.fixture
def synth_cfg_path(tmp_path):
    p = tmp_path / "synth.cfg"
    p.write_text(SYNTH_CONFIG)
    return p


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
