import os
from pathlib import Path

import numpy as np
import pytest

from dualmem.streams import synth_gaussian

MNIST_DIR = Path(os.environ.get("DUALMEM_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_available() -> bool:
    return all((MNIST_DIR / f).is_file() for f in MNIST_FILES)


needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    """Small, well separated 4-class problem with a matching test split."""
    rng = np.random.default_rng(3)
    train = synth_gaussian(4, 10, 150, 6.0, rng)
    test = synth_gaussian(4, 10, 50, 6.0, rng, centers=train.centers, split="test")
    return train, test


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
