import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advmask import ImageTensor, RngStream


@pytest.fixture
def rng():
    return RngStream(2024)


@pytest.fixture
def small_image():
    gen = np.random.default_rng(5)
    return ImageTensor(gen.uniform(0.1, 0.9, size=(3, 16, 16)).astype(np.float32))


@pytest.fixture
def gray_image():
    gen = np.random.default_rng(6)
    return ImageTensor(gen.uniform(0.2, 0.8, size=(1, 12, 12)).astype(np.float32))
