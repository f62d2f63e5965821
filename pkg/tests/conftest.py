import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = ROOT / "data"
MNIST_IMAGES = DATA / "mnist5k-images-idx3-ubyte.gz"
MNIST_LABELS = DATA / "mnist5k-labels-idx1-ubyte.gz"


def random_unit_spins(rng, nx, ny):
    s = rng.standard_normal((nx, ny, 3))
    return s / np.linalg.norm(s, axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines appended by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=str):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
