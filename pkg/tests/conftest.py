import sys

import numpy as np
import pytest
from hypothesis import settings

from ensemble_pocs.ensemble_model import BoundaryPair, harmonic_oscillators, sample_parameters
from ensemble_pocs.function_space import TimeGrid

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def unit_grid():
    return TimeGrid(1.0, 1000)


@pytest.fixture(scope="session")
def coarse_grid():
    return TimeGrid(1.0, 200)


@pytest.fixture(scope="session")
def small_ensemble(coarse_grid):
    """Five two-input oscillators; well conditioned and quick to solve."""
    model = harmonic_oscillators(sample_parameters(-1.0, 1.0, 5), 1.0)
    boundary = BoundaryPair.identical([1.0, 0.0], [0.0, 1.0], 5)
    return model, boundary, coarse_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
