import numpy as np
import pytest

from spcalib import synth
from spcalib.physics import ApparatusConfig


@pytest.fixture
def cfg():
    return ApparatusConfig()


@pytest.fixture(scope="session")
def run1_seed7():
    return synth.simulate_run1(7)


@pytest.fixture(scope="session")
def ideal_run():
    truth = synth.ideal_truth()
    return synth.generate_run(truth, synth.run1_plan(truth, 3), 3)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a / b - 1.0))
