import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import TARGETS_CSV, PARAM_COUNT, KV_BYTES

from poolsim import GpuSpec, calibrate
from poolsim.costmodel import load_targets_csv


@pytest.fixture(scope="session")
def gpu():
    return GpuSpec()


@pytest.fixture(scope="session")
def calibrated(gpu):
    """Cost params fitted to the shipped measured-latency targets."""
    targets = load_targets_csv(str(TARGETS_CSV), PARAM_COUNT, KV_BYTES)
    return calibrate(targets, gpu)
