"""Shared pytest setup: scripts/ on sys.path and the opt-in slow marker."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run end-to-end training tests (minutes)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training run, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def binary_inputs():
    """All four corners, repeated, as float64 (B, 1) columns."""
    a = np.array([0.0, 1.0, 0.0, 1.0] * 8)[:, None]
    b = np.array([0.0, 0.0, 1.0, 1.0] * 8)[:, None]
    return a, b
