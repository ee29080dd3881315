"""Shared fixtures: small random images and phantoms."""

import logging

import numpy as np
import pytest

from core.phantom import phantom
from core.raster import HyperImage

logging.basicConfig(level=logging.INFO, format='%(asctime)s - TEST - %(levelname)s - %(message)s')


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def positive_image(rng):
    """Random strictly positive 6×6×5 series."""
    return HyperImage(rng.uniform(1.0, 10.0, size=(6, 6, 5)))


@pytest.fixture(scope="session")
def small_phantom():
    return phantom(seed=0, width=32, height=32, channels=40)


@pytest.fixture(scope="session")
def clean_phantom():
    return phantom(seed=0, width=32, height=32, channels=40, noise_sigma=0.0)
