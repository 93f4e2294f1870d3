import numpy as np
import pytest

import gradcore as gc
from run_config import load_run_config
from scenes import build_dataset


@pytest.fixture
def float64():
    """Build tensors in 64-bit for the duration of a test"""
    with gc.precision('float64'):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_config():
    return load_run_config(preset='micro')


@pytest.fixture(scope='session')
def micro_dataset():
    return build_dataset(load_run_config(preset='micro').scene, workers=1)
