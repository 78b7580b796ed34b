import warnings

import numpy as np
import pytest

from ctxsim.umps import DegenerateTransferWarning


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_degenerate():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTransferWarning)
        yield
