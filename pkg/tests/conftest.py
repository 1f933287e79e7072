"""Test-wide setup.

NUMBA_NUM_THREADS must be raised before numba is imported anywhere so the
suite can request multi-worker scans (thread-count determinism checks, the
8-thread acceptance runs) even on small machines; workers beyond the physical
core count just time-slice.
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
