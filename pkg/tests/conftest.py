import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from scanhmer.synth import NESTED_LABEL, render_expression, synthetic_vocab


@pytest.fixture(scope="session")
def vocab():
    return synthetic_vocab()


@pytest.fixture(scope="session")
def nested():
    return render_expression(NESTED_LABEL, np.random.default_rng(0), name="nested")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
