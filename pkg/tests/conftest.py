import sys
from pathlib import Path

import numpy as np
import pytest

# make the helper modules (oracles, synth, fdcheck) importable from any test
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
