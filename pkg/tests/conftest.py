import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from propercomp.simplex import UtilityMatrix  # noqa: E402

RAIN_DM = [[0.0, 10.0], [6.0, 6.0]]
RAIN_BIAS = [[0.0, 0.0], [2.0, 2.0]]


@pytest.fixture
def rain_dm():
    return UtilityMatrix(np.array(RAIN_DM), ("park", "banquet"))


@pytest.fixture
def rain_bias():
    return UtilityMatrix(np.array(RAIN_BIAS), ("park", "banquet"))
