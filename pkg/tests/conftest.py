import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from agent_dynamics import ReferenceModel, ReferenceSignal, make_vehicle_model  # noqa: E402

A_M = np.array([[0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [-6.0, -11.0, -6.0]])
B_M = np.array([0.0, 0.0, 1.0])
Q_DIAG = np.diag([10.0, 1.0, 1.0])


@pytest.fixture
def reference():
    return ReferenceModel(A_m=A_M, b_m=B_M, signal=ReferenceSignal(kind='sine', amplitude=2.0))


@pytest.fixture
def vehicles():
    return {tau: make_vehicle_model(tau) for tau in (1.0, 0.4, 0.25, 0.45, 0.5, 1.25)}
