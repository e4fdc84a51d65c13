import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fwpomdp.model import build_machine_repair, machine_repair_case

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def case1():
    return machine_repair_case(1)


@pytest.fixture
def case3():
    return machine_repair_case(3)


@pytest.fixture
def mixing_model():
    """Two-state model with near-uniform dynamics, so the filter contracts (alpha < 1)."""
    m = build_machine_repair(0.3, 0.5, 0.4)
    T = np.array([[[0.6, 0.4], [0.4, 0.6]], [[0.5, 0.5], [0.45, 0.55]]])
    return m.replace(transition=T)
