import numpy as np
import pytest
from hypothesis import settings

from sgsde.config import load_preset
from sgsde.model import OutputFunctionSpec, SystemSpec

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def presets():
    return {k: load_preset(k) for k in ("5.1", "5.2", "5.3", "6.1")}


@pytest.fixture(scope="session")
def ex51(presets):
    return presets["5.1"].spec


@pytest.fixture(scope="session")
def ex52(presets):
    return presets["5.2"].spec


@pytest.fixture(scope="session")
def ex53(presets):
    return presets["5.3"].spec


@pytest.fixture(scope="session")
def ex61(presets):
    return presets["6.1"].spec


def constant_spec(A, c, sigma=None):
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    h = OutputFunctionSpec("constant", [[i] for i in range(d)], {"c": c}, "order-preserving")
    sigma = np.zeros((d, d)) if sigma is None else sigma
    return SystemSpec(A, sigma, h, 0.0)


def tanh_1d(a=-1.0, sigma=0.5):
    h = OutputFunctionSpec("reciprocal-offset-tanh", [[0]], {"c0": 4, "c1": 1},
                           "anti-order-preserving")
    return SystemSpec([[a]], [[sigma]], h, 1 / 16)
