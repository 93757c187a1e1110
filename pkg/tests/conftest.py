"""
测试公共夹具
"""
from pathlib import Path

import numpy as np
import pytest

from engine.action_model import shipped_action
from engine.settings import get_settings, load_run_config
from shared.models import Amplitude, AmplitudeFactor

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture(scope="session")
def settings():
    return get_settings()


@pytest.fixture(scope="session")
def so2():
    return shipped_action("so2")


@pytest.fixture(scope="session")
def so3():
    return shipped_action("so3")


@pytest.fixture(scope="session")
def t2():
    return shipped_action("t2")


@pytest.fixture(scope="session")
def reference_amplitude():
    """SO(2)/ℝ² 参考振幅：x₀ = ξ₀ = (1, 0)，半径 0.5，X 因子半径 1"""
    return Amplitude(
        x=AmplitudeFactor(center=[1.0, 0.0], radius=0.5),
        xi=AmplitudeFactor(center=[1.0, 0.0], radius=0.5),
        t=AmplitudeFactor(center=[0.0], radius=1.0),
    )


@pytest.fixture(scope="session")
def reference_config():
    return load_run_config(CONFIG_DIR / "so2_reference.json")


@pytest.fixture(scope="session")
def null_config():
    return load_run_config(CONFIG_DIR / "so2_null.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
